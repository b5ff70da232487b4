//! Independent double-precision reference for the masked super-network
//! forward pass, written with plain nested loops.

#![allow(dead_code)]

use cbcnas::supernet::{NetworkSpec, SuperNetwork, TrainPlan};
use cbcnas::tensor::Tensor;

/// Weights of one network in `f64`, in the super-network's layout.
#[derive(Clone, Debug)]
pub struct RefParams {
    /// Per layer `(weight [F][C][K][K] flattened, bias [F])`.
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

impl RefParams {
    pub fn from_supernet(net: &SuperNetwork) -> Self {
        let p = net.params();
        let f = |t: &Tensor| t.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
        let layers = (0..net.spec().len())
            .map(|i| {
                let lp = net.layer_params(i);
                (f(p.get(lp.weight)), f(p.get(lp.bias)))
            })
            .collect();
        let h = net.head_params();
        RefParams {
            layers,
            head_w: f(p.get(h.weight)),
            head_b: f(p.get(h.bias)),
        }
    }

    /// Mutable view of every scalar in a fixed order: layer weights and
    /// biases, then the head.
    pub fn scalars_mut(&mut self) -> Vec<&mut f64> {
        let mut out: Vec<&mut f64> = Vec::new();
        for (w, b) in &mut self.layers {
            out.extend(w.iter_mut());
            out.extend(b.iter_mut());
        }
        out.extend(self.head_w.iter_mut());
        out.extend(self.head_b.iter_mut());
        out
    }
}

/// Same-padded convolution of one `[C][H][W]` image with the centred
/// `k x k` window of `[F][C][K][K]` weights.
#[allow(clippy::too_many_arguments)]
fn conv(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    f: usize,
    kmax: usize,
    k: usize,
    stride: usize,
) -> (Vec<f64>, usize, usize) {
    let ho = h.div_ceil(stride);
    let wo = w.div_ceil(stride);
    let off = (kmax - k) / 2;
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; f * ho * wo];
    for fi in 0..f {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for ci in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride) as isize + ky as isize - pad;
                            let ix = (ox * stride) as isize + kx as isize - pad;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let wv = weight[((fi * c + ci) * kmax + ky + off) * kmax + kx + off];
                            acc += wv * x[(ci * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(fi * ho + oy) * wo + ox] = acc;
            }
        }
    }
    (out, ho, wo)
}

/// Logits of every image under `plan`, each image running its own widths.
///
/// Per layer and image: the first `M` output channels are
/// `relu(conv + bias)`; for stride-1 layers channels `M..T` carry input
/// channel of the same index (zero past `C`).
pub fn forward(
    spec: &NetworkSpec,
    p: &RefParams,
    images: &Tensor,
    plan: &TrainPlan,
) -> Vec<Vec<f64>> {
    let n = images.dim(0);
    let per = spec.input_channels * spec.height * spec.width;
    (0..n)
        .map(|ni| {
            let mut x: Vec<f64> = images.data()[ni * per..(ni + 1) * per]
                .iter()
                .map(|&v| v as f64)
                .collect();
            let (mut c, mut h, mut w) = (spec.input_channels, spec.height, spec.width);
            for (li, l) in spec.layers.iter().enumerate() {
                let m = plan.widths[li][ni];
                let (wt, b) = &p.layers[li];
                let (y, ho, wo) = conv(
                    &x,
                    c,
                    h,
                    w,
                    wt,
                    l.filters,
                    l.max_kernel,
                    plan.kernels[li],
                    l.stride,
                );
                let plane = ho * wo;
                let mut next = vec![0.0; l.filters * plane];
                for t in 0..l.filters {
                    for q in 0..plane {
                        next[t * plane + q] = if t < m {
                            (y[t * plane + q] + b[t]).max(0.0)
                        } else if l.stride == 1 && t < c {
                            x[t * plane + q]
                        } else {
                            0.0
                        };
                    }
                }
                x = next;
                c = l.filters;
                h = ho;
                w = wo;
            }
            let pooled: Vec<f64> = (0..c)
                .map(|ci| x[ci * h * w..(ci + 1) * h * w].iter().sum::<f64>() / (h * w) as f64)
                .collect();
            (0..spec.classes)
                .map(|k| {
                    p.head_b[k]
                        + (0..c)
                            .map(|ci| p.head_w[k * c + ci] * pooled[ci])
                            .sum::<f64>()
                })
                .collect()
        })
        .collect()
}

/// Mean softmax cross-entropy.
pub fn loss(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| {
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - z[y]
        })
        .sum::<f64>()
        / labels.len() as f64
}
