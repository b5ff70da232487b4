//! Forward and backward kernels. Every function here is pure: tensors in,
//! tensors out. The [`tape`](super::tape) module strings them together.

use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};

/// Output extent of a same-padded convolution.
pub fn conv_out_extent(input: usize, stride: usize) -> usize {
    input.div_ceil(stride)
}

/// Range of output positions `o` whose input index `o * stride + offset`
/// falls inside `[0, in_len)`.
fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 {
        0
    } else {
        (-offset + s - 1) / s
    };
    let hi = (in_len as isize - 1 - offset).div_euclid(s) + 1;
    let lo = lo.max(0) as usize;
    let hi = hi.clamp(0, out_len as isize) as usize;
    (lo, hi.max(lo))
}

#[derive(Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    k: usize,
    stride: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(input: &Tensor, weight: &Tensor, stride: usize) -> Result<(usize, Self)> {
        let (n, c, h, w) = input.nchw("conv2d")?;
        let (f, wc, kh, kw) = weight.nchw("conv2d")?;
        if wc != c {
            return Err(Error::Dimension {
                op: "conv2d",
                axis: "channels",
                expected: wc,
                got: c,
            });
        }
        if kh != kw {
            return Err(Error::Dimension {
                op: "conv2d",
                axis: "kernel width",
                expected: kh,
                got: kw,
            });
        }
        if kh % 2 == 0 {
            return Err(Error::Shape {
                op: "conv2d",
                shape: weight.shape().to_vec(),
                reason: "kernel size must be odd",
            });
        }
        if stride == 0 {
            return Err(Error::Domain("conv2d: stride must be positive".into()));
        }
        Ok((
            n,
            ConvGeom {
                c,
                h,
                w,
                f,
                k: kh,
                stride,
                ho: conv_out_extent(h, stride),
                wo: conv_out_extent(w, stride),
            },
        ))
    }

    fn in_len(&self) -> usize {
        self.c * self.h * self.w
    }

    fn out_len(&self) -> usize {
        self.f * self.ho * self.wo
    }

    fn taps(&self) -> usize {
        self.c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfolds one image into `[C * k * k, Ho * Wo]`; row `(c, kh, kw)`
    /// holds the input value each output position sees through that tap,
    /// zero where the tap falls in the padding.
    fn im2col(&self, image: &[f32], cols: &mut [f32]) {
        let pad = (self.k / 2) as isize;
        let p = self.positions();
        for ci in 0..self.c {
            for kh in 0..self.k {
                let row_off = kh as isize - pad;
                let (oh_lo, oh_hi) = valid_range(self.ho, self.h, self.stride, row_off);
                for kw in 0..self.k {
                    let col_off = kw as isize - pad;
                    let (ow_lo, ow_hi) = valid_range(self.wo, self.w, self.stride, col_off);
                    let j = (ci * self.k + kh) * self.k + kw;
                    let dst = &mut cols[j * p..(j + 1) * p];
                    dst.fill(0.0);
                    for oh in oh_lo..oh_hi {
                        let ih = ((oh * self.stride) as isize + row_off) as usize;
                        let src =
                            &image[(ci * self.h + ih) * self.w..(ci * self.h + ih + 1) * self.w];
                        let d = &mut dst[oh * self.wo..(oh + 1) * self.wo];
                        for ow in ow_lo..ow_hi {
                            d[ow] = src[((ow * self.stride) as isize + col_off) as usize];
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatters column gradients back onto
    /// the image.
    fn col2im(&self, cols: &[f32], image: &mut [f32]) {
        let pad = (self.k / 2) as isize;
        let p = self.positions();
        for ci in 0..self.c {
            for kh in 0..self.k {
                let row_off = kh as isize - pad;
                let (oh_lo, oh_hi) = valid_range(self.ho, self.h, self.stride, row_off);
                for kw in 0..self.k {
                    let col_off = kw as isize - pad;
                    let (ow_lo, ow_hi) = valid_range(self.wo, self.w, self.stride, col_off);
                    let j = (ci * self.k + kh) * self.k + kw;
                    let src = &cols[j * p..(j + 1) * p];
                    for oh in oh_lo..oh_hi {
                        let ih = ((oh * self.stride) as isize + row_off) as usize;
                        let dst = &mut image
                            [(ci * self.h + ih) * self.w..(ci * self.h + ih + 1) * self.w];
                        let s = &src[oh * self.wo..(oh + 1) * self.wo];
                        for ow in ow_lo..ow_hi {
                            dst[((ow * self.stride) as isize + col_off) as usize] += s[ow];
                        }
                    }
                }
            }
        }
    }
}

/// Same-padded 2-D convolution, zero padding of `(k - 1) / 2` on every side.
///
/// `input` is `[N, C, H, W]`, `weight` is `[F, C, k, k]`; the result is
/// `[N, F, ceil(H / stride), ceil(W / stride)]`. Zero taps are skipped and
/// the remaining ones are summed in `(c, kh, kw)` order, so a centrally
/// masked kernel gives bit-for-bit the result of the cropped one.
pub fn conv2d_forward(input: &Tensor, weight: &Tensor, stride: usize) -> Result<Tensor> {
    let (n, g) = ConvGeom::new(input, weight, stride)?;
    let wt = weight.data();
    let (taps, p) = (g.taps(), g.positions());
    let images: Vec<Vec<f32>> = (0..n)
        .into_par_iter()
        .map(|ni| {
            let inp = &input.data()[ni * g.in_len()..(ni + 1) * g.in_len()];
            let mut cols = vec![0.0f32; taps * p];
            g.im2col(inp, &mut cols);
            let mut out = vec![0.0f32; g.out_len()];
            for (fi, o) in out.chunks_exact_mut(p).enumerate() {
                for (j, &wv) in wt[fi * taps..(fi + 1) * taps].iter().enumerate() {
                    if wv == 0.0 {
                        continue;
                    }
                    for (a, &x) in o.iter_mut().zip(&cols[j * p..(j + 1) * p]) {
                        *a += wv * x;
                    }
                }
            }
            out
        })
        .collect();
    Tensor::from_vec(&[n, g.f, g.ho, g.wo], images.concat())
}

/// Returns `(grad_input, grad_weight)` for [`conv2d_forward`].
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (n, g) = ConvGeom::new(input, weight, stride)?;
    let expected = [n, g.f, g.ho, g.wo];
    if grad_out.shape() != expected {
        return Err(Error::Shape {
            op: "conv2d_backward",
            shape: grad_out.shape().to_vec(),
            reason: "gradient does not match the forward output",
        });
    }
    let wt = weight.data();
    let (taps, p) = (g.taps(), g.positions());
    let per_image: Vec<(Vec<f32>, Vec<f32>)> = (0..n)
        .into_par_iter()
        .map(|ni| {
            let inp = &input.data()[ni * g.in_len()..(ni + 1) * g.in_len()];
            let go = &grad_out.data()[ni * g.out_len()..(ni + 1) * g.out_len()];
            let mut cols = vec![0.0f32; taps * p];
            g.im2col(inp, &mut cols);
            let mut gcols = vec![0.0f32; taps * p];
            let mut gw = vec![0.0f32; weight.len()];
            for (fi, gor) in go.chunks_exact(p).enumerate() {
                if gor.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for j in 0..taps {
                    let col = &cols[j * p..(j + 1) * p];
                    gw[fi * taps + j] += gor.iter().zip(col).map(|(a, b)| a * b).sum::<f32>();
                    let wv = wt[fi * taps + j];
                    if wv != 0.0 {
                        for (d, &v) in gcols[j * p..(j + 1) * p].iter_mut().zip(gor) {
                            *d += wv * v;
                        }
                    }
                }
            }
            let mut gi = vec![0.0f32; g.in_len()];
            g.col2im(&gcols, &mut gi);
            (gi, gw)
        })
        .collect();

    let mut grad_w = vec![0.0f32; weight.len()];
    let mut grad_in = Vec::with_capacity(input.len());
    for (gi, gw) in per_image {
        grad_in.extend(gi);
        for (a, b) in grad_w.iter_mut().zip(gw) {
            *a += b;
        }
    }
    Ok((
        Tensor::from_vec(input.shape(), grad_in)?,
        Tensor::from_vec(weight.shape(), grad_w)?,
    ))
}

/// `[N, D] x [O, D]^T -> [N, O]`.
pub fn dense_forward(input: &Tensor, weight: &Tensor) -> Result<Tensor> {
    let (n, d) = input.matrix("dense")?;
    let (o, wd) = weight.matrix("dense")?;
    if wd != d {
        return Err(Error::Dimension {
            op: "dense",
            axis: "inner",
            expected: wd,
            got: d,
        });
    }
    let x = input.data();
    let w = weight.data();
    let mut out = vec![0.0f32; n * o];
    for ni in 0..n {
        let xr = &x[ni * d..(ni + 1) * d];
        for oi in 0..o {
            let wr = &w[oi * d..(oi + 1) * d];
            out[ni * o + oi] = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
        }
    }
    Tensor::from_vec(&[n, o], out)
}

/// Returns `(grad_input, grad_weight)` for [`dense_forward`].
pub fn dense_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (n, d) = input.matrix("dense_backward")?;
    let (o, _) = weight.matrix("dense_backward")?;
    if grad_out.shape() != [n, o] {
        return Err(Error::Shape {
            op: "dense_backward",
            shape: grad_out.shape().to_vec(),
            reason: "gradient does not match the forward output",
        });
    }
    let (x, w, go) = (input.data(), weight.data(), grad_out.data());
    let mut gi = vec![0.0f32; n * d];
    let mut gw = vec![0.0f32; o * d];
    for ni in 0..n {
        for oi in 0..o {
            let g = go[ni * o + oi];
            for di in 0..d {
                gi[ni * d + di] += g * w[oi * d + di];
                gw[oi * d + di] += g * x[ni * d + di];
            }
        }
    }
    Ok((
        Tensor::from_vec(&[n, d], gi)?,
        Tensor::from_vec(&[o, d], gw)?,
    ))
}

/// Number of channels and elements per channel plane for rank-2 or rank-4
/// activations.
fn channel_layout(x: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [n, c] => Ok((n, c, 1)),
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => Err(Error::Shape {
            op,
            shape: x.shape().to_vec(),
            reason: "expected rank 2 or 4",
        }),
    }
}

/// Adds `bias[c]` to every element of channel `c`.
pub fn add_channel_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, c, plane) = channel_layout(x, "bias")?;
    if bias.len() != c {
        return Err(Error::Dimension {
            op: "bias",
            axis: "channels",
            expected: c,
            got: bias.len(),
        });
    }
    let mut out = x.clone();
    let b = bias.data();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v += b[(i / plane) % c];
    }
    debug_assert_eq!(out.len(), n * c * plane);
    Ok(out)
}

/// Sums `grad` over everything except the channel axis.
pub fn channel_bias_backward(grad: &Tensor) -> Result<Tensor> {
    let (_, c, plane) = channel_layout(grad, "bias_backward")?;
    let mut gb = vec![0.0f32; c];
    for (i, v) in grad.data().iter().enumerate() {
        gb[(i / plane) % c] += v;
    }
    Tensor::from_vec(&[c], gb)
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Gradient through ReLU given the forward *output*.
pub fn relu_backward(output: &Tensor, grad: &Tensor) -> Tensor {
    let mut g = grad.clone();
    for (gv, &y) in g.data_mut().iter_mut().zip(output.data()) {
        if y <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// Multiplies channel `c` of image `n` by `mask[n, c]`.
pub fn mul_channel_mask(x: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let (n, c, plane) = channel_layout(x, "channel_mask")?;
    if mask.shape() != [n, c] {
        return Err(Error::Shape {
            op: "channel_mask",
            shape: mask.shape().to_vec(),
            reason: "mask must be [N, C] of the masked tensor",
        });
    }
    let mut out = x.clone();
    let m = mask.data();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v *= m[i / plane];
    }
    Ok(out)
}

/// Truncates or zero-extends the channel axis to `channels`.
pub fn resize_channels(x: &Tensor, channels: usize) -> Result<Tensor> {
    let (n, c, plane) = channel_layout(x, "resize_channels")?;
    let keep = c.min(channels);
    let mut shape = x.shape().to_vec();
    shape[1] = channels;
    let mut out = vec![0.0f32; n * channels * plane];
    for ni in 0..n {
        let src = &x.data()[ni * c * plane..(ni * c + keep) * plane];
        out[ni * channels * plane..(ni * channels + keep) * plane].copy_from_slice(src);
    }
    Tensor::from_vec(&shape, out)
}

/// Channels `[start, end)` of `x`.
pub fn slice_channels(x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let (n, c, plane) = channel_layout(x, "slice_channels")?;
    if start >= end || end > c {
        return Err(Error::Dimension {
            op: "slice_channels",
            axis: "channels",
            expected: c,
            got: end,
        });
    }
    let mut shape = x.shape().to_vec();
    shape[1] = end - start;
    let mut out = Vec::with_capacity(n * (end - start) * plane);
    for ni in 0..n {
        out.extend_from_slice(&x.data()[(ni * c + start) * plane..(ni * c + end) * plane]);
    }
    Tensor::from_vec(&shape, out)
}

/// Stacks `a` then `b` along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, ca, plane) = channel_layout(a, "concat_channels")?;
    let (nb, cb, plane_b) = channel_layout(b, "concat_channels")?;
    if n != nb || plane != plane_b || a.rank() != b.rank() {
        return Err(Error::Shape {
            op: "concat_channels",
            shape: b.shape().to_vec(),
            reason: "batch and spatial extents must agree",
        });
    }
    let mut shape = a.shape().to_vec();
    shape[1] = ca + cb;
    let mut out = Vec::with_capacity(a.len() + b.len());
    for ni in 0..n {
        out.extend_from_slice(&a.data()[ni * ca * plane..(ni + 1) * ca * plane]);
        out.extend_from_slice(&b.data()[ni * cb * plane..(ni + 1) * cb * plane]);
    }
    Tensor::from_vec(&shape, out)
}

/// `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.nchw("global_avg_pool")?;
    let plane = h * w;
    let out = x
        .data()
        .chunks(plane)
        .map(|p| p.iter().sum::<f32>() / plane as f32)
        .collect();
    Tensor::from_vec(&[n, c], out)
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad: &Tensor) -> Result<Tensor> {
    let plane = input_shape[2] * input_shape[3];
    let scale = 1.0 / plane as f32;
    let mut out = Vec::with_capacity(grad.len() * plane);
    for &g in grad.data() {
        out.extend(std::iter::repeat_n(g * scale, plane));
    }
    Tensor::from_vec(input_shape, out)
}

/// Row-wise softmax.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (n, o) = logits.matrix("softmax")?;
    let mut out = logits.clone();
    for r in 0..n {
        let row = &mut out.data_mut()[r * o..(r + 1) * o];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(out)
}

/// Mean softmax cross-entropy over the batch.
///
/// Returns the loss and its gradient with respect to `logits`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    let (n, o) = logits.matrix("softmax_cross_entropy")?;
    if labels.len() != n {
        return Err(Error::Dimension {
            op: "softmax_cross_entropy",
            axis: "batch",
            expected: n,
            got: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= o) {
        return Err(Error::Domain(format!(
            "label {bad} out of range for {o} classes"
        )));
    }
    let mut grad = softmax(logits)?;
    let mut loss = 0.0f64;
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits.data()[r * o..(r + 1) * o];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse = max
            + row
                .iter()
                .map(|&v| (v as f64 - max).exp())
                .sum::<f64>()
                .ln();
        loss += lse - row[label] as f64;
        grad.data_mut()[r * o + label] -= 1.0;
    }
    let scale = 1.0 / n as f32;
    grad.data_mut().iter_mut().for_each(|g| *g *= scale);
    Ok(((loss / n as f64) as f32, grad))
}

/// `sum((pred - target)^2)` and its gradient with respect to `pred`.
pub fn squared_error(pred: &Tensor, target: &Tensor) -> Result<(f32, Tensor)> {
    pred.check_same_shape("squared_error", target)?;
    let mut grad = pred.clone();
    let mut loss = 0.0f32;
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        loss += d * d;
        *g = 2.0 * d;
    }
    Ok((loss, grad))
}
