//! Ordered dropout masks, per-batch width sampling and superkernel windows.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Prefix mask: the first `ones_prefix` of `len` channels are kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ChannelMask {
    len: usize,
    ones_prefix: usize,
}

impl ChannelMask {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn ones_prefix(&self) -> usize {
        self.ones_prefix
    }

    pub fn get(&self, i: usize) -> bool {
        i < self.ones_prefix
    }

    pub fn complement_get(&self, i: usize) -> bool {
        i < self.len && i >= self.ones_prefix
    }

    pub fn to_vec(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    pub fn complement(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.complement_get(i)).collect()
    }
}

/// Keeps the first `width` of `total` channels.
pub fn ordered_dropout_mask(width: usize, total: usize) -> Result<ChannelMask> {
    if width > total {
        return Err(Error::Domain(format!(
            "ordered dropout width {width} exceeds channel count {total}"
        )));
    }
    Ok(ChannelMask {
        len: total,
        ones_prefix: width,
    })
}

/// `[N, C]` 0/1 tensor with row `n` equal to the prefix mask for `widths[n]`
/// (or its complement).
pub fn batch_mask(widths: &[usize], channels: usize, complement: bool) -> Result<Tensor> {
    let mut data = Vec::with_capacity(widths.len() * channels);
    for &w in widths {
        let m = ordered_dropout_mask(w, channels)?;
        data.extend((0..channels).map(|i| {
            let on = if complement {
                m.complement_get(i)
            } else {
                m.get(i)
            };
            if on {
                1.0
            } else {
                0.0
            }
        }));
    }
    Tensor::from_vec(&[widths.len(), channels], data)
}

/// Assigns one grid width to each of `batch` images so that every grid value
/// is used either `floor(batch / |grid|)` or one more time. Which values get
/// the extra slot, and the order, are random.
pub fn sample_width_assignments<R: Rng + ?Sized>(
    batch: usize,
    grid: &[usize],
    rng: &mut R,
) -> Vec<usize> {
    assert!(!grid.is_empty(), "width grid must not be empty");
    let base = batch / grid.len();
    let extra = batch % grid.len();
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.shuffle(rng);
    let mut out = Vec::with_capacity(batch);
    for (rank, &gi) in order.iter().enumerate() {
        let count = base + usize::from(rank < extra);
        out.extend(std::iter::repeat_n(grid[gi], count));
    }
    out.shuffle(rng);
    out
}

fn check_kernel(full: usize, k: usize) -> Result<()> {
    if k.is_multiple_of(2) || k > full || full.is_multiple_of(2) {
        return Err(Error::Domain(format!(
            "kernel {k} must be odd and at most the superkernel size {full}"
        )));
    }
    Ok(())
}

/// Multiplicative mask for `[F, C, K, K]` weights that keeps the centred
/// `k x k` window of every plane.
pub fn superkernel_window(shape: &[usize], k: usize) -> Result<Tensor> {
    let &[f, c, kh, kw] = shape else {
        return Err(Error::Shape {
            op: "superkernel",
            shape: shape.to_vec(),
            reason: "expected [F, C, K, K]",
        });
    };
    if kh != kw {
        return Err(Error::Dimension {
            op: "superkernel",
            axis: "kernel width",
            expected: kh,
            got: kw,
        });
    }
    check_kernel(kh, k)?;
    let off = (kh - k) / 2;
    let inside = |i: usize| i >= off && i < off + k;
    let plane: Vec<f32> = (0..kh * kw)
        .map(|i| {
            if inside(i / kw) && inside(i % kw) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let data = plane.repeat(f * c);
    Tensor::from_vec(shape, data)
}

/// Zeros every tap outside the centred `k x k` window.
pub fn superkernel_mask(weights: &Tensor, k: usize) -> Result<Tensor> {
    let window = superkernel_window(weights.shape(), k)?;
    let mut out = weights.clone();
    for (v, m) in out.data_mut().iter_mut().zip(window.data()) {
        *v *= m;
    }
    Ok(out)
}

/// Slices `[F, C, K, K]` weights down to the first `filters` filters, the
/// first `channels` input channels and the centred `k x k` window.
pub fn slice_conv_weight(
    weights: &Tensor,
    filters: usize,
    channels: usize,
    k: usize,
) -> Result<Tensor> {
    let (f, c, kk, _) = weights.nchw("slice_conv_weight")?;
    if filters == 0 || filters > f {
        return Err(Error::Dimension {
            op: "slice_conv_weight",
            axis: "filters",
            expected: f,
            got: filters,
        });
    }
    if channels == 0 || channels > c {
        return Err(Error::Dimension {
            op: "slice_conv_weight",
            axis: "channels",
            expected: c,
            got: channels,
        });
    }
    check_kernel(kk, k)?;
    let off = (kk - k) / 2;
    let mut data = Vec::with_capacity(filters * channels * k * k);
    for fi in 0..filters {
        for ci in 0..channels {
            for r in 0..k {
                let start = ((fi * c + ci) * kk + off + r) * kk + off;
                data.extend_from_slice(&weights.data()[start..start + k]);
            }
        }
    }
    Tensor::from_vec(&[filters, channels, k, k], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops::conv2d_forward;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn prefix_masks() {
        let m = ordered_dropout_mask(3, 8).unwrap();
        assert_eq!(
            m.to_vec(),
            vec![true, true, true, false, false, false, false, false]
        );
        assert!(ordered_dropout_mask(0, 4)
            .unwrap()
            .to_vec()
            .iter()
            .all(|b| !b));
        assert!(ordered_dropout_mask(4, 4)
            .unwrap()
            .to_vec()
            .iter()
            .all(|&b| b));
        assert!(ordered_dropout_mask(5, 4).is_err());
    }

    #[test]
    fn complement_partitions() {
        for total in 1..8 {
            for w in 0..=total {
                let m = ordered_dropout_mask(w, total).unwrap();
                let (a, b) = (m.to_vec(), m.complement());
                assert!(a.iter().zip(&b).all(|(x, y)| x ^ y));
            }
        }
    }

    #[test]
    fn uniform_partition_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = sample_width_assignments(8, &[2, 4, 6, 8], &mut rng);
        for g in [2, 4, 6, 8] {
            assert_eq!(a.iter().filter(|&&w| w == g).count(), 2);
        }
        let b = sample_width_assignments(5, &[0, 4], &mut rng);
        let zeros = b.iter().filter(|&&w| w == 0).count();
        assert!(zeros == 2 || zeros == 3);
        assert_eq!(b.len(), 5);
    }

    #[test]
    fn superkernel_zeroes_outer_ring() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Tensor::randn(&[2, 3, 5, 5], 1.0, &mut rng);
        assert_eq!(superkernel_mask(&w, 5).unwrap(), w);
        let m = superkernel_mask(&w, 3).unwrap();
        for plane in m.data().chunks(25) {
            assert_eq!(plane.iter().filter(|&&v| v == 0.0).count(), 16);
        }
        assert!(superkernel_mask(&w, 4).is_err());
        assert!(superkernel_mask(&w, 7).is_err());
    }

    #[test]
    fn masked_conv_equals_cropped_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randn(&[2, 3, 7, 7], 1.0, &mut rng);
        let w = Tensor::randn(&[4, 3, 7, 7], 1.0, &mut rng);
        for k in [1, 3, 5, 7] {
            for stride in [1, 2] {
                let masked = conv2d_forward(&x, &superkernel_mask(&w, k).unwrap(), stride).unwrap();
                let cropped =
                    conv2d_forward(&x, &slice_conv_weight(&w, 4, 3, k).unwrap(), stride).unwrap();
                assert!(
                    masked.max_abs_diff(&cropped) <= 1e-6,
                    "k={k} stride={stride}"
                );
            }
        }
    }

    #[test]
    fn slicing_takes_prefix_and_centre() {
        let w = Tensor::from_vec(&[2, 2, 3, 3], (0..36).map(|v| v as f32).collect()).unwrap();
        let s = slice_conv_weight(&w, 1, 1, 1).unwrap();
        assert_eq!(s.data(), &[4.0]);
        let s = slice_conv_weight(&w, 2, 1, 3).unwrap();
        assert_eq!(s.shape(), &[2, 1, 3, 3]);
        assert_eq!(s.data()[9], 18.0);
        assert!(slice_conv_weight(&w, 3, 1, 3).is_err());
    }
}
