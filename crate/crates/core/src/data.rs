//! Desk-scale datasets: a synthetic generator, a tiny raster container and
//! seeded, label-stratified splits.
//!
//! # Raster container
//!
//! Little-endian throughout:
//!
//! | offset | size        | field                                  |
//! |--------|-------------|----------------------------------------|
//! | 0      | 4           | magic `b"CBCR"`                        |
//! | 4      | 4 x u32     | `N`, `C`, `H`, `W`                     |
//! | 20     | u32         | `classes`                              |
//! | 24     | N*C*H*W u8  | pixels, NCHW order, value / 255 on load |
//! | ...    | N u16       | labels                                 |

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RASTER_MAGIC: &[u8; 4] = b"CBCR";
const HEADER_LEN: usize = 24;

/// Subtracted from every stored pixel when a batch is fed to a network.
/// With no normalisation layers, zero-centred inputs train far more reliably.
pub const INPUT_OFFSET: f32 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Full,
    Train,
    Holdout,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let (n, ..) = images.nchw("dataset")?;
        if labels.len() != n {
            return Err(Error::Dimension {
                op: "dataset",
                axis: "labels",
                expected: n,
                got: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Domain(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
            split: Split::Full,
        })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(C, H, W)` of one image.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let images = self.images.gather_batch(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(Dataset {
            images,
            labels,
            classes: self.classes,
            split: self.split,
        })
    }

    /// Network inputs and labels at `indices`, as one batch. Inputs are the
    /// stored pixels shifted by `-INPUT_OFFSET`, so `[0, 1]` maps to
    /// `[-0.5, 0.5]`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let mut d = self.subset(indices)?;
        for v in d.images.data_mut() {
            *v -= INPUT_OFFSET;
        }
        Ok((d.images, d.labels))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Parameters of [`synth_classification`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Standard deviation of the additive pixel noise.
    pub noise: f32,
    pub seed: u64,
}

/// Class prototype images: a Gaussian blob with a class-specific centre,
/// spread and per-channel colour on a mid-grey background.
pub fn synth_prototypes(cfg: &SynthConfig) -> Result<Tensor> {
    if cfg.classes < 2 {
        return Err(Error::Config(
            "synthetic dataset needs at least 2 classes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (c, h, w) = (cfg.channels, cfg.height, cfg.width);
    let mut data = Vec::with_capacity(cfg.classes * c * h * w);
    for _ in 0..cfg.classes {
        let cy = rng.random_range(0.25..0.75) * h as f32;
        let cx = rng.random_range(0.25..0.75) * w as f32;
        let sigma = rng.random_range(0.15..0.4) * h.min(w) as f32;
        let colour: Vec<f32> = (0..c).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        for &col in &colour {
            for y in 0..h {
                for x in 0..w {
                    let d2 = (y as f32 + 0.5 - cy).powi(2) + (x as f32 + 0.5 - cx).powi(2);
                    let blob = (-d2 / (2.0 * sigma * sigma)).exp();
                    data.push(0.5 + 0.5 * col * blob);
                }
            }
        }
    }
    Tensor::from_vec(&[cfg.classes, c, h, w], data)
}

/// `per_class` noisy copies of each class prototype, class-major order.
/// Deterministic in `cfg.seed`.
pub fn synth_classification(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.per_class == 0 {
        return Err(Error::Config("per_class must be positive".into()));
    }
    let protos = synth_prototypes(cfg)?;
    let plane = cfg.channels * cfg.height * cfg.width;
    // Separate stream from the prototypes so noise changes don't move them.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let normal =
        Normal::new(0.0f32, cfg.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let n = cfg.classes * cfg.per_class;
    let mut data = Vec::with_capacity(n * plane);
    let mut labels = Vec::with_capacity(n);
    for class in 0..cfg.classes {
        let proto = &protos.data()[class * plane..(class + 1) * plane];
        for _ in 0..cfg.per_class {
            data.extend(proto.iter().map(|&p| {
                if cfg.noise > 0.0 {
                    p + normal.sample(&mut rng)
                } else {
                    p
                }
            }));
            labels.push(class);
        }
    }
    let images = Tensor::from_vec(&[n, cfg.channels, cfg.height, cfg.width], data)?;
    Dataset::new(images, labels, cfg.classes)
}

/// Label-stratified split into `(train, holdout)`.
///
/// The holdout gets `round(fraction * N)` items, apportioned across classes by
/// largest remainder so each class is within one item of proportional.
pub fn split(dataset: &Dataset, holdout_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    split_tagged(
        dataset,
        holdout_fraction,
        seed,
        Split::Train,
        Split::Holdout,
    )
}

pub fn split_tagged(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
    rest_tag: Split,
    taken_tag: Split,
) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction {fraction} must lie in (0, 1)"
        )));
    }
    let n = dataset.len();
    let target = (fraction * n as f64).round() as usize;
    if target == 0 || target == n {
        return Err(Error::Config(format!(
            "split fraction {fraction} of {n} items leaves an empty side"
        )));
    }

    let counts = dataset.class_counts();
    let ideal: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 * target as f64 / n as f64)
        .collect();
    let mut take: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
    let mut short = target - take.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &class in &order {
        if short == 0 {
            break;
        }
        if take[class] < counts[class] {
            take[class] += 1;
            short -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = Vec::with_capacity(target);
    let mut rest = Vec::with_capacity(n - target);
    for (class, &k) in take.iter().enumerate() {
        let mut idx: Vec<usize> = (0..n).filter(|&i| dataset.labels[i] == class).collect();
        idx.shuffle(&mut rng);
        taken.extend_from_slice(&idx[..k]);
        rest.extend_from_slice(&idx[k..]);
    }
    taken.sort_unstable();
    rest.sort_unstable();
    Ok((
        dataset.subset(&rest)?.with_split(rest_tag),
        dataset.subset(&taken)?.with_split(taken_tag),
    ))
}

/// Encodes `dataset` in the raster container. Pixels are clamped to `[0, 1]`
/// and quantised to `round(255 * v)`.
pub fn encode_raster(dataset: &Dataset) -> Result<Vec<u8>> {
    let (n, c, h, w) = dataset.images.nchw("raster")?;
    if dataset.classes > u16::MAX as usize + 1 {
        return Err(Error::Domain("too many classes for u16 labels".into()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + dataset.images.len() + 2 * n);
    out.extend_from_slice(RASTER_MAGIC);
    for v in [n, c, h, w, dataset.classes] {
        let v = u32::try_from(v).map_err(|_| Error::Domain(format!("{v} does not fit a u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(
        dataset
            .images
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    for &l in &dataset.labels {
        out.extend_from_slice(&(l as u16).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_raster(bytes: &[u8]) -> Result<Dataset> {
    let truncated = |offset: usize, what: &str| Error::Parse {
        offset,
        reason: format!("file truncated while reading {what}"),
    };
    if bytes.len() < 4 {
        return Err(truncated(bytes.len(), "magic"));
    }
    if &bytes[..4] != RASTER_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            reason: format!("bad magic {:?}", &bytes[..4]),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(bytes.len(), "header"));
    }
    let field = |i: usize| {
        let o = 4 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize
    };
    let (n, c, h, w, classes) = (field(0), field(1), field(2), field(3), field(4));
    if n == 0 || c == 0 || h == 0 || w == 0 || classes == 0 {
        return Err(Error::Parse {
            offset: 4,
            reason: "header extents must be positive".into(),
        });
    }
    let pixels = n
        .checked_mul(c)
        .and_then(|v| v.checked_mul(h))
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::Parse {
            offset: 4,
            reason: "header extents overflow".into(),
        })?;
    let labels_at = HEADER_LEN + pixels;
    let end = labels_at + 2 * n;
    if bytes.len() < labels_at {
        return Err(truncated(bytes.len(), "pixels"));
    }
    if bytes.len() < end {
        return Err(truncated(bytes.len(), "labels"));
    }
    if bytes.len() > end {
        return Err(Error::Parse {
            offset: end,
            reason: format!("{} trailing bytes", bytes.len() - end),
        });
    }
    let data = bytes[HEADER_LEN..labels_at]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let o = labels_at + 2 * i;
        let l = u16::from_le_bytes([bytes[o], bytes[o + 1]]) as usize;
        if l >= classes {
            return Err(Error::Parse {
                offset: o,
                reason: format!("label {l} out of range for {classes} classes"),
            });
        }
        labels.push(l);
    }
    Dataset::new(Tensor::from_vec(&[n, c, h, w], data)?, labels, classes)
}

pub fn save_raster(dataset: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, encode_raster(dataset)?).map_err(|e| Error::io(path, e))
}

pub fn load_raster(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raster(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_centres_pixels() {
        let images = Tensor::from_vec(&[2, 1, 1, 2], vec![0.0, 1.0, 0.25, 0.5]).unwrap();
        let ds = Dataset::new(images, vec![1, 0], 2).unwrap();
        let (x, y) = ds.batch(&[1, 0]).unwrap();
        assert_eq!(x.data(), &[-0.25, 0.0, -0.5, 0.5]);
        assert_eq!(y, vec![0, 1]);
    }

    fn cfg(noise: f32, seed: u64) -> SynthConfig {
        SynthConfig {
            classes: 4,
            per_class: 25,
            channels: 3,
            height: 6,
            width: 6,
            noise,
            seed,
        }
    }

    #[test]
    fn noiseless_data_is_nearest_prototype_separable() {
        let c = cfg(0.0, 3);
        let ds = synth_classification(&c).unwrap();
        let protos = synth_prototypes(&c).unwrap();
        let plane = 3 * 36;
        for (i, &label) in ds.labels().iter().enumerate() {
            let img = &ds.images().data()[i * plane..(i + 1) * plane];
            let nearest = (0..4)
                .min_by(|&a, &b| {
                    let d = |k: usize| -> f32 {
                        img.iter()
                            .zip(&protos.data()[k * plane..(k + 1) * plane])
                            .map(|(x, y)| (x - y).powi(2))
                            .sum()
                    };
                    d(a).total_cmp(&d(b))
                })
                .unwrap();
            assert_eq!(nearest, label);
        }
    }

    #[test]
    fn deterministic_and_balanced() {
        let a = synth_classification(&cfg(0.2, 11)).unwrap();
        let b = synth_classification(&cfg(0.2, 11)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), vec![25; 4]);
        let c = synth_classification(&cfg(0.2, 12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_sizes_and_union() {
        let ds = synth_classification(&cfg(0.1, 1)).unwrap();
        let (train, hold) = split(&ds, 0.1, 5).unwrap();
        assert_eq!((train.len(), hold.len()), (90, 10));
        assert_eq!(train.split(), Split::Train);
        let mut all: Vec<(usize, u64)> = train
            .labels()
            .iter()
            .chain(hold.labels())
            .zip(
                train
                    .images()
                    .data()
                    .chunks(108)
                    .chain(hold.images().data().chunks(108)),
            )
            .map(|(&l, px)| {
                (
                    l,
                    px.iter()
                        .fold(0u64, |h, v| h.rotate_left(5) ^ v.to_bits() as u64),
                )
            })
            .collect();
        let mut orig: Vec<(usize, u64)> = ds
            .labels()
            .iter()
            .zip(ds.images().data().chunks(108))
            .map(|(&l, px)| {
                (
                    l,
                    px.iter()
                        .fold(0u64, |h, v| h.rotate_left(5) ^ v.to_bits() as u64),
                )
            })
            .collect();
        all.sort_unstable();
        orig.sort_unstable();
        assert_eq!(all, orig);
        assert_eq!(split(&ds, 0.1, 5).unwrap().1, hold);
    }

    #[test]
    fn split_rejects_empty_sides() {
        let ds = synth_classification(&cfg(0.1, 1)).unwrap();
        assert!(split(&ds, 0.001, 0).is_err());
        assert!(split(&ds, 0.0, 0).is_err());
        assert!(split(&ds, 1.0, 0).is_err());
    }

    #[test]
    fn raster_round_trip_and_errors() {
        let ds = synth_classification(&SynthConfig {
            per_class: 1,
            classes: 2,
            ..cfg(0.0, 2)
        })
        .unwrap();
        let bytes = encode_raster(&ds).unwrap();
        let back = decode_raster(&bytes).unwrap();
        assert_eq!(back.labels(), ds.labels());
        assert_eq!(encode_raster(&back).unwrap(), bytes);

        for cut in [2, 10, HEADER_LEN + 5, bytes.len() - 1] {
            assert!(
                matches!(decode_raster(&bytes[..cut]), Err(Error::Parse { .. })),
                "cut {cut}"
            );
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_raster(&bad),
            Err(Error::Parse { offset: 0, .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_raster(&long).is_err());
    }
}
