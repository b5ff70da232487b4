use serde::{Deserialize, Serialize};

/// Width `M` and kernel size `k` picked for one layer. The kernel is
/// meaningless when `width == 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LayerChoice {
    pub width: usize,
    pub kernel: usize,
}

impl LayerChoice {
    pub fn new(width: usize, kernel: usize) -> Self {
        LayerChoice { width, kernel }
    }

    pub fn is_removed(&self) -> bool {
        self.width == 0
    }

    /// `(width, kernel)` with the kernel zeroed for removed layers, so two
    /// choices that build the same network compare equal.
    pub fn key(&self) -> (usize, usize) {
        if self.width == 0 {
            (0, 0)
        } else {
            (self.width, self.kernel)
        }
    }

    /// Whether `self` is `other` with filters removed and/or a smaller
    /// kernel (or equal to it).
    pub fn is_within(&self, other: &LayerChoice) -> bool {
        self.width <= other.width && (self.width == 0 || self.kernel <= other.kernel)
    }
}

/// One sub-network: a [`LayerChoice`] per searchable layer.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubNetChoice(Vec<LayerChoice>);

impl SubNetChoice {
    pub fn new(layers: Vec<LayerChoice>) -> Self {
        SubNetChoice(layers)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LayerChoice> {
        self.0.iter()
    }

    pub fn layers(&self) -> &[LayerChoice] {
        &self.0
    }

    pub fn layer(&self, i: usize) -> LayerChoice {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, c: LayerChoice) {
        self.0[i] = c;
    }

    pub fn key(&self) -> Vec<(usize, usize)> {
        self.0.iter().map(LayerChoice::key).collect()
    }

    /// Layers whose canonical form differs between the two choices.
    pub fn changed_layers(&self, other: &SubNetChoice) -> Vec<usize> {
        self.0
            .iter()
            .zip(&other.0)
            .enumerate()
            .filter(|(_, (a, b))| a.key() != b.key())
            .map(|(i, _)| i)
            .collect()
    }
}

impl PartialEq for SubNetChoice {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for SubNetChoice {}

impl std::hash::Hash for SubNetChoice {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.key().hash(state);
    }
}

impl std::fmt::Display for SubNetChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            if c.is_removed() {
                f.write_str("-")?;
            } else {
                write!(f, "{}k{}", c.width, c.kernel)?;
            }
        }
        Ok(())
    }
}
