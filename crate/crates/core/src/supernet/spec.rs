use serde::{Deserialize, Serialize};

use super::cbc::cbc_output_channels;
use super::choice::{LayerChoice, SubNetChoice};
use crate::error::{Error, Result};
use crate::tensor::ops::conv_out_extent;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Dense,
}

/// Static description of one searchable convolution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub index: usize,
    pub kind: LayerKind,
    /// Input channels `C` of the full-size network.
    pub in_channels: usize,
    /// Initial filter count `T`; also caps how many inputs may be bypassed.
    pub filters: usize,
    /// Superkernel size `K`.
    pub max_kernel: usize,
    pub stride: usize,
    pub width_grid: Vec<usize>,
    pub kernel_grid: Vec<usize>,
}

/// Nine evenly spaced widths over `[0, T]`, rounded and de-duplicated. Zero is
/// dropped for downsampling layers, which cannot be bypassed.
pub fn default_width_grid(filters: usize, stride: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = (0..=8)
        .map(|i| ((i * filters) as f64 / 8.0).round() as usize)
        .collect();
    grid.dedup();
    if stride != 1 {
        grid.retain(|&w| w > 0);
    }
    grid
}

/// Odd kernel sizes from 3 up to `K` (just `[K]` for pointwise layers).
pub fn default_kernel_grid(max_kernel: usize) -> Vec<usize> {
    if max_kernel < 3 {
        return vec![max_kernel];
    }
    (3..=max_kernel).step_by(2).collect()
}

impl LayerSpec {
    pub fn conv(
        index: usize,
        in_channels: usize,
        filters: usize,
        max_kernel: usize,
        stride: usize,
    ) -> Self {
        LayerSpec {
            index,
            kind: LayerKind::Conv,
            in_channels,
            filters,
            max_kernel,
            stride,
            width_grid: default_width_grid(filters, stride),
            kernel_grid: default_kernel_grid(max_kernel),
        }
    }

    /// Bypass needs matching spatial extents, so only stride-1 layers have it.
    pub fn has_bypass(&self) -> bool {
        self.stride == 1
    }

    pub fn min_width(&self) -> usize {
        self.width_grid[0]
    }

    pub fn min_kernel(&self) -> usize {
        self.kernel_grid[0]
    }

    /// Output channels when the layer sees `in_channels` inputs (which may be
    /// fewer than `C` once earlier layers shrink) and keeps `width` filters.
    pub fn output_channels(&self, in_channels: usize, width: usize) -> Result<usize> {
        if self.has_bypass() {
            cbc_output_channels(in_channels, self.filters, width)
        } else if width == 0 {
            Err(Error::Config(format!(
                "layer {}: stride-{} layer cannot be removed; the bypass path would not match the \
                 convolution's spatial extent",
                self.index, self.stride
            )))
        } else if width > self.filters {
            Err(Error::Domain(format!(
                "M={width} exceeds T={}",
                self.filters
            )))
        } else {
            Ok(width)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |what: String| Err(Error::Config(format!("layer {}: {what}", self.index)));
        if self.kind != LayerKind::Conv {
            return fail("only convolution layers are searchable".into());
        }
        if self.in_channels == 0 || self.filters == 0 {
            return fail("in_channels and filters must be positive".into());
        }
        if self.max_kernel.is_multiple_of(2) {
            return fail(format!("max_kernel {} must be odd", self.max_kernel));
        }
        if self.stride == 0 || self.stride > 2 {
            return fail(format!("stride {} must be 1 or 2", self.stride));
        }
        let g = &self.width_grid;
        if g.is_empty() || g.windows(2).any(|w| w[0] >= w[1]) {
            return fail("width_grid must be non-empty and strictly increasing".into());
        }
        if *g.last().unwrap() != self.filters {
            return fail(format!("width_grid must end at filters={}", self.filters));
        }
        if g[0] == 0 && !self.has_bypass() {
            return fail("width_grid may contain 0 only for stride-1 layers".into());
        }
        let k = &self.kernel_grid;
        if k.is_empty() || k.windows(2).any(|w| w[0] >= w[1]) {
            return fail("kernel_grid must be non-empty and strictly increasing".into());
        }
        if k.iter().any(|&v| v % 2 == 0 || v > self.max_kernel) {
            return fail("kernel_grid values must be odd and at most max_kernel".into());
        }
        if *k.last().unwrap() != self.max_kernel {
            return fail(format!(
                "kernel_grid must end at max_kernel={}",
                self.max_kernel
            ));
        }
        Ok(())
    }

    pub fn allows(&self, choice: LayerChoice) -> bool {
        self.width_grid.contains(&choice.width)
            && (choice.width == 0 || self.kernel_grid.contains(&choice.kernel))
    }
}

/// Input geometry, class count and the ordered searchable layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Builds a chain of convolutions from `(filters, max_kernel, stride)`
    /// triples with default grids.
    pub fn chain(
        input_channels: usize,
        height: usize,
        width: usize,
        classes: usize,
        layers: &[(usize, usize, usize)],
    ) -> Self {
        let mut c = input_channels;
        let layers = layers
            .iter()
            .enumerate()
            .map(|(i, &(t, k, s))| {
                let l = LayerSpec::conv(i, c, t, k, s);
                c = t;
                l
            })
            .collect();
        NetworkSpec {
            input_channels,
            height,
            width,
            classes,
            layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config("input dimensions must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("classes must be at least 2".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        let mut c = self.input_channels;
        for (i, l) in self.layers.iter().enumerate() {
            if l.index != i {
                return Err(Error::Config(format!(
                    "layer at position {i} has index {}",
                    l.index
                )));
            }
            if l.in_channels != c {
                return Err(Error::Config(format!(
                    "layer {i}: in_channels {} does not match the previous output {c}",
                    l.in_channels
                )));
            }
            l.validate()?;
            c = l.filters;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// `(H_out, W_out)` of every layer.
    pub fn output_extents(&self) -> Vec<(usize, usize)> {
        let (mut h, mut w) = (self.height, self.width);
        self.layers
            .iter()
            .map(|l| {
                h = conv_out_extent(h, l.stride);
                w = conv_out_extent(w, l.stride);
                (h, w)
            })
            .collect()
    }

    pub fn full_choice(&self) -> SubNetChoice {
        SubNetChoice::new(
            self.layers
                .iter()
                .map(|l| LayerChoice::new(l.filters, l.max_kernel))
                .collect(),
        )
    }

    pub fn min_choice(&self) -> SubNetChoice {
        SubNetChoice::new(
            self.layers
                .iter()
                .map(|l| LayerChoice::new(l.min_width(), l.min_kernel()))
                .collect(),
        )
    }

    pub fn validate_choice(&self, choice: &SubNetChoice) -> Result<()> {
        if choice.len() != self.layers.len() {
            return Err(Error::Config(format!(
                "choice has {} layers, network has {}",
                choice.len(),
                self.layers.len()
            )));
        }
        for (l, c) in self.layers.iter().zip(choice.iter()) {
            if !l.allows(*c) {
                return Err(Error::Config(format!(
                    "layer {}: (M={}, k={}) is not in the search grid",
                    l.index, c.width, c.kernel
                )));
            }
        }
        Ok(())
    }

    /// Input channel count each layer actually receives under `choice`, plus
    /// the channel count reaching the classifier as the last element.
    pub fn effective_channels(&self, choice: &SubNetChoice) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(self.layers.len() + 1);
        let mut c = self.input_channels;
        for (l, lc) in self.layers.iter().zip(choice.iter()) {
            out.push(c);
            c = l.output_channels(c, lc.width)?;
        }
        out.push(c);
        Ok(out)
    }
}
