//! Standalone sub-networks cut out of shared weights.

use super::choice::SubNetChoice;
use super::masking::slice_conv_weight;
use super::network::{layer_param_names, LayerParams};
use super::spec::{LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::tape::{ParamStore, Tape, Var};
use crate::tensor::Tensor;

/// Anything holding per-layer convolution weights laid out with the
/// super-network's channel indexing: the super-network itself, or a
/// previously extracted sub-network.
pub trait WeightSource {
    fn spec(&self) -> &NetworkSpec;
    /// `[F, C, k, k]` weights and `[F]` bias of `layer`, or `None` if the
    /// layer has no filters in this source.
    fn conv_weights(&self, layer: usize) -> Option<(&Tensor, &Tensor)>;
    /// `[classes, D]` weights and `[classes]` bias.
    fn head_weights(&self) -> (&Tensor, &Tensor);
}

/// A convolution that kept `filters > 0` filters, followed by the bypassed
/// input channels `filters..filters + bypass`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvStage {
    pub layer: usize,
    pub in_channels: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub bypass: usize,
    pub params: LayerParams,
}

impl ConvStage {
    /// Slices the source weights for `layer` at `(width, kernel)` given the
    /// channel count actually reaching it. Returns `None` for `width == 0`.
    pub(crate) fn build(
        l: &LayerSpec,
        in_channels: usize,
        width: usize,
        kernel: usize,
        source: &impl WeightSource,
        params: &mut ParamStore,
    ) -> Result<Option<ConvStage>> {
        let out = l.output_channels(in_channels, width)?;
        if width == 0 {
            return Ok(None);
        }
        let (w, b) = source.conv_weights(l.index).ok_or_else(|| {
            Error::Config(format!(
                "layer {} was removed in the source weights; cannot regrow {width} filters",
                l.index
            ))
        })?;
        let weight = slice_conv_weight(w, width, in_channels, kernel)?;
        if width > b.len() {
            return Err(Error::Dimension {
                op: "extract",
                axis: "bias",
                expected: b.len(),
                got: width,
            });
        }
        let bias = Tensor::from_vec(&[width], b.data()[..width].to_vec())?;
        let (wn, bn) = layer_param_names(l.index);
        let params = LayerParams {
            weight: params.insert(wn, weight),
            bias: params.insert(bn, bias),
        };
        Ok(Some(ConvStage {
            layer: l.index,
            in_channels,
            filters: width,
            kernel,
            stride: l.stride,
            bypass: out - width,
            params,
        }))
    }

    pub fn out_channels(&self) -> usize {
        self.filters + self.bypass
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, x: Var) -> Result<Var> {
        let c = tape.value(x).dim(1);
        if c != self.in_channels {
            return Err(Error::Dimension {
                op: "conv stage",
                axis: "channels",
                expected: self.in_channels,
                got: c,
            });
        }
        let w = tape.param(params, self.params.weight);
        let b = tape.param(params, self.params.bias);
        let y = tape.conv2d(x, w, self.stride)?;
        let y = tape.bias(y, b)?;
        let y = tape.relu(y);
        if self.bypass == 0 {
            return Ok(y);
        }
        let passed = tape.slice_channels(x, self.filters, self.filters + self.bypass)?;
        tape.concat_channels(y, passed)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Stage {
    Conv(ConvStage),
    /// A removed layer whose bypass cap drops trailing channels.
    Truncate {
        layer: usize,
        keep: usize,
    },
}

/// Independent network for one [`SubNetChoice`]; owns copies of the sliced
/// weights, so it can be trained or evaluated without touching the source.
#[derive(Clone, Debug)]
pub struct SubNetwork {
    spec: NetworkSpec,
    choice: SubNetChoice,
    stages: Vec<Stage>,
    params: ParamStore,
    head: LayerParams,
    out_channels: usize,
}

/// Cuts `choice` out of `source`: first `M` filters, first `C_eff` input
/// channels and the centred `k x k` window of every kept layer. Layers with
/// `M = 0` are dropped, or become a channel truncation when `T < C_eff`.
pub fn extract_subnetwork(source: &impl WeightSource, choice: &SubNetChoice) -> Result<SubNetwork> {
    let spec = source.spec().clone();
    spec.validate_choice(choice)?;
    let mut params = ParamStore::new();
    let mut stages = Vec::new();
    let mut c = spec.input_channels;
    for (l, lc) in spec.layers.iter().zip(choice.iter()) {
        match ConvStage::build(l, c, lc.width, lc.kernel, source, &mut params)? {
            Some(stage) => {
                c = stage.out_channels();
                stages.push(Stage::Conv(stage));
            }
            None => {
                let keep = l.output_channels(c, 0)?;
                if keep < c {
                    stages.push(Stage::Truncate {
                        layer: l.index,
                        keep,
                    });
                }
                c = keep;
            }
        }
    }
    let (hw, hb) = source.head_weights();
    let (classes, d) = hw.matrix("extract head")?;
    if c > d {
        return Err(Error::Dimension {
            op: "extract head",
            axis: "features",
            expected: d,
            got: c,
        });
    }
    let mut head_w = Vec::with_capacity(classes * c);
    for row in hw.data().chunks(d) {
        head_w.extend_from_slice(&row[..c]);
    }
    let head = LayerParams {
        weight: params.insert("head.weight", Tensor::from_vec(&[classes, c], head_w)?),
        bias: params.insert("head.bias", hb.clone()),
    };
    Ok(SubNetwork {
        spec,
        choice: choice.clone(),
        stages,
        params,
        head,
        out_channels: c,
    })
}

impl SubNetwork {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn choice(&self) -> &SubNetChoice {
        &self.choice
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Channels entering the classifier.
    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn conv_stage_count(&self) -> usize {
        self.stages
            .iter()
            .filter(|s| matches!(s, Stage::Conv(_)))
            .count()
    }

    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let mut x = input;
        for stage in &self.stages {
            x = match stage {
                Stage::Conv(s) => s.forward(tape, &self.params, x)?,
                Stage::Truncate { keep, .. } => tape.slice_channels(x, 0, *keep)?,
            };
        }
        let pooled = tape.global_avg_pool(x)?;
        let hw = tape.param(&self.params, self.head.weight);
        let hb = tape.param(&self.params, self.head.bias);
        let logits = tape.dense(pooled, hw)?;
        tape.bias(logits, hb)
    }

    pub fn logits(&self, images: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.leaf(images.clone());
        let out = self.forward(&mut tape, x)?;
        Ok(tape.value(out).clone())
    }

    /// Reuses the overlapping weights of `self` for a smaller architecture.
    pub fn shrink_to(&self, choice: &SubNetChoice) -> Result<SubNetwork> {
        for (i, (new, old)) in choice.iter().zip(self.choice.iter()).enumerate() {
            if !new.is_within(old) {
                return Err(Error::Config(format!(
                    "layer {i}: cannot grow from (M={}, k={}) to (M={}, k={})",
                    old.width, old.kernel, new.width, new.kernel
                )));
            }
        }
        extract_subnetwork(self, choice)
    }
}

impl WeightSource for SubNetwork {
    fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    fn conv_weights(&self, layer: usize) -> Option<(&Tensor, &Tensor)> {
        self.stages.iter().find_map(|s| match s {
            Stage::Conv(c) if c.layer == layer => Some((
                self.params.get(c.params.weight),
                self.params.get(c.params.bias),
            )),
            _ => None,
        })
    }

    fn head_weights(&self) -> (&Tensor, &Tensor) {
        (
            self.params.get(self.head.weight),
            self.params.get(self.head.bias),
        )
    }
}
