use rand::Rng;

use super::masking::{batch_mask, sample_width_assignments, superkernel_window};
use super::spec::NetworkSpec;
use super::subnet::{ConvStage, WeightSource};
use crate::error::{Error, Result};
use crate::tensor::tape::{ParamId, ParamStore, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Full-width tensors with ordered-dropout masks on both paths.
    Training,
    /// Physically sliced weights; only the chosen channels exist.
    Evaluation,
}

/// Per-batch sampling decisions for one masked forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainPlan {
    /// `widths[layer][image]`.
    pub widths: Vec<Vec<usize>>,
    /// One kernel size per layer for the whole batch.
    pub kernels: Vec<usize>,
}

impl TrainPlan {
    /// Near-uniform widths per layer (independently across layers) and a
    /// uniformly drawn kernel per layer.
    pub fn sample<R: Rng + ?Sized>(spec: &NetworkSpec, batch: usize, rng: &mut R) -> Self {
        let mut widths = Vec::with_capacity(spec.len());
        let mut kernels = Vec::with_capacity(spec.len());
        for l in &spec.layers {
            widths.push(sample_width_assignments(batch, &l.width_grid, rng));
            kernels.push(l.kernel_grid[rng.random_range(0..l.kernel_grid.len())]);
        }
        TrainPlan { widths, kernels }
    }

    /// Every image uses the same sub-network.
    pub fn uniform(choice: &super::SubNetChoice, batch: usize) -> Self {
        TrainPlan {
            widths: choice.iter().map(|c| vec![c.width; batch]).collect(),
            kernels: choice.iter().map(|c| c.kernel).collect(),
        }
    }

    /// Largest width any image used in `layer`.
    pub fn max_width(&self, layer: usize) -> usize {
        self.widths[layer].iter().copied().max().unwrap_or(0)
    }
}

/// Full-size shared weights. Every sub-network is a prefix slice of these.
#[derive(Clone, Debug)]
pub struct SuperNetwork {
    spec: NetworkSpec,
    params: ParamStore,
    layers: Vec<LayerParams>,
    head: LayerParams,
}

pub(crate) fn layer_param_names(i: usize) -> (String, String) {
    (format!("layer{i}.weight"), format!("layer{i}.bias"))
}

impl SuperNetwork {
    /// He-initialised weights, zero biases.
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let mut layers = Vec::with_capacity(spec.len());
        for l in &spec.layers {
            let fan_in = (l.in_channels * l.max_kernel * l.max_kernel) as f32;
            let (wn, bn) = layer_param_names(l.index);
            let shape = [l.filters, l.in_channels, l.max_kernel, l.max_kernel];
            let weight = params.insert(wn, Tensor::randn(&shape, (2.0 / fan_in).sqrt(), rng));
            let bias = params.insert(bn, Tensor::zeros(&[l.filters]));
            layers.push(LayerParams { weight, bias });
        }
        let last = spec.layers.last().expect("validated non-empty").filters;
        let head = LayerParams {
            weight: params.insert(
                "head.weight",
                Tensor::randn(&[spec.classes, last], (1.0 / last as f32).sqrt(), rng),
            ),
            bias: params.insert("head.bias", Tensor::zeros(&[spec.classes])),
        };
        Ok(SuperNetwork {
            spec,
            params,
            layers,
            head,
        })
    }

    /// Same layout as [`SuperNetwork::new`] with every tensor zeroed; used
    /// as a skeleton before restoring a checkpoint.
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut net = Self::new(spec, &mut rng)?;
        let ids: Vec<_> = net.params.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            net.params.get_mut(id).fill(0.0);
        }
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn layer_params(&self, layer: usize) -> LayerParams {
        self.layers[layer]
    }

    pub fn head_params(&self) -> LayerParams {
        self.head
    }

    /// One searchable layer in training mode: superkernel- and OD-masked
    /// convolution plus the complement-masked bypass of the input.
    fn masked_layer(
        &self,
        tape: &mut Tape,
        layer: usize,
        x: Var,
        widths: &[usize],
        kernel: usize,
    ) -> Result<Var> {
        let l = &self.spec.layers[layer];
        let lp = self.layers[layer];
        let c = tape.value(x).dim(1);
        if c != l.in_channels {
            return Err(Error::Dimension {
                op: "supernet layer",
                axis: "channels",
                expected: l.in_channels,
                got: c,
            });
        }
        if let Some(&bad) = widths.iter().find(|&&w| w > l.filters) {
            return Err(Error::Domain(format!(
                "layer {layer}: M={bad} exceeds T={}",
                l.filters
            )));
        }
        if !l.has_bypass() && widths.contains(&0) {
            // Surfaces the configuration error for strided layers.
            l.output_channels(c, 0)?;
        }

        let mut w = tape.param(&self.params, lp.weight);
        if kernel != l.max_kernel {
            let window = superkernel_window(tape.value(w).shape(), kernel)?;
            w = tape.mul_const(w, window)?;
        }
        let b = tape.param(&self.params, lp.bias);
        let y = tape.conv2d(x, w, l.stride)?;
        let y = tape.bias(y, b)?;
        let y = tape.relu(y);
        let y = tape.channel_mask(y, batch_mask(widths, l.filters, false)?)?;
        if !l.has_bypass() {
            return Ok(y);
        }
        let bypass = tape.resize_channels(x, l.filters)?;
        let bypass = tape.channel_mask(bypass, batch_mask(widths, l.filters, true)?)?;
        tape.add(y, bypass)
    }

    /// Training-mode forward of the whole network: every image runs its own
    /// sub-network as dictated by `plan`. Returns `[N, classes]` logits.
    pub fn forward_masked(&self, tape: &mut Tape, input: Var, plan: &TrainPlan) -> Result<Var> {
        let n = tape.value(input).dim(0);
        if plan.widths.len() != self.spec.len() || plan.kernels.len() != self.spec.len() {
            return Err(Error::Config(
                "train plan does not cover every layer".into(),
            ));
        }
        let mut x = input;
        for i in 0..self.spec.len() {
            if plan.widths[i].len() != n {
                return Err(Error::Dimension {
                    op: "train plan",
                    axis: "batch",
                    expected: n,
                    got: plan.widths[i].len(),
                });
            }
            x = self.masked_layer(tape, i, x, &plan.widths[i], plan.kernels[i])?;
        }
        let pooled = tape.global_avg_pool(x)?;
        let hw = tape.param(&self.params, self.head.weight);
        let hb = tape.param(&self.params, self.head.bias);
        let logits = tape.dense(pooled, hw)?;
        tape.bias(logits, hb)
    }

    /// Runs a single layer with a uniform `(width, kernel)` over the batch.
    ///
    /// Training mode returns all `T` channels (zeros beyond `Z`); evaluation
    /// mode returns exactly `Z` channels computed from sliced weights. `input`
    /// must carry the layer's full `C` channels.
    pub fn forward_with_cbc(
        &self,
        layer: usize,
        input: &Tensor,
        width: usize,
        kernel: usize,
        mode: Mode,
    ) -> Result<Tensor> {
        let l = self
            .spec
            .layers
            .get(layer)
            .ok_or_else(|| Error::Config(format!("no layer {layer}")))?;
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        let out = match mode {
            Mode::Training => {
                let widths = vec![width; input.dim(0)];
                self.masked_layer(&mut tape, layer, x, &widths, kernel)?
            }
            Mode::Evaluation => {
                let c = input.dim(1);
                if c != l.in_channels {
                    return Err(Error::Dimension {
                        op: "supernet layer",
                        axis: "channels",
                        expected: l.in_channels,
                        got: c,
                    });
                }
                let mut scratch = ParamStore::new();
                match ConvStage::build(l, c, width, kernel, self, &mut scratch)? {
                    Some(stage) => stage.forward(&mut tape, &scratch, x)?,
                    None => {
                        let keep = c.min(l.filters);
                        if keep == c {
                            x
                        } else {
                            tape.slice_channels(x, 0, keep)?
                        }
                    }
                }
            }
        };
        Ok(tape.value(out).clone())
    }
}

impl WeightSource for SuperNetwork {
    fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    fn conv_weights(&self, layer: usize) -> Option<(&Tensor, &Tensor)> {
        let lp = self.layers.get(layer)?;
        Some((self.params.get(lp.weight), self.params.get(lp.bias)))
    }

    fn head_weights(&self) -> (&Tensor, &Tensor) {
        (
            self.params.get(self.head.weight),
            self.params.get(self.head.bias),
        )
    }
}
