//! Training loops for the super-network and for extracted sub-networks, and
//! top-1 evaluation.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::supernet::{
    extract_subnetwork, SubNetChoice, SubNetwork, SuperNetwork, TrainPlan, WeightSource,
};
use crate::tensor::optim::Sgd;
use crate::tensor::tape::{Gradients, ParamStore, Tape, Var};
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    #[serde(default)]
    pub momentum: f32,
    #[serde(default)]
    pub weight_decay: f32,
    /// Anneal the learning rate to zero along a half cosine.
    #[serde(default)]
    pub cosine: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize, total: usize) -> f32 {
        if !self.cosine || total == 0 {
            return self.learning_rate;
        }
        let t = step as f32 / total as f32;
        // Never exactly zero, which the optimiser rejects.
        (0.5 * self.learning_rate * (1.0 + (std::f32::consts::PI * t).cos()))
            .max(1e-6 * self.learning_rate)
    }
}

/// Mean training loss of every epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

/// Something with parameters and a per-batch loss.
trait Trainable {
    type Extra;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn batch_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        images: Tensor,
        labels: &[usize],
        rng: &mut R,
    ) -> Result<(Var, Self::Extra)>;
    fn after_backward(&self, _extra: &Self::Extra, _grads: &Gradients) -> Result<()> {
        Ok(())
    }
}

fn fit<N: Trainable, R: Rng + ?Sized>(
    net: &mut N,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut grads = Gradients::zeros_like(net.store());
    let mut opt = Sgd::new(net.store(), cfg.momentum, cfg.weight_decay);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size);
    let total = cfg.epochs * steps_per_epoch;
    let mut step = 0;
    let mut report = TrainReport::default();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let (images, labels) = data.batch(chunk)?;
            let mut tape = Tape::new();
            let (loss, extra) = net.batch_loss(&mut tape, images, &labels, rng)?;
            loss_sum += tape.value(loss).data()[0] as f64 * chunk.len() as f64;
            grads.zero();
            tape.backward(loss, &mut grads)?;
            net.after_backward(&extra, &grads)?;
            opt.step(net.store_mut(), &grads, cfg.lr_at(step, total))?;
            step += 1;
        }
        report.epoch_losses.push(loss_sum / data.len() as f64);
    }
    Ok(report)
}

impl Trainable for SuperNetwork {
    type Extra = TrainPlan;

    fn store(&self) -> &ParamStore {
        self.params()
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        self.params_mut()
    }

    fn batch_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        images: Tensor,
        labels: &[usize],
        rng: &mut R,
    ) -> Result<(Var, TrainPlan)> {
        let plan = TrainPlan::sample(self.spec(), labels.len(), rng);
        let x = tape.leaf(images);
        let logits = self.forward_masked(tape, x, &plan)?;
        Ok((tape.softmax_cross_entropy(logits, labels)?, plan))
    }

    fn after_backward(&self, plan: &TrainPlan, grads: &Gradients) -> Result<()> {
        if cfg!(debug_assertions) {
            let bad = isolation_violations(self, plan, grads);
            if !bad.is_empty() {
                return Err(Error::State(format!(
                    "gradient leaked outside the sampled sub-networks: {}",
                    bad.join("; ")
                )));
            }
        }
        Ok(())
    }
}

impl Trainable for SubNetwork {
    type Extra = ();

    fn store(&self) -> &ParamStore {
        self.params()
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        self.params_mut()
    }

    fn batch_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        images: Tensor,
        labels: &[usize],
        _rng: &mut R,
    ) -> Result<(Var, ())> {
        let x = tape.leaf(images);
        let logits = self.forward(tape, x)?;
        Ok((tape.softmax_cross_entropy(logits, labels)?, ()))
    }
}

/// Jointly trains all sub-networks: each batch draws per-image, per-layer
/// widths (near-uniform over the grid) and one kernel per layer, then does a
/// single forward-backward through the masked super-network.
///
/// Builds with debug assertions also verify after every step that filters
/// and kernel taps no image used received exactly zero gradient.
pub fn train_supernetwork<R: Rng + ?Sized>(
    supernet: &mut SuperNetwork,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainReport> {
    if cfg.epochs == 0 {
        return Err(Error::Config(
            "super-network training needs at least one epoch".into(),
        ));
    }
    fit(supernet, data, cfg, rng)
}

pub fn train_subnetwork<R: Rng + ?Sized>(
    net: &mut SubNetwork,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainReport> {
    fit(net, data, cfg, rng)
}

/// Parameter entries that received gradient although no image in the batch
/// used them: filters at or beyond the largest sampled width of their layer,
/// and taps outside the sampled kernel window.
pub fn isolation_violations(
    supernet: &SuperNetwork,
    plan: &TrainPlan,
    grads: &Gradients,
) -> Vec<String> {
    let mut out = Vec::new();
    for (i, l) in supernet.spec().layers.iter().enumerate() {
        let lp = supernet.layer_params(i);
        let m = plan.max_width(i);
        let gw = grads.get(lp.weight);
        let gb = grads.get(lp.bias);
        let (c, kk) = (l.in_channels, l.max_kernel);
        let lo = (kk - plan.kernels[i]) / 2;
        let hi = lo + plan.kernels[i];
        for f in 0..l.filters {
            if f >= m && gb.data()[f] != 0.0 {
                out.push(format!("layer {i} bias {f}"));
            }
            for ch in 0..c {
                for y in 0..kk {
                    for x in 0..kk {
                        let g = gw.data()[((f * c + ch) * kk + y) * kk + x];
                        let outside = f >= m || y < lo || y >= hi || x < lo || x >= hi;
                        if outside && g != 0.0 {
                            out.push(format!("layer {i} weight [{f},{ch},{y},{x}]"));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Class predictions of `net` for every item of `data`.
pub fn predict(net: &SubNetwork, data: &Dataset) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (images, _) = data.batch(chunk)?;
        out.extend(net.logits(&images)?.argmax_rows()?);
    }
    Ok(out)
}

/// Top-1 accuracy in `[0, 1]`.
pub fn accuracy(net: &SubNetwork, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let pred = predict(net, data)?;
    let hits = pred
        .iter()
        .zip(data.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / data.len() as f64)
}

/// Holdout accuracy of `choice` using the shared weights as they are.
pub fn evaluate_sample(
    source: &impl WeightSource,
    choice: &SubNetChoice,
    holdout: &Dataset,
) -> Result<f64> {
    accuracy(&extract_subnetwork(source, choice)?, holdout)
}

/// Follows `steps` from the first architecture to the last: each step reuses
/// the overlapping weights of the previous one and trains `epochs_per_step`
/// epochs; the last architecture is then trained with `final_cfg`.
pub fn trajectory_replay_finetune<R: Rng + ?Sized>(
    pretrained: &impl WeightSource,
    steps: &[SubNetChoice],
    data: &Dataset,
    epochs_per_step: usize,
    final_cfg: &TrainConfig,
    rng: &mut R,
) -> Result<SubNetwork> {
    let first = steps
        .first()
        .ok_or_else(|| Error::Config("trajectory has no steps".into()))?;
    let mut net = extract_subnetwork(pretrained, first)?;
    let step_cfg = TrainConfig {
        epochs: epochs_per_step,
        ..final_cfg.clone()
    };
    for choice in &steps[1..] {
        net = net.shrink_to(choice)?;
        train_subnetwork(&mut net, data, &step_cfg, rng)?;
    }
    train_subnetwork(&mut net, data, final_cfg, rng)?;
    Ok(net)
}
