use serde::{Deserialize, Serialize};

use crate::cost::ResourceKind;
use crate::error::{Error, Result};

/// Which coordinate-descent variant drives the search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Shrink `L` random layers per sample, `J` samples per iteration.
    #[default]
    Mcd,
    /// One sample per layer, each shrinking only that layer.
    Scd,
}

fn default_max_attempts() -> usize {
    200
}

fn default_max_iterations() -> usize {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    /// `J`: samples per iteration.
    pub samples_per_iteration: usize,
    /// `L`: layers shrunk per sample.
    pub layers_per_sample: usize,
    /// Fraction of the initial resource removed in the first iteration.
    pub init_reduction: f64,
    /// Per-iteration multiplier on the required reduction.
    pub decay: f64,
    pub target_resource: f64,
    pub metric: ResourceKind,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: Optimizer,
    /// Rejection-sampling attempts before forcing layers to their minimum.
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

impl SearchConfig {
    pub fn validate(&self, layer_count: usize) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.samples_per_iteration == 0 {
            return fail("samples_per_iteration must be at least 1".into());
        }
        if self.layers_per_sample == 0 || self.layers_per_sample > layer_count {
            return fail(format!(
                "layers_per_sample must lie in 1..={layer_count}, got {}",
                self.layers_per_sample
            ));
        }
        if !(self.init_reduction > 0.0 && self.init_reduction < 1.0) {
            return fail(format!(
                "init_reduction must lie in (0, 1), got {}",
                self.init_reduction
            ));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return fail(format!("decay must lie in (0, 1], got {}", self.decay));
        }
        if !(self.target_resource > 0.0) || !self.target_resource.is_finite() {
            return fail(format!(
                "target_resource must be positive, got {}",
                self.target_resource
            ));
        }
        if self.max_attempts == 0 || self.max_iterations == 0 {
            return fail("max_attempts and max_iterations must be positive".into());
        }
        Ok(())
    }
}

/// Resource the search must remove at `iteration` (counted from 0):
/// `initial * init_reduction * decay^iteration`.
pub fn reduction_schedule(initial_resource: f64, config: &SearchConfig, iteration: usize) -> f64 {
    initial_resource * config.init_reduction * config.decay.powf(iteration as f64)
}

#[cfg(test)]
pub(crate) fn test_config() -> SearchConfig {
    SearchConfig {
        samples_per_iteration: 8,
        layers_per_sample: 2,
        init_reduction: 0.03,
        decay: 0.98,
        target_resource: 1.0,
        metric: ResourceKind::Latency,
        seed: 0,
        optimizer: Optimizer::Mcd,
        max_attempts: 200,
        max_iterations: 10_000,
    }
}
