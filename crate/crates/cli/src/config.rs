//! Experiment configuration: one TOML file drives every command.

use std::path::{Path, PathBuf};

use cbcnas::cost::{CostModel, LatencyTable, ResourceKind};
use cbcnas::data::{self, Dataset, Split, SynthConfig};
use cbcnas::search::{Optimizer, SearchConfig, TrainConfig};
use cbcnas::supernet::{default_kernel_grid, default_width_grid, LayerSpec, NetworkSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Run directory; `--out` overrides it.
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub data: DataSection,
    pub network: NetworkSection,
    pub supernet: TrainConfig,
    pub cost: CostSection,
    pub search: SearchSection,
    pub discovered: DiscoveredSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    #[serde(default = "default_test")]
    pub test_fraction: f64,
    /// Path to a raster container; mutually exclusive with `synthetic`.
    #[serde(default)]
    pub raster: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SynthSection>,
}

fn default_holdout() -> f64 {
    0.1
}

fn default_test() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub classes: usize,
    pub per_class: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub noise: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub layers: Vec<LayerEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    /// Filter count `T`; defaults to the layer's input channel count.
    #[serde(default)]
    pub filters: Option<usize>,
    /// Largest kernel `K`.
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub width_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub kernel_grid: Option<Vec<usize>>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub metric: ResourceKind,
    /// Measured latency table. Without it a synthetic table is derived from
    /// MAC counts.
    #[serde(default)]
    pub table: Option<PathBuf>,
    #[serde(default = "default_per_mac")]
    pub synthetic_per_mac_ms: f64,
    #[serde(default)]
    pub synthetic_overhead_ms: f64,
}

fn default_per_mac() -> f64 {
    1e-6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub samples_per_iteration: usize,
    pub layers_per_sample: usize,
    pub init_reduction: f64,
    pub decay: f64,
    /// Target as a fraction of the full network's resource.
    #[serde(default)]
    pub target_fraction: Option<f64>,
    /// Absolute target; takes precedence over `target_fraction`.
    #[serde(default)]
    pub target_resource: Option<f64>,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
}

fn default_attempts() -> usize {
    200
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscoveredMode {
    /// Follow the trajectory from the trained super-network's weights.
    #[default]
    Replay,
    /// Fresh random initialisation of the discovered architecture.
    Scratch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscoveredSection {
    #[serde(default)]
    pub mode: DiscoveredMode,
    #[serde(default = "one")]
    pub epochs_per_step: usize,
    pub train: TrainConfig,
}

/// Train, holdout and test splits of the configured dataset.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub holdout: Dataset,
    pub test: Dataset,
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

/// Deterministic per-purpose seed derived from the run seed.
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    purpose.bytes().fold(seed ^ 0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    })
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Validates everything that can be checked without touching data or
    /// weights. Relative paths resolve against `base`.
    pub fn validate(&self, base: &Path) -> Result<(), CliError> {
        let d = &self.data;
        match (&d.raster, &d.synthetic) {
            (Some(_), Some(_)) => {
                return Err(invalid(
                    "data",
                    "set either `raster` or `synthetic`, not both",
                ))
            }
            (None, None) => {
                return Err(invalid(
                    "data",
                    "one of `raster` or `synthetic` is required",
                ))
            }
            (Some(p), None) => {
                let p = base.join(p);
                if !p.is_file() {
                    return Err(invalid(
                        "data.raster",
                        format!("{} does not exist", p.display()),
                    ));
                }
            }
            (None, Some(s)) => {
                if s.classes < 2 {
                    return Err(invalid("data.synthetic.classes", "must be at least 2"));
                }
                if s.per_class == 0 || s.channels == 0 || s.height == 0 || s.width == 0 {
                    return Err(invalid(
                        "data.synthetic",
                        "per_class, channels, height and width must be positive",
                    ));
                }
                if !(s.noise >= 0.0) {
                    return Err(invalid("data.synthetic.noise", "must be non-negative"));
                }
            }
        }
        for (name, f) in [
            ("data.holdout_fraction", d.holdout_fraction),
            ("data.test_fraction", d.test_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(invalid(name, format!("{f} must lie in (0, 1)")));
            }
        }
        if self.network.layers.is_empty() {
            return Err(invalid("network.layers", "at least one layer is required"));
        }
        self.supernet
            .validate()
            .map_err(|e| invalid("supernet", e))?;
        if self.supernet.epochs == 0 {
            return Err(invalid("supernet.epochs", "must be at least 1"));
        }
        self.discovered
            .train
            .validate()
            .map_err(|e| invalid("discovered.train", e))?;
        if let Some(t) = &self.cost.table {
            if self.cost.metric != ResourceKind::Latency {
                return Err(invalid(
                    "cost.table",
                    "a latency table needs metric = \"latency\"",
                ));
            }
            let p = base.join(t);
            if !p.is_file() {
                return Err(invalid(
                    "cost.table",
                    format!("{} does not exist", p.display()),
                ));
            }
        }
        if !(self.cost.synthetic_per_mac_ms > 0.0) || self.cost.synthetic_overhead_ms < 0.0 {
            return Err(invalid(
                "cost.synthetic_per_mac_ms",
                "per-MAC cost must be positive and overhead non-negative",
            ));
        }
        let s = &self.search;
        match (s.target_resource, s.target_fraction) {
            (None, None) => {
                return Err(invalid(
                    "search",
                    "set `target_fraction` or `target_resource`",
                ))
            }
            (None, Some(f)) if !(f > 0.0 && f <= 1.0) => {
                return Err(invalid(
                    "search.target_fraction",
                    format!("{f} must lie in (0, 1]"),
                ))
            }
            _ => {}
        }
        // The remaining search fields are checked against the layer count
        // once the network is known.
        let probe = self.search_config(1.0).map_err(|e| invalid("search", e))?;
        probe
            .validate(self.network.layers.len())
            .map_err(|e| invalid("search", e))?;
        Ok(())
    }

    /// Input geometry and class count come from the dataset header.
    pub fn network_spec(
        &self,
        input: (usize, usize, usize),
        classes: usize,
    ) -> Result<NetworkSpec, CliError> {
        let (c0, h, w) = input;
        let mut layers = Vec::with_capacity(self.network.layers.len());
        let mut c = c0;
        for (i, e) in self.network.layers.iter().enumerate() {
            let t = e.filters.unwrap_or(c);
            let mut l = LayerSpec::conv(i, c, t, e.kernel, e.stride);
            l.width_grid = e
                .width_grid
                .clone()
                .unwrap_or_else(|| default_width_grid(t, e.stride));
            l.kernel_grid = e
                .kernel_grid
                .clone()
                .unwrap_or_else(|| default_kernel_grid(e.kernel));
            layers.push(l);
            c = t;
        }
        let spec = NetworkSpec {
            input_channels: c0,
            height: h,
            width: w,
            classes,
            layers,
        };
        spec.validate().map_err(|e| invalid("network", e))?;
        Ok(spec)
    }

    pub fn load_dataset(&self, base: &Path) -> Result<Dataset, CliError> {
        match (&self.data.raster, &self.data.synthetic) {
            (Some(p), _) => Ok(data::load_raster(&base.join(p))?),
            (None, Some(s)) => Ok(data::synth_classification(&SynthConfig {
                classes: s.classes,
                per_class: s.per_class,
                channels: s.channels,
                height: s.height,
                width: s.width,
                noise: s.noise,
                seed: derive_seed(self.seed, "data"),
            })?),
            (None, None) => Err(invalid("data", "no source configured")),
        }
    }

    /// Test split first, then the holdout out of what remains.
    pub fn splits(&self, dataset: &Dataset) -> Result<Splits, CliError> {
        let (rest, test) = data::split_tagged(
            dataset,
            self.data.test_fraction,
            derive_seed(self.seed, "split.test"),
            Split::Train,
            Split::Test,
        )?;
        let (train, holdout) = data::split(
            &rest,
            self.data.holdout_fraction,
            derive_seed(self.seed, "split.holdout"),
        )?;
        Ok(Splits {
            train,
            holdout,
            test,
        })
    }

    pub fn cost_model(&self, spec: &NetworkSpec, base: &Path) -> Result<CostModel, CliError> {
        match self.cost.metric {
            ResourceKind::Macs => Ok(CostModel::Macs),
            ResourceKind::Latency => {
                let table = match &self.cost.table {
                    Some(p) => LatencyTable::load(&base.join(p))?,
                    None => LatencyTable::synthetic(
                        spec,
                        self.cost.synthetic_per_mac_ms,
                        self.cost.synthetic_overhead_ms,
                    ),
                };
                table.validate(spec).map_err(|e| invalid("cost.table", e))?;
                Ok(CostModel::Latency(table))
            }
        }
    }

    /// Search parameters for a network whose full resource is `initial`.
    pub fn search_config(&self, initial: f64) -> Result<SearchConfig, CliError> {
        let s = &self.search;
        let target = match (s.target_resource, s.target_fraction) {
            (Some(t), _) => t,
            (None, Some(f)) => f * initial,
            (None, None) => {
                return Err(invalid(
                    "search",
                    "set `target_fraction` or `target_resource`",
                ))
            }
        };
        Ok(SearchConfig {
            samples_per_iteration: s.samples_per_iteration,
            layers_per_sample: s.layers_per_sample,
            init_reduction: s.init_reduction,
            decay: s.decay,
            target_resource: target,
            metric: self.cost.metric,
            seed: derive_seed(self.seed, "search"),
            optimizer: s.optimizer,
            max_attempts: s.max_attempts,
            max_iterations: 10_000,
        })
    }
}
