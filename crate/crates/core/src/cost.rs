//! Non-differentiable resource metrics: per-layer latency lookup tables,
//! multiply-accumulate counts and the CO2 figure used in reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::supernet::{NetworkSpec, SubNetChoice};

/// Pounds of CO2 per GPU-hour: 1438 lbs over 64 GPUs for 79 hours.
pub const CO2_LBS_PER_GPU_HOUR: f64 = 0.2844;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceKind {
    Latency,
    Macs,
}

impl std::fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ResourceKind::Latency => "latency_ms",
            ResourceKind::Macs => "macs",
        })
    }
}

/// `layer -> k -> M -> milliseconds`.
pub type LayerTable = BTreeMap<usize, BTreeMap<usize, f64>>;

/// Per-layer latency lookup table.
///
/// On disk this is a JSON object keyed by stringified layer index, then
/// kernel size, then width: `{"0": {"3": {"0": 0.0, "4": 0.21}}}`. An
/// optional `"meta"` entry carries `device`, `note` and `interpolate`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatencyTable {
    pub device: String,
    pub note: String,
    /// Allow piecewise-linear lookups between measured widths.
    pub interpolate: bool,
    pub layers: BTreeMap<usize, LayerTable>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    #[serde(default)]
    device: String,
    #[serde(default)]
    note: String,
    #[serde(default)]
    interpolate: bool,
}

impl LatencyTable {
    /// `a * k^2 * C * M * H_out * W_out + b` ms for every grid point, 0 for
    /// removed layers. Monotone in `M` and `k` by construction.
    pub fn synthetic(spec: &NetworkSpec, per_mac_ms: f64, overhead_ms: f64) -> Self {
        let extents = spec.output_extents();
        let layers = spec
            .layers
            .iter()
            .zip(&extents)
            .map(|(l, &(h, w))| {
                let per_k = l
                    .kernel_grid
                    .iter()
                    .map(|&k| {
                        let per_m = l
                            .width_grid
                            .iter()
                            .map(|&m| {
                                let ms = if m == 0 {
                                    0.0
                                } else {
                                    per_mac_ms * layer_macs(l.in_channels, m, k, h, w) as f64
                                        + overhead_ms
                                };
                                (m, ms)
                            })
                            .collect();
                        (k, per_m)
                    })
                    .collect();
                (l.index, per_k)
            })
            .collect();
        LatencyTable {
            device: "synthetic".into(),
            note: format!("a*k^2*C*M*H*W + b with a={per_mac_ms}, b={overhead_ms}"),
            interpolate: false,
            layers,
        }
    }

    pub fn layer(&self, layer: usize) -> Option<&LayerTable> {
        self.layers.get(&layer)
    }

    /// Latency of `layer` at `(width, kernel)`. Removed layers cost their
    /// `M = 0` entry if the table has one, otherwise nothing.
    pub fn lookup(&self, layer: usize, width: usize, kernel: usize) -> Result<f64> {
        let missing = Error::Lookup {
            layer,
            width,
            kernel,
        };
        let table = self.layers.get(&layer).ok_or(missing)?;
        if width == 0 {
            return Ok(table
                .values()
                .find_map(|m| m.get(&0).copied())
                .unwrap_or(0.0));
        }
        if let Some(&v) = table.get(&kernel).and_then(|m| m.get(&width)) {
            return Ok(v);
        }
        if self.interpolate {
            interpolate_latency(self, layer, width, kernel)
        } else {
            Err(Error::Lookup {
                layer,
                width,
                kernel,
            })
        }
    }

    /// Checks that every grid point of `spec` is covered (or interpolation
    /// is enabled) and that entries are non-decreasing in `M` and `k`.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        for l in &spec.layers {
            for &k in &l.kernel_grid {
                for &m in &l.width_grid {
                    self.lookup(l.index, m, k)?;
                }
            }
            let table = self.layers.get(&l.index).expect("looked up above");
            for per_m in table.values() {
                let vals: Vec<f64> = per_m.values().copied().collect();
                if vals.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::Config(format!(
                        "latency table for layer {} decreases with M",
                        l.index
                    )));
                }
            }
            let ks: Vec<&BTreeMap<usize, f64>> = table.values().collect();
            for pair in ks.windows(2) {
                for (m, lo) in pair[0] {
                    if let Some(hi) = pair[1].get(m) {
                        if hi < lo {
                            return Err(Error::Config(format!(
                                "latency table for layer {} decreases with k at M={m}",
                                l.index
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut root = Map::new();
        root.insert(
            "meta".into(),
            serde_json::to_value(Meta {
                device: self.device.clone(),
                note: self.note.clone(),
                interpolate: self.interpolate,
            })?,
        );
        for (layer, per_k) in &self.layers {
            let mut kmap = Map::new();
            for (k, per_m) in per_k {
                let mmap: Map<String, Value> = per_m
                    .iter()
                    .map(|(m, v)| (m.to_string(), Value::from(*v)))
                    .collect();
                kmap.insert(k.to_string(), Value::Object(mmap));
            }
            root.insert(layer.to_string(), Value::Object(kmap));
        }
        Ok(serde_json::to_string_pretty(&Value::Object(root))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let root: Map<String, Value> = serde_json::from_str(text)?;
        let mut table = LatencyTable {
            device: String::new(),
            note: String::new(),
            interpolate: false,
            layers: BTreeMap::new(),
        };
        let key = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| {
                Error::Config(format!("latency table: {what} key `{s}` is not an integer"))
            })
        };
        for (lk, lv) in root {
            if lk == "meta" {
                let meta: Meta = serde_json::from_value(lv)?;
                table.device = meta.device;
                table.note = meta.note;
                table.interpolate = meta.interpolate;
                continue;
            }
            let layer = key(&lk, "layer")?;
            let per_k: BTreeMap<String, BTreeMap<String, f64>> = serde_json::from_value(lv)?;
            let mut lt = LayerTable::new();
            for (kk, per_m) in per_k {
                let mut mt = BTreeMap::new();
                for (mk, ms) in per_m {
                    if !ms.is_finite() || ms < 0.0 {
                        return Err(Error::Config(format!(
                            "latency table: layer {layer} k={kk} M={mk} has invalid value {ms}"
                        )));
                    }
                    mt.insert(key(&mk, "width")?, ms);
                }
                lt.insert(key(&kk, "kernel")?, mt);
            }
            table.layers.insert(layer, lt);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// Piecewise-linear lookup in `M` at an exactly matching `k`.
pub fn interpolate_latency(
    table: &LatencyTable,
    layer: usize,
    width: usize,
    kernel: usize,
) -> Result<f64> {
    let err = || Error::Lookup {
        layer,
        width,
        kernel,
    };
    let per_m = table
        .layers
        .get(&layer)
        .and_then(|t| t.get(&kernel))
        .ok_or_else(err)?;
    if let Some(&v) = per_m.get(&width) {
        return Ok(v);
    }
    let (&m0, &v0) = per_m.range(..width).next_back().ok_or_else(err)?;
    let (&m1, &v1) = per_m.range(width..).next().ok_or_else(err)?;
    let t = (width - m0) as f64 / (m1 - m0) as f64;
    Ok(v0 + t * (v1 - v0))
}

/// `k^2 * C * M * H_out * W_out` multiply-accumulates of a convolution.
pub fn layer_macs(
    in_channels: usize,
    width: usize,
    kernel: usize,
    h_out: usize,
    w_out: usize,
) -> u64 {
    (kernel * kernel) as u64 * in_channels as u64 * width as u64 * h_out as u64 * w_out as u64
}

/// `C * M` multiply-accumulates of a dense layer.
pub fn dense_macs(in_features: usize, outputs: usize) -> u64 {
    in_features as u64 * outputs as u64
}

/// Per-layer MACs of `choice`, using the channel count each layer really
/// receives; the classifier is the last entry.
pub fn layer_macs_breakdown(spec: &NetworkSpec, choice: &SubNetChoice) -> Result<Vec<u64>> {
    spec.validate_choice(choice)?;
    let channels = spec.effective_channels(choice)?;
    let mut out: Vec<u64> = spec
        .layers
        .iter()
        .zip(choice.iter())
        .zip(spec.output_extents())
        .map(|((l, c), (h, w))| {
            if c.is_removed() {
                0
            } else {
                layer_macs(channels[l.index], c.width, c.kernel, h, w)
            }
        })
        .collect();
    out.push(dense_macs(
        *channels.last().expect("non-empty"),
        spec.classes,
    ));
    Ok(out)
}

pub fn network_macs(spec: &NetworkSpec, choice: &SubNetChoice) -> Result<u64> {
    Ok(layer_macs_breakdown(spec, choice)?.iter().sum())
}

/// What the search budgets.
#[derive(Clone, Debug, PartialEq)]
pub enum CostModel {
    Latency(LatencyTable),
    Macs,
}

impl CostModel {
    pub fn kind(&self) -> ResourceKind {
        match self {
            CostModel::Latency(_) => ResourceKind::Latency,
            CostModel::Macs => ResourceKind::Macs,
        }
    }

    /// Per-layer contributions; their sum is the total resource.
    pub fn layer_costs(&self, spec: &NetworkSpec, choice: &SubNetChoice) -> Result<Vec<f64>> {
        spec.validate_choice(choice)?;
        match self {
            CostModel::Latency(table) => choice
                .iter()
                .enumerate()
                .map(|(i, c)| table.lookup(i, c.width, c.kernel))
                .collect(),
            CostModel::Macs => Ok(layer_macs_breakdown(spec, choice)?
                .into_iter()
                .map(|v| v as f64)
                .collect()),
        }
    }

    pub fn total(&self, spec: &NetworkSpec, choice: &SubNetChoice) -> Result<f64> {
        total_resource(spec, choice, self)
    }
}

/// Sum of the per-layer costs of `choice`.
pub fn total_resource(spec: &NetworkSpec, choice: &SubNetChoice, cost: &CostModel) -> Result<f64> {
    Ok(cost.layer_costs(spec, choice)?.iter().sum())
}

/// CO2 in pounds for `gpu_hours` of compute.
pub fn co2_estimate(gpu_hours: f64) -> Result<f64> {
    if !(gpu_hours >= 0.0) || !gpu_hours.is_finite() {
        return Err(Error::Domain(format!(
            "GPU-hours must be non-negative, got {gpu_hours}"
        )));
    }
    Ok(CO2_LBS_PER_GPU_HOUR * gpu_hours)
}

/// [`co2_estimate`] rounded to the nearest pound.
pub fn co2_estimate_lbs(gpu_hours: f64) -> Result<u64> {
    Ok(co2_estimate(gpu_hours)?.round() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::supernet::LayerChoice;

    fn spec() -> NetworkSpec {
        NetworkSpec::chain(3, 8, 8, 4, &[(8, 3, 1), (16, 5, 2), (16, 3, 1)])
    }

    #[test]
    fn mac_closed_form() {
        assert_eq!(layer_macs(8, 16, 3, 8, 8), 73_728);
        assert_eq!(layer_macs(8, 0, 3, 8, 8), 0);
        assert_eq!(dense_macs(16, 10), 160);
    }

    #[test]
    fn synthetic_table_shape() {
        let s = spec();
        let t = LatencyTable::synthetic(&s, 1e-5, 0.01);
        t.validate(&s).unwrap();
        assert_eq!(t.lookup(0, 0, 3).unwrap(), 0.0);
        let full = t.lookup(2, 16, 3).unwrap();
        assert!((full - (1e-5 * layer_macs(16, 16, 3, 4, 4) as f64 + 0.01)).abs() < 1e-12);
        assert!(matches!(
            t.lookup(2, 5, 3),
            Err(Error::Lookup {
                layer: 2,
                width: 5,
                kernel: 3
            })
        ));
    }

    #[test]
    fn interpolation() {
        let s = spec();
        let mut t = LatencyTable::synthetic(&s, 1e-5, 0.0);
        let lo = t.lookup(2, 4, 3).unwrap();
        let hi = t.lookup(2, 6, 3).unwrap();
        t.interpolate = true;
        assert!((t.lookup(2, 5, 3).unwrap() - 0.5 * (lo + hi)).abs() < 1e-12);
        assert_eq!(interpolate_latency(&t, 2, 4, 3).unwrap(), lo);
        assert!(interpolate_latency(&t, 2, 4, 5).is_err());
    }

    #[test]
    fn json_round_trip() {
        let s = spec();
        let t = LatencyTable::synthetic(&s, 2e-5, 0.03);
        let back = LatencyTable::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
        assert!(LatencyTable::from_json(r#"{"x": {}}"#).is_err());
        let tiny = LatencyTable::from_json(r#"{"0": {"3": {"0": 0, "2": 1.5}}}"#).unwrap();
        assert_eq!(tiny.lookup(0, 2, 3).unwrap(), 1.5);
    }

    #[test]
    fn totals_and_removal() {
        let s = NetworkSpec::chain(4, 4, 4, 2, &[(4, 3, 1), (4, 3, 1)]);
        let cost = CostModel::Latency(LatencyTable::synthetic(&s, 1e-3, 0.1));
        let zero = SubNetChoice::new(vec![LayerChoice::new(0, 3); 2]);
        assert_eq!(total_resource(&s, &zero, &cost).unwrap(), 0.0);
        let full = total_resource(&s, &s.full_choice(), &cost).unwrap();
        let one_removed = SubNetChoice::new(vec![LayerChoice::new(4, 3), LayerChoice::new(0, 3)]);
        assert!(total_resource(&s, &one_removed, &cost).unwrap() < full);
    }

    #[test]
    fn co2_table_values() {
        assert!((1438.0 / (64.0 * 79.0) - CO2_LBS_PER_GPU_HOUR).abs() < 1e-4);
        assert_eq!(co2_estimate_lbs(397.0).unwrap(), 113);
        assert_eq!(co2_estimate_lbs(2304.0).unwrap(), 655);
        assert_eq!(co2_estimate_lbs(0.0).unwrap(), 0);
        assert!(co2_estimate(-1.0).is_err());
    }
}
