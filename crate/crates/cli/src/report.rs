//! Read-only summary of a run directory.

use std::fmt::Write;
use std::path::Path;

use cbcnas::cost::co2_estimate;

use crate::{read_json, DiscoveredMetrics, Result, SearchMetrics, SupernetMetrics, Timing};

pub const STAGES: [&str; 3] = ["train-supernet", "search", "train-discovered"];

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub supernet: SupernetMetrics,
    pub search: SearchMetrics,
    pub discovered: DiscoveredMetrics,
    /// Wall-clock seconds per entry of [`STAGES`].
    pub stage_seconds: [f64; 3],
    pub gpu_hours: f64,
    pub co2_lbs: f64,
}

impl Report {
    pub fn total_seconds(&self) -> f64 {
        self.stage_seconds.iter().sum()
    }

    /// GPU-hours default to the run's total wall-clock hours.
    pub fn load(dir: &Path, gpu_hours: Option<f64>) -> Result<Self> {
        let mut stage_seconds = [0.0; 3];
        for (slot, stage) in stage_seconds.iter_mut().zip(STAGES) {
            let t: Timing = read_json(&dir.join(format!("timing.{stage}.json")))?;
            *slot = t.wall_seconds;
        }
        let gpu_hours = gpu_hours.unwrap_or(stage_seconds.iter().sum::<f64>() / 3600.0);
        Ok(Report {
            supernet: read_json(&dir.join("metrics.train-supernet.json"))?,
            search: read_json(&dir.join("metrics.search.json"))?,
            discovered: read_json(&dir.join("metrics.train-discovered.json"))?,
            stage_seconds,
            gpu_hours,
            co2_lbs: co2_estimate(gpu_hours)?,
        })
    }

    pub fn render(&self) -> String {
        let m = &self.supernet.metric;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:>9} {:>14} {:>12}",
            "network", "test acc", m, "MACs"
        );
        let _ = writeln!(
            s,
            "{:<12} {:>9.4} {:>14.6} {:>12}",
            "full width",
            self.supernet.full_width_test_accuracy,
            self.supernet.full_resource,
            self.supernet.full_macs
        );
        let _ = writeln!(
            s,
            "{:<12} {:>9.4} {:>14.6} {:>12}",
            "discovered",
            self.discovered.test_accuracy,
            self.discovered.resource,
            self.discovered.macs
        );
        let _ = writeln!(
            s,
            "target {m}: {:.6} ({} search iterations, {} samples evaluated)",
            self.search.target_resource, self.search.iterations, self.search.samples_evaluated
        );
        let [a, b, c] = self.stage_seconds;
        let _ = writeln!(
            s,
            "time: {:.1} s ({:.1} + {:.1} + {:.1}) for super-network, search, discovered network",
            self.total_seconds(),
            a,
            b,
            c
        );
        let _ = writeln!(
            s,
            "CO2: {:.0} lbs for {:.4} GPU-hours",
            self.co2_lbs, self.gpu_hours
        );
        s
    }
}
