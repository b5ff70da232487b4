//! Command implementations behind the `cbcnas` binary.
//!
//! Every command reads one [`ExperimentConfig`], works inside a run
//! directory guarded by a lock file, copies its effective config there and
//! records its wall-clock time in `timing.<command>.json`.

// `!(x > 0.0)` deliberately rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod report;
pub mod rundir;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cbcnas::cost::{network_macs, CostModel};
use cbcnas::search::{
    accuracy, run_search, train_subnetwork, train_supernetwork, trajectory_replay_finetune, LogRow,
    TrainReport, Trajectory,
};
use cbcnas::supernet::{extract_subnetwork, Architecture, NetworkSpec, SubNetChoice, SuperNetwork};
use cbcnas::tensor::checkpoint;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{derive_seed, DiscoveredMode, ExperimentConfig, Splits};
use rundir::RunDir;

pub const SUPERNET_WEIGHTS: &str = "supernet.weights.json";
pub const SUPERNET_CURVE: &str = "supernet_curve.csv";
pub const LATENCY_TABLE: &str = "latency.json";
pub const TRAJECTORY: &str = "trajectory.json";
pub const SEARCH_LOG: &str = "search_log.csv";
pub const SEARCHED_ARCH: &str = "searched.architecture.json";
pub const DISCOVERED_WEIGHTS: &str = "discovered.weights.json";
pub const DISCOVERED_ARCH: &str = "discovered.architecture.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] cbcnas::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("run directory {0} is locked by another command (remove the lock file if no command is running)")]
    Locked(PathBuf),
    #[error("missing artifact {0}")]
    Missing(PathBuf),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Flags shared by the compute commands.
#[derive(Clone, Debug, Default)]
pub struct CommonArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// A loaded, validated config plus where things live.
pub struct Experiment {
    pub config: ExperimentConfig,
    /// Directory of the config file; relative paths inside it resolve here.
    pub base: PathBuf,
    pub out: PathBuf,
}

impl Experiment {
    pub fn open(args: &CommonArgs) -> Result<Self> {
        let mut config = ExperimentConfig::load(&args.config)?;
        if let Some(seed) = args.seed {
            config.seed = seed;
        }
        let base = args
            .config
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        config.validate(&base)?;
        let out = match (&args.out, &config.out) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => base.join(o),
            (None, None) => {
                return Err(CliError::Config(
                    "out: no run directory given (use --out)".into(),
                ))
            }
        };
        Ok(Experiment { config, base, out })
    }

    fn data(&self) -> Result<(Splits, NetworkSpec)> {
        let ds = self.config.load_dataset(&self.base)?;
        let spec = self.config.network_spec(ds.image_shape(), ds.classes())?;
        Ok((self.config.splits(&ds)?, spec))
    }

    fn load_supernet(&self, spec: &NetworkSpec, path: &Path) -> Result<SuperNetwork> {
        if !path.is_file() {
            return Err(CliError::Missing(path.to_path_buf()));
        }
        let mut net = SuperNetwork::zeros(spec.clone())?;
        checkpoint::restore(net.params_mut(), &checkpoint::load(path)?)?;
        Ok(net)
    }
}

fn rng(seed: u64, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub wall_seconds: f64,
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupernetMetrics {
    pub seed: u64,
    pub parameters: usize,
    pub checkpoint_checksum: u64,
    pub final_loss: f64,
    pub full_width_train_accuracy: f64,
    pub full_width_holdout_accuracy: f64,
    pub full_width_test_accuracy: f64,
    pub full_resource: f64,
    pub full_macs: u64,
    pub metric: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchMetrics {
    pub seed: u64,
    pub iterations: usize,
    pub samples_logged: usize,
    pub samples_evaluated: usize,
    pub initial_resource: f64,
    pub target_resource: f64,
    pub final_resource: f64,
    pub final_holdout_accuracy: f64,
    pub metric: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoveredMetrics {
    pub seed: u64,
    pub mode: DiscoveredMode,
    pub trajectory_steps: usize,
    pub test_accuracy: f64,
    pub holdout_accuracy: f64,
    pub resource: f64,
    pub target_resource: Option<f64>,
    pub macs: u64,
    pub metric: String,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(CliError::Missing(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Runs `body` inside the locked run directory and records its timing.
fn staged<T>(exp: &Experiment, stage: &str, body: impl FnOnce(&RunDir) -> Result<T>) -> Result<T> {
    let dir = RunDir::lock(&exp.out)?;
    fs::write(
        dir.path(&format!("config.{stage}.toml")),
        exp.config.to_toml()?,
    )
    .map_err(|e| CliError::io(&exp.out, e))?;
    let start = Instant::now();
    let out = body(&dir)?;
    write_json(
        &dir.path(&format!("timing.{stage}.json")),
        &Timing {
            stage: stage.into(),
            wall_seconds: start.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
        },
    )?;
    Ok(out)
}

pub fn cmd_train_supernet(args: &CommonArgs) -> Result<SupernetMetrics> {
    let exp = Experiment::open(args)?;
    staged(&exp, "train-supernet", |dir| {
        let cfg = &exp.config;
        let (splits, spec) = exp.data()?;
        let cost = cfg.cost_model(&spec, &exp.base)?;
        if let CostModel::Latency(t) = &cost {
            t.save(&dir.path(LATENCY_TABLE))?;
        }
        let mut net = SuperNetwork::new(spec.clone(), &mut rng(cfg.seed, "supernet.init"))?;
        let report = train_supernetwork(
            &mut net,
            &splits.train,
            &cfg.supernet,
            &mut rng(cfg.seed, "supernet.train"),
        )?;
        checkpoint::save(net.params(), &dir.path(SUPERNET_WEIGHTS))?;
        write_curve(&dir.path(SUPERNET_CURVE), &report)?;

        let full = spec.full_choice();
        let sub = extract_subnetwork(&net, &full)?;
        let metrics = SupernetMetrics {
            seed: cfg.seed,
            parameters: net.params().iter().map(|(_, _, t)| t.len()).sum(),
            checkpoint_checksum: net.params().checksum(),
            final_loss: report.epoch_losses.last().copied().unwrap_or(f64::NAN),
            full_width_train_accuracy: accuracy(&sub, &splits.train)?,
            full_width_holdout_accuracy: accuracy(&sub, &splits.holdout)?,
            full_width_test_accuracy: accuracy(&sub, &splits.test)?,
            full_resource: cost.total(&spec, &full)?,
            full_macs: network_macs(&spec, &full)?,
            metric: cost.kind().to_string(),
        };
        write_json(&dir.path("metrics.train-supernet.json"), &metrics)?;
        Ok(metrics)
    })
}

fn write_curve(path: &Path, report: &TrainReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss"])?;
    for (i, l) in report.epoch_losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn write_search_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record([
            "iteration",
            "sample_id",
            "resource",
            "accuracy",
            "chosen",
            "bound",
            "duplicate",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn read_search_log(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn cmd_search(args: &CommonArgs, checkpoint_path: Option<&Path>) -> Result<SearchMetrics> {
    let exp = Experiment::open(args)?;
    staged(&exp, "search", |dir| {
        let cfg = &exp.config;
        let (splits, spec) = exp.data()?;
        let ckpt = checkpoint_path
            .map(Path::to_path_buf)
            .unwrap_or_else(|| dir.path(SUPERNET_WEIGHTS));
        let net = exp.load_supernet(&spec, &ckpt)?;
        let cost = cfg.cost_model(&spec, &exp.base)?;
        let initial = cost.total(&spec, &spec.full_choice())?;
        let search_cfg = cfg.search_config(initial)?;
        let outcome = run_search(&net, &cost, &splits.holdout, &search_cfg)?;
        let traj = &outcome.trajectory;

        fs::write(dir.path(TRAJECTORY), traj.to_json(&spec)? + "\n")
            .map_err(|e| CliError::io(&exp.out, e))?;
        write_search_log(&dir.path(SEARCH_LOG), &outcome.log)?;
        let found = traj.discovered();
        fs::write(
            dir.path(SEARCHED_ARCH),
            Architecture::from_choice(&spec, &found.choice)?.to_json()? + "\n",
        )
        .map_err(|e| CliError::io(&exp.out, e))?;

        let metrics = SearchMetrics {
            seed: cfg.seed,
            iterations: traj.records.len() - 1,
            samples_logged: outcome.log.len(),
            samples_evaluated: outcome.log.iter().filter(|r| r.duplicate == 0).count(),
            initial_resource: initial,
            target_resource: search_cfg.target_resource,
            final_resource: found.resource,
            final_holdout_accuracy: found.holdout_accuracy,
            metric: cost.kind().to_string(),
        };
        write_json(&dir.path("metrics.search.json"), &metrics)?;
        Ok(metrics)
    })
}

/// Reads either a trajectory or a single architecture file.
fn load_steps(path: &Path, spec: &NetworkSpec) -> Result<(Vec<SubNetChoice>, Option<f64>)> {
    if !path.is_file() {
        return Err(CliError::Missing(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let probe: serde_json::Value = serde_json::from_str(&text)?;
    if probe.get("format").and_then(|f| f.as_str()) == Some(cbcnas::supernet::arch::FORMAT) {
        let choice = Architecture::from_json(&text)?.to_choice(spec)?;
        return Ok((vec![choice], None));
    }
    let traj = Trajectory::from_json(&text, spec)?;
    Ok((traj.choices(), Some(traj.target)))
}

pub fn cmd_train_discovered(
    args: &CommonArgs,
    checkpoint_path: Option<&Path>,
    trajectory_path: Option<&Path>,
) -> Result<DiscoveredMetrics> {
    let exp = Experiment::open(args)?;
    staged(&exp, "train-discovered", |dir| {
        let cfg = &exp.config;
        let (splits, spec) = exp.data()?;
        let traj_path = trajectory_path
            .map(Path::to_path_buf)
            .unwrap_or_else(|| dir.path(TRAJECTORY));
        let (steps, target) = load_steps(&traj_path, &spec)?;
        let last = steps.last().expect("non-empty").clone();
        let mut train_rng = rng(cfg.seed, "discovered.train");
        let d = &cfg.discovered;
        let net = match d.mode {
            DiscoveredMode::Replay => {
                let ckpt = checkpoint_path
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| dir.path(SUPERNET_WEIGHTS));
                let supernet = exp.load_supernet(&spec, &ckpt)?;
                trajectory_replay_finetune(
                    &supernet,
                    &steps,
                    &splits.train,
                    d.epochs_per_step,
                    &d.train,
                    &mut train_rng,
                )?
            }
            DiscoveredMode::Scratch => {
                let fresh = SuperNetwork::new(spec.clone(), &mut rng(cfg.seed, "discovered.init"))?;
                let mut net = extract_subnetwork(&fresh, &last)?;
                train_subnetwork(&mut net, &splits.train, &d.train, &mut train_rng)?;
                net
            }
        };
        checkpoint::save(net.params(), &dir.path(DISCOVERED_WEIGHTS))?;
        fs::write(
            dir.path(DISCOVERED_ARCH),
            Architecture::from_choice(&spec, &last)?.to_json()? + "\n",
        )
        .map_err(|e| CliError::io(&exp.out, e))?;
        let cost = cfg.cost_model(&spec, &exp.base)?;
        let metrics = DiscoveredMetrics {
            seed: cfg.seed,
            mode: d.mode,
            trajectory_steps: steps.len(),
            test_accuracy: accuracy(&net, &splits.test)?,
            holdout_accuracy: accuracy(&net, &splits.holdout)?,
            resource: cost.total(&spec, &last)?,
            target_resource: target,
            macs: network_macs(&spec, &last)?,
            metric: cost.kind().to_string(),
        };
        write_json(&dir.path("metrics.train-discovered.json"), &metrics)?;
        Ok(metrics)
    })
}
