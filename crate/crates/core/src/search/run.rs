use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{reduction_schedule, Optimizer, SearchConfig};
use super::sample::{generate_mcd_sample, generate_scd_samples};
use super::train::evaluate_sample;
use crate::cost::{CostModel, ResourceKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::supernet::{Architecture, NetworkSpec, SubNetChoice, SuperNetwork};

pub const TRAJECTORY_FORMAT: &str = "cbcnas-trajectory";
pub const TRAJECTORY_VERSION: u32 = 1;

/// One evaluated sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub iteration: usize,
    pub sample_id: usize,
    pub choice: SubNetChoice,
    pub resource: f64,
    pub holdout_accuracy: f64,
}

/// One row of the search log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub sample_id: usize,
    pub resource: f64,
    pub accuracy: f64,
    pub chosen: u8,
    /// Largest resource a sample of this iteration may have.
    pub bound: f64,
    /// 1 if an earlier sample of the same iteration built the same network;
    /// its accuracy is copied rather than recomputed.
    pub duplicate: u8,
}

/// The best sample of every iteration, starting from the initial network.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub metric: ResourceKind,
    pub target: f64,
    pub records: Vec<SampleRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryFile {
    format: String,
    version: u32,
    metric: ResourceKind,
    target: f64,
    steps: Vec<StepFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepFile {
    iteration: usize,
    sample_id: usize,
    resource: f64,
    holdout_accuracy: f64,
    architecture: Architecture,
}

impl Trajectory {
    pub fn initial(&self) -> &SampleRecord {
        &self.records[0]
    }

    pub fn discovered(&self) -> &SampleRecord {
        self.records.last().expect("trajectory is never empty")
    }

    pub fn choices(&self) -> Vec<SubNetChoice> {
        self.records.iter().map(|r| r.choice.clone()).collect()
    }

    /// Checks the ordering and target invariants and that every recorded
    /// resource matches `cost`.
    pub fn validate(&self, spec: &NetworkSpec, cost: &CostModel) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::State("trajectory is empty".into()));
        }
        if self.initial().choice != spec.full_choice() {
            return Err(Error::State(
                "trajectory does not start at the full network".into(),
            ));
        }
        for pair in self.records.windows(2) {
            if pair[1].resource >= pair[0].resource {
                return Err(Error::State(format!(
                    "resource does not decrease at iteration {}",
                    pair[1].iteration
                )));
            }
        }
        for r in &self.records {
            let actual = cost.total(spec, &r.choice)?;
            if actual != r.resource {
                return Err(Error::State(format!(
                    "iteration {} records resource {} but the choice costs {actual}",
                    r.iteration, r.resource
                )));
            }
        }
        if self.discovered().resource > self.target {
            return Err(Error::State("trajectory ends above its target".into()));
        }
        Ok(())
    }

    pub fn to_json(&self, spec: &NetworkSpec) -> Result<String> {
        let steps = self
            .records
            .iter()
            .map(|r| {
                Ok(StepFile {
                    iteration: r.iteration,
                    sample_id: r.sample_id,
                    resource: r.resource,
                    holdout_accuracy: r.holdout_accuracy,
                    architecture: Architecture::from_choice(spec, &r.choice)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let file = TrajectoryFile {
            format: TRAJECTORY_FORMAT.into(),
            version: TRAJECTORY_VERSION,
            metric: self.metric,
            target: self.target,
            steps,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str, spec: &NetworkSpec) -> Result<Self> {
        let file: TrajectoryFile = serde_json::from_str(text)?;
        if file.format != TRAJECTORY_FORMAT || file.version != TRAJECTORY_VERSION {
            return Err(Error::Config(format!(
                "trajectory format {} v{} is not {TRAJECTORY_FORMAT} v{TRAJECTORY_VERSION}",
                file.format, file.version
            )));
        }
        if file.steps.is_empty() {
            return Err(Error::Config("trajectory has no steps".into()));
        }
        let records = file
            .steps
            .into_iter()
            .map(|s| {
                Ok(SampleRecord {
                    iteration: s.iteration,
                    sample_id: s.sample_id,
                    choice: s.architecture.to_choice(spec)?,
                    resource: s.resource,
                    holdout_accuracy: s.holdout_accuracy,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Trajectory {
            metric: file.metric,
            target: file.target,
            records,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub trajectory: Trajectory,
    pub log: Vec<LogRow>,
}

/// Highest holdout accuracy; ties go to the lower resource, then to the
/// lower sample id.
pub fn select_best(samples: &[SampleRecord]) -> Result<&SampleRecord> {
    let mut it = samples.iter();
    let mut best = it
        .next()
        .ok_or_else(|| Error::State("no samples to select from".into()))?;
    for s in it {
        let better = s
            .holdout_accuracy
            .total_cmp(&best.holdout_accuracy)
            .then(best.resource.total_cmp(&s.resource))
            .then(best.sample_id.cmp(&s.sample_id))
            .is_gt();
        if better {
            best = s;
        }
    }
    Ok(best)
}

/// Coordinate-descent search over the shared weights of `supernet`, ranking
/// samples by accuracy on `holdout`.
pub fn run_search(
    supernet: &SuperNetwork,
    cost: &CostModel,
    holdout: &Dataset,
    config: &SearchConfig,
) -> Result<SearchOutcome> {
    run_search_with(supernet.spec(), cost, config, |choice| {
        evaluate_sample(supernet, choice, holdout)
    })
}

/// [`run_search`] with a caller-supplied evaluator. `evaluate` is called
/// concurrently and must be deterministic for the search to be reproducible.
pub fn run_search_with<F>(
    spec: &NetworkSpec,
    cost: &CostModel,
    config: &SearchConfig,
    evaluate: F,
) -> Result<SearchOutcome>
where
    F: Fn(&SubNetChoice) -> Result<f64> + Sync,
{
    config.validate(spec.len())?;
    if config.metric != cost.kind() {
        return Err(Error::Config(format!(
            "search budgets {} but the cost model measures {}",
            config.metric,
            cost.kind()
        )));
    }
    let minimum = cost.total(spec, &spec.min_choice())?;
    if minimum > config.target_resource {
        return Err(Error::InfeasibleTarget {
            target: config.target_resource,
            minimum,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let full = spec.full_choice();
    let initial = SampleRecord {
        iteration: 0,
        sample_id: 0,
        resource: cost.total(spec, &full)?,
        holdout_accuracy: evaluate(&full)?,
        choice: full,
    };
    let r0 = initial.resource;
    let mut records = vec![initial];
    let mut log = Vec::new();

    let mut iteration = 0;
    loop {
        let current = records.last().expect("non-empty");
        if current.resource <= config.target_resource {
            break;
        }
        iteration += 1;
        if iteration > config.max_iterations {
            return Err(Error::IterationFailure { iteration });
        }
        // Never ask for more than is left to reach the target, so the last
        // iteration lands on it instead of overshooting by a whole step.
        let required = reduction_schedule(r0, config, iteration - 1)
            .min(current.resource - config.target_resource);
        let bound = current.resource - required;

        let candidates = match config.optimizer {
            Optimizer::Mcd => {
                let mut out = Vec::with_capacity(config.samples_per_iteration);
                for _ in 0..config.samples_per_iteration {
                    match generate_mcd_sample(
                        spec,
                        cost,
                        &current.choice,
                        config.layers_per_sample,
                        required,
                        config.max_attempts,
                        &mut rng,
                    ) {
                        Ok(c) => out.push(c),
                        Err(Error::Feasibility { .. }) => {
                            return Err(Error::IterationFailure { iteration })
                        }
                        Err(e) => return Err(e),
                    }
                }
                out
            }
            Optimizer::Scd => generate_scd_samples(spec, cost, &current.choice, required)?,
        };
        if candidates.is_empty() {
            return Err(Error::IterationFailure { iteration });
        }

        let mut first_seen: HashMap<SubNetChoice, usize> = HashMap::new();
        let mut unique = Vec::new();
        let origin: Vec<usize> = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| {
                *first_seen.entry(c.clone()).or_insert_with(|| {
                    unique.push(i);
                    i
                })
            })
            .collect();
        let accuracies: Vec<f64> = unique
            .par_iter()
            .map(|&i| evaluate(&candidates[i]))
            .collect::<Result<_>>()?;
        let mut acc_of = vec![0.0; candidates.len()];
        for (&i, &a) in unique.iter().zip(&accuracies) {
            acc_of[i] = a;
        }

        let mut evaluated = Vec::with_capacity(unique.len());
        for &i in &unique {
            evaluated.push(SampleRecord {
                iteration,
                sample_id: i,
                choice: candidates[i].clone(),
                resource: cost.total(spec, &candidates[i])?,
                holdout_accuracy: acc_of[i],
            });
        }
        let best = select_best(&evaluated)?.clone();
        for (i, c) in candidates.iter().enumerate() {
            log.push(LogRow {
                iteration,
                sample_id: i,
                resource: cost.total(spec, c)?,
                accuracy: acc_of[origin[i]],
                chosen: u8::from(i == best.sample_id),
                bound,
                duplicate: u8::from(origin[i] != i),
            });
        }
        records.push(best);
    }

    Ok(SearchOutcome {
        trajectory: Trajectory {
            metric: config.metric,
            target: config.target_resource,
            records,
        },
        log,
    })
}
