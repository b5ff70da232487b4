//! Coordinate-descent search over a trained super-network, the training
//! loops that feed it, and trajectory replay for the discovered network.

pub mod config;
pub mod run;
pub mod sample;
pub mod train;

pub use config::{reduction_schedule, Optimizer, SearchConfig};
pub use run::{
    run_search, run_search_with, select_best, LogRow, SampleRecord, SearchOutcome, Trajectory,
};
pub use sample::{
    generate_mcd_sample, generate_scd_samples, max_mcd_reduction, max_scd_reduction,
    shrink_options, shrinkable_layers,
};
pub use train::{
    accuracy, evaluate_sample, isolation_violations, predict, train_subnetwork, train_supernetwork,
    trajectory_replay_finetune, TrainConfig, TrainReport,
};
