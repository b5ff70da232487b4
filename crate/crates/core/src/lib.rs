//! Weight-sharing architecture search with channel-level bypass connections.
//!
//! A [`SuperNetwork`] holds full-size weights for a chain of convolutions.
//! Every sub-network is described by a [`SubNetChoice`] (filters kept and
//! kernel size per layer). Layers that keep `M < min(C, T)` filters pass the
//! remaining input channels straight through, so removing all filters of a
//! stride-1 layer removes the layer. Training samples widths per image with
//! ordered dropout; search shrinks several layers at a time until a resource
//! target is met.

// `!(x > 0.0)` deliberately rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod data;
pub mod error;
pub mod search;
pub mod supernet;
pub mod tensor;

pub use cost::{co2_estimate, total_resource, CostModel, LatencyTable, ResourceKind};
pub use data::{Dataset, Split, SynthConfig};
pub use error::{Error, Result};
pub use search::{run_search, SearchConfig, TrainConfig, Trajectory};
pub use supernet::{
    extract_subnetwork, Architecture, LayerChoice, LayerSpec, NetworkSpec, SubNetChoice,
    SubNetwork, SuperNetwork,
};
pub use tensor::Tensor;
