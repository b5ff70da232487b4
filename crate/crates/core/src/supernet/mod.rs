//! The searchable network: layer specs, shared weights, channel-level bypass,
//! ordered-dropout and superkernel masking, and sub-network extraction.

pub mod arch;
pub mod cbc;
pub mod choice;
pub mod masking;
pub mod network;
pub mod spec;
pub mod subnet;

pub use arch::{ArchLayer, Architecture};
pub use cbc::{bypass_channel_map, cbc_output_channels, ChannelSource};
pub use choice::{LayerChoice, SubNetChoice};
pub use masking::{
    ordered_dropout_mask, sample_width_assignments, slice_conv_weight, superkernel_mask,
    ChannelMask,
};
pub use network::{LayerParams, Mode, SuperNetwork, TrainPlan};
pub use spec::{default_kernel_grid, default_width_grid, LayerKind, LayerSpec, NetworkSpec};
pub use subnet::{extract_subnetwork, ConvStage, Stage, SubNetwork, WeightSource};
