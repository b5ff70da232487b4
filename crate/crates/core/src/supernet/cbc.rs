//! Channel-level bypass arithmetic.
//!
//! A layer with `C` input channels and `T` filters keeps the first `M`
//! filters. Whenever filter `i` is gone, input channel `i` is forwarded in
//! its place, provided that channel exists and `i < T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where one output channel of a bypass-enabled layer comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelSource {
    Filter(usize),
    Input(usize),
}

fn check(c: usize, t: usize, m: usize) -> Result<()> {
    if c == 0 || t == 0 {
        return Err(Error::Domain(format!(
            "channel counts must be positive (C={c}, T={t})"
        )));
    }
    if m > t {
        return Err(Error::Domain(format!("M={m} exceeds T={t}")));
    }
    Ok(())
}

/// Output channel count `Z = max(min(C, T), M)`.
pub fn cbc_output_channels(c: usize, t: usize, m: usize) -> Result<usize> {
    check(c, t, m)?;
    Ok(c.min(t).max(m))
}

/// Source of each of the `Z` output channels: filters `0..M` first, then
/// bypassed inputs `M..min(C, T)`.
pub fn bypass_channel_map(c: usize, t: usize, m: usize) -> Result<Vec<ChannelSource>> {
    check(c, t, m)?;
    let bypass_end = c.min(t);
    Ok((0..m)
        .map(ChannelSource::Filter)
        .chain((m..bypass_end).map(ChannelSource::Input))
        .collect())
}
