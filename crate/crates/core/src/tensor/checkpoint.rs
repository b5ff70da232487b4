//! Weight checkpoints: a versioned JSON object mapping parameter names to a
//! shape and a flat row-major value array.
//!
//! ```json
//! {"format": "cbcnas-weights", "version": 1,
//!  "tensors": {"layer0.weight": {"shape": [8, 3, 3, 3], "data": [...]}}}
//! ```
//!
//! Keys are written in sorted order and floats in shortest round-trip form,
//! so equal weights always produce byte-identical files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tape::ParamStore;
use super::Tensor;
use crate::error::{Error, Result};

pub const FORMAT: &str = "cbcnas-weights";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    shape: Vec<usize>,
    data: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    format: String,
    version: u32,
    tensors: BTreeMap<String, Entry>,
}

pub fn to_json(params: &ParamStore) -> Result<String> {
    let tensors = params
        .iter()
        .map(|(_, name, t)| {
            (
                name.to_string(),
                Entry {
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                },
            )
        })
        .collect();
    let file = File {
        format: FORMAT.into(),
        version: VERSION,
        tensors,
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn from_json(text: &str) -> Result<BTreeMap<String, Tensor>> {
    let file: File = serde_json::from_str(text)?;
    if file.format != FORMAT {
        return Err(Error::Config(format!(
            "checkpoint format `{}` is not `{FORMAT}`",
            file.format
        )));
    }
    if file.version != VERSION {
        return Err(Error::Config(format!(
            "checkpoint version {} unsupported (expected {VERSION})",
            file.version
        )));
    }
    file.tensors
        .into_iter()
        .map(|(name, e)| Ok((name, Tensor::from_vec(&e.shape, e.data)?)))
        .collect()
}

pub fn save(params: &ParamStore, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(params)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}

/// Overwrites every tensor in `params` from `loaded`, requiring the same
/// names and shapes on both sides.
pub fn restore(params: &mut ParamStore, loaded: &BTreeMap<String, Tensor>) -> Result<()> {
    if loaded.len() != params.len() {
        return Err(Error::Config(format!(
            "checkpoint holds {} tensors, network expects {}",
            loaded.len(),
            params.len()
        )));
    }
    let ids: Vec<_> = params
        .iter()
        .map(|(id, name, _)| (id, name.to_string()))
        .collect();
    for (id, name) in ids {
        let t = loaded
            .get(&name)
            .ok_or_else(|| Error::Config(format!("checkpoint is missing tensor `{name}`")))?;
        if t.shape() != params.get(id).shape() {
            return Err(Error::Config(format!(
                "tensor `{name}` has shape {:?} in the checkpoint but {:?} in the network",
                t.shape(),
                params.get(id).shape()
            )));
        }
        *params.get_mut(id) = t.clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut params = ParamStore::new();
        params.insert("b", Tensor::randn(&[3, 2, 3, 3], 1.0, &mut rng));
        params.insert("a", Tensor::randn(&[4], 1e-6, &mut rng));
        let text = to_json(&params).unwrap();
        let loaded = from_json(&text).unwrap();
        let mut fresh = params.clone();
        fresh.get_mut(crate::tensor::tape::ParamId(0)).fill(0.0);
        restore(&mut fresh, &loaded).unwrap();
        assert_eq!(fresh, params);
        assert_eq!(to_json(&fresh).unwrap(), text);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::zeros(&[2, 2]));
        let mut other = ParamStore::new();
        other.insert("w", Tensor::zeros(&[4]));
        let loaded = from_json(&to_json(&other).unwrap()).unwrap();
        let err = restore(&mut params, &loaded).unwrap_err();
        assert!(err.to_string().contains("`w`"));
    }

    #[test]
    fn wrong_version_rejected() {
        let text = r#"{"format":"cbcnas-weights","version":9,"tensors":{}}"#;
        assert!(from_json(text).is_err());
    }
}
