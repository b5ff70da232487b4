//! Architecture export: one row per layer with `{index, kind, C, T, M, k,
//! stride}`, where `C` is the channel count the layer actually receives in
//! this sub-network. The classifier is the final `dense` row.

use serde::{Deserialize, Serialize};

use super::choice::{LayerChoice, SubNetChoice};
use super::spec::{LayerKind, NetworkSpec};
use crate::error::{Error, Result};

pub const FORMAT: &str = "cbcnas-architecture";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchLayer {
    pub index: usize,
    pub kind: LayerKind,
    #[serde(rename = "C")]
    pub in_channels: usize,
    #[serde(rename = "T")]
    pub filters: usize,
    #[serde(rename = "M")]
    pub width: usize,
    pub k: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub format: String,
    pub version: u32,
    pub layers: Vec<ArchLayer>,
}

impl Architecture {
    pub fn from_choice(spec: &NetworkSpec, choice: &SubNetChoice) -> Result<Self> {
        spec.validate_choice(choice)?;
        let channels = spec.effective_channels(choice)?;
        let mut layers: Vec<ArchLayer> = spec
            .layers
            .iter()
            .zip(choice.iter())
            .map(|(l, c)| ArchLayer {
                index: l.index,
                kind: LayerKind::Conv,
                in_channels: channels[l.index],
                filters: l.filters,
                width: c.width,
                k: if c.is_removed() {
                    l.max_kernel
                } else {
                    c.kernel
                },
                stride: l.stride,
            })
            .collect();
        layers.push(ArchLayer {
            index: spec.len(),
            kind: LayerKind::Dense,
            in_channels: *channels.last().expect("non-empty"),
            filters: spec.classes,
            width: spec.classes,
            k: 1,
            stride: 1,
        });
        Ok(Architecture {
            format: FORMAT.into(),
            version: VERSION,
            layers,
        })
    }

    /// Recovers the choice, checking every row against `spec`.
    pub fn to_choice(&self, spec: &NetworkSpec) -> Result<SubNetChoice> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Config(format!(
                "architecture format {} v{} is not {FORMAT} v{VERSION}",
                self.format, self.version
            )));
        }
        if self.layers.len() != spec.len() + 1 {
            return Err(Error::Config(format!(
                "architecture has {} rows, expected {} conv rows plus the classifier",
                self.layers.len(),
                spec.len()
            )));
        }
        let mut choices = Vec::with_capacity(spec.len());
        for (row, l) in self.layers.iter().zip(&spec.layers) {
            if row.index != l.index
                || row.kind != LayerKind::Conv
                || row.filters != l.filters
                || row.stride != l.stride
            {
                return Err(Error::Config(format!(
                    "architecture row {} does not match layer {} of the network",
                    row.index, l.index
                )));
            }
            choices.push(LayerChoice::new(row.width, row.k));
        }
        let choice = SubNetChoice::new(choices);
        let rebuilt = Architecture::from_choice(spec, &choice)?;
        if rebuilt != *self {
            return Err(Error::Config(
                "architecture channel counts are inconsistent with the network".into(),
            ));
        }
        Ok(choice)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_json() {
        let spec = NetworkSpec::chain(3, 8, 8, 4, &[(8, 3, 1), (8, 5, 1), (16, 3, 2)]);
        let choice = SubNetChoice::new(vec![
            LayerChoice::new(4, 3),
            LayerChoice::new(0, 3),
            LayerChoice::new(6, 3),
        ]);
        let arch = Architecture::from_choice(&spec, &choice).unwrap();
        assert_eq!(arch.layers[1].in_channels, 4);
        assert_eq!(arch.layers[2].in_channels, 4);
        assert_eq!(arch.layers[3].kind, LayerKind::Dense);
        assert_eq!(arch.layers[3].in_channels, 6);
        let text = arch.to_json().unwrap();
        assert!(text.contains("\"M\""));
        let back = Architecture::from_json(&text)
            .unwrap()
            .to_choice(&spec)
            .unwrap();
        assert_eq!(back, choice);
    }

    #[test]
    fn mismatched_spec_rejected() {
        let spec = NetworkSpec::chain(3, 8, 8, 4, &[(8, 3, 1)]);
        let other = NetworkSpec::chain(3, 8, 8, 4, &[(6, 3, 1)]);
        let arch = Architecture::from_choice(&spec, &spec.full_choice()).unwrap();
        assert!(arch.to_choice(&other).is_err());
    }
}
