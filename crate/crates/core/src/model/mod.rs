//! The two-branch hotspot model: a neighbour-convolution predictor of true
//! crimes and a convolutional gate estimating each tract's reporting rate.

mod checkpoint;
mod gate;
mod net;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::MobilityFeature;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, TensorEntry,
};
pub use gate::{DeterminantScaler, GateInputMap};
pub use net::{Model, Prediction};

pub const CRIME_CHANNEL: &str = "crime";
pub const DOW_CHANNELS: [&str; 2] = ["dow_sin", "dow_cos"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantKind {
    #[serde(rename = "UU")]
    Uu,
    #[serde(rename = "UU_C")]
    UuC,
    #[serde(rename = "IFG")]
    Ifg,
    #[serde(rename = "TC")]
    Tc,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] = [VariantKind::Uu, VariantKind::UuC, VariantKind::Ifg, VariantKind::Tc];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::Uu => "UU",
            VariantKind::UuC => "UU_C",
            VariantKind::Ifg => "IFG",
            VariantKind::Tc => "TC",
        }
    }

    /// Predictor input channels, in tensor order.
    pub fn channels(self) -> Vec<String> {
        let mut ch = vec![CRIME_CHANNEL.to_string()];
        if self != VariantKind::UuC {
            ch.extend(MobilityFeature::ALL.iter().map(|f| f.name().to_string()));
        }
        ch.extend(DOW_CHANNELS.iter().map(|s| s.to_string()));
        ch
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace(['(', ')'], "_");
        let norm = norm.trim_end_matches('_');
        VariantKind::ALL
            .into_iter()
            .find(|v| v.as_str() == norm)
            .ok_or_else(|| Error::Invalid(format!("unknown model variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub kind: VariantKind,
    pub channels: Vec<String>,
    pub gate_enabled: bool,
    /// Weight of the fairness-gap term; zero unless `kind` is IFG.
    pub ifg_weight: f64,
}

impl ModelVariant {
    pub fn new(kind: VariantKind, ifg_weight: f64) -> Result<Self> {
        if !(ifg_weight >= 0.0 && ifg_weight.is_finite()) {
            return Err(Error::Invalid(format!("IFG weight must be ≥ 0, got {ifg_weight}")));
        }
        if kind != VariantKind::Ifg && ifg_weight != 0.0 {
            return Err(Error::Invalid(format!("IFG weight {ifg_weight} given for variant {kind}")));
        }
        Ok(Self {
            kind,
            channels: kind.channels(),
            gate_enabled: kind == VariantKind::Tc,
            ifg_weight,
        })
    }

    pub fn uu() -> Self {
        Self::new(VariantKind::Uu, 0.0).expect("valid")
    }

    pub fn uu_c() -> Self {
        Self::new(VariantKind::UuC, 0.0).expect("valid")
    }

    pub fn ifg(weight: f64) -> Result<Self> {
        Self::new(VariantKind::Ifg, weight)
    }

    pub fn tc() -> Self {
        Self::new(VariantKind::Tc, 0.0).expect("valid")
    }
}

/// Layer sizes of both branches. Every conv block is a same-padded
/// convolution followed by ReLU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub predictor_channels: Vec<usize>,
    pub predictor_kernel: [usize; 2],
    pub gate_channels: Vec<usize>,
    pub gate_kernel: [usize; 2],
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            predictor_channels: vec![16, 16],
            predictor_kernel: [3, 3],
            gate_channels: vec![16, 16, 16],
            gate_kernel: [3, 3],
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, chans, kernel) in [
            ("predictor", &self.predictor_channels, self.predictor_kernel),
            ("gate", &self.gate_channels, self.gate_kernel),
        ] {
            if chans.contains(&0) {
                errs.push(format!("model.arch.{name}_channels: every block needs at least one channel"));
            }
            if kernel.iter().any(|&k| k == 0 || k % 2 == 0) {
                errs.push(format!("model.arch.{name}_kernel: sizes must be odd and positive, got {kernel:?}"));
            }
        }
        errs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_channels() {
        assert_eq!(ModelVariant::uu().channels.len(), 13);
        assert_eq!(ModelVariant::uu_c().channels, ["crime", "dow_sin", "dow_cos"]);
        assert_eq!(ModelVariant::ifg(0.1).unwrap().channels, ModelVariant::uu().channels);
        assert!(ModelVariant::tc().gate_enabled);
        assert!(!ModelVariant::ifg(0.1).unwrap().gate_enabled);
        assert!(ModelVariant::new(VariantKind::Tc, 0.1).is_err());
        assert!(ModelVariant::ifg(-1.0).is_err());
    }

    #[test]
    fn variant_names_parse() {
        for v in VariantKind::ALL {
            assert_eq!(v.as_str().parse::<VariantKind>().unwrap(), v);
        }
        assert_eq!("uu(c)".parse::<VariantKind>().unwrap(), VariantKind::UuC);
        assert!("xx".parse::<VariantKind>().is_err());
    }
}
