//! JSON checkpoint: `{"model": ..., "params": ..., "meta": {"seed": .., "loss": ..}}`.
//!
//! Floats are written with 17 significant digits so every `f64` survives a
//! round trip bit-exactly.

use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LossKind, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::{flatten, unflatten, ParamTree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub loss: LossKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ModelSpec,
    pub params: ParamTree,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(model: ModelSpec, params: &[f64], meta: CheckpointMeta) -> Result<Self> {
        let params = unflatten(params, &model.template())?;
        Ok(Self { model, params, meta })
    }

    pub fn flat_params(&self) -> Vec<f64> {
        flatten(&self.params)
    }

    pub fn to_json(&self) -> Result<String> {
        to_json_17(self)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        ck.model.validate()?;
        ck.model.check_params(&ck.params)?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// `serde_json` formatter that prints floats as `d.dddddddddddddddde±x`.
#[derive(Default)]
pub struct SigDigitsFormatter;

impl serde_json::ser::Formatter for SigDigitsFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{}", format_f64(value))
    }
}

/// 17-significant-digit decimal representation.
pub fn format_f64(value: f64) -> String {
    if value.is_finite() {
        format!("{value:.16e}")
    } else {
        // JSON has no non-finite numbers; callers check before serializing.
        "null".to_string()
    }
}

/// Serializes any value with [`SigDigitsFormatter`].
pub fn to_json_17<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigitsFormatter);
    value.serialize(&mut ser)?;
    String::from_utf8(buf).map_err(|e| Error::numerical(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Activation;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let model = ModelSpec::mlp(2, &[5, 4], 3, Activation::Tanh).unwrap();
        let mut theta = model.init_params(7);
        theta[0] = 0.1 + 0.2;
        theta[1] = f64::MIN_POSITIVE;
        theta[2] = -1.0 / 3.0;
        let ck = Checkpoint::new(model, &theta, CheckpointMeta { seed: 7, loss: LossKind::CrossEntropy }).unwrap();
        let json = ck.to_json().unwrap();
        let back = Checkpoint::from_json(&json).unwrap();
        let got = back.flat_params();
        assert!(got.iter().zip(&theta).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back, ck);
    }

    #[test]
    fn floats_have_17_significant_digits() {
        assert_eq!(format_f64(1.6556547), "1.6556546999999999e0");
        assert_eq!(format_f64(-0.1), "-1.0000000000000001e-1");
    }
}
