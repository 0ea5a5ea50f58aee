//! Versioned JSON checkpoints of every trainable tensor.
//!
//! Floats are written in shortest round-trip form and parsed back exactly,
//! so `load(save(p)) == p` bit for bit.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::GcnParams;
use crate::semantic::{Dense, SemanticEncoder};
use crate::train::{ModelConfig, Params};

pub const CHECKPOINT_FORMAT: &str = "relgraph-checkpoint";
pub const CHECKPOINT_VERSION: u64 = 1;

/// Weight and bias of one encoder layer, filled in as records are read.
type PendingDense = (Option<Array2<f64>>, Option<Array2<f64>>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u64,
    pub model: ModelConfig,
    pub slope: f64,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_params(params: &Params, model: &ModelConfig) -> Self {
        let tensors = params
            .tensors()
            .into_iter()
            .map(|(name, t)| TensorRecord {
                name,
                shape: [t.nrows(), t.ncols()],
                data: t.iter().copied().collect(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: model.clone(),
            slope: params.gcn.slope,
            tensors,
        }
    }

    pub fn to_params(&self) -> Result<Params> {
        let malformed = |reason: String| Error::Malformed { line: 1, reason };
        let mut enc_layers: Vec<PendingDense> = Vec::new();
        let mut gcn: Vec<Option<Array2<f64>>> = Vec::new();
        let (mut head_w, mut head_b) = (None, None);
        for rec in &self.tensors {
            let [r, c] = rec.shape;
            let t = Array2::from_shape_vec((r, c), rec.data.clone())
                .map_err(|e| malformed(format!("tensor {}: {e}", rec.name)))?;
            let parts: Vec<&str> = rec.name.split('.').collect();
            match parts.as_slice() {
                ["encoder", l, kind] => {
                    let l: usize = l.parse().map_err(|_| malformed(format!("bad name {}", rec.name)))?;
                    if enc_layers.len() <= l {
                        enc_layers.resize(l + 1, (None, None));
                    }
                    match *kind {
                        "weight" => enc_layers[l].0 = Some(t),
                        "bias" => enc_layers[l].1 = Some(t),
                        _ => return Err(malformed(format!("unknown tensor {}", rec.name))),
                    }
                }
                ["gcn", l, "weight"] => {
                    let l: usize = l.parse().map_err(|_| malformed(format!("bad name {}", rec.name)))?;
                    if gcn.len() <= l {
                        gcn.resize(l + 1, None);
                    }
                    gcn[l] = Some(t);
                }
                ["head", "weight"] => head_w = Some(t),
                ["head", "bias"] => head_b = Some(t),
                _ => return Err(malformed(format!("unknown tensor {}", rec.name))),
            }
        }
        let missing = |what: &str| malformed(format!("missing tensor {what}"));
        let layers = enc_layers
            .into_iter()
            .enumerate()
            .map(|(l, (w, b))| {
                Ok(Dense {
                    weight: w.ok_or_else(|| missing(&format!("encoder.{l}.weight")))?,
                    bias: b.ok_or_else(|| missing(&format!("encoder.{l}.bias")))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let weights = gcn
            .into_iter()
            .enumerate()
            .map(|(l, w)| w.ok_or_else(|| missing(&format!("gcn.{l}.weight"))))
            .collect::<Result<Vec<_>>>()?;
        let params = Params {
            encoder: SemanticEncoder {
                layers,
                slope: self.slope,
            },
            gcn: GcnParams {
                weights,
                slope: self.slope,
            },
            head: Dense {
                weight: head_w.ok_or_else(|| missing("head.weight"))?,
                bias: head_b.ok_or_else(|| missing("head.bias"))?,
            },
        };
        params.validate().map_err(|e| malformed(e.to_string()))?;
        Ok(params)
    }
}

pub fn checkpoint_to_string(params: &Params, model: &ModelConfig) -> Result<String> {
    serde_json::to_string(&Checkpoint::from_params(params, model))
        .map_err(|e| Error::InvalidConfig(format!("checkpoint not serializable: {e}")))
}

pub fn checkpoint_from_str(text: &str) -> Result<(Params, ModelConfig)> {
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Malformed {
        line: e.line(),
        reason: e.to_string(),
    })?;
    if raw.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
        return Err(Error::Malformed {
            line: 1,
            reason: "not a relgraph checkpoint".into(),
        });
    }
    let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
    if version != CHECKPOINT_VERSION {
        return Err(Error::SchemaVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let ck: Checkpoint = serde_json::from_value(raw).map_err(|e| Error::Malformed {
        line: 1,
        reason: e.to_string(),
    })?;
    Ok((ck.to_params()?, ck.model))
}

pub fn save_checkpoint(params: &Params, model: &ModelConfig, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(params, model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Params, ModelConfig)> {
    checkpoint_from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut p = Params::init(&mut rng, 6, 3, 2, 0.01).unwrap();
        // awkward values: subnormals and long mantissas
        p.head.bias[[0, 0]] = 5e-324;
        p.head.bias[[0, 1]] = 1.0 / 3.0;
        p.head.bias[[0, 2]] = rng.random::<f64>() * 1e300;
        let model = ModelConfig::default();
        let text = checkpoint_to_string(&p, &model).unwrap();
        let (q, m) = checkpoint_from_str(&text).unwrap();
        assert_eq!(p, q);
        assert_eq!(m, model);
        assert_eq!(checkpoint_to_string(&q, &m).unwrap(), text);
    }

    #[test]
    fn rejects_bad_input() {
        let p = Params::init(&mut ChaCha8Rng::seed_from_u64(1), 4, 2, 1, 0.01).unwrap();
        let text = checkpoint_to_string(&p, &ModelConfig::default()).unwrap();
        assert!(matches!(
            checkpoint_from_str(&text.replace("\"version\":1", "\"version\":2")),
            Err(Error::SchemaVersion { found: 2, .. })
        ));
        assert!(matches!(checkpoint_from_str("{}"), Err(Error::Malformed { .. })));
        assert!(matches!(
            checkpoint_from_str(&text[..text.len() / 2]),
            Err(Error::Malformed { .. })
        ));
        let dropped = text.replace("head.bias", "head.unknown");
        assert!(checkpoint_from_str(&dropped).is_err());
    }
}
