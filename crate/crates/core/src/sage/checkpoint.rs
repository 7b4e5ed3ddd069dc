//! JSON checkpoints with every weight stored as its 64-bit pattern in hex.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::config::SageConfig;
use super::model::{Dense, Parameters, SageLayer, SageModel};
use crate::error::{Error, Result};

pub const FORMAT: &str = "roadvis-sage/1";

pub fn encode_f64(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

pub fn decode_f64(s: &str) -> Result<f64> {
    if s.len() != 16 {
        return Err(Error::Validation(format!(
            "hex float {s:?} is not 16 digits"
        )));
    }
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|e| Error::Validation(format!("hex float {s:?}: {e}")))
}

/// Serde adapter for `Vec<f64>` fields stored as hex bit patterns.
pub mod hex_vec {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|&x| super::encode_f64(x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| super::decode_f64(s).map_err(D::Error::custom))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseRecord {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    #[serde(with = "hex_vec")]
    pub weight: Vec<f64>,
    #[serde(with = "hex_vec")]
    pub bias: Vec<f64>,
}

impl DenseRecord {
    fn from_dense(d: &Dense) -> Self {
        DenseRecord {
            rows: d.input_dim(),
            cols: d.output_dim(),
            weight: d.weight.iter().copied().collect(),
            bias: d.bias.to_vec(),
        }
    }

    fn into_dense(self) -> Result<Dense> {
        let n = self.weight.len();
        let weight = Array2::from_shape_vec((self.rows, self.cols), self.weight).map_err(|_| {
            Error::DimensionMismatch {
                expected: self.rows * self.cols,
                found: n,
            }
        })?;
        Ok(Dense {
            weight,
            bias: Array1::from(self.bias),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<DenseRecord>,
    pub linear: DenseRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: SageConfig,
    pub input_dim: usize,
    pub layers: Vec<LayerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<DenseRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &SageModel) -> Self {
        let p = model.params();
        Checkpoint {
            format: FORMAT.to_string(),
            config: model.config().clone(),
            input_dim: model.input_dim(),
            layers: p
                .layers
                .iter()
                .map(|l| LayerRecord {
                    pool: l.pool.as_ref().map(DenseRecord::from_dense),
                    linear: DenseRecord::from_dense(&l.linear),
                })
                .collect(),
            head: p.head.as_ref().map(DenseRecord::from_dense),
        }
    }

    pub fn into_model(self) -> Result<SageModel> {
        if self.format != FORMAT {
            return Err(Error::Validation(format!(
                "unsupported checkpoint format {:?}",
                self.format
            )));
        }
        let layers = self
            .layers
            .into_iter()
            .map(|l| {
                Ok(SageLayer {
                    pool: l.pool.map(DenseRecord::into_dense).transpose()?,
                    linear: l.linear.into_dense()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let head = self.head.map(DenseRecord::into_dense).transpose()?;
        SageModel::from_parameters(self.config, self.input_dim, Parameters { layers, head })
    }
}

pub fn save_model(model: &SageModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &Checkpoint::from_model(model))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<SageModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
    ck.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sage::config::Aggregator;

    #[test]
    fn hex_roundtrip_special_values() {
        for x in [
            0.0,
            -0.0,
            1.0 / 3.0,
            f64::MIN_POSITIVE,
            5e-324,
            -1.7976931348623157e308,
        ] {
            assert_eq!(decode_f64(&encode_f64(x)).unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(encode_f64(1.0), "3ff0000000000000");
        assert!(decode_f64("3ff").is_err());
        assert!(decode_f64("zzzzzzzzzzzzzzzz").is_err());
    }

    #[test]
    fn model_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for agg in [Aggregator::Mean, Aggregator::MeanPooling] {
            let cfg = SageConfig {
                aggregator: agg,
                hidden_units: 7,
                embedding_dim: 5,
                ..SageConfig::default()
            };
            let model = SageModel::new(cfg, 6, Some(8), 42).unwrap();
            let path = dir.path().join("m.json");
            save_model(&model, &path).unwrap();
            let back = load_model(&path).unwrap();
            assert_eq!(back.config(), model.config());
            let a: Vec<u64> = model
                .params()
                .flatten()
                .iter()
                .map(|x| x.to_bits())
                .collect();
            let b: Vec<u64> = back
                .params()
                .flatten()
                .iter()
                .map(|x| x.to_bits())
                .collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn corrupted_shape_rejected() {
        let model = SageModel::new(SageConfig::default(), 3, None, 1).unwrap();
        let mut ck = Checkpoint::from_model(&model);
        ck.layers[0].linear.weight.pop();
        assert!(ck.into_model().is_err());
    }
}
