//! Versioned JSON checkpoint: the three networks plus the standardization
//! statistics needed to feed raw inputs back through them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::StandardizationStats;
use crate::error::{Error, Result};
use crate::models::{Activation, Layer, Mlp, ModelTriple};

const FORMAT: &str = "cosca-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    shape: [usize; 2],
    activation: Activation,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    standardization: StandardizationStats,
    g: Vec<LayerRecord>,
    f1: Vec<LayerRecord>,
    f2: Vec<LayerRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelTriple,
    pub standardization: StandardizationStats,
}

fn to_records(mlp: &Mlp) -> Vec<LayerRecord> {
    mlp.layers()
        .iter()
        .map(|l| LayerRecord {
            shape: [l.weight.rows(), l.weight.cols()],
            activation: l.activation,
            weight: l.weight.data().to_vec(),
            bias: l.bias.data().to_vec(),
        })
        .collect()
}

fn from_records(records: Vec<LayerRecord>) -> Result<Mlp> {
    let layers = records
        .into_iter()
        .map(|r| {
            Ok(Layer {
                weight: Tensor::new(r.shape.to_vec(), r.weight)?,
                bias: Tensor::new(vec![r.shape[1]], r.bias)?,
                activation: r.activation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Mlp::new(layers)
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let file = CheckpointFile {
            format: FORMAT.into(),
            version: VERSION,
            standardization: self.standardization.clone(),
            g: to_records(&self.model.g),
            f1: to_records(&self.model.f1),
            f2: to_records(&self.model.f2),
        };
        serde_json::to_string_pretty(&file).expect("checkpoints always serialize")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(format!(
                "unsupported checkpoint {} v{} (expected {FORMAT} v{VERSION})",
                file.format, file.version
            ));
        }
        let model = (|| ModelTriple::new(from_records(file.g)?, from_records(file.f1)?, from_records(file.f2)?))()
            .map_err(|e| e.to_string())?;
        if file.standardization.mean.len() != model.g.input_dim() || file.standardization.sd.len() != model.g.input_dim() {
            return Err("standardization statistics do not match the generator input".into());
        }
        Ok(Self {
            model,
            standardization: file.standardization,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_model, ArchitectureSpec};

    fn sample() -> Checkpoint {
        Checkpoint {
            model: init_model(&ArchitectureSpec::toy(2, 3), 7).unwrap(),
            standardization: StandardizationStats {
                mean: vec![0.1, -1.0 / 3.0],
                sd: vec![2.0f64.sqrt(), 1e-8],
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        for (a, b) in ck.model.g.params().iter().zip(back.model.g.params()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn version_is_checked() {
        let text = sample().to_json().replace("\"version\": 1", "\"version\": 2");
        assert!(Checkpoint::from_json(&text).unwrap_err().contains("v2"));
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        let text = sample().to_json();
        std::fs::write(&p, &text[..text.len() / 2]).unwrap();
        assert!(matches!(Checkpoint::load(&p), Err(Error::Parse { .. })));
        assert!(matches!(Checkpoint::load(dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
