//! Checkpoint files: architecture metadata plus named flat arrays.
//!
//! ```json
//! {"metadata": {"hidden_dim": 32, "vnf_types": 5, "propagation_steps": 5,
//!               "seed": 1, "training_stage": "sl", "scorer_variant": "additive-tanh"},
//!  "tensors": [{"name": "encoder.gru.w_z", "shape": [32, 32], "data": [...]}, ...]}
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralnet::{ParamSet, Tensor};
use crate::policy::{GgRnn, ModelConfig, SCORER_VARIANT};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub hidden_dim: usize,
    pub vnf_types: usize,
    pub propagation_steps: usize,
    pub seed: u64,
    /// Free-form label such as `init`, `sl`, `rl-lambda0`.
    pub training_stage: String,
    pub scorer_variant: String,
}

impl CheckpointMeta {
    pub fn new(config: &ModelConfig, seed: u64, training_stage: impl Into<String>) -> Self {
        CheckpointMeta {
            hidden_dim: config.hidden_dim,
            vnf_types: config.vnf_types,
            propagation_steps: config.prop_steps,
            seed,
            training_stage: training_stage.into(),
            scorer_variant: SCORER_VARIANT.to_string(),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden_dim: self.hidden_dim,
            prop_steps: self.propagation_steps,
            vnf_types: self.vnf_types,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct NamedArray {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    metadata: CheckpointMeta,
    tensors: Vec<NamedArray>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta, params: ParamSet) -> Self {
        Checkpoint { meta, params }
    }

    /// Builds the model described by the metadata and checks the tensors
    /// against it.
    pub fn model(&self) -> Result<GgRnn> {
        if self.meta.scorer_variant != SCORER_VARIANT {
            return Err(Error::CheckpointMismatch {
                field: "scorer_variant".into(),
                expected: SCORER_VARIANT.into(),
                found: self.meta.scorer_variant.clone(),
            });
        }
        let model = GgRnn::new(self.meta.model_config())?;
        model.check_params(&self.params)?;
        Ok(model)
    }

    /// Fails with an error naming the first metadata field that differs
    /// from `expected`.
    pub fn expect_config(&self, expected: &ModelConfig) -> Result<()> {
        let found = self.meta.model_config();
        let fields = [
            ("hidden_dim", expected.hidden_dim, found.hidden_dim),
            ("vnf_types", expected.vnf_types, found.vnf_types),
            ("propagation_steps", expected.prop_steps, found.prop_steps),
        ];
        for (field, e, f) in fields {
            if e != f {
                return Err(Error::CheckpointMismatch {
                    field: field.into(),
                    expected: e.to_string(),
                    found: f.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let tensors = self
            .params
            .iter()
            .map(|(name, t)| NamedArray {
                name: name.to_string(),
                shape: [t.nrows(), t.ncols()],
                data: t.iter().copied().collect(),
            })
            .collect();
        let file = CheckpointFile {
            metadata: self.meta.clone(),
            tensors,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(s)?;
        let mut params = ParamSet::new();
        for a in file.tensors {
            let t = Tensor::from_shape_vec((a.shape[0], a.shape[1]), a.data).map_err(|_| {
                Error::Shape(format!("tensor `{}` data does not match shape {:?}", a.name, a.shape))
            })?;
            params.insert(a.name, t)?;
        }
        Ok(Checkpoint {
            meta: file.metadata,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let config = ModelConfig::default();
        let model = GgRnn::new(config).unwrap();
        let ckpt = Checkpoint::new(CheckpointMeta::new(&config, 9, "init"), model.init_params(9));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        assert!(back.model().is_ok());
    }

    #[test]
    fn mismatches_name_the_field() {
        let config = ModelConfig::default();
        let model = GgRnn::new(config).unwrap();
        let ckpt = Checkpoint::new(CheckpointMeta::new(&config, 0, "init"), model.init_params(0));
        let other = ModelConfig {
            hidden_dim: 16,
            ..config
        };
        let err = ckpt.expect_config(&other).unwrap_err().to_string();
        assert!(err.contains("hidden_dim"), "{err}");

        let mut lying = ckpt.clone();
        lying.meta.hidden_dim = 16;
        assert!(lying.model().is_err());

        let bad = r#"{"metadata":{"hidden_dim":1,"vnf_types":1,"propagation_steps":0,"seed":0,
            "training_stage":"x","scorer_variant":"additive-tanh"},
            "tensors":[{"name":"a","shape":[2,2],"data":[1.0]}]}"#;
        assert!(Checkpoint::from_json(bad).is_err());
    }
}
