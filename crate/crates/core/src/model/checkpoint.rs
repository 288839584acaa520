use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{GraphDims, GtModel};
use super::{ModelConfig, ModelError};
use crate::numcore::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format_version: u32,
    config: ModelConfig,
    dims: GraphDims,
    params: Vec<NamedTensor>,
}

impl GtModel {
    pub fn to_json(&self) -> String {
        let ck = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            dims: self.dims,
            params: self
                .names
                .iter()
                .zip(&self.params)
                .map(|(n, t)| NamedTensor {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&ck).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                ck.format_version
            )));
        }
        let named = ck
            .params
            .into_iter()
            .map(|p| {
                Tensor::new(p.shape, p.data)
                    .map(|t| (p.name, t))
                    .map_err(|e| ModelError::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        GtModel::new_unchecked(ck.config, ck.dims).with_params(named)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
