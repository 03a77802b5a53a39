//! Encoder checkpoint container, format version `v1`.
//!
//! A checkpoint stores the backbone widths, every parameter tensor in
//! row-major order, the optimizer constants, and the seed that created the
//! run. The item model is always present; a type-level model (backbone +
//! head from the type stage) rides along when available so type predictions
//! can be reproduced offline.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::encoder::{
    BackboneParams, HeadParams, Linear, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON,
};
use crate::error::{io_err, Error, Result};

pub const CHECKPOINT_VERSION: &str = "v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorData {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
}

impl TensorData {
    fn from_matrix(m: &Array2<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.iter().cloned().collect(),
        }
    }

    fn to_matrix(&self) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.rows, self.cols), self.data.clone())
            .map_err(|e| Error::Data(format!("bad tensor shape in checkpoint: {e}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearData {
    pub weight: TensorData,
    pub bias: Vec<f64>,
}

impl LinearData {
    fn from_linear(l: &Linear) -> Self {
        Self {
            weight: TensorData::from_matrix(&l.weight),
            bias: l.bias.to_vec(),
        }
    }

    fn to_linear(&self) -> Result<Linear> {
        Ok(Linear {
            weight: self.weight.to_matrix()?,
            bias: Array1::from_vec(self.bias.clone()),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelData {
    pub backbone: Vec<LinearData>,
    pub head: LinearData,
}

impl ModelData {
    pub fn from_model(backbone: &BackboneParams, head: &HeadParams) -> Self {
        Self {
            backbone: backbone.layers().iter().map(LinearData::from_linear).collect(),
            head: LinearData::from_linear(&Linear {
                weight: head.weight.clone(),
                bias: head.bias.clone(),
            }),
        }
    }

    pub fn to_model(&self) -> Result<(BackboneParams, HeadParams)> {
        let layers: Result<Vec<Linear>> = self.backbone.iter().map(|l| l.to_linear()).collect();
        let backbone = BackboneParams::from_layers(layers?)?;
        let head_linear = self.head.to_linear()?;
        if head_linear.weight.nrows() != backbone.embed_dim() {
            return Err(Error::Data(
                "checkpoint head does not match backbone embedding dimension".into(),
            ));
        }
        Ok((
            backbone,
            HeadParams {
                weight: head_linear.weight,
                bias: head_linear.bias,
            },
        ))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConstants {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub base_lr: f64,
    pub eta_min: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub seed: u64,
    pub d_in: usize,
    pub hidden_widths: Vec<usize>,
    pub embed_dim: usize,
    pub optimizer: OptimizerConstants,
    pub item_model: ModelData,
    pub type_model: Option<ModelData>,
}

impl Checkpoint {
    pub fn new(
        seed: u64,
        base_lr: f64,
        item_backbone: &BackboneParams,
        item_head: &HeadParams,
        type_model: Option<(&BackboneParams, &HeadParams)>,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION.to_string(),
            seed,
            d_in: item_backbone.d_in(),
            hidden_widths: item_backbone.hidden_widths(),
            embed_dim: item_backbone.embed_dim(),
            optimizer: OptimizerConstants {
                beta1: ADAM_BETA1,
                beta2: ADAM_BETA2,
                epsilon: ADAM_EPSILON,
                base_lr,
                eta_min: 0.0,
            },
            item_model: ModelData::from_model(item_backbone, item_head),
            type_model: type_model.map(|(b, h)| ModelData::from_model(b, h)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Invalid(format!("serialize checkpoint: {e}")))?;
        text.push('\n');
        std::fs::write(path, text).map_err(io_err("write", path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err("read", path))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version `{}` (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn item_model(&self) -> Result<(BackboneParams, HeadParams)> {
        let model = self.item_model.to_model()?;
        if model.0.d_in() != self.d_in || model.0.embed_dim() != self.embed_dim {
            return Err(Error::Data(
                "checkpoint widths disagree with stored tensors".into(),
            ));
        }
        Ok(model)
    }

    pub fn type_model(&self) -> Result<Option<(BackboneParams, HeadParams)>> {
        self.type_model.as_ref().map(|m| m.to_model()).transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::new_head;
    use tempfile::tempdir;

    #[test]
    fn checkpoint_round_trips_parameters() {
        let backbone = BackboneParams::new(5, &[7], 3, 11);
        let head = new_head(3, 9, 12);
        let type_backbone = BackboneParams::new(5, &[7], 3, 13);
        let type_head = new_head(3, 2, 14);
        let ckpt = Checkpoint::new(
            42,
            1e-4,
            &backbone,
            &head,
            Some((&type_backbone, &type_head)),
        );

        let dir = tempdir().unwrap();
        let path = dir.path().join("model.json");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let (b2, h2) = loaded.item_model().unwrap();
        assert_eq!(b2, backbone);
        assert_eq!(h2, head);
        let (tb, th) = loaded.type_model().unwrap().unwrap();
        assert_eq!(tb, type_backbone);
        assert_eq!(th, type_head);
        assert_eq!(loaded.seed, 42);
        assert_eq!(loaded.hidden_widths, vec![7]);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let backbone = BackboneParams::new(2, &[], 2, 1);
        let head = new_head(2, 2, 2);
        let mut ckpt = Checkpoint::new(0, 1e-4, &backbone, &head, None);
        ckpt.version = "v0".into();
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.json");
        ckpt.save(&path).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
