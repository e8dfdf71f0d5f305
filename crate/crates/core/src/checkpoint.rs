//! Model checkpoints: named parameter arrays, `B`, configuration and
//! normalization metadata in one HDF5 file.

use std::path::Path;

use crate::container::{Reader, Writer};
use crate::error::{Error, Result};
use crate::field::PositionalEncoder;
use crate::model::{InrModel, ModelConfig};
use crate::real::Real;
use crate::train::TrainConfig;

const FORMAT_TAG: &str = "kinr-checkpoint/1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: ModelConfig,
    /// Row-major `[L, 2]`.
    pub pe_matrix: Vec<f64>,
    /// Flat parameters in layout order.
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model<T: Real>(model: &InrModel<T>, config: &TrainConfig) -> Self {
        Checkpoint {
            config: config.clone(),
            model: model.config.clone(),
            pe_matrix: model.pe.matrix().to_vec(),
            params: model.params.iter().map(|v| v.f64()).collect(),
        }
    }

    pub fn to_model<T: Real>(&self) -> Result<InrModel<T>> {
        let pe = PositionalEncoder::from_matrix(self.pe_matrix.clone(), self.model.pe_sigma)?;
        let mut model = InrModel::<T>::zeroed(self.model.clone(), pe)?;
        if model.params.len() != self.params.len() {
            return Err(Error::format(
                "params",
                format!("expected {} values, found {}", model.params.len(), self.params.len()),
            ));
        }
        for (d, &s) in model.params.iter_mut().zip(&self.params) {
            *d = T::of(s);
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let model = self.to_model::<f64>()?;
        let w = Writer::create(path.as_ref())?;
        w.write_str("format", FORMAT_TAG)?;
        w.write_str("config", &self.config.to_toml())?;
        let model_json = serde_json::to_string(&self.model).map_err(|e| Error::format("model", e.to_string()))?;
        w.write_str("model", &model_json)?;
        let norm = serde_json::to_string(&self.config.normalization).map_err(|e| Error::format("normalization", e.to_string()))?;
        w.write_str("normalization", norm.trim_matches('"'))?;
        w.write_f64("pe/B", &[self.pe_matrix.len() / 2, 2], &self.pe_matrix)?;
        for slot in model.layout.slots() {
            let data = &self.params[slot.offset..slot.offset + slot.len];
            w.write_f64(&format!("params/{}", slot.name), &slot.shape, data)?;
        }
        w.finish()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let r = Reader::open(path.as_ref())?;
        let tag = r.read_str("format")?;
        if tag != FORMAT_TAG {
            return Err(Error::format("format", format!("expected {FORMAT_TAG}, found {tag}")));
        }
        let config = TrainConfig::from_toml(&r.read_str("config")?)?;
        let model: ModelConfig =
            serde_json::from_str(&r.read_str("model")?).map_err(|e| Error::format("model", e.to_string()))?;
        let (shape, pe_matrix) = r.read_f64("pe/B")?;
        if shape.len() != 2 || shape[1] != 2 {
            return Err(Error::format("pe/B", format!("expected [L, 2], found {shape:?}")));
        }
        let pe = PositionalEncoder::from_matrix(pe_matrix.clone(), model.pe_sigma)?;
        let skeleton = InrModel::<f64>::zeroed(model.clone(), pe)?;
        let mut params = vec![0.0; skeleton.param_count()];
        for slot in skeleton.layout.slots() {
            let key = format!("params/{}", slot.name);
            let (shape, data) = r.read_f64(&key)?;
            if shape != slot.shape {
                return Err(Error::format(key, format!("expected shape {:?}, found {shape:?}", slot.shape)));
            }
            params[slot.offset..slot.offset + slot.len].copy_from_slice(&data);
        }
        Ok(Checkpoint {
            config,
            model,
            pe_matrix,
            params,
        })
    }
}
