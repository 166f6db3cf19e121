//! Text checkpoints: a `DS3M-CKPT-1` header line followed by a TOML body
//! with the model family, widths, normalization, best validation loss and
//! every parameter tensor. Floats are written in shortest round-trip form,
//! so a save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineConfig, GruBaseline};
use crate::config::ModelConfig;
use crate::diffcore::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::model::Ds3m;
use crate::training::Normalizer;

pub const MAGIC: &str = "DS3M-CKPT-1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "ds3m")]
    Ds3m,
    #[serde(rename = "baseline-gru")]
    BaselineGru,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Ds3m(Ds3m),
    Baseline(GruBaseline),
}

impl Model {
    pub fn family(&self) -> Family {
        match self {
            Model::Ds3m(_) => Family::Ds3m,
            Model::Baseline(_) => Family::BaselineGru,
        }
    }

    fn named_sets(&self) -> Vec<(String, &ParamSet)> {
        match self {
            Model::Ds3m(m) => m.named_sets(),
            Model::Baseline(m) => m.named_sets(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Training-split normalization; forecasts are mapped back through it.
    pub normalizer: Normalizer,
    pub window: usize,
    /// Names of the observed columns, in model order.
    pub columns: Vec<String>,
    pub best_val_loss: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    trainable: bool,
}

fn yes() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    family: Family,
    window: usize,
    columns: Vec<String>,
    best_val_loss: Option<f64>,
    model: Option<ModelConfig>,
    baseline: Option<BaselineConfig>,
    normalizer: Normalizer,
    params: BTreeMap<String, BTreeMap<String, TensorRecord>>,
}

fn fill(sets: Vec<(String, &mut ParamSet)>, params: &mut BTreeMap<String, BTreeMap<String, TensorRecord>>) -> Result<()> {
    for (name, set) in sets {
        let mut stored = params.remove(&name).ok_or_else(|| Error::Data(format!("checkpoint lacks parameter set `{name}`")))?;
        let keys: Vec<String> = set.names().map(str::to_string).collect();
        for key in keys {
            let rec = stored.remove(&key).ok_or_else(|| Error::Data(format!("checkpoint lacks `{name}/{key}`")))?;
            let value = Tensor::new(rec.shape, rec.data)?;
            let slot = set.get_mut(&key)?;
            if slot.shape() != value.shape() {
                return Err(Error::dim("checkpoint", format!("`{name}/{key}` has shape {:?}, model expects {:?}", value.shape(), slot.shape())));
            }
            *slot = value;
            set.set_trainable(&key, rec.trainable)?;
        }
        if let Some(extra) = stored.keys().next() {
            return Err(Error::Data(format!("checkpoint has unknown parameter `{name}/{extra}`")));
        }
    }
    if let Some(extra) = params.keys().next() {
        return Err(Error::Data(format!("checkpoint has unknown parameter set `{extra}`")));
    }
    Ok(())
}

impl Checkpoint {
    pub fn to_text(&self) -> Result<String> {
        let params = self
            .model
            .named_sets()
            .into_iter()
            .map(|(name, set)| {
                let tensors = set
                    .iter()
                    .map(|(k, p)| (k.to_string(), TensorRecord { shape: p.value.shape().to_vec(), data: p.value.data().to_vec(), trainable: p.trainable }))
                    .collect();
                (name, tensors)
            })
            .collect();
        let (model, baseline) = match &self.model {
            Model::Ds3m(m) => (Some(m.config.clone()), None),
            Model::Baseline(b) => (None, Some(b.config)),
        };
        let rec = Record {
            family: self.model.family(),
            window: self.window,
            columns: self.columns.clone(),
            best_val_loss: self.best_val_loss,
            model,
            baseline,
            normalizer: self.normalizer.clone(),
            params,
        };
        let body = toml::to_string(&rec).map_err(|e| Error::Data(format!("checkpoint serialization: {e}")))?;
        Ok(format!("{MAGIC}\n{body}"))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let body = text
            .strip_prefix(MAGIC)
            .and_then(|rest| rest.strip_prefix('\n'))
            .ok_or_else(|| Error::Data(format!("not a checkpoint: first line must be `{MAGIC}`")))?;
        let mut rec: Record = toml::from_str(body).map_err(|e| Error::Data(format!("checkpoint: {e}")))?;
        let model = match (rec.family, rec.model, rec.baseline) {
            (Family::Ds3m, Some(cfg), None) => {
                let mut m = Ds3m::init(cfg, 0)?;
                fill(m.named_sets_mut(), &mut rec.params)?;
                Model::Ds3m(m)
            }
            (Family::BaselineGru, None, Some(cfg)) => {
                let mut m = GruBaseline::init(cfg, 0)?;
                fill(m.named_sets_mut(), &mut rec.params)?;
                Model::Baseline(m)
            }
            (f, _, _) => return Err(Error::Data(format!("checkpoint family {f:?} needs exactly its own config table"))),
        };
        let width = match &model {
            Model::Ds3m(m) => m.config.obs_dim,
            Model::Baseline(b) => b.config.obs_dim,
        };
        if rec.columns.len() != width || rec.normalizer.dim() != width {
            return Err(Error::Data(format!("checkpoint lists {} columns and {} normalizer entries for {width} observed series", rec.columns.len(), rec.normalizer.dim())));
        }
        Ok(Checkpoint { model, normalizer: rec.normalizer, window: rec.window, columns: rec.columns, best_val_loss: rec.best_val_loss })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
