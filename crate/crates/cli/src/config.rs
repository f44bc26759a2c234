//! Flat JSON configuration with dotted keys, e.g.
//! `{"data.blobs.n_classes": 100, "train.method": "dis"}`.
//! Command-line flags override file values.

use std::collections::BTreeMap;
use std::path::Path;

use sdkd_core::data::BlobsConfig;
use sdkd_core::error::{Error, Result};
use sdkd_core::proposals::{LaplaceMixtureConfig, ScaleUnits};
use sdkd_core::train::{ModelKind, ModelSpec, OptimizerKind, TrainConfig, TrainMethod};
use serde_json::Value;

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, Value>,
}

impl Config {
    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(&path)?;
        let parsed: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("config is not valid JSON: {e}")))?;
        let obj = parsed
            .as_object()
            .ok_or_else(|| Error::Format("config must be a JSON object".into()))?;
        let mut values = BTreeMap::new();
        for (k, v) in obj {
            values.insert(k.clone(), v.clone());
        }
        Ok(Self { values })
    }

    pub fn set(&mut self, key: &str, value: Value) {
        self.values.insert(key.to_string(), value);
    }

    fn get(&self, key: &str) -> Option<&Value> {
        self.values.get(key)
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.as_u64().map(|u| u as usize).ok_or_else(|| {
                Error::Param(format!("config key '{key}' must be a non-negative integer"))
            }),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.as_u64().ok_or_else(|| {
                Error::Param(format!("config key '{key}' must be a non-negative integer"))
            }),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .ok_or_else(|| Error::Param(format!("config key '{key}' must be a number"))),
        }
    }

    pub fn str_or(&self, key: &str, default: &str) -> Result<String> {
        match self.get(key) {
            None => Ok(default.to_string()),
            Some(v) => v
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| Error::Param(format!("config key '{key}' must be a string"))),
        }
    }

    pub fn str_required(&self, key: &str) -> Result<String> {
        self.get(key)
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Param(format!("config key '{key}' is required")))
    }

    pub fn usize_list_or(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_u64().map(|u| u as usize).ok_or_else(|| {
                        Error::Param(format!("config key '{key}' must hold integers"))
                    })
                })
                .collect(),
            Some(_) => Err(Error::Param(format!("config key '{key}' must be an array"))),
        }
    }

    pub fn u64_list_or(&self, key: &str, default: &[u64]) -> Result<Vec<u64>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_u64().ok_or_else(|| {
                        Error::Param(format!("config key '{key}' must hold integers"))
                    })
                })
                .collect(),
            Some(_) => Err(Error::Param(format!("config key '{key}' must be an array"))),
        }
    }

    pub fn str_list_or(&self, key: &str, default: &[&str]) -> Result<Vec<String>> {
        match self.get(key) {
            None => Ok(default.iter().map(|s| s.to_string()).collect()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_str().map(str::to_string).ok_or_else(|| {
                        Error::Param(format!("config key '{key}' must hold strings"))
                    })
                })
                .collect(),
            Some(_) => Err(Error::Param(format!("config key '{key}' must be an array"))),
        }
    }

    /// Blob task parameters (`data.blobs.*`).
    pub fn blobs(&self) -> Result<BlobsConfig> {
        Ok(BlobsConfig {
            n_classes: self.usize_or("data.blobs.n_classes", 100)?,
            samples_per_class: self.usize_or("data.blobs.samples_per_class", 100)?,
            dim: self.usize_or("data.blobs.dim", 32)?,
            center_scale: self.f64_or("data.blobs.center_scale", 3.0)?,
            noise_sigma: self.f64_or("data.blobs.noise_sigma", 1.0)?,
            seed: self.u64_or("data.blobs.seed", 1)?,
        })
    }

    fn model_spec(&self, prefix: &str, default_kind: ModelKind) -> Result<ModelSpec> {
        let kind_default = match default_kind {
            ModelKind::Linear => "linear",
            ModelKind::Mlp => "mlp",
        };
        let kind = match self
            .str_or(&format!("{prefix}.kind"), kind_default)?
            .as_str()
        {
            "linear" => ModelKind::Linear,
            "mlp" => ModelKind::Mlp,
            other => return Err(Error::Param(format!("unknown model kind '{other}'"))),
        };
        let init_scale = match self.get(&format!("{prefix}.init_scale")) {
            None | Some(Value::Null) => None,
            Some(v) => Some(v.as_f64().ok_or_else(|| {
                Error::Param(format!("config key '{prefix}.init_scale' must be a number"))
            })?),
        };
        Ok(ModelSpec {
            kind,
            hidden_dim: self.usize_or(&format!("{prefix}.hidden_dim"), 32)?,
            init_scale,
        })
    }

    pub fn teacher_spec(&self) -> Result<ModelSpec> {
        self.model_spec("teacher", ModelKind::Linear)
    }

    pub fn student_spec(&self) -> Result<ModelSpec> {
        self.model_spec("student", ModelKind::Mlp)
    }

    pub fn mixture(&self) -> Result<LaplaceMixtureConfig> {
        let units = match self
            .str_or("mixture.scale_units", "percent_of_axis")?
            .as_str()
        {
            "percent_of_axis" => ScaleUnits::PercentOfAxis,
            "normalized" => ScaleUnits::Normalized,
            other => return Err(Error::Param(format!("unknown scale units '{other}'"))),
        };
        let b2_init = self.f64_or("mixture.b2_init", 5.0)?;
        Ok(LaplaceMixtureConfig {
            mu1: self.f64_or("mixture.mu1", 0.0)?,
            b1: self.f64_or("mixture.b1", 3.0)?,
            mu2: self.f64_or("mixture.mu2", 1.0)?,
            b2_init,
            b2_final: self.f64_or("mixture.b2_final", 100.0 * b2_init)?,
            bins: self.usize_or("mixture.bins", 0)?,
            schedule_steps: self.usize_or("mixture.schedule_steps", 0)?,
            scale_units: units,
        })
    }

    fn optimizer(&self, key: &str) -> Result<OptimizerKind> {
        match self.str_or(key, "adam")?.as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "rmsprop" => Ok(OptimizerKind::Rmsprop),
            other => Err(Error::Param(format!("unknown optimizer '{other}'"))),
        }
    }

    /// Teacher training parameters (`teacher.*`); hard labels at T=1.
    pub fn teacher_train(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            method: TrainMethod::HardLabels,
            temperature: self.f64_or("teacher.temperature", 1.0)?,
            epochs: self.usize_or("teacher.epochs", 30)?,
            batch_size: self.usize_or("teacher.batch_size", 32)?,
            optimizer: self.optimizer("teacher.optimizer")?,
            learning_rate: self.f64_or("teacher.lr", 0.01)?,
            seed: self.u64_or("teacher.seed", 0)?,
            ..TrainConfig::default()
        })
    }

    /// Student training parameters (`train.*` plus `mixture.*`).
    pub fn student_train(&self) -> Result<TrainConfig> {
        let method = TrainMethod::parse(&self.str_or("train.method", "distillation")?)?;
        Ok(TrainConfig {
            method,
            subset_size: self.usize_or("train.k", 10)?,
            temperature: self.f64_or("train.temperature", 4.0)?,
            lambda: self.f64_or("train.lambda", 1.0)?,
            epochs: self.usize_or("train.epochs", 30)?,
            batch_size: self.usize_or("train.batch_size", 32)?,
            optimizer: self.optimizer("train.optimizer")?,
            learning_rate: self.f64_or("train.lr", 0.01)?,
            seed: self.u64_or("train.seed", 0)?,
            teacher_floor: self.f64_or("train.teacher_floor", 1e-6)?,
            mixture: self.mixture()?,
        })
    }

    /// The relabeling temperature; defaults to the student loss temperature.
    pub fn relabel_temperature(&self) -> Result<f64> {
        let t = self.f64_or("train.temperature", 4.0)?;
        self.f64_or("relabel.temperature", t)
    }
}
