//! Training configuration and its JSON form.
//!
//! A config file is a JSON object with any of the [`TrainConfig`] fields. An
//! optional `"preset"` key (`"mpii"` or `"msrvtt"`) selects the base values
//! the remaining keys override; without it the `msrvtt` preset is the base.

use mee_core::data::MixingConfig;
use mee_core::loss::LossConfig;
use mee_core::model::{Aggregation, ModalityConfig, ModelConfig};
use mee_core::train::TrainOptions;
use mee_core::AdamConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{DatasetMeta, DEFAULT_CAPTION_CAP};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Explicit expert list. When absent every dataset modality becomes an
    /// expert: `audio` is NetVLAD-pooled, the others max-pooled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modalities: Option<Vec<ModalityConfig>>,
    pub text_clusters: usize,
    pub audio_clusters: usize,
    pub embed_dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: u64,
    pub alpha: f64,
    pub seed: u64,
    /// Validate every this many epochs.
    pub eval_every: u64,
    pub val_fraction: f64,
    pub caption_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::preset("msrvtt").expect("known preset")
    }
}

impl TrainConfig {
    pub const PRESETS: [&'static str; 2] = ["mpii", "msrvtt"];

    pub fn preset(name: &str) -> Result<Self> {
        let (learning_rate, batch_size) = match name {
            "mpii" => (1e-4, 512),
            "msrvtt" => (4e-4, 64),
            other => return Err(Error::Config(format!("unknown preset {other:?}"))),
        };
        Ok(Self {
            modalities: None,
            text_clusters: 32,
            audio_clusters: 16,
            embed_dim: 512,
            margin: 0.2,
            learning_rate,
            batch_size,
            epochs: 50,
            alpha: 0.0,
            seed: 0,
            eval_every: 1,
            val_fraction: 0.1,
            caption_cap: DEFAULT_CAPTION_CAP,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bad = |e: serde_json::Error| Error::Config(e.to_string());
        let mut value: Value = serde_json::from_str(text).map_err(bad)?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        let base = match obj.remove("preset") {
            None => Self::default(),
            Some(Value::String(name)) => Self::preset(&name)?,
            Some(_) => return Err(Error::Config("preset must be a string".into())),
        };
        let mut merged = serde_json::to_value(base).expect("config serializes");
        let target = merged.as_object_mut().expect("object");
        for (k, v) in obj.iter() {
            target.insert(k.clone(), v.clone());
        }
        let cfg: Self = serde_json::from_value(merged).map_err(bad)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("text_clusters", self.text_clusters),
            ("audio_clusters", self.audio_clusters),
            ("embed_dim", self.embed_dim),
            ("batch_size", self.batch_size),
            ("caption_cap", self.caption_cap),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        if self.epochs == 0 || self.eval_every == 0 {
            return Err(Error::Config("epochs and eval_every must be >= 1".into()));
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(Error::Config("margin must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config("alpha must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, data: &DatasetMeta) -> Result<ModelConfig> {
        let modalities = match &self.modalities {
            Some(m) => m.clone(),
            None => data
                .modalities
                .iter()
                .map(|m| {
                    let agg = if m.name == "audio" {
                        Aggregation::NetVlad {
                            clusters: self.audio_clusters,
                        }
                    } else {
                        Aggregation::MaxPool
                    };
                    ModalityConfig::new(m.name.clone(), m.dim, agg, self.embed_dim)
                })
                .collect(),
        };
        let cfg = ModelConfig {
            word_dim: data.word_dim,
            text_clusters: self.text_clusters,
            modalities,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            batch_size: self.batch_size,
            adam: AdamConfig::with_learning_rate(self.learning_rate),
            loss: LossConfig { margin: self.margin },
            mixing: MixingConfig { alpha: self.alpha },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let m = TrainConfig::preset("mpii").unwrap();
        assert_eq!((m.learning_rate, m.batch_size), (1e-4, 512));
        let v = TrainConfig::preset("msrvtt").unwrap();
        assert_eq!((v.learning_rate, v.batch_size), (4e-4, 64));
        assert_eq!((v.margin, v.text_clusters, v.audio_clusters, v.epochs), (0.2, 32, 16, 50));
        assert!(TrainConfig::preset("coco").is_err());
    }

    #[test]
    fn json_overrides_preset() {
        let c = TrainConfig::from_json(r#"{"preset": "mpii", "epochs": 3, "alpha": 0.5}"#).unwrap();
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.epochs, 3);
        assert_eq!(c.alpha, 0.5);
        assert_eq!(TrainConfig::from_json("{}").unwrap(), TrainConfig::default());
    }

    #[test]
    fn json_rejects_bad_values() {
        assert!(TrainConfig::from_json(r#"{"batch_size": 0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"alpha": -1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"no_such_field": 1}"#).is_err());
        assert!(TrainConfig::from_json("[]").is_err());
    }

    #[test]
    fn derived_experts() {
        let meta = DatasetMeta {
            version: 1,
            word_dim: 8,
            modalities: vec![
                crate::dataset::ModalityMeta { name: "appearance".into(), dim: 6 },
                crate::dataset::ModalityMeta { name: "audio".into(), dim: 4 },
            ],
        };
        let m = TrainConfig::default().model_config(&meta).unwrap();
        assert_eq!(m.modalities[0].aggregation, Aggregation::MaxPool);
        assert_eq!(m.modalities[1].aggregation, Aggregation::NetVlad { clusters: 16 });
        assert_eq!(m.modalities[1].input_dim, 4);
    }
}
