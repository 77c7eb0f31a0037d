//! Pipeline configuration: one TOML file with a section per stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::DEFAULT_SNR_DB;
use crate::backend::BackendConfig;
use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::nnet::{TrainConfig, WindowConfig, XResNetConfig};
use crate::sad::{SadConfig, SadTrainConfig};
use crate::scoring::PoolingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureChoice {
    Lfb,
    Mfcc,
}

impl From<FeatureChoice> for FeatureKind {
    fn from(c: FeatureChoice) -> Self {
        match c {
            FeatureChoice::Lfb => FeatureKind::Lfb,
            FeatureChoice::Mfcc => FeatureKind::Mfcc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub kind: FeatureChoice,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { kind: FeatureChoice::Lfb }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub snr_db: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { snr_db: DEFAULT_SNR_DB }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Root of every random stream in a run.
    pub seed: u64,
    pub features: FeatureConfig,
    pub sad: SadConfig,
    pub sad_train: SadTrainConfig,
    pub augment: AugmentConfig,
    pub model: XResNetConfig,
    pub train: TrainConfig,
    pub embedding: WindowConfig,
    pub backend: BackendConfig,
    pub pooling: PoolingConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.loss.validate()?;
        self.pooling.validate()?;
        if self.embedding.window < self.model.min_frames() || self.embedding.shift == 0 {
            return Err(Error::InvalidConfig(format!(
                "embedding window {} must be >= {} frames with a positive shift",
                self.embedding.window,
                self.model.min_frames()
            )));
        }
        if !(0.0..1.0).contains(&self.backend.enroll_fraction) {
            return Err(Error::InvalidConfig("backend.enroll_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = PipelineConfig::from_toml("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.train.max_epochs, 20);
        assert_eq!(c.train.patience, 12);
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.train.adam.lr, 2e-3);
        assert_eq!((c.train.adam.beta1, c.train.adam.beta2), (0.9, 0.99));
        assert_eq!(c.train.adam.eps, 1e-5);
        assert_eq!(c.train.adam.weight_decay, 0.01);
        assert_eq!(c.train.mask.max_width, 7);
        assert_eq!(c.embedding, WindowConfig { window: 500, shift: 10 });
        assert_eq!(c.model.embedding_dim, 64);
        assert_eq!(c.pooling.smooth_len, 10);
        assert_eq!(c.pooling.top_frac, 0.05);
        assert_eq!(c.augment.snr_db, 5.0);
        assert_eq!(c.sad.pad_s, 1.0 / 3.0);
    }

    #[test]
    fn round_trip_and_overrides() {
        let mut c = PipelineConfig::default();
        c.seed = 17;
        c.model.width_multiplier = 0.25;
        c.pooling.repeats = 3;
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
        let c = PipelineConfig::from_toml("[train]\nmax_epochs = 3\n[train.adam]\nlr = 0.01\n").unwrap();
        assert_eq!(c.train.max_epochs, 3);
        assert_eq!(c.train.adam.lr, 0.01);
        assert_eq!(c.train.adam.eps, 1e-5);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(PipelineConfig::from_toml("bogus = 1"), Err(Error::InvalidConfig(_))));
        assert!(matches!(PipelineConfig::from_toml("[train]\nepochs = 3\n"), Err(Error::InvalidConfig(_))));
        assert!(matches!(
            PipelineConfig::from_toml("[train.loss]\nm0 = 0.1\nm1 = 0.5\n"),
            Err(Error::InvalidMargins { .. })
        ));
    }
}
