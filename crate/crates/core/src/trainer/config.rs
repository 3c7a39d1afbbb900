use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{AdvConvention, LossWeights};
use crate::model::{ModelConfig, ModelKind};
use crate::tensor::AdamConfig;

/// Everything a training run needs, as one flat key/value document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: PathBuf,
    /// Checkpoints, loss curve and diagnostics go here.
    pub out_dir: PathBuf,
    pub height: usize,
    pub width: usize,
    pub tau_deg: f64,
    pub delta: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub iterations: usize,
    pub seed: u64,
    pub extractor_seed: u64,

    pub lambda_ssim: f64,
    pub lambda_pd: f64,
    pub lambda_feat: f64,
    pub lambda_lap: f64,
    pub use_lap: bool,
    pub use_pd: bool,
    /// Discriminator feature matching.
    #[serde(alias = "use_vgg_feat")]
    pub use_feat: bool,
    pub adv_convention: AdvConvention,

    pub use_cpc: bool,
    pub use_msat_multiscale: bool,
    pub use_seg_condition: bool,
    pub translation_locked: bool,

    pub widths: [usize; 3],
    pub decoder_width: usize,
    pub latent_width: usize,
    pub disc_widths: [usize; 3],
    pub patch: usize,

    /// 0 disables intermediate checkpoints; the final one is always written.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let w = LossWeights::default();
        TrainConfig {
            dataset: PathBuf::from("data"),
            out_dir: PathBuf::from("run"),
            height: m.height,
            width: m.width,
            tau_deg: m.tau_deg,
            delta: m.delta,
            batch_size: 4,
            lr: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            iterations: 2000,
            seed: 0,
            extractor_seed: 1234,
            lambda_ssim: w.lambda_ssim,
            lambda_pd: w.lambda_pd,
            lambda_feat: w.lambda_feat,
            lambda_lap: w.lambda_lap,
            use_lap: true,
            use_pd: true,
            use_feat: true,
            adv_convention: AdvConvention::Standard,
            use_cpc: m.use_cpc,
            use_msat_multiscale: m.use_msat_multiscale,
            use_seg_condition: m.use_seg_condition,
            translation_locked: m.translation_locked,
            widths: m.widths,
            decoder_width: m.decoder_width,
            latent_width: m.latent_width,
            disc_widths: m.disc_widths,
            patch: m.patch,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Parses a config file; relative paths inside resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            if cfg.dataset.is_relative() {
                cfg.dataset = base.join(&cfg.dataset);
            }
            if cfg.out_dir.is_relative() {
                cfg.out_dir = base.join(&cfg.out_dir);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            kind: ModelKind::Network,
            height: self.height,
            width: self.width,
            widths: self.widths,
            decoder_width: self.decoder_width,
            latent_width: self.latent_width,
            disc_widths: self.disc_widths,
            delta: self.delta,
            tau_deg: self.tau_deg,
            patch: self.patch,
            translation_locked: self.translation_locked,
            use_cpc: self.use_cpc,
            use_msat_multiscale: self.use_msat_multiscale,
            use_seg_condition: self.use_seg_condition,
        }
    }

    /// Weights with disabled terms zeroed.
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_ssim: self.lambda_ssim,
            lambda_pd: if self.use_pd { self.lambda_pd } else { 0.0 },
            lambda_feat: if self.use_feat { self.lambda_feat } else { 0.0 },
            lambda_lap: if self.use_lap { self.lambda_lap } else { 0.0 },
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.loss_weights().validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}
