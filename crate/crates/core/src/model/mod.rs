//! Generator, discriminators and the checkpoint file format.

mod checkpoint;
mod discriminator;
mod generator;

pub use checkpoint::{Checkpoint, NamedTensor, TensorData, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use discriminator::{seg_channel_value, DiscOutput, Discriminator};
pub use generator::{Encoder, FeaturePyramid, Generator, GeneratorOutput};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a checkpoint renders with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Network,
    /// Returns the ground-truth view. Used to exercise evaluation and the
    /// service end to end without a trained network.
    Oracle,
}

/// Architecture and pose-convention settings shared by training, inference
/// and the checkpoint header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub height: usize,
    pub width: usize,
    /// Encoder widths at 1/2, 1/4 and 1/8 resolution.
    pub widths: [usize; 3],
    pub decoder_width: usize,
    pub latent_width: usize,
    pub disc_widths: [usize; 3],
    pub delta: usize,
    pub tau_deg: f64,
    pub patch: usize,
    pub translation_locked: bool,
    pub use_cpc: bool,
    pub use_msat_multiscale: bool,
    pub use_seg_condition: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Network,
            height: 48,
            width: 64,
            widths: [32, 64, 128],
            decoder_width: 32,
            latent_width: 256,
            disc_widths: [32, 64, 128],
            delta: 12,
            tau_deg: 60.0,
            patch: 2,
            translation_locked: true,
            use_cpc: true,
            use_msat_multiscale: true,
            use_seg_condition: true,
        }
    }
}

impl ModelConfig {
    pub fn bottleneck_size(&self) -> (usize, usize) {
        (self.height / 8, self.width / 8)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.height == 0 || self.width == 0 || self.height % 8 != 0 || self.width % 8 != 0 {
            return bad(format!(
                "image size {}x{} must be a positive multiple of 8",
                self.width, self.height
            ));
        }
        if self.delta == 0 {
            return bad("delta must be at least 1".into());
        }
        if !(self.tau_deg > 0.0 && self.tau_deg <= 360.0) {
            return bad(format!("tau {} outside (0, 360]", self.tau_deg));
        }
        let (bh, bw) = self.bottleneck_size();
        if self.use_cpc && (self.patch == 0 || bh % self.patch != 0 || bw % self.patch != 0) {
            return bad(format!(
                "patch size {} does not divide the {bw}x{bh} bottleneck",
                self.patch
            ));
        }
        let widths = self.widths.iter().chain(&self.disc_widths);
        if widths.chain([&self.decoder_width, &self.latent_width]).any(|&w| w == 0) {
            return bad("layer widths must be positive".into());
        }
        Ok(())
    }

    /// Fails unless the checkpoint was built for `height × width` images.
    pub fn check_image_size(&self, height: usize, width: usize) -> Result<()> {
        if (self.height, self.width) != (height, width) {
            return Err(Error::ConfigConflict(format!(
                "model expects {}x{} images, run requested {width}x{height}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}
