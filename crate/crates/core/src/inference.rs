//! Loading a checkpoint for prediction.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clae::{digitize_angle, AngleCode};
use crate::error::{shape_err, Error, Result};
use crate::layers::Module;
use crate::model::{Checkpoint, Generator, ModelConfig, ModelKind};
use crate::tensor::Tensor;

pub const GENERATOR_PREFIX: &str = "generator";

/// A frozen predictor of intermediate views.
#[derive(Debug, Clone)]
pub enum Renderer {
    Network(Box<Generator<f32>>),
    /// Echoes the ground truth.
    Oracle,
}

#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub config: ModelConfig,
    pub renderer: Renderer,
}

/// Checkpoint for the ground-truth-echoing model.
pub fn oracle_checkpoint(height: usize, width: usize, tau_deg: f64, delta: usize) -> Checkpoint {
    Checkpoint::new(ModelConfig {
        kind: ModelKind::Oracle,
        height,
        width,
        tau_deg,
        delta,
        ..ModelConfig::default()
    })
}

impl LoadedModel {
    pub fn from_generator(generator: &Generator<f32>) -> Self {
        let mut g = generator.clone();
        g.set_trainable(false);
        LoadedModel {
            config: g.config.clone(),
            renderer: Renderer::Network(Box::new(g)),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let renderer = match ckpt.config.kind {
            ModelKind::Oracle => Renderer::Oracle,
            ModelKind::Network => {
                // Initial values are overwritten by the checkpoint.
                let mut g = Generator::<f32>::new(&ckpt.config, &mut ChaCha8Rng::seed_from_u64(0))?;
                ckpt.load_module(GENERATOR_PREFIX, &mut g)?;
                g.set_trainable(false);
                Renderer::Network(Box::new(g))
            }
        };
        Ok(LoadedModel {
            config: ckpt.config.clone(),
            renderer,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Predicts `[N,3,H,W]` views. The oracle needs `gt`.
    pub fn predict(
        &self,
        left: &Tensor<f32>,
        right: &Tensor<f32>,
        codes: &[AngleCode],
        gt: Option<&Tensor<f32>>,
    ) -> Result<Tensor<f32>> {
        let [n, _, h, w] = left.dims4()?;
        self.config.check_image_size(h, w)?;
        if codes.len() != n {
            return Err(shape_err!("{} pose codes for a batch of {n}", codes.len()));
        }
        if let Some(c) = codes.iter().find(|c| c.delta != self.config.delta) {
            return Err(Error::ConfigConflict(format!(
                "pose code length {} differs from the model's {}",
                c.delta, self.config.delta
            )));
        }
        match &self.renderer {
            Renderer::Oracle => gt
                .cloned()
                .ok_or_else(|| Error::InvalidArgument("the oracle model needs ground truth".into())),
            Renderer::Network(g) => {
                let codes = AngleCode::batch_tensor(codes)?;
                Ok(g.forward(left, right, &codes)?.image)
            }
        }
    }
}

/// Encodes a `[3,H,W]` or `[1,3,H,W]` image in [0,1] as an 8-bit PNG.
pub fn encode_png(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = match image.shape() {
        [3, h, w] | [1, 3, h, w] => (*h, *w),
        s => return Err(shape_err!("expected one RGB image, got {s:?}")),
    };
    let plane = h * w;
    let data = image.data();
    let bytes: Vec<u8> = (0..plane)
        .flat_map(|i| (0..3).map(move |c| c * plane + i))
        .map(|j| (data[j].clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut out = Vec::new();
    image::ImageEncoder::write_image(
        image::codecs::png::PngEncoder::new(&mut out),
        &bytes,
        w as u32,
        h as u32,
        image::ExtendedColorType::Rgb8,
    )?;
    Ok(out)
}

/// Where a requested yaw lands relative to its references.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderPlan {
    pub requested_yaw: f64,
    pub left_yaw: f64,
    pub right_yaw: f64,
    /// Requested yaw moved to the nearest pose bin, in [0, 360).
    pub snapped_yaw: f64,
    pub code: AngleCode,
}

/// Picks references and snaps `yaw_deg` to the nearest of the δ pose bins
/// between them. References default to the enclosing τ-grid neighbours;
/// explicit ones may be any distance apart. Yaws that snap onto either
/// reference are rejected.
pub fn plan_render(
    tau_deg: f64,
    delta: usize,
    yaw_deg: f64,
    references: Option<(f64, f64)>,
) -> Result<RenderPlan> {
    if !yaw_deg.is_finite() {
        return Err(Error::InvalidArgument(format!("yaw {yaw_deg} is not finite")));
    }
    if delta == 0 || !(tau_deg > 0.0 && tau_deg < 360.0) {
        return Err(Error::InvalidArgument(format!("bad pose grid τ={tau_deg}, δ={delta}")));
    }
    let yaw = yaw_deg.rem_euclid(360.0);
    let (left, span) = match references {
        None => ((yaw / tau_deg).floor() * tau_deg, tau_deg),
        Some((l, r)) => {
            let l = l.rem_euclid(360.0);
            let span = (r - l).rem_euclid(360.0);
            if span == 0.0 {
                return Err(Error::InvalidArgument("references must differ".into()));
            }
            (l, span)
        }
    };
    let theta = (yaw - left).rem_euclid(360.0);
    let collision = Error::ReferenceCollision {
        yaw_deg: yaw,
        theta_deg: theta,
        tau_deg: span,
    };
    if theta >= span {
        return Err(collision);
    }
    let bin = span / delta as f64;
    let index = (theta / bin).round() as usize;
    if index == 0 || index >= delta {
        return Err(collision);
    }
    let snapped_theta = index as f64 * bin;
    let code = digitize_angle(snapped_theta, span, delta)?;
    Ok(RenderPlan {
        requested_yaw: yaw,
        left_yaw: left,
        right_yaw: (left + span).rem_euclid(360.0),
        snapped_yaw: (left + snapped_theta).rem_euclid(360.0),
        code,
    })
}
