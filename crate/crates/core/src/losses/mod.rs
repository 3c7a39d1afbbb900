//! Training objectives and image-quality metrics.

mod perceptual;
mod pyramid;
mod quality;

pub use perceptual::{pd_loss, sliced_w1, FeatureExtractor, EXTRACTOR_WIDTHS};
pub use pyramid::{laplacian_loss, laplacian_pyramid};
pub use quality::{
    gaussian_window, psnr, ssim, ssim_metric, METRIC_BORDER, SSIM_C1, SSIM_C2, SSIM_SIGMA,
    SSIM_WINDOW,
};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Element, Tensor};

pub const LAPLACIAN_LEVELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_ssim: f64,
    pub lambda_pd: f64,
    pub lambda_feat: f64,
    pub lambda_lap: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_ssim: 1.0,
            lambda_pd: 1.0,
            lambda_feat: 10.0,
            lambda_lap: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_ssim, self.lambda_pd, self.lambda_feat, self.lambda_lap];
        if all.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Which reading of the adversarial objective to optimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdvConvention {
    /// `loss_D = −½·mean[log D(real) + log(1 − D(fake))]`,
    /// `loss_G = −mean log D(fake)`.
    #[default]
    Standard,
    /// The objective with the fake term written as `1 − log D(fake)`:
    /// `loss_D = −½·mean[log D(real) + 1 − log D(fake)]`,
    /// `loss_G = 1 − mean log D(fake)`. Unbounded below for D.
    AsPrinted,
}

/// Discriminator loss from patch logits; `D = sigmoid(logit)`.
pub fn discriminator_loss<E: Element>(
    real_logits: &Tensor<E>,
    fake_logits: &Tensor<E>,
    convention: AdvConvention,
) -> Result<Tensor<E>> {
    if real_logits.shape() != fake_logits.shape() {
        return Err(shape_err!(
            "score maps differ: {:?} vs {:?}",
            real_logits.shape(),
            fake_logits.shape()
        ));
    }
    let half = E::from_f64_lossy(0.5);
    // −log D(x) = softplus(−x), −log(1 − D(x)) = softplus(x)
    let real_term = real_logits.neg().softplus().mean();
    let fake_term = match convention {
        AdvConvention::Standard => fake_logits.softplus().mean(),
        AdvConvention::AsPrinted => fake_logits.neg().softplus().mean().neg().add_scalar(-E::one()),
    };
    Ok(real_term.add(&fake_term)?.mul_scalar(half))
}

pub fn generator_adv_loss<E: Element>(fake_logits: &Tensor<E>, convention: AdvConvention) -> Tensor<E> {
    let nll = fake_logits.neg().softplus().mean();
    match convention {
        AdvConvention::Standard => nll,
        AdvConvention::AsPrinted => nll.add_scalar(E::one()),
    }
}

/// Both adversarial losses from probabilities in (0,1) rather than logits.
pub fn adv_losses(score_real: &[f64], score_fake: &[f64], convention: AdvConvention) -> Result<(f64, f64)> {
    if score_real.len() != score_fake.len() || score_real.is_empty() {
        return Err(shape_err!(
            "score maps must be non-empty and equal length: {} vs {}",
            score_real.len(),
            score_fake.len()
        ));
    }
    let logit = |p: &f64| (p / (1.0 - p)).ln();
    let r: Vec<f64> = score_real.iter().map(logit).collect();
    let f: Vec<f64> = score_fake.iter().map(logit).collect();
    let rt = Tensor::<f64>::from_vec(&[r.len()], r)?;
    let ft = Tensor::<f64>::from_vec(&[f.len()], f)?;
    Ok((
        discriminator_loss(&rt, &ft, convention)?.item(),
        generator_adv_loss(&ft, convention).item(),
    ))
}

/// `(1/C)·Σ_l mean|real_l − fake_l|` over matching feature lists.
pub fn feat_match_loss<E: Element>(real: &[Tensor<E>], fake: &[Tensor<E>]) -> Result<Tensor<E>> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(shape_err!(
            "feature lists must be non-empty and equal length: {} vs {}",
            real.len(),
            fake.len()
        ));
    }
    let mut total: Option<Tensor<E>> = None;
    for (r, f) in real.iter().zip(fake) {
        let term = r.detach().sub(f)?.abs().mean();
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    let c = E::from_usize(real.len()).expect("layer count");
    Ok(total.expect("non-empty").mul_scalar(E::one() / c))
}

/// The individual generator terms for one batch.
#[derive(Debug, Clone)]
pub struct LossParts<E: Element> {
    pub adv: Tensor<E>,
    pub ssim: Tensor<E>,
    pub pd: Tensor<E>,
    pub feat: Tensor<E>,
    pub lap: Tensor<E>,
}

/// `L_adv + λ_ssim(1 − SSIM) + λ_pd·L_pd + λ_feat·L_feat + λ_lap·L_lap`.
/// Terms with a zero weight are left out of the graph.
pub fn total_generator_loss<E: Element>(parts: &LossParts<E>, weights: &LossWeights) -> Result<Tensor<E>> {
    weights.validate()?;
    let mut total = parts.adv.clone();
    let terms = [
        (weights.lambda_ssim, parts.ssim.neg().add_scalar(E::one())),
        (weights.lambda_pd, parts.pd.clone()),
        (weights.lambda_feat, parts.feat.clone()),
        (weights.lambda_lap, parts.lap.clone()),
    ];
    for (lambda, term) in terms {
        if lambda != 0.0 {
            total = total.add(&term.mul_scalar(E::from_f64_lossy(lambda)))?;
        }
    }
    Ok(total)
}
