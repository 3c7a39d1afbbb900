use rand::Rng;

use super::ModelConfig;
use crate::clae::{cross_patch_corr, modulate, AffineHead, ConditionEncoder};
use crate::error::{shape_err, Result};
use crate::layers::{join, Conv2d, ConvUnit, Linear, Module};
use crate::tensor::{Conv2dSpec, Element, Tensor};
use crate::warp::warp_affine;

const DOWN: Conv2dSpec = Conv2dSpec { stride: 2, pad: 1 };
const SAME: Conv2dSpec = Conv2dSpec { stride: 1, pad: 1 };

/// Encoder features at 1/2, 1/4 and 1/8 resolution.
#[derive(Debug, Clone)]
pub struct FeaturePyramid<E: Element> {
    pub levels: [Tensor<E>; 3],
}

/// Three stride-2 units; one instance serves both references.
#[derive(Debug, Clone)]
pub struct Encoder<E: Element> {
    pub units: [ConvUnit<E>; 3],
}

impl<E: Element> Encoder<E> {
    pub fn new<R: Rng>(rng: &mut R, widths: [usize; 3]) -> Self {
        Encoder {
            units: [
                ConvUnit::new(rng, 3, widths[0], 4, DOWN),
                ConvUnit::new(rng, widths[0], widths[1], 4, DOWN),
                ConvUnit::new(rng, widths[1], widths[2], 4, DOWN),
            ],
        }
    }

    pub fn forward(&self, image: &Tensor<E>) -> Result<FeaturePyramid<E>> {
        let [_, c, h, w] = image.dims4()?;
        if c != 3 || h % 8 != 0 || w % 8 != 0 {
            return Err(shape_err!(
                "encoder needs 3-channel images with sides divisible by 8, got {:?}",
                image.shape()
            ));
        }
        let f1 = self.units[0].forward(image)?;
        let f2 = self.units[1].forward(&f1)?;
        let f3 = self.units[2].forward(&f2)?;
        Ok(FeaturePyramid {
            levels: [f1, f2, f3],
        })
    }
}

impl<E: Element> Module<E> for Encoder<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        for (i, u) in self.units.iter().enumerate() {
            u.visit(&join(prefix, &format!("down{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        for (i, u) in self.units.iter_mut().enumerate() {
            u.visit_mut(&join(prefix, &format!("down{i}")), f);
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorOutput<E: Element> {
    /// `[N,3,H,W]` in (0,1).
    pub image: Tensor<E>,
    /// Per-level `[N,6]` transforms, finest first. A single entry means one
    /// pair applied at the coarsest level only.
    pub affine_left: Vec<Tensor<E>>,
    pub affine_right: Vec<Tensor<E>>,
}

/// Shared encoder, pose-conditioned affine prediction and the coarse-to-fine
/// affine-transformer decoder.
#[derive(Debug, Clone)]
pub struct Generator<E: Element> {
    pub config: ModelConfig,
    pub encoder: Encoder<E>,
    /// Maps the flattened correspondence map (or pooled features) to the
    /// latent width.
    pub g: Linear<E>,
    pub condition: ConditionEncoder<E>,
    pub head_left: AffineHead<E>,
    pub head_right: AffineHead<E>,
    /// Per-level fusion of the two warped feature maps, finest first.
    pub fuse: [ConvUnit<E>; 3],
    pub refine: ConvUnit<E>,
    pub to_rgb: Conv2d<E>,
}

impl<E: Element> Generator<E> {
    pub fn new<R: Rng>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let [c1, c2, c3] = config.widths;
        let (bh, bw) = config.bottleneck_size();
        let g_in = if config.use_cpc { bh * bw } else { 2 * c3 };
        let latent = config.latent_width;
        let count = if config.use_msat_multiscale { 3 } else { 1 };
        let d = config.decoder_width;
        Ok(Generator {
            config: config.clone(),
            encoder: Encoder::new(rng, config.widths),
            g: Linear::new(rng, g_in, latent),
            condition: ConditionEncoder::new(rng, config.delta, latent),
            head_left: AffineHead::new(rng, latent, count, config.translation_locked),
            head_right: AffineHead::new(rng, latent, count, config.translation_locked),
            fuse: [
                ConvUnit::new(rng, 2 * c1, d, 3, SAME),
                ConvUnit::new(rng, 2 * c2, d, 3, SAME),
                ConvUnit::new(rng, 2 * c3, d, 3, SAME),
            ],
            refine: ConvUnit::new(rng, d, d, 3, SAME),
            to_rgb: Conv2d::new(rng, d, 3, 3, SAME, true),
        })
    }

    /// Correspondence features for each side, `[N, g_in]`.
    fn correspondence_features(
        &self,
        left: &FeaturePyramid<E>,
        right: &FeaturePyramid<E>,
    ) -> Result<(Tensor<E>, Tensor<E>)> {
        let fl = &left.levels[2];
        let fr = &right.levels[2];
        let [n, c, h, w] = fl.dims4()?;
        if !self.config.use_cpc {
            let pl = fl.spatial_mean()?;
            let pr = fr.spatial_mean()?;
            return Ok((
                Tensor::concat_channels(&[&pl, &pr])?,
                Tensor::concat_channels(&[&pr, &pl])?,
            ));
        }
        let scale = E::from_f64_lossy(1.0 / (c * h * w) as f64);
        let flat = |s: Tensor<E>| s.mul_scalar(scale).reshape(&[n, h * w]);
        Ok((
            flat(cross_patch_corr(fl, fr, self.config.patch)?)?,
            flat(cross_patch_corr(fr, fl, self.config.patch)?)?,
        ))
    }

    /// Predicts the per-level transforms for both sides from the pyramids and
    /// the `[N, δ]` pose codes.
    pub fn predict_affines(
        &self,
        left: &FeaturePyramid<E>,
        right: &FeaturePyramid<E>,
        codes: &Tensor<E>,
    ) -> Result<(Vec<Tensor<E>>, Vec<Tensor<E>>)> {
        let (sl, sr) = self.correspondence_features(left, right)?;
        let cond = self.condition.forward(codes)?;
        let hl = modulate(&self.g.forward(&sl)?, &cond)?;
        let hr = modulate(&self.g.forward(&sr)?, &cond)?;
        Ok((self.head_left.forward(&hl)?, self.head_right.forward(&hr)?))
    }

    /// Coarse to fine: warp both sides at each level, fuse, and add into the
    /// upsampled running state; then two convolutions to RGB. `None`
    /// transforms leave the features unwarped. With a single transform per
    /// side it is applied at the coarsest level only.
    pub fn msat_fuse(
        &self,
        left: &FeaturePyramid<E>,
        right: &FeaturePyramid<E>,
        affine_left: Option<&[Tensor<E>]>,
        affine_right: Option<&[Tensor<E>]>,
    ) -> Result<Tensor<E>> {
        let pick = |ts: Option<&[Tensor<E>]>, level: usize| -> Option<Tensor<E>> {
            let ts = ts?;
            match ts.len() {
                3 => Some(ts[level].clone()),
                1 if level == 2 => Some(ts[0].clone()),
                _ => None,
            }
        };
        let mut state: Option<Tensor<E>> = None;
        for level in (0..3).rev() {
            let warp = |f: &Tensor<E>, t: Option<Tensor<E>>| match t {
                Some(t) => warp_affine(f, &t),
                None => Ok(f.clone()),
            };
            let wl = warp(&left.levels[level], pick(affine_left, level))?;
            let wr = warp(&right.levels[level], pick(affine_right, level))?;
            let u = self.fuse[level].forward(&Tensor::concat_channels(&[&wl, &wr])?)?;
            state = Some(match state {
                Some(s) => s.upsample_bilinear_x2()?.add(&u)?,
                None => u,
            });
        }
        let s = state.expect("three levels").upsample_bilinear_x2()?;
        Ok(self.to_rgb.forward(&self.refine.forward(&s)?)?.sigmoid())
    }

    /// Synthesizes the target view from `[N,3,H,W]` references and `[N,δ]`
    /// pose codes.
    pub fn forward(
        &self,
        left: &Tensor<E>,
        right: &Tensor<E>,
        codes: &Tensor<E>,
    ) -> Result<GeneratorOutput<E>> {
        if left.shape() != right.shape() {
            return Err(shape_err!(
                "reference shapes differ: {:?} vs {:?}",
                left.shape(),
                right.shape()
            ));
        }
        let pl = self.encoder.forward(left)?;
        let pr = self.encoder.forward(right)?;
        let (tl, tr) = self.predict_affines(&pl, &pr, codes)?;
        let image = self.msat_fuse(&pl, &pr, Some(&tl), Some(&tr))?;
        Ok(GeneratorOutput {
            image,
            affine_left: tl,
            affine_right: tr,
        })
    }
}

impl<E: Element> Module<E> for Generator<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.g.visit(&join(prefix, "g"), f);
        self.condition.visit(&join(prefix, "condition"), f);
        self.head_left.visit(&join(prefix, "head_left"), f);
        self.head_right.visit(&join(prefix, "head_right"), f);
        for (i, u) in self.fuse.iter().enumerate() {
            u.visit(&join(prefix, &format!("fuse{i}")), f);
        }
        self.refine.visit(&join(prefix, "refine"), f);
        self.to_rgb.visit(&join(prefix, "to_rgb"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.g.visit_mut(&join(prefix, "g"), f);
        self.condition.visit_mut(&join(prefix, "condition"), f);
        self.head_left.visit_mut(&join(prefix, "head_left"), f);
        self.head_right.visit_mut(&join(prefix, "head_right"), f);
        for (i, u) in self.fuse.iter_mut().enumerate() {
            u.visit_mut(&join(prefix, &format!("fuse{i}")), f);
        }
        self.refine.visit_mut(&join(prefix, "refine"), f);
        self.to_rgb.visit_mut(&join(prefix, "to_rgb"), f);
    }
}
