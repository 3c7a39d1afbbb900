//! Pose conditioning: cross-patch correspondence between the two reference
//! feature maps, one-hot angle codes, conditional modulation, and prediction
//! of the per-scale affine transforms.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::layers::{join, Linear, Module};
use crate::tensor::{Element, Tensor};

/// A target yaw digitized against the reference interval.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleCode {
    pub theta_deg: f64,
    pub tau_deg: f64,
    pub delta: usize,
    pub index: usize,
    pub onehot: Vec<u8>,
}

impl AngleCode {
    /// "0000001000000"-style rendering of the code.
    pub fn onehot_string(&self) -> String {
        self.onehot.iter().map(|b| if *b == 1 { '1' } else { '0' }).collect()
    }

    /// Stacks codes into a `[N, δ]` tensor.
    pub fn batch_tensor<E: Element>(codes: &[AngleCode]) -> Result<Tensor<E>> {
        let delta = codes
            .first()
            .map(|c| c.delta)
            .ok_or_else(|| Error::InvalidArgument("empty code batch".into()))?;
        if codes.iter().any(|c| c.delta != delta) {
            return Err(Error::InvalidArgument("mixed code lengths in batch".into()));
        }
        let data = codes
            .iter()
            .flat_map(|c| c.onehot.iter().map(|&b| if b == 1 { E::one() } else { E::zero() }))
            .collect();
        Tensor::from_vec(&[codes.len(), delta], data)
    }
}

/// Digitizes θ ∈ [0, τ) into `⌊θ·δ/τ⌋` and its one-hot code.
pub fn digitize_angle(theta_deg: f64, tau_deg: f64, delta: usize) -> Result<AngleCode> {
    if delta == 0 {
        return Err(Error::InvalidArgument("code length must be at least 1".into()));
    }
    if !(tau_deg > 0.0) || !tau_deg.is_finite() {
        return Err(Error::InvalidArgument(format!("τ must be positive, got {tau_deg}")));
    }
    if !(0.0..tau_deg).contains(&theta_deg) {
        return Err(Error::InvalidArgument(format!(
            "θ = {theta_deg}° lies outside [0, {tau_deg}°)"
        )));
    }
    let index = ((theta_deg * delta as f64 / tau_deg).floor() as usize).min(delta - 1);
    let mut onehot = vec![0u8; delta];
    onehot[index] = 1;
    Ok(AngleCode {
        theta_deg,
        tau_deg,
        delta,
        index,
        onehot,
    })
}

/// Which reference's patches act as kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    LeftToRight,
    RightToLeft,
}

impl Direction {
    pub fn reversed(self) -> Self {
        match self {
            Direction::LeftToRight => Direction::RightToLeft,
            Direction::RightToLeft => Direction::LeftToRight,
        }
    }
}

/// Correlation responses `[N, 1, H, W]` tagged with their direction.
#[derive(Debug, Clone)]
pub struct CorrespondenceMap<E: Element> {
    pub s: Tensor<E>,
    pub direction: Direction,
}

/// Cross-patch convolution.
///
/// `patches` (`[N,C,H,W]`) is cut into `(H/P)·(W/P)` tiles of `P×P`. Each
/// tile is convolved with `target` and the responses are summed over tiles
/// and channels:
///
/// `S[i,j] = Σ_tiles Σ_c Σ_{a,b<P} x[c,a,b] · Y[c, i−a+P/2, j−b+P/2]`
///
/// with zeros outside `Y`, so `S` keeps the `H×W` size. Because the sum is
/// linear in the tile, it is evaluated as a single convolution with the
/// tile-summed kernel.
pub fn cross_patch_corr<E: Element>(
    patches: &Tensor<E>,
    target: &Tensor<E>,
    patch: usize,
) -> Result<Tensor<E>> {
    let [n, c, h, w] = patches.dims4()?;
    if target.shape() != patches.shape() {
        return Err(shape_err!(
            "cross-patch inputs differ: {:?} vs {:?}",
            patches.shape(),
            target.shape()
        ));
    }
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::InvalidArgument(format!(
            "patch size {patch} does not divide the {h}x{w} feature map"
        )));
    }
    let p = patch;
    let off = (p / 2) as isize;
    let plane = h * w;

    // kernel[n][c][a][b] = Σ over tiles of patches[n][c][ti·P+a][tj·P+b]
    let tile_sum = move |x: &[E]| -> Vec<E> {
        let mut k = vec![E::zero(); n * c * p * p];
        for (nc, src) in x.chunks(plane).enumerate() {
            let dst = &mut k[nc * p * p..(nc + 1) * p * p];
            for y in 0..h {
                for xx in 0..w {
                    let slot = (y % p) * p + xx % p;
                    dst[slot] = dst[slot] + src[y * w + xx];
                }
            }
        }
        k
    };
    let kernel = tile_sum(patches.data());

    let mut out = vec![E::zero(); n * plane];
    for b in 0..n {
        let s = &mut out[b * plane..(b + 1) * plane];
        for ch in 0..c {
            let y_plane = &target.data()[(b * c + ch) * plane..][..plane];
            let k = &kernel[(b * c + ch) * p * p..][..p * p];
            for a in 0..p {
                for bb in 0..p {
                    let kv = k[a * p + bb];
                    if kv == E::zero() {
                        continue;
                    }
                    for i in 0..h {
                        let yi = i as isize - a as isize + off;
                        if yi < 0 || yi >= h as isize {
                            continue;
                        }
                        let row = &y_plane[yi as usize * w..][..w];
                        for j in 0..w {
                            let yj = j as isize - bb as isize + off;
                            if yj >= 0 && yj < w as isize {
                                s[i * w + j] = s[i * w + j] + kv * row[yj as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    Ok(Tensor::from_op(
        vec![n, 1, h, w],
        out,
        vec![patches.clone(), target.clone()],
        Box::new(move |g, parents, _| {
            let (xs, ys) = (&parents[0], &parents[1]);
            let kernel = tile_sum(xs.data());
            let mut g_kernel = vec![E::zero(); n * c * p * p];
            let mut g_target = ys.tracks_grad().then(|| vec![E::zero(); n * c * plane]);
            for b in 0..n {
                let gs = &g[b * plane..(b + 1) * plane];
                for ch in 0..c {
                    let base = (b * c + ch) * plane;
                    let y_plane = &ys.data()[base..base + plane];
                    let k = &kernel[(b * c + ch) * p * p..][..p * p];
                    for a in 0..p {
                        for bb in 0..p {
                            let mut acc = E::zero();
                            for i in 0..h {
                                let yi = i as isize - a as isize + off;
                                if yi < 0 || yi >= h as isize {
                                    continue;
                                }
                                for j in 0..w {
                                    let yj = j as isize - bb as isize + off;
                                    if yj < 0 || yj >= w as isize {
                                        continue;
                                    }
                                    let t = yi as usize * w + yj as usize;
                                    acc = acc + gs[i * w + j] * y_plane[t];
                                    if let Some(gt) = g_target.as_mut() {
                                        gt[base + t] = gt[base + t] + gs[i * w + j] * k[a * p + bb];
                                    }
                                }
                            }
                            let slot = (b * c + ch) * p * p + a * p + bb;
                            g_kernel[slot] = g_kernel[slot] + acc;
                        }
                    }
                }
            }
            let g_patches = xs.tracks_grad().then(|| {
                let mut gx = vec![E::zero(); n * c * plane];
                for (nc, dst) in gx.chunks_mut(plane).enumerate() {
                    let k = &g_kernel[nc * p * p..(nc + 1) * p * p];
                    for y in 0..h {
                        for x in 0..w {
                            dst[y * w + x] = k[(y % p) * p + x % p];
                        }
                    }
                }
                gx
            });
            vec![g_patches, g_target]
        }),
    ))
}

/// Both correspondence maps: left patches over right features and vice versa.
pub fn correspondence_pair<E: Element>(
    left: &Tensor<E>,
    right: &Tensor<E>,
    patch: usize,
) -> Result<(CorrespondenceMap<E>, CorrespondenceMap<E>)> {
    Ok((
        CorrespondenceMap {
            s: cross_patch_corr(left, right, patch)?,
            direction: Direction::LeftToRight,
        },
        CorrespondenceMap {
            s: cross_patch_corr(right, left, patch)?,
            direction: Direction::RightToLeft,
        },
    ))
}

/// Latent condition produced from the pose code.
#[derive(Debug, Clone)]
pub struct ConditionVector<E: Element> {
    pub z: Tensor<E>,
    pub mu: Tensor<E>,
    pub sigma: Tensor<E>,
}

/// Three fully connected layers from the one-hot code to `z`, then two
/// parallel heads for μ(z) and σ(z).
#[derive(Debug, Clone)]
pub struct ConditionEncoder<E: Element> {
    pub fc: [Linear<E>; 3],
    pub mu: Linear<E>,
    pub sigma: Linear<E>,
}

impl<E: Element> ConditionEncoder<E> {
    pub fn new<R: Rng>(rng: &mut R, delta: usize, width: usize) -> Self {
        ConditionEncoder {
            fc: [
                Linear::new(rng, delta, width),
                Linear::new(rng, width, width),
                Linear::new(rng, width, width),
            ],
            mu: Linear::new(rng, width, width),
            sigma: Linear::new(rng, width, width),
        }
    }

    pub fn width(&self) -> usize {
        self.mu.out_features()
    }

    pub fn forward(&self, onehot: &Tensor<E>) -> Result<ConditionVector<E>> {
        let h = self.fc[0].forward(onehot)?.relu();
        let h = self.fc[1].forward(&h)?.relu();
        let z = self.fc[2].forward(&h)?;
        Ok(ConditionVector {
            mu: self.mu.forward(&z)?,
            sigma: self.sigma.forward(&z)?,
            z,
        })
    }
}

impl<E: Element> Module<E> for ConditionEncoder<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        for (i, l) in self.fc.iter().enumerate() {
            l.visit(&join(prefix, &format!("fc{i}")), f);
        }
        self.mu.visit(&join(prefix, "mu"), f);
        self.sigma.visit(&join(prefix, "sigma"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        for (i, l) in self.fc.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("fc{i}")), f);
        }
        self.mu.visit_mut(&join(prefix, "mu"), f);
        self.sigma.visit_mut(&join(prefix, "sigma"), f);
    }
}

/// `g · (1 + σ) + μ`, elementwise.
pub fn modulate<E: Element>(g: &Tensor<E>, cond: &ConditionVector<E>) -> Result<Tensor<E>> {
    g.mul(&cond.sigma.add_scalar(E::one()))?.add(&cond.mu)
}

/// Turns raw head outputs `[N, 6·count]` into `count` matrices `[N, 6]`,
/// anchored at the identity. Raw order is row-major per matrix,
/// `[a, b, tx, c, d, ty]`, matrix 1 first. Translation entries are dropped
/// when locked.
pub fn affine_from_raw<E: Element>(
    raw: &Tensor<E>,
    count: usize,
    translation_locked: bool,
) -> Result<Vec<Tensor<E>>> {
    let n = match raw.shape() {
        [n, d] if *d == 6 * count => *n,
        s => return Err(shape_err!("expected [N,{}] raw affine values, got {:?}", 6 * count, s)),
    };
    let keep = if translation_locked { 0.0 } else { 1.0 };
    let mask_row = [1.0, 1.0, keep, 1.0, 1.0, keep];
    let ident_row = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    let mask: Vec<f64> = (0..n * count).flat_map(|_| mask_row).collect();
    let ident: Vec<f64> = (0..n * count).flat_map(|_| ident_row).collect();
    let shape = [n, 6 * count];
    let full = raw
        .mul(&Tensor::from_f64(&shape, &mask)?)?
        .add(&Tensor::from_f64(&shape, &ident)?)?;
    (0..count).map(|k| full.narrow(1, 6 * k, 6)).collect()
}

/// Two fully connected layers from the modulated vector to the raw affine
/// values of one side.
#[derive(Debug, Clone)]
pub struct AffineHead<E: Element> {
    pub fc1: Linear<E>,
    pub fc2: Linear<E>,
    pub count: usize,
    pub translation_locked: bool,
}

impl<E: Element> AffineHead<E> {
    pub fn new<R: Rng>(
        rng: &mut R,
        width: usize,
        count: usize,
        translation_locked: bool,
    ) -> Self {
        AffineHead {
            fc1: Linear::new(rng, width, width),
            fc2: Linear::new(rng, width, 6 * count),
            count,
            translation_locked,
        }
    }

    pub fn forward(&self, h: &Tensor<E>) -> Result<Vec<Tensor<E>>> {
        let raw = self.fc2.forward(&self.fc1.forward(h)?.relu())?;
        affine_from_raw(&raw, self.count, self.translation_locked)
    }
}

impl<E: Element> Module<E> for AffineHead<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}
