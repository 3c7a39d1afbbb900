//! Differentiable planar affine warping of feature maps.
//!
//! Coordinates are normalized per axis so that the centers of the first and
//! last pixels sit at −1 and +1 (align-corners). A 2×3 matrix maps each
//! output pixel's normalized position to the location sampled from the
//! input; samples falling outside the map read zeros.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Element, Tensor};

/// A 2×3 affine transform `[[a, b, tx], [c, d, ty]]` in normalized
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    m: [[f64; 3]; 2],
    translation_locked: bool,
}

impl AffineParams {
    pub fn identity() -> Self {
        AffineParams {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            translation_locked: true,
        }
    }

    /// Builds a transform; with `translation_locked` the translation column
    /// is forced to zero.
    pub fn new(mut m: [[f64; 3]; 2], translation_locked: bool) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "affine matrix has non-finite entries: {m:?}"
            )));
        }
        if translation_locked {
            m[0][2] = 0.0;
            m[1][2] = 0.0;
        }
        Ok(AffineParams {
            m,
            translation_locked,
        })
    }

    /// Row-major `[a, b, tx, c, d, ty]`.
    pub fn from_row(row: [f64; 6], translation_locked: bool) -> Result<Self> {
        Self::new(
            [[row[0], row[1], row[2]], [row[3], row[4], row[5]]],
            translation_locked,
        )
    }

    /// Rotation of the sampling coordinates by `deg` degrees.
    pub fn rotation_deg(deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        AffineParams {
            m: [[c, -s, 0.0], [s, c, 0.0]],
            translation_locked: true,
        }
    }

    pub fn scaling(sx: f64, sy: f64) -> Self {
        AffineParams {
            m: [[sx, 0.0, 0.0], [0.0, sy, 0.0]],
            translation_locked: true,
        }
    }

    pub fn matrix(&self) -> [[f64; 3]; 2] {
        self.m
    }

    pub fn translation_locked(&self) -> bool {
        self.translation_locked
    }

    pub fn to_row(&self) -> [f64; 6] {
        let [[a, b, tx], [c, d, ty]] = self.m;
        [a, b, tx, c, d, ty]
    }

    /// `self ∘ other`: warping by `self` and then by `other` samples the
    /// source at `self(other(p))`.
    pub fn compose(&self, other: &AffineParams) -> AffineParams {
        let [[a, b, e], [c, d, f]] = self.m;
        let [[a2, b2, e2], [c2, d2, f2]] = other.m;
        let locked = self.translation_locked && other.translation_locked;
        AffineParams {
            m: [
                [a * a2 + b * c2, a * b2 + b * d2, a * e2 + b * f2 + e],
                [c * a2 + d * c2, c * b2 + d * d2, c * e2 + d * f2 + f],
            ],
            translation_locked: locked,
        }
    }

    /// Batch-of-one parameter tensor `[1, 6]`.
    pub fn to_tensor<E: Element>(&self) -> Tensor<E> {
        Tensor::from_f64(&[1, 6], &self.to_row()).expect("six entries")
    }

    /// Sampling grid `[H, W, 2]` for this transform.
    pub fn grid<E: Element>(&self, h: usize, w: usize) -> Result<Tensor<E>> {
        affine_grid(&self.to_tensor(), h, w)?.reshape(&[h, w, 2])
    }
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::identity()
    }
}

/// Normalized coordinate of pixel `i` on an axis of `n` pixels.
pub fn normalized_coord(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

/// Sampling grids `[N, H, W, 2]` (x, y order) from parameters `[N, 6]`.
pub fn affine_grid<E: Element>(theta: &Tensor<E>, h: usize, w: usize) -> Result<Tensor<E>> {
    let n = match theta.shape() {
        [n, 6] => *n,
        s => return Err(shape_err!("affine_grid expects [N,6] parameters, got {:?}", s)),
    };
    if h == 0 || w == 0 {
        return Err(shape_err!("affine_grid of an empty {h}x{w} map"));
    }
    let xs: Vec<E> = (0..w).map(|i| E::from_f64_lossy(normalized_coord(i, w))).collect();
    let ys: Vec<E> = (0..h).map(|i| E::from_f64_lossy(normalized_coord(i, h))).collect();
    let mut out = Vec::with_capacity(n * h * w * 2);
    for t in theta.data().chunks(6) {
        for &y in &ys {
            for &x in &xs {
                out.push(t[0] * x + t[1] * y + t[2]);
                out.push(t[3] * x + t[4] * y + t[5]);
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, h, w, 2],
        out,
        vec![theta.clone()],
        Box::new(move |g, _, _| {
            let mut gt = vec![E::zero(); n * 6];
            for (b, gb) in g.chunks(h * w * 2).enumerate() {
                let t = &mut gt[b * 6..b * 6 + 6];
                let mut k = 0;
                for &y in &ys {
                    for &x in &xs {
                        let (gx, gy) = (gb[k], gb[k + 1]);
                        k += 2;
                        t[0] = t[0] + gx * x;
                        t[1] = t[1] + gx * y;
                        t[2] = t[2] + gx;
                        t[3] = t[3] + gy * x;
                        t[4] = t[4] + gy * y;
                        t[5] = t[5] + gy;
                    }
                }
            }
            vec![Some(gt)]
        }),
    ))
}

/// One bilinear tap set: four source indices (or `None` when outside) and
/// the fractional offsets used for both values and derivatives.
struct Taps {
    idx: [Option<usize>; 4],
    fx: f64,
    fy: f64,
}

fn taps(gx: f64, gy: f64, h: usize, w: usize) -> Taps {
    let px = (gx + 1.0) * 0.5 * (w as f64 - 1.0);
    let py = (gy + 1.0) * 0.5 * (h as f64 - 1.0);
    let x0 = px.floor();
    let y0 = py.floor();
    let at = |y: f64, x: f64| -> Option<usize> {
        (x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64).then(|| y as usize * w + x as usize)
    };
    Taps {
        idx: [
            at(y0, x0),
            at(y0, x0 + 1.0),
            at(y0 + 1.0, x0),
            at(y0 + 1.0, x0 + 1.0),
        ],
        fx: px - x0,
        fy: py - y0,
    }
}

/// Bilinear sampling of `[N,C,H,W]` at `grid` (`[N,Ho,Wo,2]`, or `[Ho,Wo,2]`
/// shared by the batch). Out-of-range neighbors contribute zero.
pub fn grid_sample_bilinear<E: Element>(input: &Tensor<E>, grid: &Tensor<E>) -> Result<Tensor<E>> {
    let [n, c, h, w] = input.dims4()?;
    let (gn, ho, wo, shared) = match grid.shape() {
        [gn, ho, wo, 2] => (*gn, *ho, *wo, false),
        [ho, wo, 2] => (1, *ho, *wo, true),
        s => return Err(shape_err!("grid must be [N,H,W,2] or [H,W,2], got {:?}", s)),
    };
    if !shared && gn != n {
        return Err(shape_err!("grid batch {gn} does not match input batch {n}"));
    }
    if grid.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("sampling grid has non-finite entries".into()));
    }
    let plane_out = ho * wo;
    let mut out = vec![E::zero(); n * c * plane_out];
    for b in 0..n {
        let gb = if shared { 0 } else { b };
        let gdata = &grid.data()[gb * plane_out * 2..(gb + 1) * plane_out * 2];
        let src = &input.data()[b * c * h * w..(b + 1) * c * h * w];
        let dst = &mut out[b * c * plane_out..(b + 1) * c * plane_out];
        for p in 0..plane_out {
            let t = taps(gdata[2 * p].to_f64_lossy(), gdata[2 * p + 1].to_f64_lossy(), h, w);
            let wts = corner_weights::<E>(&t);
            for ch in 0..c {
                let plane = &src[ch * h * w..(ch + 1) * h * w];
                let mut acc = E::zero();
                for (idx, &wt) in t.idx.iter().zip(&wts) {
                    if let Some(i) = idx {
                        acc = acc + plane[*i] * wt;
                    }
                }
                dst[ch * plane_out + p] = acc;
            }
        }
    }

    Ok(Tensor::from_op(
        vec![n, c, ho, wo],
        out,
        vec![input.clone(), grid.clone()],
        Box::new(move |g, parents, _| {
            let (input, grid) = (&parents[0], &parents[1]);
            let mut g_in = input.tracks_grad().then(|| vec![E::zero(); n * c * h * w]);
            let mut g_grid = grid.tracks_grad().then(|| vec![E::zero(); grid.numel()]);
            let half_w = E::from_f64_lossy(0.5 * (w as f64 - 1.0));
            let half_h = E::from_f64_lossy(0.5 * (h as f64 - 1.0));
            for b in 0..n {
                let gb = if shared { 0 } else { b };
                let gdata = &grid.data()[gb * plane_out * 2..(gb + 1) * plane_out * 2];
                let src = &input.data()[b * c * h * w..(b + 1) * c * h * w];
                let gout = &g[b * c * plane_out..(b + 1) * c * plane_out];
                for p in 0..plane_out {
                    let t = taps(gdata[2 * p].to_f64_lossy(), gdata[2 * p + 1].to_f64_lossy(), h, w);
                    let wts = corner_weights::<E>(&t);
                    let fx = E::from_f64_lossy(t.fx);
                    let fy = E::from_f64_lossy(t.fy);
                    let mut dpx = E::zero();
                    let mut dpy = E::zero();
                    for ch in 0..c {
                        let go = gout[ch * plane_out + p];
                        if go == E::zero() {
                            continue;
                        }
                        if let Some(gi) = g_in.as_mut() {
                            let plane = &mut gi[b * c * h * w + ch * h * w..][..h * w];
                            for (idx, &wt) in t.idx.iter().zip(&wts) {
                                if let Some(i) = idx {
                                    plane[*i] = plane[*i] + go * wt;
                                }
                            }
                        }
                        if g_grid.is_some() {
                            let plane = &src[ch * h * w..(ch + 1) * h * w];
                            let v = |k: usize| t.idx[k].map_or(E::zero(), |i| plane[i]);
                            let (v00, v01, v10, v11) = (v(0), v(1), v(2), v(3));
                            dpx = dpx
                                + go * ((E::one() - fy) * (v01 - v00) + fy * (v11 - v10));
                            dpy = dpy
                                + go * ((E::one() - fx) * (v10 - v00) + fx * (v11 - v01));
                        }
                    }
                    if let Some(gg) = g_grid.as_mut() {
                        let k = gb * plane_out * 2 + 2 * p;
                        gg[k] = gg[k] + dpx * half_w;
                        gg[k + 1] = gg[k + 1] + dpy * half_h;
                    }
                }
            }
            vec![g_in, g_grid]
        }),
    ))
}

fn corner_weights<E: Element>(t: &Taps) -> [E; 4] {
    let (fx, fy) = (t.fx, t.fy);
    [
        (1.0 - fx) * (1.0 - fy),
        fx * (1.0 - fy),
        (1.0 - fx) * fy,
        fx * fy,
    ]
    .map(E::from_f64_lossy)
}

/// Warps `[N,C,H,W]` features by per-sample parameters `[N,6]`, preserving shape.
pub fn warp_affine<E: Element>(features: &Tensor<E>, theta: &Tensor<E>) -> Result<Tensor<E>> {
    let [_, _, h, w] = features.dims4()?;
    grid_sample_bilinear(features, &affine_grid(theta, h, w)?)
}

/// Warps every sample by the same transform.
pub fn warp_with<E: Element>(features: &Tensor<E>, params: &AffineParams) -> Result<Tensor<E>> {
    let [_, _, h, w] = features.dims4()?;
    grid_sample_bilinear(features, &params.grid(h, w)?)
}
