//! Layer primitives: convolution, fully connected, normalization, resampling.

use super::gemm::{gemm, Mat};
use super::{Element, Tensor};
use crate::error::{shape_err, Result};

/// Stride and zero padding of a 2D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad: usize,
}

/// ⌊(n + 2·pad − k) / stride⌋ + 1, or `None` when the kernel does not fit.
pub fn conv2d_output_size(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || k == 0 || k > n + 2 * pad {
        return None;
    }
    Some((n + 2 * pad - k) / stride + 1)
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col<E: Element>(&self, x: &[E], cols: &mut [E]) {
        let hw_out = self.ho * self.wo;
        for c in 0..self.c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            line.iter_mut().for_each(|v| *v = E::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.w as isize {
                                E::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<E: Element>(&self, cols: &[E], dx: &mut [E]) {
        let hw_out = self.ho * self.wo;
        for c in 0..self.c {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * hw_out..(row + 1) * hw_out];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let line = &src[oy * self.wo..(oy + 1) * self.wo];
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, &v) in line.iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] = dst[ix as usize] + v;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<E: Element> Tensor<E> {
    /// 2D cross-correlation of `[N,Cin,H,W]` with `[Cout,Cin,kh,kw]`, zero padded.
    pub fn conv2d(&self, kernel: &Tensor<E>, spec: Conv2dSpec) -> Result<Tensor<E>> {
        let [n, c, h, w] = self.dims4()?;
        let [cout, cin, kh, kw] = kernel.dims4()?;
        if cin != c {
            return Err(shape_err!(
                "conv2d: input has {c} channels, kernel expects {cin}"
            ));
        }
        let (Some(ho), Some(wo)) = (
            conv2d_output_size(h, kh, spec.stride, spec.pad),
            conv2d_output_size(w, kw, spec.stride, spec.pad),
        ) else {
            return Err(shape_err!(
                "conv2d: kernel {kh}x{kw} does not fit {h}x{w} with pad {}",
                spec.pad
            ));
        };
        let geom = ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            stride: spec.stride,
            pad: spec.pad,
            ho,
            wo,
        };
        let ckk = c * kh * kw;
        let hw_out = ho * wo;
        let in_len = c * h * w;
        let out_len = cout * hw_out;
        let mut out = vec![E::zero(); n * out_len];
        let mut cols = if geom.is_pointwise() {
            Vec::new()
        } else {
            vec![E::zero(); ckk * hw_out]
        };
        let wmat = Mat::new(kernel.data(), cout, ckk);
        for b in 0..n {
            let xb = &self.data()[b * in_len..(b + 1) * in_len];
            let colmat = if geom.is_pointwise() {
                Mat::new(xb, ckk, hw_out)
            } else {
                geom.im2col(xb, &mut cols);
                Mat::new(&cols, ckk, hw_out)
            };
            gemm(wmat, colmat, &mut out[b * out_len..(b + 1) * out_len], false);
        }

        Ok(Tensor::from_op(
            vec![n, cout, ho, wo],
            out,
            vec![self.clone(), kernel.clone()],
            Box::new(move |g, parents, _| {
                let (x, k) = (&parents[0], &parents[1]);
                let need_x = x.tracks_grad();
                let need_k = k.tracks_grad();
                let wmat = Mat::new(k.data(), cout, ckk);
                let mut gx = need_x.then(|| vec![E::zero(); n * in_len]);
                let mut gk = need_k.then(|| vec![E::zero(); cout * ckk]);
                let mut cols = vec![E::zero(); if geom.is_pointwise() { 0 } else { ckk * hw_out }];
                let mut dcols = vec![E::zero(); ckk * hw_out];
                for b in 0..n {
                    let gb = Mat::new(&g[b * out_len..(b + 1) * out_len], cout, hw_out);
                    if let Some(gk) = gk.as_mut() {
                        let xb = &x.data()[b * in_len..(b + 1) * in_len];
                        let colmat = if geom.is_pointwise() {
                            Mat::new(xb, ckk, hw_out)
                        } else {
                            geom.im2col(xb, &mut cols);
                            Mat::new(&cols, ckk, hw_out)
                        };
                        gemm(gb, colmat.t(), gk, true);
                    }
                    if let Some(gx) = gx.as_mut() {
                        let dst = &mut gx[b * in_len..(b + 1) * in_len];
                        if geom.is_pointwise() {
                            gemm(wmat.t(), gb, dst, false);
                        } else {
                            gemm(wmat.t(), gb, &mut dcols, false);
                            geom.col2im(&dcols, dst);
                        }
                    }
                }
                vec![gx, gk]
            }),
        ))
    }

    /// `input · weightᵀ + bias` for `[N,Din]` inputs.
    pub fn fully_connected(&self, weight: &Tensor<E>, bias: &Tensor<E>) -> Result<Tensor<E>> {
        let (n, din) = match self.shape() {
            [n, d] => (*n, *d),
            s => return Err(shape_err!("fully_connected input must be [N,D], got {:?}", s)),
        };
        let dout = match weight.shape() {
            [o, i] if *i == din => *o,
            s => {
                return Err(shape_err!(
                    "fully_connected weight {:?} does not accept {din} inputs",
                    s
                ))
            }
        };
        if bias.shape() != [dout] {
            return Err(shape_err!(
                "fully_connected bias {:?}, expected [{dout}]",
                bias.shape()
            ));
        }
        let mut out: Vec<E> = bias
            .data()
            .iter()
            .copied()
            .cycle()
            .take(n * dout)
            .collect();
        gemm(
            Mat::new(self.data(), n, din),
            Mat::new(weight.data(), dout, din).t(),
            &mut out,
            true,
        );
        Ok(Tensor::from_op(
            vec![n, dout],
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |g, parents, _| {
                let gmat = Mat::new(g, n, dout);
                let gx = parents[0].tracks_grad().then(|| {
                    let mut gx = vec![E::zero(); n * din];
                    gemm(gmat, Mat::new(parents[1].data(), dout, din), &mut gx, false);
                    gx
                });
                let gw = parents[1].tracks_grad().then(|| {
                    let mut gw = vec![E::zero(); dout * din];
                    gemm(gmat.t(), Mat::new(parents[0].data(), n, din), &mut gw, false);
                    gw
                });
                let gb = parents[2].tracks_grad().then(|| {
                    let mut gb = vec![E::zero(); dout];
                    for row in g.chunks(dout) {
                        gb.iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
                    }
                    gb
                });
                vec![gx, gw, gb]
            }),
        ))
    }

    /// Per-(sample, channel) normalization to zero mean and unit population
    /// variance, without affine parameters.
    pub fn instance_norm(&self, eps: E) -> Result<Tensor<E>> {
        let [_, _, h, w] = self.dims4()?;
        let hw = h * w;
        if hw < 2 {
            return Err(shape_err!("instance_norm needs H·W >= 2, got {h}x{w}"));
        }
        let count = E::from_usize(hw).unwrap();
        let mut out = Vec::with_capacity(self.numel());
        let mut inv_std = Vec::with_capacity(self.numel() / hw);
        for plane in self.data().chunks(hw) {
            let mean = plane.iter().copied().sum::<E>() / count;
            let var = plane.iter().map(|&x| (x - mean) * (x - mean)).sum::<E>() / count;
            let istd = E::one() / (var + eps).sqrt();
            inv_std.push(istd);
            out.extend(plane.iter().map(|&x| (x - mean) * istd));
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, _, y| {
                let mut gx = Vec::with_capacity(g.len());
                for ((gp, yp), &istd) in g.chunks(hw).zip(y.chunks(hw)).zip(&inv_std) {
                    let mean_g = gp.iter().copied().sum::<E>() / count;
                    let mean_gy = gp.iter().zip(yp).map(|(&a, &b)| a * b).sum::<E>() / count;
                    gx.extend(
                        gp.iter()
                            .zip(yp)
                            .map(|(&gv, &yv)| istd * (gv - mean_g - yv * mean_gy)),
                    );
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Bilinear ×2 upsampling with half-pixel centers and edge clamping.
    pub fn upsample_bilinear_x2(&self) -> Result<Tensor<E>> {
        let [n, c, h, w] = self.dims4()?;
        if h == 0 || w == 0 {
            return Err(shape_err!("upsample of an empty map"));
        }
        let ys = upsample_taps::<E>(h);
        let xs = upsample_taps::<E>(w);
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        for plane in self.data().chunks(h * w) {
            for &(y0, y1, fy) in &ys {
                for &(x0, x1, fx) in &xs {
                    let top = plane[y0 * w + x0] * (E::one() - fx) + plane[y0 * w + x1] * fx;
                    let bot = plane[y1 * w + x0] * (E::one() - fx) + plane[y1 * w + x1] * fx;
                    out.push(top * (E::one() - fy) + bot * fy);
                }
            }
        }
        Ok(Tensor::from_op(
            vec![n, c, ho, wo],
            out,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = vec![E::zero(); n * c * h * w];
                for (gp, dst) in g.chunks(ho * wo).zip(gx.chunks_mut(h * w)) {
                    let mut k = 0;
                    for &(y0, y1, fy) in &ys {
                        for &(x0, x1, fx) in &xs {
                            let gv = gp[k];
                            k += 1;
                            let (wy0, wy1) = (E::one() - fy, fy);
                            let (wx0, wx1) = (E::one() - fx, fx);
                            dst[y0 * w + x0] = dst[y0 * w + x0] + gv * wy0 * wx0;
                            dst[y0 * w + x1] = dst[y0 * w + x1] + gv * wy0 * wx1;
                            dst[y1 * w + x0] = dst[y1 * w + x0] + gv * wy1 * wx0;
                            dst[y1 * w + x1] = dst[y1 * w + x1] + gv * wy1 * wx1;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// 2×2 average pooling. For an exact factor of two this coincides with
    /// half-pixel bilinear downsampling.
    pub fn downsample_x2(&self) -> Result<Tensor<E>> {
        let [n, c, h, w] = self.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err!("downsample_x2 needs even dims, got {h}x{w}"));
        }
        let (ho, wo) = (h / 2, w / 2);
        let quarter = E::from_f64_lossy(0.25);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        for plane in self.data().chunks(h * w) {
            for y in 0..ho {
                for x in 0..wo {
                    let i = 2 * y * w + 2 * x;
                    out.push((plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) * quarter);
                }
            }
        }
        Ok(Tensor::from_op(
            vec![n, c, ho, wo],
            out,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = vec![E::zero(); n * c * h * w];
                for (gp, dst) in g.chunks(ho * wo).zip(gx.chunks_mut(h * w)) {
                    for y in 0..ho {
                        for x in 0..wo {
                            let v = gp[y * wo + x] * quarter;
                            let i = 2 * y * w + 2 * x;
                            dst[i] = v;
                            dst[i + 1] = v;
                            dst[i + w] = v;
                            dst[i + w + 1] = v;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}

fn upsample_taps<E: Element>(len: usize) -> Vec<(usize, usize, E)> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, E::from_f64_lossy(src - i0 as f64))
        })
        .collect()
}
