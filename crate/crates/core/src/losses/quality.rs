//! Windowed SSIM (differentiable) and border-excluding PSNR/SSIM metrics.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Conv2dSpec, Element, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;
/// Pixels excluded on every side by the evaluation metrics.
pub const METRIC_BORDER: usize = 8;

/// Normalized 11×11 Gaussian window, row-major.
pub fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / total).collect();
    g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect()
}

/// Mean SSIM over all valid 11×11 windows and channels of `[N,C,H,W]`
/// inputs on a unit dynamic range.
pub fn ssim<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    if a.shape() != b.shape() {
        return Err(shape_err!("ssim: shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    let [n, c, h, w] = a.dims4()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(shape_err!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {w}x{h}"));
    }
    let planes = n * c;
    let plane = |t: &Tensor<E>| t.reshape(&[planes, 1, h, w]);
    let stack = Tensor::concat_channels(&[
        &plane(a)?,
        &plane(b)?,
        &plane(&a.square())?,
        &plane(&b.square())?,
        &plane(&a.mul(b)?)?,
    ])?
    .reshape(&[planes * 5, 1, h, w])?;
    let kernel = Tensor::<E>::from_f64(&[1, 1, SSIM_WINDOW, SSIM_WINDOW], &gaussian_window())?;
    let blurred = stack.conv2d(&kernel, Conv2dSpec { stride: 1, pad: 0 })?;
    let (ho, wo) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let blurred = blurred.reshape(&[planes, 5, ho, wo])?;
    let part = |k| blurred.narrow(1, k, 1);
    let (mu_a, mu_b, e_aa, e_bb, e_ab) = (part(0)?, part(1)?, part(2)?, part(3)?, part(4)?);

    let mu_aa = mu_a.square();
    let mu_bb = mu_b.square();
    let mu_ab = mu_a.mul(&mu_b)?;
    let var_a = e_aa.sub(&mu_aa)?;
    let var_b = e_bb.sub(&mu_bb)?;
    let cov = e_ab.sub(&mu_ab)?;

    let c1 = E::from_f64_lossy(SSIM_C1);
    let c2 = E::from_f64_lossy(SSIM_C2);
    let two = E::from_f64_lossy(2.0);
    let num = mu_ab
        .mul_scalar(two)
        .add_scalar(c1)
        .mul(&cov.mul_scalar(two).add_scalar(c2))?;
    let den = mu_aa
        .add(&mu_bb)?
        .add_scalar(c1)
        .mul(&var_a.add(&var_b)?.add_scalar(c2))?;
    Ok(num.div(&den)?.mean())
}

/// Values of the interior `[.., h−2b, w−2b]` crop as f64, plus the crop size.
fn interior(t: &Tensor<impl Element>, border: usize) -> Result<(Vec<f64>, [usize; 3])> {
    let shape = t.shape();
    if shape.len() < 2 {
        return Err(shape_err!("image metrics need at least 2 dims, got {:?}", shape));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h <= 2 * border || w <= 2 * border {
        return Err(Error::InvalidArgument(format!(
            "a {border}px border leaves no interior in a {w}x{h} image"
        )));
    }
    let planes = t.numel() / (h * w);
    let (ih, iw) = (h - 2 * border, w - 2 * border);
    let data = t.data();
    let mut out = Vec::with_capacity(planes * ih * iw);
    for p in 0..planes {
        for y in border..h - border {
            let row = p * h * w + y * w;
            out.extend(data[row + border..row + w - border].iter().map(|v| v.to_f64_lossy()));
        }
    }
    Ok((out, [planes, ih, iw]))
}

/// PSNR in dB on [0,1] images over the interior left after removing
/// `border` pixels on each side. Identical interiors give `f64::INFINITY`.
pub fn psnr<E: Element>(a: &Tensor<E>, b: &Tensor<E>, border: usize) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(shape_err!("psnr: shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    let (xa, _) = interior(a, border)?;
    let (xb, _) = interior(b, border)?;
    let mse = xa.iter().zip(&xb).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / xa.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

/// SSIM over the interior crop, as a plain number.
pub fn ssim_metric<E: Element>(a: &Tensor<E>, b: &Tensor<E>, border: usize) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(shape_err!("ssim: shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    let (xa, [p, h, w]) = interior(a, border)?;
    let (xb, _) = interior(b, border)?;
    let ta = Tensor::<f64>::from_vec(&[1, p, h, w], xa)?;
    let tb = Tensor::<f64>::from_vec(&[1, p, h, w], xb)?;
    Ok(ssim(&ta, &tb)?.item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, shape: &[usize]) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn window_sums_to_one_and_is_symmetric() {
        let w = gaussian_window();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(w[0], w[120]);
        assert_eq!(w[10], w[110]);
    }

    #[test]
    fn ssim_identity_and_constants() {
        let x = random(0, &[1, 3, 16, 16]);
        assert!((ssim(&x, &x).unwrap().item() - 1.0).abs() < 1e-12);
        let zeros = Tensor::<f64>::zeros(&[1, 1, 12, 12]);
        let ones = Tensor::<f64>::ones(&[1, 1, 12, 12]);
        let v = ssim(&zeros, &ones).unwrap().item();
        assert!((v - 1e-4 / (1.0 + 1e-4)).abs() < 1e-12);
    }

    #[test]
    fn ssim_symmetric() {
        let a = random(1, &[2, 2, 13, 14]);
        let b = random(2, &[2, 2, 13, 14]);
        let ab = ssim(&a, &b).unwrap().item();
        let ba = ssim(&b, &a).unwrap().item();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab < 1.0);
    }

    #[test]
    fn ssim_rejects_small_or_mismatched() {
        let a = Tensor::<f64>::zeros(&[1, 1, 8, 8]);
        assert!(ssim(&a, &a).is_err());
        let b = Tensor::<f64>::zeros(&[1, 1, 12, 12]);
        let c = Tensor::<f64>::zeros(&[1, 1, 12, 13]);
        assert!(ssim(&b, &c).is_err());
    }

    #[test]
    fn psnr_closed_form() {
        let a = Tensor::<f32>::zeros(&[3, 48, 64]);
        let b = Tensor::<f32>::full(&[3, 48, 64], 100.0 / 255.0);
        let v = psnr(&a, &b, 8).unwrap();
        assert!((v - 20.0 * (255.0f64 / 100.0).log10()).abs() < 1e-5);
        assert!((v - 8.131).abs() < 0.01);
    }

    #[test]
    fn psnr_ignores_border_and_flags_identity() {
        let a = random(3, &[1, 3, 32, 32]);
        assert_eq!(psnr(&a, &a, 8).unwrap(), f64::INFINITY);
        let mut v = a.to_vec();
        for c in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    if y < 8 || y >= 24 || x < 8 || x >= 24 {
                        v[c * 1024 + y * 32 + x] = 1.0 - v[c * 1024 + y * 32 + x];
                    }
                }
            }
        }
        let b = Tensor::from_vec(&[1, 3, 32, 32], v).unwrap();
        assert_eq!(psnr(&a, &b, 8).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &b, 0).unwrap().is_finite());
    }

    #[test]
    fn psnr_needs_interior() {
        let a = Tensor::<f32>::zeros(&[1, 16, 40]);
        assert!(psnr(&a, &a, 8).is_err());
    }

    #[test]
    fn ssim_metric_crops() {
        let a = random(4, &[3, 48, 64]);
        assert!((ssim_metric(&a, &a, 8).unwrap() - 1.0).abs() < 1e-12);
    }
}
