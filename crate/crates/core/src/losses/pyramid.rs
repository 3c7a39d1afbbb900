//! Laplacian-pyramid L1 loss.

use crate::error::{shape_err, Result};
use crate::tensor::{Element, Tensor};

/// Band-pass decomposition: `levels` detail bands, finest first, followed by
/// the low-pass residual. Reduction is 2×2 averaging, expansion is bilinear.
pub fn laplacian_pyramid<E: Element>(x: &Tensor<E>, levels: usize) -> Result<Vec<Tensor<E>>> {
    let [_, _, h, w] = x.dims4()?;
    let f = 1usize << levels;
    if h % f != 0 || w % f != 0 {
        return Err(shape_err!(
            "{levels}-level pyramid needs sides divisible by {f}, got {w}x{h}"
        ));
    }
    let mut bands = Vec::with_capacity(levels + 1);
    let mut cur = x.clone();
    for _ in 0..levels {
        let down = cur.downsample_x2()?;
        bands.push(cur.sub(&down.upsample_bilinear_x2()?)?);
        cur = down;
    }
    bands.push(cur);
    Ok(bands)
}

/// `Σ_k 2^k · mean|A_k − B_k|` over the detail bands and the residual.
pub fn laplacian_loss<E: Element>(a: &Tensor<E>, b: &Tensor<E>, levels: usize) -> Result<Tensor<E>> {
    if a.shape() != b.shape() {
        return Err(shape_err!("laplacian: shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    let pa = laplacian_pyramid(a, levels)?;
    let pb = laplacian_pyramid(b, levels)?;
    let mut total: Option<Tensor<E>> = None;
    for (k, (x, y)) in pa.iter().zip(&pb).enumerate() {
        let term = x
            .sub(y)?
            .abs()
            .mean()
            .mul_scalar(E::from_f64_lossy((1u64 << k) as f64));
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    Ok(total.expect("at least the residual level"))
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

    /// Direct single-plane blur-subtract-compare, written with plain loops.
    fn one_level_oracle(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
        let reduce = |x: &[f64]| -> Vec<f64> {
            let (hh, hw) = (h / 2, w / 2);
            let mut out = vec![0.0; hh * hw];
            for y in 0..hh {
                for x_ in 0..hw {
                    out[y * hw + x_] = (x[2 * y * w + 2 * x_]
                        + x[2 * y * w + 2 * x_ + 1]
                        + x[(2 * y + 1) * w + 2 * x_]
                        + x[(2 * y + 1) * w + 2 * x_ + 1])
                        / 4.0;
                }
            }
            out
        };
        // Half-pixel bilinear expansion with edge clamping.
        let expand = |s: &[f64]| -> Vec<f64> {
            let (hh, hw) = (h / 2, w / 2);
            let tap = |o: usize, n: usize| -> (usize, usize, f64) {
                let src = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(n - 1);
                (i0, i1, src - i0 as f64)
            };
            let mut out = vec![0.0; h * w];
            for y in 0..h {
                let (y0, y1, fy) = tap(y, hh);
                for x in 0..w {
                    let (x0, x1, fx) = tap(x, hw);
                    let top = s[y0 * hw + x0] * (1.0 - fx) + s[y0 * hw + x1] * fx;
                    let bot = s[y1 * hw + x0] * (1.0 - fx) + s[y1 * hw + x1] * fx;
                    out[y * w + x] = top * (1.0 - fy) + bot * fy;
                }
            }
            out
        };
        let (ra, rb) = (reduce(a), reduce(b));
        let (ea, eb) = (expand(&ra), expand(&rb));
        let band: f64 = (0..h * w)
            .map(|i| ((a[i] - ea[i]) - (b[i] - eb[i])).abs())
            .sum::<f64>()
            / (h * w) as f64;
        let resid: f64 = ra.iter().zip(&rb).map(|(p, q)| (p - q).abs()).sum::<f64>() / ra.len() as f64;
        band + 2.0 * resid
    }

    #[test]
    fn zero_on_identical_and_symmetric() {
        let a = random(0, &[1, 3, 16, 16]);
        let b = random(1, &[1, 3, 16, 16]);
        assert_eq!(laplacian_loss(&a, &a, 3).unwrap().item(), 0.0);
        let ab = laplacian_loss(&a, &b, 3).unwrap().item();
        let ba = laplacian_loss(&b, &a, 3).unwrap().item();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab > 0.0);
    }

    #[test]
    fn one_level_matches_direct_oracle() {
        let a = random(2, &[1, 1, 8, 12]);
        let b = random(3, &[1, 1, 8, 12]);
        let got = laplacian_loss(&a, &b, 1).unwrap().item();
        let want = one_level_oracle(a.data(), b.data(), 8, 12);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn bands_reconstruct_input() {
        let a = random(4, &[1, 2, 16, 8]);
        let bands = laplacian_pyramid(&a, 3).unwrap();
        let mut rec = bands[3].clone();
        for k in (0..3).rev() {
            rec = rec.upsample_bilinear_x2().unwrap().add(&bands[k]).unwrap();
        }
        for (x, y) in rec.data().iter().zip(a.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn indivisible_rejected() {
        let a = Tensor::<f64>::zeros(&[1, 1, 12, 12]);
        assert!(laplacian_loss(&a, &a, 3).is_err());
    }
}
