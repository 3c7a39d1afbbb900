//! Distribution distance between deep features of a frozen random network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Result};
use crate::tensor::{Conv2dSpec, Element, Tensor};

pub const EXTRACTOR_WIDTHS: [usize; 4] = [16, 32, 64, 64];

/// Four 3×3 conv + ReLU stages with 2×2 average pooling between them; the
/// features are tapped after the fourth stage, before its pooling. Weights
/// are drawn once from the seed and never trained.
#[derive(Debug, Clone)]
pub struct FeatureExtractor<E: Element> {
    kernels: Vec<Tensor<E>>,
    seed: u64,
}

impl<E: Element> FeatureExtractor<E> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let kernels = EXTRACTOR_WIDTHS
            .iter()
            .map(|&cout| {
                let std = (2.0 / (cin * 9) as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("positive std");
                let data: Vec<E> = (0..cout * cin * 9)
                    .map(|_| E::from_f64_lossy(dist.sample(&mut rng)))
                    .collect();
                let k = Tensor::from_vec(&[cout, cin, 3, 3], data).expect("sized");
                cin = cout;
                k
            })
            .collect();
        FeatureExtractor { kernels, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn features(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let mut h = x.clone();
        for (i, k) in self.kernels.iter().enumerate() {
            if i > 0 {
                h = h.downsample_x2()?;
            }
            h = h.conv2d(k, Conv2dSpec { stride: 1, pad: 1 })?.relu();
        }
        Ok(h)
    }
}

/// Per-channel Wasserstein-1 between `[N,C,H,W]` activations treated as 1D
/// empirical distributions: sort, mean absolute difference, summed over
/// channels and averaged over the batch.
pub fn sliced_w1<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    if a.shape() != b.shape() {
        return Err(shape_err!("sliced W1: shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    let [n, c, h, w] = a.dims4()?;
    let rows = |t: &Tensor<E>| t.reshape(&[n, c, h * w])?.sort_last();
    let d = rows(a)?.sub(&rows(b)?)?.abs().mean();
    Ok(d.mul_scalar(E::from_usize(c).expect("channel count")))
}

pub fn pd_loss<E: Element>(pre: &Tensor<E>, gt: &Tensor<E>, extractor: &FeatureExtractor<E>) -> Result<Tensor<E>> {
    sliced_w1(&extractor.features(pre)?, &extractor.features(gt)?)
}
