use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clae::{digitize_angle, AngleCode};
use crate::error::{Error, Result};
use crate::model::seg_channel_value;
use crate::scene::{DatasetManifest, Split};
use crate::tensor::Tensor;

/// Where one batch entry came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct SampleInfo {
    pub location: usize,
    pub left_yaw: u32,
    pub theta_deg: u32,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub left: Tensor<f32>,
    pub right: Tensor<f32>,
    /// `[B, δ]` one-hot rows.
    pub codes: Tensor<f32>,
    pub gt: Tensor<f32>,
    /// `[B,1,H,W]` segmentation channel values.
    pub gt_seg: Tensor<f32>,
    pub samples: Vec<SampleInfo>,
}

/// Reference interval as whole degrees, checked against the capture step.
pub fn tau_steps(manifest: &DatasetManifest, tau_deg: f64) -> Result<u32> {
    let tau = tau_deg.round();
    if (tau - tau_deg).abs() > 1e-9 || tau <= 0.0 || tau >= 360.0 {
        return Err(Error::InvalidArgument(format!(
            "tau {tau_deg} must be a whole number of degrees in (0, 360)"
        )));
    }
    let tau = tau as u32;
    if tau % manifest.step_deg != 0 || 360 % tau != 0 || tau / manifest.step_deg < 2 {
        return Err(Error::Dataset(format!(
            "tau {tau} is incompatible with a {}° capture step (needs at least one \
             intermediate view and must divide 360)",
            manifest.step_deg
        )));
    }
    Ok(tau)
}

/// Loaded images keyed by (location, yaw).
#[derive(Debug, Default)]
pub struct ViewCache {
    rgb: HashMap<(usize, u32), Tensor<f32>>,
    seg: HashMap<(usize, u32), Vec<f32>>,
}

impl ViewCache {
    pub fn rgb(&mut self, m: &DatasetManifest, loc: usize, yaw: u32) -> Result<Tensor<f32>> {
        let key = (loc, yaw % 360);
        if let Some(t) = self.rgb.get(&key) {
            return Ok(t.clone());
        }
        let t = m.load_rgb(loc, key.1)?;
        self.rgb.insert(key, t.clone());
        Ok(t)
    }

    pub fn seg(&mut self, m: &DatasetManifest, loc: usize, yaw: u32) -> Result<Vec<f32>> {
        let key = (loc, yaw % 360);
        if let Some(s) = self.seg.get(&key) {
            return Ok(s.clone());
        }
        let s: Vec<f32> = m
            .load_seg(loc, key.1)?
            .into_iter()
            .map(|id| seg_channel_value(id) as f32)
            .collect();
        self.seg.insert(key, s.clone());
        Ok(s)
    }
}

/// Stacks `[C,H,W]` tensors into `[B,C,H,W]`.
pub fn stack(items: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = items
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot stack zero tensors".into()))?;
    let mut shape = vec![items.len()];
    shape.extend_from_slice(first.shape());
    let data = items.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::from_vec(&shape, data)
}

/// Seeded stream of training batches: a training location, a left reference
/// on the τ grid, and an intermediate offset strictly between the references.
pub struct BatchSampler {
    manifest: DatasetManifest,
    tau: u32,
    delta: usize,
    batch: usize,
    locations: Vec<usize>,
    rng: ChaCha8Rng,
    cache: ViewCache,
}

pub fn make_batches(
    manifest: &DatasetManifest,
    tau_deg: f64,
    delta: usize,
    batch: usize,
    seed: u64,
) -> Result<BatchSampler> {
    let tau = tau_steps(manifest, tau_deg)?;
    let locations = manifest.locations_in(Split::Train);
    if locations.is_empty() {
        return Err(Error::Dataset("manifest has no training locations".into()));
    }
    if batch == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    Ok(BatchSampler {
        manifest: manifest.clone(),
        tau,
        delta,
        batch,
        locations,
        rng: ChaCha8Rng::seed_from_u64(seed),
        cache: ViewCache::default(),
    })
}

impl BatchSampler {
    pub fn draw_sample(&mut self) -> SampleInfo {
        let step = self.manifest.step_deg;
        let location = self.locations[self.rng.random_range(0..self.locations.len())];
        let left_yaw = self.rng.random_range(0..360 / self.tau) * self.tau;
        let theta_deg = self.rng.random_range(1..self.tau / step) * step;
        SampleInfo {
            location,
            left_yaw,
            theta_deg,
        }
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        let samples: Vec<SampleInfo> = (0..self.batch).map(|_| self.draw_sample()).collect();
        self.assemble(samples)
    }

    pub fn assemble(&mut self, samples: Vec<SampleInfo>) -> Result<Batch> {
        let m = &self.manifest;
        let (h, w) = (m.height, m.width);
        let mut left = Vec::new();
        let mut right = Vec::new();
        let mut gt = Vec::new();
        let mut seg = Vec::new();
        let mut codes: Vec<AngleCode> = Vec::new();
        for s in &samples {
            left.push(self.cache.rgb(m, s.location, s.left_yaw)?);
            right.push(self.cache.rgb(m, s.location, s.left_yaw + self.tau)?);
            gt.push(self.cache.rgb(m, s.location, s.left_yaw + s.theta_deg)?);
            let sv = self.cache.seg(m, s.location, s.left_yaw + s.theta_deg)?;
            seg.push(Tensor::from_vec(&[1, h, w], sv)?);
            codes.push(digitize_angle(s.theta_deg as f64, self.tau as f64, self.delta)?);
        }
        Ok(Batch {
            left: stack(&left)?,
            right: stack(&right)?,
            codes: AngleCode::batch_tensor(&codes)?,
            gt: stack(&gt)?,
            gt_seg: stack(&seg)?,
            samples,
        })
    }
}

impl Iterator for BatchSampler {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_batch())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{build_scene, emit_dataset, grid_locations};

    fn dataset(step: u32) -> (tempfile::TempDir, DatasetManifest) {
        let dir = tempfile::tempdir().unwrap();
        let scene = build_scene(0, 1).unwrap();
        let m = emit_dataset(&scene, &grid_locations(2, true), step, 16, 16, dir.path()).unwrap();
        (dir, m)
    }

    #[test]
    fn offsets_exclude_endpoints() {
        let (_d, m) = dataset(5);
        let mut s = make_batches(&m, 60.0, 12, 4, 3).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..2000 {
            let x = s.draw_sample();
            assert!(x.theta_deg > 0 && x.theta_deg < 60 && x.theta_deg % 5 == 0);
            assert_eq!(x.left_yaw % 60, 0);
            assert!(x.location < 2, "held-out location sampled");
            seen.insert(x.theta_deg);
        }
        assert_eq!(seen.len(), 11);
    }

    #[test]
    fn batches_are_seeded_and_coded() {
        let (_d, m) = dataset(30);
        let a = make_batches(&m, 60.0, 12, 3, 9).unwrap().next_batch().unwrap();
        let b = make_batches(&m, 60.0, 12, 3, 9).unwrap().next_batch().unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.gt.data(), b.gt.data());
        assert_eq!(a.left.shape(), &[3, 3, 16, 16]);
        assert_eq!(a.gt_seg.shape(), &[3, 1, 16, 16]);
        // with a 30° step the only intermediate offset is 30°, index 6 of 12
        for r in 0..3 {
            assert_eq!(a.codes.data()[r * 12 + 6], 1.0);
            assert_eq!(a.codes.data()[r * 12..r * 12 + 12].iter().sum::<f32>(), 1.0);
        }
    }

    #[test]
    fn incompatible_tau_rejected() {
        let (_d, m) = dataset(30);
        assert!(make_batches(&m, 45.0, 12, 1, 0).is_err());
        assert!(make_batches(&m, 30.0, 12, 1, 0).is_err());
        assert!(make_batches(&m, 60.5, 12, 1, 0).is_err());
    }
}
