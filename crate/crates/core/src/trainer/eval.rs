use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::{stack, tau_steps, ViewCache};
use crate::clae::digitize_angle;
use crate::error::{Error, Result};
use crate::inference::LoadedModel;
use crate::losses::{psnr, ssim_metric, METRIC_BORDER};
use crate::scene::{DatasetManifest, Split};
use crate::tensor::Tensor;

/// JSON has no infinity; perfect reconstructions are written as `"inf"`.
mod float_or_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(serde::de::Error::custom(format!("bad float `{t}`"))),
            },
        }
    }
}

fn fmt_metric(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else if v > 0.0 {
        "inf".into()
    } else {
        v.to_string()
    }
}

/// Scores for one predicted view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub location: usize,
    pub left_yaw: u32,
    /// Offset from the left reference.
    pub theta_deg: u32,
    #[serde(with = "float_or_inf")]
    pub psnr: f64,
    #[serde(with = "float_or_inf")]
    pub ssim: f64,
    /// Pixel-wise average of the two references.
    #[serde(with = "float_or_inf")]
    pub baseline_psnr: f64,
    #[serde(with = "float_or_inf")]
    pub baseline_ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tau_deg: f64,
    #[serde(with = "float_or_inf")]
    pub mean_psnr: f64,
    #[serde(with = "float_or_inf")]
    pub mean_ssim: f64,
    #[serde(with = "float_or_inf")]
    pub mean_baseline_psnr: f64,
    #[serde(with = "float_or_inf")]
    pub mean_baseline_ssim: f64,
    pub rows: Vec<EvalRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

impl EvalReport {
    pub fn from_rows(tau_deg: f64, rows: Vec<EvalRow>) -> Self {
        EvalReport {
            tau_deg,
            mean_psnr: mean(rows.iter().map(|r| r.psnr)),
            mean_ssim: mean(rows.iter().map(|r| r.ssim)),
            mean_baseline_psnr: mean(rows.iter().map(|r| r.baseline_psnr)),
            mean_baseline_ssim: mean(rows.iter().map(|r| r.baseline_ssim)),
            rows,
        }
    }

    /// Share of rows where the model's PSNR is above the baseline's.
    pub fn fraction_beating_baseline(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.psnr > r.baseline_psnr).count() as f64 / self.rows.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("location,left_yaw,theta_deg,psnr,ssim,baseline_psnr,baseline_ssim\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.location,
                r.left_yaw,
                r.theta_deg,
                fmt_metric(r.psnr),
                fmt_metric(r.ssim),
                fmt_metric(r.baseline_psnr),
                fmt_metric(r.baseline_ssim)
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))
    }
}

/// Scores every intermediate captured view between τ-spaced references at
/// every held-out location. Reference angles themselves are never scored.
pub fn evaluate(model: &LoadedModel, manifest: &DatasetManifest, tau_deg: f64) -> Result<EvalReport> {
    let tau = tau_steps(manifest, tau_deg)?;
    let locations = manifest.locations_in(Split::Eval);
    if locations.is_empty() {
        return Err(Error::Dataset("manifest has no held-out locations".into()));
    }
    let step = manifest.step_deg;
    let thetas: Vec<u32> = (1..tau / step).map(|k| k * step).collect();
    let codes = thetas
        .iter()
        .map(|&t| digitize_angle(t as f64, tau as f64, model.config.delta))
        .collect::<Result<Vec<_>>>()?;
    let mut cache = ViewCache::default();
    let mut rows = Vec::new();
    for &loc in &locations {
        for left_yaw in (0..360).step_by(tau as usize) {
            let l = cache.rgb(manifest, loc, left_yaw)?;
            let r = cache.rgb(manifest, loc, left_yaw + tau)?;
            let gts = thetas
                .iter()
                .map(|&t| cache.rgb(manifest, loc, left_yaw + t))
                .collect::<Result<Vec<_>>>()?;
            let n = thetas.len();
            let left = stack(&vec![l.clone(); n])?;
            let right = stack(&vec![r.clone(); n])?;
            let gt = stack(&gts)?;
            let pred = model.predict(&left, &right, &codes, Some(&gt))?;
            let blend = l.add(&r)?.mul_scalar(0.5);
            let per = pred.numel() / n;
            let shape = gts[0].shape().to_vec();
            for (i, &theta) in thetas.iter().enumerate() {
                let p = Tensor::from_vec(&shape, pred.data()[i * per..(i + 1) * per].to_vec())?;
                rows.push(EvalRow {
                    location: loc,
                    left_yaw,
                    theta_deg: theta,
                    psnr: psnr(&p, &gts[i], METRIC_BORDER)?,
                    ssim: ssim_metric(&p, &gts[i], METRIC_BORDER)?,
                    baseline_psnr: psnr(&blend, &gts[i], METRIC_BORDER)?,
                    baseline_ssim: ssim_metric(&blend, &gts[i], METRIC_BORDER)?,
                });
            }
        }
    }
    Ok(EvalReport::from_rows(tau as f64, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau_deg: f64,
    #[serde(with = "float_or_inf")]
    pub mean_psnr: f64,
    #[serde(with = "float_or_inf")]
    pub mean_baseline_psnr: f64,
    pub rows: usize,
}

/// Mean PSNR per reference spacing, using proportional pose codes.
pub fn sweep_tau(model: &LoadedModel, manifest: &DatasetManifest, taus: &[f64]) -> Result<Vec<SweepRow>> {
    taus.iter()
        .map(|&tau| {
            let r = evaluate(model, manifest, tau)?;
            Ok(SweepRow {
                tau_deg: r.tau_deg,
                mean_psnr: r.mean_psnr,
                mean_baseline_psnr: r.mean_baseline_psnr,
                rows: r.rows.len(),
            })
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("tau_deg,mean_psnr,mean_baseline_psnr,rows\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            r.tau_deg,
            fmt_metric(r.mean_psnr),
            fmt_metric(r.mean_baseline_psnr),
            r.rows
        ));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::oracle_checkpoint;
    use crate::scene::{build_scene, emit_dataset, grid_locations};

    fn dataset(step: u32) -> (tempfile::TempDir, DatasetManifest) {
        let dir = tempfile::tempdir().unwrap();
        let scene = build_scene(2, 1).unwrap();
        let m = emit_dataset(&scene, &grid_locations(1, true), step, 32, 32, dir.path()).unwrap();
        (dir, m)
    }

    #[test]
    fn oracle_scores_perfectly() {
        let (_d, m) = dataset(15);
        let model = LoadedModel::from_checkpoint(&oracle_checkpoint(32, 32, 60.0, 12)).unwrap();
        let report = evaluate(&model, &m, 60.0).unwrap();
        // 1 held-out location × (60/15 − 1) × (360/60)
        assert_eq!(report.rows.len(), 18);
        for r in &report.rows {
            assert_eq!(r.psnr, f64::INFINITY);
            assert_eq!(r.ssim, 1.0);
            assert!(r.baseline_psnr.is_finite());
            assert!(r.theta_deg % 60 != 0);
        }
        assert_eq!(report.mean_psnr, f64::INFINITY);
        let json = report.to_json().unwrap();
        assert!(json.contains("\"inf\""));
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.rows, report.rows);
        assert!(report.to_csv().lines().nth(1).unwrap().contains(",inf,"));
    }

    #[test]
    fn sweep_row_counts_and_consistency() {
        let (_d, m) = dataset(30);
        let model = LoadedModel::from_checkpoint(&oracle_checkpoint(32, 32, 60.0, 12)).unwrap();
        let sweep = sweep_tau(&model, &m, &[60.0, 90.0, 120.0]).unwrap();
        assert_eq!(sweep.len(), 3);
        assert_eq!(sweep.iter().map(|s| s.rows).collect::<Vec<_>>(), vec![6, 8, 9]);
        let direct = evaluate(&model, &m, 60.0).unwrap();
        assert_eq!(sweep[0].mean_baseline_psnr, direct.mean_baseline_psnr);
        assert!(sweep_tau(&model, &m, &[45.0]).is_err());
    }
}
