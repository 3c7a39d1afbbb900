use std::path::{Path, PathBuf};

use image::{ExtendedColorType, ImageFormat};
use serde::{Deserialize, Serialize};

use super::{render_view, CameraPose, SceneSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationInfo {
    pub id: usize,
    pub position: [f64; 3],
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub location: usize,
    pub yaw_deg: u32,
    /// Relative to the dataset directory.
    pub rgb: String,
    pub seg: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub step_deg: u32,
    pub fov_deg: f64,
    pub tau_deg: f64,
    pub delta: usize,
    pub scene_seed: u64,
    pub locations: Vec<LocationInfo>,
    pub records: Vec<ViewRecord>,
    #[serde(skip)]
    pub root: PathBuf,
}

/// `train` capture positions on the corners of a 3 m square around the
/// origin (then further out on a ring), plus the origin itself as a held-out
/// location when `holdout` is set.
pub fn grid_locations(train: usize, holdout: bool) -> Vec<LocationInfo> {
    const CORNERS: [[f64; 3]; 4] = [
        [-1.5, 0.0, -1.5],
        [1.5, 0.0, -1.5],
        [1.5, 0.0, 1.5],
        [-1.5, 0.0, 1.5],
    ];
    let mut out: Vec<LocationInfo> = (0..train)
        .map(|i| {
            let position = if i < CORNERS.len() {
                CORNERS[i]
            } else {
                let a = (i as f64 * 137.5).to_radians();
                [3.0 * a.sin(), 0.0, 3.0 * a.cos()]
            };
            LocationInfo {
                id: i,
                position,
                split: Split::Train,
            }
        })
        .collect();
    if holdout {
        out.push(LocationInfo {
            id: train,
            position: [0.0; 3],
            split: Split::Eval,
        });
    }
    out
}

fn rel_paths(loc: usize, yaw: u32) -> (String, String) {
    (
        format!("loc{loc}/yaw{yaw:03}.png"),
        format!("loc{loc}/yaw{yaw:03}_seg.png"),
    )
}

fn write_png(path: &Path, bytes: &[u8], w: usize, h: usize, color: ExtendedColorType) -> Result<()> {
    image::save_buffer_with_format(path, bytes, w as u32, h as u32, color, ImageFormat::Png)
        .map_err(Error::from)
}

/// Renders every view at every location, writes the PNGs and finally the
/// manifest.
pub fn emit_dataset(
    scene: &SceneSpec,
    locations: &[LocationInfo],
    step_deg: u32,
    height: usize,
    width: usize,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if step_deg == 0 || 360 % step_deg != 0 {
        return Err(Error::InvalidArgument(format!(
            "angular step {step_deg} must divide 360"
        )));
    }
    if locations.is_empty() {
        return Err(Error::InvalidArgument("at least one location is required".into()));
    }
    let mut records = Vec::new();
    for loc in locations {
        let dir = out_dir.join(format!("loc{}", loc.id));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for yaw in (0..360).step_by(step_deg as usize) {
            let view = render_view(scene, &CameraPose::new(loc.position, yaw as f64), height, width)?;
            let (rgb, seg) = rel_paths(loc.id, yaw);
            write_png(&out_dir.join(&rgb), &view.rgb_bytes(), width, height, ExtendedColorType::Rgb8)?;
            write_png(&out_dir.join(&seg), &view.seg, width, height, ExtendedColorType::L8)?;
            records.push(ViewRecord {
                location: loc.id,
                yaw_deg: yaw,
                rgb,
                seg,
            });
        }
    }
    let manifest = DatasetManifest {
        name: format!("procedural-{}", scene.seed),
        width,
        height,
        step_deg,
        fov_deg: CameraPose::DEFAULT_FOV,
        tau_deg: 60.0,
        delta: 12,
        scene_seed: scene.seed,
        locations: locations.to_vec(),
        records,
        root: out_dir.to_path_buf(),
    };
    manifest.save()?;
    Ok(manifest)
}

impl DatasetManifest {
    pub fn save(&self) -> Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Reads `dir/manifest.json` and checks its internal consistency.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        m.root = dir.to_path_buf();
        if m.step_deg == 0 || 360 % m.step_deg != 0 {
            return Err(Error::Dataset(format!("step {} does not divide 360", m.step_deg)));
        }
        let per_loc = (360 / m.step_deg) as usize;
        for loc in &m.locations {
            let n = m.records.iter().filter(|r| r.location == loc.id).count();
            if n != per_loc {
                return Err(Error::Dataset(format!(
                    "location {} has {n} views, expected {per_loc}",
                    loc.id
                )));
            }
        }
        Ok(m)
    }

    pub fn location(&self, id: usize) -> Option<&LocationInfo> {
        self.locations.iter().find(|l| l.id == id)
    }

    pub fn locations_in(&self, split: Split) -> Vec<usize> {
        self.locations.iter().filter(|l| l.split == split).map(|l| l.id).collect()
    }

    pub fn view(&self, location: usize, yaw_deg: u32) -> Option<&ViewRecord> {
        self.records
            .iter()
            .find(|r| r.location == location && r.yaw_deg == yaw_deg % 360)
    }

    fn require(&self, location: usize, yaw_deg: u32) -> Result<&ViewRecord> {
        self.view(location, yaw_deg).ok_or_else(|| {
            Error::Dataset(format!("no view at location {location}, yaw {yaw_deg}"))
        })
    }

    /// `[3,H,W]` RGB in [0,1].
    pub fn load_rgb(&self, location: usize, yaw_deg: u32) -> Result<Tensor<f32>> {
        load_rgb(&self.root.join(&self.require(location, yaw_deg)?.rgb))
    }

    /// Per-pixel object ids.
    pub fn load_seg(&self, location: usize, yaw_deg: u32) -> Result<Vec<u8>> {
        load_seg(&self.root.join(&self.require(location, yaw_deg)?.seg))
    }
}

pub fn load_rgb(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

pub fn load_seg(path: &Path) -> Result<Vec<u8>> {
    Ok(image::open(path)?.to_luma8().into_raw())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::build_scene;

    #[test]
    fn one_location_sixty_degrees() {
        let dir = tempfile::tempdir().unwrap();
        let scene = build_scene(1, 1).unwrap();
        let locs = grid_locations(1, false);
        let m = emit_dataset(&scene, &locs, 60, 16, 24, dir.path()).unwrap();
        assert_eq!(m.records.len(), 6);
        assert!(dir.path().join("loc0/yaw300_seg.png").exists());
        let back = DatasetManifest::load(dir.path()).unwrap();
        assert_eq!(back, m);
        let rgb = back.load_rgb(0, 60).unwrap();
        assert_eq!(rgb.shape(), &[3, 16, 24]);
        assert_eq!(back.load_seg(0, 60).unwrap().len(), 16 * 24);
        assert!(back.load_rgb(0, 65).is_err());
    }

    #[test]
    fn step_must_divide_circle() {
        let dir = tempfile::tempdir().unwrap();
        let scene = build_scene(1, 1).unwrap();
        assert!(emit_dataset(&scene, &grid_locations(1, false), 7, 8, 8, dir.path()).is_err());
    }

    #[test]
    fn holdout_is_center() {
        let locs = grid_locations(4, true);
        assert_eq!(locs.len(), 5);
        assert_eq!(locs[4].position, [0.0; 3]);
        assert_eq!(locs[4].split, Split::Eval);
        assert!(locs[..4].iter().all(|l| l.split == Split::Train));
    }

    #[test]
    fn rgb_round_trips_through_png() {
        let dir = tempfile::tempdir().unwrap();
        let scene = build_scene(2, 1).unwrap();
        let locs = grid_locations(1, false);
        emit_dataset(&scene, &locs, 90, 16, 16, dir.path()).unwrap();
        let view = render_view(&scene, &CameraPose::new(locs[0].position, 90.0), 16, 16).unwrap();
        let m = DatasetManifest::load(dir.path()).unwrap();
        let loaded = m.load_rgb(0, 90).unwrap();
        let q: Vec<f32> = {
            let b = view.rgb_bytes();
            let mut planar = vec![0.0; b.len()];
            for (i, px) in b.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    planar[c * 256 + i] = px[c] as f32 / 255.0;
                }
            }
            planar
        };
        assert_eq!(loaded.data(), &q[..]);
        assert_eq!(m.load_seg(0, 90).unwrap(), view.seg);
    }
}
