//! Procedural billboard scenes, a pinhole z-buffer renderer and dataset
//! emission.

mod dataset;
mod render;

pub use dataset::{
    emit_dataset, grid_locations, load_rgb, load_seg, DatasetManifest, LocationInfo, Split,
    ViewRecord, MANIFEST_FILE,
};
pub use render::{render_view, RenderedView, GROUND_Y};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_DEPTH_M: f64 = 5.0;
pub const MAX_DEPTH_M: f64 = 30.0;
pub const SECTOR_DEG: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Solid,
    Stripes,
    Checker,
}

/// A textured vertical rectangle whose face points at the world origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Billboard {
    pub center: [f64; 3],
    pub width: f64,
    pub height: f64,
    pub id: u8,
    pub color: [f64; 3],
    pub pattern: Pattern,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub billboards: Vec<Billboard>,
    pub background: [f64; 3],
    /// Ground plane color; `None` renders background below the horizon too.
    pub ground: Option<[f64; 3]>,
}

impl SceneSpec {
    /// No billboards and no ground.
    pub fn empty(seed: u64) -> Self {
        SceneSpec {
            seed,
            billboards: Vec::new(),
            background: [0.55, 0.7, 0.9],
            ground: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: [f64; 3],
    /// Degrees in [0,360); 0 looks along +z, positive turns toward +x.
    pub yaw_deg: f64,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
}

impl CameraPose {
    pub const DEFAULT_FOV: f64 = 60.0;

    pub fn new(position: [f64; 3], yaw_deg: f64) -> Self {
        CameraPose {
            position,
            yaw_deg: yaw_deg.rem_euclid(360.0),
            fov_deg: Self::DEFAULT_FOV,
        }
    }
}

/// Builds `6·complexity` billboards, `complexity` per 60° sector of yaw, at
/// 5–30 m from the origin with their base on the ground.
pub fn build_scene(seed: u64, complexity: usize) -> Result<SceneSpec> {
    let count = complexity * 6;
    if complexity == 0 || count > u8::MAX as usize {
        return Err(Error::InvalidArgument(format!(
            "complexity must be in 1..={}, got {complexity}",
            u8::MAX as usize / 6
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = SceneSpec {
        ground: Some([0.35, 0.33, 0.3]),
        ..SceneSpec::empty(seed)
    };
    let mut id = 1u8;
    for sector in 0..6 {
        for _ in 0..complexity {
            let yaw = (sector as f64 + rng.random::<f64>()) * SECTOR_DEG;
            let dist = rng.random_range(MIN_DEPTH_M..=MAX_DEPTH_M);
            let width = rng.random_range(1.5..5.0);
            let height = rng.random_range(1.5..6.0);
            let color = [
                rng.random_range(0.1..0.95),
                rng.random_range(0.1..0.95),
                rng.random_range(0.1..0.95),
            ];
            let pattern = match rng.random_range(0..3) {
                0 => Pattern::Solid,
                1 => Pattern::Stripes,
                _ => Pattern::Checker,
            };
            let r = yaw.to_radians();
            scene.billboards.push(Billboard {
                center: [dist * r.sin(), GROUND_Y + height / 2.0, dist * r.cos()],
                width,
                height,
                id,
                color,
                pattern,
            });
            id += 1;
        }
    }
    Ok(scene)
}
