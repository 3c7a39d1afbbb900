use super::{Billboard, CameraPose, Pattern, SceneSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Height of the ground plane; cameras sit at y = 0.
pub const GROUND_Y: f64 = -1.6;
const NEAR: f64 = 1e-3;
const GROUND_TILE_M: f64 = 2.0;
const GROUND_TEXTURE_RANGE_M: f64 = 40.0;

/// Planar RGB in [0,1] (`3·H·W`) and per-pixel object ids (`H·W`).
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub height: usize,
    pub width: usize,
    pub rgb: Vec<f64>,
    pub seg: Vec<u8>,
}

impl RenderedView {
    pub fn rgb_tensor(&self) -> Tensor<f32> {
        let data = self.rgb.iter().map(|&v| v as f32).collect();
        Tensor::from_vec(&[3, self.height, self.width], data).expect("sized")
    }

    pub fn seg_tensor(&self) -> Tensor<f32> {
        let data = self.seg.iter().map(|&v| v as f32).collect();
        Tensor::from_vec(&[1, self.height, self.width], data).expect("sized")
    }

    /// RGB quantized to 8 bits, interleaved.
    pub fn rgb_bytes(&self) -> Vec<u8> {
        let plane = self.height * self.width;
        (0..plane)
            .flat_map(|i| (0..3).map(move |c| (c, i)))
            .map(|(c, i)| (self.rgb[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

type V3 = [f64; 3];

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

struct Camera {
    origin: V3,
    right: V3,
    up: V3,
    fwd: V3,
    focal: f64,
    cx: f64,
    cy: f64,
}

impl Camera {
    fn new(pose: &CameraPose, h: usize, w: usize) -> Self {
        let y = pose.yaw_deg.to_radians();
        Camera {
            origin: pose.position,
            right: [y.cos(), 0.0, -y.sin()],
            up: [0.0, 1.0, 0.0],
            fwd: [y.sin(), 0.0, y.cos()],
            focal: (w as f64 / 2.0) / (pose.fov_deg.to_radians() / 2.0).tan(),
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
        }
    }

    /// Ray through image point (u, v) with unit forward component, so the
    /// ray parameter equals camera depth.
    fn ray(&self, u: f64, v: f64) -> V3 {
        let x = (u - self.cx) / self.focal;
        let y = (self.cy - v) / self.focal;
        add(add(self.fwd, scale(self.right, x)), scale(self.up, y))
    }

    /// Image point and depth of a world point.
    fn project(&self, p: V3) -> (f64, f64, f64) {
        let d = sub(p, self.origin);
        let z = dot(d, self.fwd);
        (
            self.cx + self.focal * dot(d, self.right) / z,
            self.cy - self.focal * dot(d, self.up) / z,
            z,
        )
    }
}

/// Horizontal unit axis across the face of a billboard that faces the origin.
fn billboard_axis(b: &Billboard) -> V3 {
    let len = b.center[0].hypot(b.center[2]);
    if len < 1e-12 {
        return [1.0, 0.0, 0.0];
    }
    let n = [-b.center[0] / len, 0.0, -b.center[2] / len];
    [n[2], 0.0, -n[0]]
}

fn texture(b: &Billboard, s: f64, t: f64) -> V3 {
    let c = b.color;
    match b.pattern {
        Pattern::Solid => c,
        Pattern::Stripes => {
            if ((s * 6.0).floor() as i64) % 2 == 0 {
                c
            } else {
                scale(c, 0.55)
            }
        }
        Pattern::Checker => {
            if ((s * 4.0).floor() as i64 + (t * 4.0).floor() as i64) % 2 == 0 {
                c
            } else {
                add(scale(c, 0.6), [0.4; 3])
            }
        }
    }
}

fn ground_color(ground: V3, p: V3, dist: f64) -> V3 {
    if dist > GROUND_TEXTURE_RANGE_M {
        return ground;
    }
    let tile = (p[0] / GROUND_TILE_M).floor() as i64 + (p[2] / GROUND_TILE_M).floor() as i64;
    if tile.rem_euclid(2) == 0 {
        ground
    } else {
        scale(ground, 0.75)
    }
}

/// Renders with `ss × ss` samples per pixel. Colors are averaged; the id
/// buffer keeps the last sample's winner, so it is only meaningful at
/// `ss = 1` (pixel-center sampling).
fn rasterize(scene: &SceneSpec, cam: &Camera, h: usize, w: usize, ss: usize) -> (Vec<f64>, Vec<u8>) {
    let (sh, sw) = (h * ss, w * ss);
    let step = 1.0 / ss as f64;
    let sample_uv = |sx: usize, sy: usize| ((sx as f64 + 0.5) * step, (sy as f64 + 0.5) * step);

    let mut depth = vec![f64::INFINITY; sh * sw];
    let mut color = vec![scene.background; sh * sw];
    let mut ids = vec![0u8; sh * sw];

    if let Some(ground) = scene.ground {
        for sy in 0..sh {
            for sx in 0..sw {
                let (u, v) = sample_uv(sx, sy);
                let d = cam.ray(u, v);
                if d[1] >= 0.0 {
                    continue;
                }
                let t = (GROUND_Y - cam.origin[1]) / d[1];
                if t > NEAR {
                    let p = add(cam.origin, scale(d, t));
                    let off = sub(p, cam.origin);
                    let i = sy * sw + sx;
                    depth[i] = t;
                    color[i] = ground_color(ground, p, off[0].hypot(off[2]));
                }
            }
        }
    }

    for b in &scene.billboards {
        let axis = billboard_axis(b);
        let normal = [axis[2], 0.0, -axis[0]];
        let half_w = scale(axis, b.width / 2.0);
        let corners = [
            add(add(b.center, half_w), [0.0, b.height / 2.0, 0.0]),
            add(sub(b.center, half_w), [0.0, b.height / 2.0, 0.0]),
            add(add(b.center, half_w), [0.0, -b.height / 2.0, 0.0]),
            add(sub(b.center, half_w), [0.0, -b.height / 2.0, 0.0]),
        ];
        let proj: Vec<_> = corners.iter().map(|&p| cam.project(p)).collect();
        if proj.iter().all(|p| p.2 <= NEAR) {
            continue;
        }
        let (x0, x1, y0, y1) = if proj.iter().all(|p| p.2 > NEAR) {
            let min_u = proj.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let max_u = proj.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            let min_v = proj.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            let max_v = proj.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            let clamp = |x: f64, n: usize| (x * ss as f64).floor().clamp(0.0, n as f64) as usize;
            (
                clamp(min_u, sw),
                (clamp(max_u, sw) + 1).min(sw),
                clamp(min_v, sh),
                (clamp(max_v, sh) + 1).min(sh),
            )
        } else {
            (0, sw, 0, sh)
        };
        let rel = sub(b.center, cam.origin);
        for sy in y0..y1 {
            for sx in x0..x1 {
                let (u, v) = sample_uv(sx, sy);
                let d = cam.ray(u, v);
                let denom = dot(d, normal);
                if denom.abs() < 1e-12 {
                    continue;
                }
                let t = dot(rel, normal) / denom;
                let i = sy * sw + sx;
                if t <= NEAR || t >= depth[i] {
                    continue;
                }
                let hit = sub(add(cam.origin, scale(d, t)), b.center);
                let s = dot(hit, axis) / b.width + 0.5;
                let tt = hit[1] / b.height + 0.5;
                if !(0.0..1.0).contains(&s) || !(0.0..1.0).contains(&tt) {
                    continue;
                }
                depth[i] = t;
                color[i] = texture(b, s, tt);
                ids[i] = b.id;
            }
        }
    }

    let mut rgb = vec![0.0; 3 * h * w];
    let norm = 1.0 / (ss * ss) as f64;
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for dy in 0..ss {
                for dx in 0..ss {
                    acc = add(acc, color[(y * ss + dy) * sw + x * ss + dx]);
                }
            }
            for c in 0..3 {
                rgb[c * h * w + y * w + x] = acc[c] * norm;
            }
        }
    }
    let seg = if ss == 1 { ids } else { Vec::new() };
    (rgb, seg)
}

/// Pinhole render: RGB with 2×2 supersampling, ids sampled at pixel centers.
pub fn render_view(scene: &SceneSpec, pose: &CameraPose, height: usize, width: usize) -> Result<RenderedView> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("render size must be positive".into()));
    }
    if !(pose.fov_deg > 0.0 && pose.fov_deg < 180.0) || pose.position.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid camera pose {pose:?}")));
    }
    let cam = Camera::new(pose, height, width);
    let (rgb, _) = rasterize(scene, &cam, height, width, 2);
    let (_, seg) = rasterize(scene, &cam, height, width, 1);
    Ok(RenderedView {
        height,
        width,
        rgb,
        seg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::build_scene;

    fn board(center: V3, width: f64, height: f64, id: u8) -> Billboard {
        Billboard {
            center,
            width,
            height,
            id,
            color: [0.9, 0.1, 0.1],
            pattern: Pattern::Solid,
        }
    }

    #[test]
    fn empty_scene_is_background() {
        let s = SceneSpec::empty(0);
        let v = render_view(&s, &CameraPose::new([0.0; 3], 10.0), 48, 64).unwrap();
        assert!(v.seg.iter().all(|&i| i == 0));
        for c in 0..3 {
            assert!(v.rgb[c * 3072..(c + 1) * 3072]
                .iter()
                .all(|&x| (x - s.background[c]).abs() < 1e-12));
        }
    }

    #[test]
    fn straight_ahead_projects_to_center() {
        let mut s = SceneSpec::empty(0);
        s.billboards.push(board([0.0, 0.0, 10.0], 1.0, 1.0, 5));
        let v = render_view(&s, &CameraPose::new([0.0; 3], 0.0), 48, 64).unwrap();
        assert_eq!(v.seg[24 * 64 + 32], 5);
        // f = 32/tan 30° ≈ 55.43, so 0.5 m at 10 m spans ±2.77 px around (32, 24)
        let row: Vec<usize> = (0..64).filter(|&x| v.seg[24 * 64 + x] == 5).collect();
        assert_eq!(row, (29..=34).collect::<Vec<_>>());
        let col: Vec<usize> = (0..48).filter(|&y| v.seg[y * 64 + 32] == 5).collect();
        assert_eq!(col, (21..=26).collect::<Vec<_>>());
    }

    #[test]
    fn near_occludes_far() {
        let mut s = SceneSpec::empty(0);
        s.billboards.push(board([0.0, 0.0, 20.0], 2.0, 2.0, 1));
        s.billboards.push(board([0.0, 0.0, 8.0], 3.0, 3.0, 2));
        let v = render_view(&s, &CameraPose::new([0.0; 3], 0.0), 48, 64).unwrap();
        assert!(!v.seg.contains(&1));
        assert!(v.seg.contains(&2));
        s.billboards.reverse();
        let w = render_view(&s, &CameraPose::new([0.0; 3], 0.0), 48, 64).unwrap();
        assert_eq!(v.seg, w.seg);
    }

    #[test]
    fn ids_subset_of_scene() {
        let s = build_scene(4, 3).unwrap();
        let ids: Vec<u8> = s.billboards.iter().map(|b| b.id).collect();
        for yaw in [0.0, 95.0, 200.0] {
            let v = render_view(&s, &CameraPose::new([1.5, 0.0, -1.5], yaw), 48, 64).unwrap();
            assert!(v.seg.iter().all(|i| *i == 0 || ids.contains(i)));
            assert!(v.rgb.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn behind_camera_invisible() {
        let mut s = SceneSpec::empty(0);
        s.billboards.push(board([0.0, 0.0, -10.0], 4.0, 4.0, 3));
        let v = render_view(&s, &CameraPose::new([0.0; 3], 0.0), 48, 64).unwrap();
        assert!(v.seg.iter().all(|&i| i == 0));
    }

    #[test]
    fn horizon_splits_ground_and_sky() {
        let s = SceneSpec {
            ground: Some([0.2, 0.2, 0.2]),
            ..SceneSpec::empty(0)
        };
        let v = render_view(&s, &CameraPose::new([0.0; 3], 0.0), 48, 64).unwrap();
        let g = v.rgb[47 * 64 + 10];
        let sky = v.rgb[10];
        assert!((sky - s.background[0]).abs() < 1e-12);
        assert!((g - s.background[0]).abs() > 0.05);
    }
}
