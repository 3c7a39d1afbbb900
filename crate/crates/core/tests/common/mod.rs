//! Checks shared by the integration tests and the acceptance runner.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use see360::layers::Module;
use see360::clae::{cross_patch_corr, digitize_angle, modulate, AngleCode, ConditionVector};
use see360::layers::LEAKY_SLOPE;
use see360::losses::{
    discriminator_loss, feat_match_loss, generator_adv_loss, laplacian_loss, pd_loss, sliced_w1,
    ssim, AdvConvention, FeatureExtractor,
};
use see360::model::{Generator, ModelConfig};
use see360::tensor::gradcheck::{check_gradients, check_module_gradients, DEFAULT_EPS};
use see360::tensor::Conv2dSpec;
use see360::warp::{affine_grid, grid_sample_bilinear};
use see360::{Result, Tensor};

pub const SEEDS: [u64; 5] = [11, 22, 33, 44, 55];
pub const GENERATOR_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// A mildly perturbed identity transform per batch entry, `[N,6]`.
fn random_theta(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
    let mut d = Vec::with_capacity(n * 6);
    for _ in 0..n {
        d.extend_from_slice(&[
            1.0 + rng.random_range(-0.2..0.2),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.3..0.3),
            1.0 + rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
        ]);
    }
    Tensor::from_vec(&[n, 6], d).unwrap()
}

type Case = (&'static str, fn(&mut ChaCha8Rng) -> Result<f64>);

fn case_conv(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = random(rng, &[2, 3, 7, 6], -1.0, 1.0);
    let k = random(rng, &[4, 3, 3, 3], -0.5, 0.5);
    let spec = Conv2dSpec { stride: 2, pad: 1 };
    Ok(check_gradients(&[x, k], |v| v[0].conv2d(&v[1], spec), DEFAULT_EPS, None)?.max_rel_err)
}

fn case_fc(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = random(rng, &[3, 5], -1.0, 1.0);
    let w = random(rng, &[4, 5], -1.0, 1.0);
    let b = random(rng, &[4], -1.0, 1.0);
    Ok(check_gradients(&[x, w, b], |v| v[0].fully_connected(&v[1], &v[2]), DEFAULT_EPS, None)?.max_rel_err)
}

fn case_leaky_relu(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = random(rng, &[2, 3, 4, 4], -1.0, 1.0);
    Ok(check_gradients(&[x], |v| Ok(v[0].leaky_relu(LEAKY_SLOPE)), DEFAULT_EPS, None)?.max_rel_err)
}

fn case_instance_norm(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = random(rng, &[2, 3, 4, 5], -2.0, 2.0);
    Ok(check_gradients(&[x], |v| v[0].instance_norm(1e-5), DEFAULT_EPS, None)?.max_rel_err)
}

fn case_upsample(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = random(rng, &[1, 2, 3, 4], -1.0, 1.0);
    Ok(check_gradients(&[x], |v| v[0].upsample_bilinear_x2(), DEFAULT_EPS, None)?.max_rel_err)
}

fn case_downsample(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = random(rng, &[1, 2, 6, 4], -1.0, 1.0);
    Ok(check_gradients(&[x], |v| v[0].downsample_x2(), DEFAULT_EPS, None)?.max_rel_err)
}

fn case_concat(rng: &mut ChaCha8Rng) -> Result<f64> {
    let a = random(rng, &[2, 1, 3, 3], -1.0, 1.0);
    let b = random(rng, &[2, 3, 3, 3], -1.0, 1.0);
    Ok(check_gradients(&[a, b], |v| Tensor::concat_channels(&[&v[0], &v[1]]), DEFAULT_EPS, None)?.max_rel_err)
}

fn case_grid_sample(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = random(rng, &[2, 2, 5, 6], -1.0, 1.0);
    // sample points away from the border so zero padding stays smooth
    let g = random(rng, &[2, 4, 3, 2], -0.9, 0.9);
    Ok(check_gradients(&[x, g], |v| grid_sample_bilinear(&v[0], &v[1]), DEFAULT_EPS, None)?.max_rel_err)
}

fn case_affine_grid(rng: &mut ChaCha8Rng) -> Result<f64> {
    let theta = random_theta(rng, 2);
    Ok(check_gradients(&[theta], |v| affine_grid(&v[0], 4, 5), DEFAULT_EPS, None)?.max_rel_err)
}

fn case_warp(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = random(rng, &[2, 2, 6, 6], -1.0, 1.0);
    let theta = random_theta(rng, 2);
    Ok(check_gradients(
        &[x, theta],
        |v| see360::warp::warp_affine(&v[0], &v[1]),
        DEFAULT_EPS,
        None,
    )?
    .max_rel_err)
}

fn case_modulate(rng: &mut ChaCha8Rng) -> Result<f64> {
    let g = random(rng, &[3, 6], -1.0, 1.0);
    let mu = random(rng, &[3, 6], -1.0, 1.0);
    let sigma = random(rng, &[3, 6], -1.0, 1.0);
    Ok(check_gradients(
        &[g, mu, sigma],
        |v| {
            let cond = ConditionVector {
                z: v[1].detach(),
                mu: v[1].clone(),
                sigma: v[2].clone(),
            };
            modulate(&v[0], &cond)
        },
        DEFAULT_EPS,
        None,
    )?
    .max_rel_err)
}

fn case_cross_patch(rng: &mut ChaCha8Rng) -> Result<f64> {
    let a = random(rng, &[1, 2, 4, 6], -1.0, 1.0);
    let b = random(rng, &[1, 2, 4, 6], -1.0, 1.0);
    Ok(check_gradients(&[a, b], |v| cross_patch_corr(&v[0], &v[1], 2), DEFAULT_EPS, None)?.max_rel_err)
}

fn case_ssim(rng: &mut ChaCha8Rng) -> Result<f64> {
    let a = random(rng, &[1, 3, 13, 12], 0.0, 1.0);
    let b = random(rng, &[1, 3, 13, 12], 0.0, 1.0);
    Ok(check_gradients(&[a, b], |v| ssim(&v[0], &v[1]), DEFAULT_EPS, Some(60))?.max_rel_err)
}

fn case_pd(rng: &mut ChaCha8Rng) -> Result<f64> {
    let a = random(rng, &[2, 3, 16, 16], 0.0, 1.0);
    let b = random(rng, &[2, 3, 16, 16], 0.0, 1.0);
    let ex = FeatureExtractor::<f64>::new(1234);
    Ok(check_gradients(&[a, b], |v| pd_loss(&v[0], &v[1], &ex), DEFAULT_EPS, Some(40))?.max_rel_err)
}

fn case_sliced_w1(rng: &mut ChaCha8Rng) -> Result<f64> {
    let a = random(rng, &[2, 3, 3, 3], -1.0, 1.0);
    let b = random(rng, &[2, 3, 3, 3], -1.0, 1.0);
    Ok(check_gradients(&[a, b], |v| sliced_w1(&v[0], &v[1]), DEFAULT_EPS, None)?.max_rel_err)
}

fn case_laplacian(rng: &mut ChaCha8Rng) -> Result<f64> {
    let a = random(rng, &[1, 3, 8, 8], 0.0, 1.0);
    let b = random(rng, &[1, 3, 8, 8], 0.0, 1.0);
    Ok(check_gradients(&[a, b], |v| laplacian_loss(&v[0], &v[1], 3), DEFAULT_EPS, None)?.max_rel_err)
}

fn case_feat_match(rng: &mut ChaCha8Rng) -> Result<f64> {
    // real features are constants: the loss detaches them
    let r1 = random(rng, &[1, 2, 3, 3], -1.0, 1.0);
    let r2 = random(rng, &[1, 3, 2, 2], -1.0, 1.0);
    let f1 = random(rng, &[1, 2, 3, 3], -1.0, 1.0);
    let f2 = random(rng, &[1, 3, 2, 2], -1.0, 1.0);
    Ok(check_gradients(
        &[f1, f2],
        |v| feat_match_loss(&[r1.clone(), r2.clone()], &[v[0].clone(), v[1].clone()]),
        DEFAULT_EPS,
        None,
    )?
    .max_rel_err)
}

fn case_adversarial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let real = random(rng, &[2, 1, 3, 3], -3.0, 3.0);
    let fake = random(rng, &[2, 1, 3, 3], -3.0, 3.0);
    let mut worst: f64 = 0.0;
    for conv in [AdvConvention::Standard, AdvConvention::AsPrinted] {
        let d = check_gradients(
            &[real.clone(), fake.clone()],
            |v| discriminator_loss(&v[0], &v[1], conv),
            DEFAULT_EPS,
            None,
        )?;
        let g = check_gradients(&[fake.clone()], |v| Ok(generator_adv_loss(&v[0], conv)), DEFAULT_EPS, None)?;
        worst = worst.max(d.max_rel_err).max(g.max_rel_err);
    }
    Ok(worst)
}

pub const OP_CASES: &[Case] = &[
    ("conv2d", case_conv),
    ("fully_connected", case_fc),
    ("leaky_relu", case_leaky_relu),
    ("instance_norm", case_instance_norm),
    ("upsample_bilinear_x2", case_upsample),
    ("downsample_x2", case_downsample),
    ("concat_channels", case_concat),
    ("grid_sample_bilinear", case_grid_sample),
    ("affine_grid", case_affine_grid),
    ("warp_affine", case_warp),
    ("modulate", case_modulate),
    ("cross_patch_corr", case_cross_patch),
    ("ssim", case_ssim),
    ("pd_loss", case_pd),
    ("sliced_w1", case_sliced_w1),
    ("laplacian_loss", case_laplacian),
    ("feat_match_loss", case_feat_match),
    ("adversarial", case_adversarial),
];

/// Worst relative error of each op over all seeds.
pub fn op_gradient_errors() -> Vec<(&'static str, f64)> {
    OP_CASES
        .iter()
        .map(|(name, case)| {
            let worst = SEEDS
                .iter()
                .map(|&s| case(&mut ChaCha8Rng::seed_from_u64(s)).unwrap_or(f64::INFINITY))
                .fold(0.0, f64::max);
            (*name, worst)
        })
        .collect()
}

pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        height: 16,
        width: 16,
        widths: [4, 8, 16],
        decoder_width: 4,
        latent_width: 8,
        ..ModelConfig::default()
    }
}

/// Worst relative error over sampled generator parameters on 16×16 inputs.
pub fn generator_gradient_error(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = tiny_model_config();
    let mut g = Generator::<f64>::new(&cfg, &mut rng)?;
    // Fresh weights (std 0.02) leave activations near 0 and the heads within
    // ~1e-5 of the identity, where ReLU kinks and pixel-center samples make
    // central differences meaningless. Move to a generic point first.
    g.visit_mut("", &mut |_, t| {
        let d: Vec<f64> = t.data().iter().map(|v| v * 10.0 + rng.random_range(-0.05..0.05)).collect();
        t.set_data(d).expect("same length");
    });
    for head in [&mut g.head_left, &mut g.head_right] {
        let n = head.fc2.bias.numel();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-0.15..0.15)).collect();
        head.fc2.bias.set_data(b)?;
    }
    let left = random(&mut rng, &[2, 3, 16, 16], 0.0, 1.0);
    let right = random(&mut rng, &[2, 3, 16, 16], 0.0, 1.0);
    let codes: Vec<AngleCode> = [20.0, 45.0]
        .iter()
        .map(|&t| digitize_angle(t, 60.0, cfg.delta))
        .collect::<Result<_>>()?;
    let codes = AngleCode::batch_tensor::<f64>(&codes)?;
    let r = check_module_gradients(
        &mut g,
        |g| Ok(g.forward(&left, &right, &codes)?.image),
        DEFAULT_EPS,
        Some(3),
    )?;
    Ok(r.max_rel_err)
}

/// Largest deviations of the warp from hand-built array oracles.
#[derive(Debug, Clone, Copy)]
pub struct WarpErrors {
    pub identity: f64,
    pub shift: f64,
    pub rotation_90: f64,
    pub composition_interior: f64,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn warp_oracle_errors(seed: u64) -> Result<WarpErrors> {
    use see360::warp::{warp_with, AffineParams};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, n) = (2, 9);
    let x = random(&mut rng, &[1, c, n, n], -1.0, 1.0);
    let xd = x.data();
    let at = |ch: usize, i: usize, j: usize| xd[(ch * n + i) * n + j];

    let identity = max_abs_diff(warp_with(&x, &AffineParams::identity())?.data(), xd);

    // one pixel right in the source: out[i][j] = x[i][j+1], zero past the edge
    let step = 2.0 / (n - 1) as f64;
    let shift = AffineParams::new([[1.0, 0.0, step], [0.0, 1.0, 0.0]], false)?;
    let mut want = vec![0.0; c * n * n];
    for ch in 0..c {
        for i in 0..n {
            for j in 0..n - 1 {
                want[(ch * n + i) * n + j] = at(ch, i, j + 1);
            }
        }
    }
    let shift_err = max_abs_diff(warp_with(&x, &shift)?.data(), &want);

    // sampling at (x', y') = (−y, x): out[i][j] = x[j][n−1−i]
    let mut want = vec![0.0; c * n * n];
    for ch in 0..c {
        for i in 0..n {
            for j in 0..n {
                want[(ch * n + i) * n + j] = at(ch, j, n - 1 - i);
            }
        }
    }
    let rot_err = max_abs_diff(warp_with(&x, &AffineParams::rotation_deg(90.0))?.data(), &want);

    // smooth content so two resamplings stay close to one
    let m = 48;
    let smooth: Vec<f64> = (0..m * m)
        .map(|k| {
            let (i, j) = ((k / m) as f64, (k % m) as f64);
            (0.05 * j + 0.03 * i).sin() + 0.5 * (0.04 * i).cos()
        })
        .collect();
    let s = Tensor::from_vec(&[1, 1, m, m], smooth)?;
    let t1 = AffineParams::new([[0.95, 0.1, 0.02], [-0.08, 1.02, -0.03]], false)?;
    let t2 = AffineParams::rotation_deg(12.0).compose(&AffineParams::scaling(0.9, 0.95));
    let twice = warp_with(&warp_with(&s, &t1)?, &t2)?;
    let once = warp_with(&s, &t1.compose(&t2))?;
    // interior: pixels whose every sample stays well inside the map
    let (lo, hi) = (m / 4, 3 * m / 4);
    let mut comp: f64 = 0.0;
    for i in lo..hi {
        for j in lo..hi {
            comp = comp.max((twice.data()[i * m + j] - once.data()[i * m + j]).abs());
        }
    }
    Ok(WarpErrors {
        identity,
        shift: shift_err,
        rotation_90: rot_err,
        composition_interior: comp,
    })
}

/// Direct quadruple loop over tiles, channels and kernel offsets.
pub fn cross_patch_brute_force(x: &Tensor<f64>, y: &Tensor<f64>, p: usize) -> Vec<f64> {
    let [n, c, h, w] = x.dims4().unwrap();
    let (xd, yd) = (x.data(), y.data());
    let idx = |b: usize, ch: usize, i: usize, j: usize| ((b * c + ch) * h + i) * w + j;
    let mut out = vec![0.0; n * h * w];
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for ti in 0..h / p {
                    for tj in 0..w / p {
                        for ch in 0..c {
                            for a in 0..p {
                                for q in 0..p {
                                    let yi = i as isize - a as isize + (p / 2) as isize;
                                    let yj = j as isize - q as isize + (p / 2) as isize;
                                    if yi < 0 || yj < 0 || yi >= h as isize || yj >= w as isize {
                                        continue;
                                    }
                                    acc += xd[idx(b, ch, ti * p + a, tj * p + q)]
                                        * yd[idx(b, ch, yi as usize, yj as usize)];
                                }
                            }
                        }
                    }
                }
                out[(b * h + i) * w + j] = acc;
            }
        }
    }
    out
}

/// Worst deviation of both correlation directions from the brute force on
/// random 8×8 features.
pub fn cross_patch_error(seed: u64, patch: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&mut rng, &[2, 3, 8, 8], -1.0, 1.0);
    let y = random(&mut rng, &[2, 3, 8, 8], -1.0, 1.0);
    let lr = max_abs_diff(cross_patch_corr(&x, &y, patch)?.data(), &cross_patch_brute_force(&x, &y, patch));
    let rl = max_abs_diff(cross_patch_corr(&y, &x, patch)?.data(), &cross_patch_brute_force(&y, &x, patch));
    Ok(lr.max(rl))
}

/// A small dataset (one training location plus the held-out one) at the
/// default model size.
pub fn small_dataset(dir: &std::path::Path) -> Result<see360::scene::DatasetManifest> {
    use see360::scene::{build_scene, emit_dataset, grid_locations};
    emit_dataset(&build_scene(5, 2)?, &grid_locations(1, true), 5, 48, 64, dir)
}

/// Service state backed by a freshly initialised network.
pub fn network_state(manifest: see360::scene::DatasetManifest, seed: u64) -> Result<see360::service::ServiceState> {
    let g = Generator::<f32>::new(&ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok(see360::service::ServiceState {
        model: see360::inference::LoadedModel::from_generator(&g),
        manifest,
    })
}

pub struct HttpReply {
    pub status: axum::http::StatusCode,
    pub headers: axum::http::HeaderMap,
    pub body: Vec<u8>,
}

impl HttpReply {
    pub fn header(&self, name: &str) -> &str {
        self.headers.get(name).and_then(|v| v.to_str().ok()).unwrap_or("")
    }
}

/// One GET through the router without opening a socket.
pub async fn get(app: &axum::Router, uri: &str) -> HttpReply {
    use http_body_util::BodyExt;
    use tower::ServiceExt;
    let req = axum::http::Request::get(uri).body(axum::body::Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let (parts, body) = resp.into_parts();
    HttpReply {
        status: parts.status,
        headers: parts.headers,
        body: body.collect().await.unwrap().to_bytes().to_vec(),
    }
}

/// Every file under `dir` with its bytes, for before/after comparisons.
pub fn snapshot(dir: &std::path::Path) -> Vec<(std::path::PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.clone(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Counts of RGB and segmentation PNGs under a dataset directory.
pub fn count_views(dir: &std::path::Path) -> (usize, usize) {
    let files = snapshot(dir);
    let name = |p: &std::path::Path| p.file_name().unwrap().to_string_lossy().into_owned();
    let seg = files.iter().filter(|(p, _)| name(p).ends_with("_seg.png")).count();
    let png = files.iter().filter(|(p, _)| name(p).ends_with(".png")).count();
    let rgb = png - seg;
    (rgb, seg)
}
