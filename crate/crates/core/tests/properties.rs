mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use see360::clae::{digitize_angle, modulate, ConditionVector};
use see360::losses::{psnr, ssim_metric};
use see360::scene::{build_scene, render_view, CameraPose};
use see360::tensor::{conv2d_output_size, Conv2dSpec};
use see360::Tensor;

fn tensor(seed: u64, shape: &[usize]) -> Tensor<f64> {
    common::random(&mut ChaCha8Rng::seed_from_u64(seed), shape, -1.0, 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_output_shape_follows_formula(
        h in 3usize..12, w in 3usize..12, k in 1usize..4, stride in 1usize..3, pad in 0usize..2,
    ) {
        let x = tensor(1, &[1, 2, h, w]);
        let kernel = tensor(2, &[3, 2, k, k]);
        let y = x.conv2d(&kernel, Conv2dSpec { stride, pad }).unwrap();
        let oh = conv2d_output_size(h, k, stride, pad).unwrap();
        let ow = conv2d_output_size(w, k, stride, pad).unwrap();
        prop_assert_eq!(y.shape(), &[1, 3, oh, ow][..]);
        prop_assert_eq!(oh, (h + 2 * pad - k) / stride + 1);
    }

    #[test]
    fn digitization_is_monotone(a in 0.0f64..60.0, b in 0.0f64..60.0, delta in prop::sample::select(vec![12usize, 13])) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let i = digitize_angle(lo, 60.0, delta).unwrap();
        let j = digitize_angle(hi, 60.0, delta).unwrap();
        prop_assert!(i.index <= j.index);
        prop_assert_eq!(i.onehot.iter().map(|&v| v as usize).sum::<usize>(), 1);
        prop_assert_eq!(i.onehot[i.index], 1);
    }

    #[test]
    fn instance_norm_standardizes_each_map(seed in 0u64..500, h in 2usize..7, w in 2usize..7) {
        let x = tensor(seed, &[2, 3, h, w]).mul_scalar(3.0).add_scalar(0.7);
        let y = x.instance_norm(1e-5).unwrap();
        for map in y.data().chunks(h * w) {
            let n = map.len() as f64;
            let mean = map.iter().sum::<f64>() / n;
            let var = map.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn modulation_is_invertible(seed in 0u64..500) {
        let g = tensor(seed, &[2, 4, 3, 3]);
        let mu = tensor(seed + 1, &[2, 4, 3, 3]);
        let sigma = tensor(seed + 2, &[2, 4, 3, 3]).mul_scalar(0.5);
        let cond = ConditionVector { z: mu.clone(), mu: mu.clone(), sigma: sigma.clone() };
        let y = modulate(&g, &cond).unwrap();
        let back = y.sub(&mu).unwrap().div(&sigma.add_scalar(1.0)).unwrap();
        for (a, b) in back.data().iter().zip(g.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn metrics_are_symmetric(seed in 0u64..300, border in 0usize..3) {
        let a = common::random(&mut ChaCha8Rng::seed_from_u64(seed), &[1, 3, 16, 16], 0.0, 1.0);
        let b = common::random(&mut ChaCha8Rng::seed_from_u64(seed + 9), &[1, 3, 16, 16], 0.0, 1.0);
        prop_assert!((psnr(&a, &b, border).unwrap() - psnr(&b, &a, border).unwrap()).abs() < 1e-9);
        prop_assert!((ssim_metric(&a, &b, border).unwrap() - ssim_metric(&b, &a, border).unwrap()).abs() < 1e-9);
        prop_assert!((ssim_metric(&a, &a, border).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn metrics_degrade_with_noise(seed in 0u64..300, s1 in 0.01f64..0.1, extra in 0.01f64..0.2) {
        let a = common::random(&mut ChaCha8Rng::seed_from_u64(seed), &[1, 3, 16, 16], 0.2, 0.8);
        let noise = tensor(seed + 1, &[1, 3, 16, 16]);
        let near = a.add(&noise.mul_scalar(s1)).unwrap();
        let far = a.add(&noise.mul_scalar(s1 + extra)).unwrap();
        prop_assert!(psnr(&a, &near, 0).unwrap() > psnr(&a, &far, 0).unwrap());
        prop_assert!(ssim_metric(&a, &near, 0).unwrap() > ssim_metric(&a, &far, 0).unwrap());
    }

    #[test]
    fn segmentation_only_uses_scene_ids(seed in 0u64..40, yaw in 0.0f64..360.0, x in -1.0f64..1.0, z in -1.0f64..1.0) {
        let scene = build_scene(seed, 2).unwrap();
        let view = render_view(&scene, &CameraPose::new([x, 0.0, z], yaw), 24, 32).unwrap();
        let ids: Vec<u8> = scene.billboards.iter().map(|b| b.id).collect();
        prop_assert!(view.seg.iter().all(|&s| s == 0 || ids.contains(&s)));
    }
}

#[test]
fn digitization_reaches_every_bin() {
    for delta in [12usize, 13] {
        let mut seen = vec![false; delta];
        for k in 0..6000 {
            let theta = k as f64 * 60.0 / 6000.0;
            seen[digitize_angle(theta, 60.0, delta).unwrap().index] = true;
        }
        assert!(seen.iter().all(|&s| s), "δ={delta}: {seen:?}");
    }
}

#[test]
fn backward_is_deterministic() {
    let grads = || {
        let x = tensor(4, &[1, 2, 6, 6]).requires_grad(true);
        let k = tensor(5, &[3, 2, 3, 3]).requires_grad(true);
        let y = x.conv2d(&k, Conv2dSpec { stride: 1, pad: 1 }).unwrap().instance_norm(1e-5).unwrap();
        y.leaky_relu(0.2).square().sum().backward().unwrap();
        (x.grad().unwrap(), k.grad().unwrap())
    };
    assert_eq!(grads(), grads());
}
