mod common;

use see360::clae::cross_patch_corr;

#[test]
fn matches_brute_force_both_directions() {
    for seed in common::SEEDS {
        for patch in [2, 4] {
            let err = common::cross_patch_error(seed, patch).unwrap();
            assert!(err <= 1e-5, "seed {seed}, P={patch}: {err}");
        }
    }
}

#[test]
fn single_patch_is_full_map_correlation() {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(9);
    let x = common::random(&mut rng, &[1, 2, 4, 4], -1.0, 1.0);
    let y = common::random(&mut rng, &[1, 2, 4, 4], -1.0, 1.0);
    let s = cross_patch_corr(&x, &y, 4).unwrap();
    // whole X as one kernel: S[i,j] = Σ_c Σ_{a,b} X[c,a,b]·Y[c, i−a+2, j−b+2]
    let (xd, yd) = (x.data(), y.data());
    for i in 0..4 {
        for j in 0..4 {
            let mut acc = 0.0;
            for c in 0..2 {
                for a in 0..4 {
                    for b in 0..4 {
                        let (yi, yj) = (i as isize - a as isize + 2, j as isize - b as isize + 2);
                        if (0..4).contains(&yi) && (0..4).contains(&yj) {
                            acc += xd[c * 16 + a * 4 + b] * yd[c * 16 + yi as usize * 4 + yj as usize];
                        }
                    }
                }
            }
            assert!((s.data()[i * 4 + j] - acc).abs() < 1e-12);
        }
    }
}
