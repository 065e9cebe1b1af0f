use hfedit_core::wavelet::{
    dwt2, high_pass_reconstruct, idwt2, ll_only_reconstruct, subband_mosaic, Subbands,
};
use hfedit_tensor::gradcheck::GradCheck;
use hfedit_tensor::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_images(shape: &[usize], seed: u64) -> Tensor {
    Tensor::rand_uniform(shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.to_f64_vec()
        .iter()
        .zip(b.to_f64_vec())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Per-block separable filtering written out directly: rows with f_x,
/// columns with f_y, each filter normalized by 1/sqrt(2).
fn naive_band(x: &[f64], h: usize, w: usize, fx: [f64; 2], fy: [f64; 2]) -> Vec<f64> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = vec![0.0; h / 2 * (w / 2)];
    for i in 0..h / 2 {
        for j in 0..w / 2 {
            let mut acc = 0.0;
            for (dy, cy) in fy.iter().enumerate() {
                for (dx, cx) in fx.iter().enumerate() {
                    acc += cy * r * cx * r * x[(2 * i + dy) * w + 2 * j + dx];
                }
            }
            out[i * (w / 2) + j] = acc;
        }
    }
    out
}

#[test]
fn golden_two_by_two_block() {
    let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
    let s = dwt2(&x).unwrap();
    let v = |t: &Tensor| t.to_vec()[0];
    assert!((v(&s.ll) - 5.0).abs() < 1e-6);
    assert!((v(&s.hl) - 1.0).abs() < 1e-6);
    assert!((v(&s.lh) - 2.0).abs() < 1e-6);
    assert!(v(&s.hh).abs() < 1e-6);
}

#[test]
fn bands_match_separable_filtering() {
    let (h, w) = (6, 8);
    let x = rand_images(&[1, 1, h, w], 3);
    let data = x.to_f64_vec();
    let lo = [1.0, 1.0];
    let hi = [-1.0, 1.0];
    let s = dwt2(&x).unwrap();
    for (band, fx, fy) in [(&s.ll, lo, lo), (&s.lh, lo, hi), (&s.hl, hi, lo), (&s.hh, hi, hi)] {
        let want = naive_band(&data, h, w, fx, fy);
        for (a, b) in band.to_f64_vec().iter().zip(&want) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn inverse_and_energy() {
    let x = rand_images(&[2, 3, 16, 12], 4);
    let s = dwt2(&x).unwrap();
    assert_eq!(s.shape(), &[2, 3, 8, 6]);
    let back = idwt2(&s).unwrap();
    assert!(max_abs_diff(&back, &x) <= 1e-5);
    let e_in: f64 = x.to_f64_vec().iter().map(|v| v * v).sum();
    assert!((s.energy() - e_in).abs() / e_in <= 1e-4);
}

#[test]
fn detail_and_approximation_split_the_image() {
    let x = rand_images(&[2, 2, 8, 8], 5);
    let hp = high_pass_reconstruct(&x).unwrap();
    let lp = ll_only_reconstruct(&x).unwrap();
    assert!(max_abs_diff(&hp.add(&lp).unwrap(), &x) <= 1e-5);

    let (h, w) = (8, 8);
    let xd = x.to_f64_vec();
    let hd = hp.to_f64_vec();
    let ld = lp.to_f64_vec();
    for plane in 0..4 {
        let off = plane * h * w;
        for i in (0..h).step_by(2) {
            for j in (0..w).step_by(2) {
                let idx = [i * w + j, i * w + j + 1, (i + 1) * w + j, (i + 1) * w + j + 1];
                let mean: f64 = idx.iter().map(|&k| xd[off + k]).sum::<f64>() / 4.0;
                let hp_mean: f64 = idx.iter().map(|&k| hd[off + k]).sum::<f64>() / 4.0;
                assert!(hp_mean.abs() < 1e-6);
                for &k in &idx {
                    assert!((ld[off + k] - mean).abs() < 1e-6);
                }
            }
        }
    }
}

#[test]
fn constant_images_have_no_detail() {
    let x = Tensor::full(&[1, 3, 8, 8], 0.37);
    let s = dwt2(&x).unwrap();
    for band in [&s.lh, &s.hl, &s.hh] {
        assert!(band.to_vec().iter().all(|v| v.abs() < 1e-7));
    }
    let hp = high_pass_reconstruct(&x).unwrap();
    assert!(hp.to_vec().iter().all(|v| v.abs() < 1e-6));
}

#[test]
fn analysis_is_the_adjoint_of_synthesis() {
    let x = rand_images(&[1, 2, 6, 6], 6);
    let bands = Subbands {
        ll: rand_images(&[1, 2, 3, 3], 7),
        lh: rand_images(&[1, 2, 3, 3], 8),
        hl: rand_images(&[1, 2, 3, 3], 9),
        hh: rand_images(&[1, 2, 3, 3], 10),
    };
    let s = dwt2(&x).unwrap();
    let dot = |a: &Tensor, b: &Tensor| -> f64 {
        a.to_f64_vec()
            .iter()
            .zip(b.to_f64_vec())
            .map(|(p, q)| p * q)
            .sum()
    };
    let lhs = dot(&s.ll, &bands.ll) + dot(&s.lh, &bands.lh) + dot(&s.hl, &bands.hl) + dot(&s.hh, &bands.hh);
    let rhs = dot(&x, &idwt2(&bands).unwrap());
    assert!((lhs - rhs).abs() < 1e-5);
}

#[test]
fn rejects_odd_and_malformed_inputs() {
    assert!(dwt2(&Tensor::zeros(&[1, 1, 5, 4])).is_err());
    assert!(dwt2(&Tensor::zeros(&[1, 1, 4, 3])).is_err());
    assert!(dwt2(&Tensor::zeros(&[4, 4])).is_err());
    assert!(high_pass_reconstruct(&Tensor::zeros(&[1, 3, 7, 7])).is_err());
    let ok = Tensor::zeros(&[1, 1, 2, 2]);
    let bad = Subbands {
        ll: ok.clone(),
        lh: ok.clone(),
        hl: Tensor::zeros(&[1, 1, 2, 3]),
        hh: ok,
    };
    let err = idwt2(&bad).unwrap_err().to_string();
    assert!(err.contains("hl"), "{err}");
}

#[test]
fn high_pass_gradient_matches_differences() {
    let x = rand_images(&[2, 2, 8, 8], 11);
    let report = GradCheck::default()
        .run(&[x], |t| {
            Ok(high_pass_reconstruct(&t[0])
                .map_err(|e| match e {
                    hfedit_core::Error::Tensor(e) => e,
                    other => panic!("{other}"),
                })?
                .square())
        })
        .unwrap();
    assert!(report.coords >= 100);
    assert!(report.passes(1e-3), "{report:?}");
}

#[test]
fn mosaic_layout() {
    let flat = subband_mosaic(&Tensor::full(&[3, 8, 8], 0.5)).unwrap();
    assert_eq!(flat.shape(), &[3, 8, 8]);
    assert!(flat.to_vec().iter().all(|&v| v == 0.0));

    let img = rand_images(&[3, 8, 6], 12);
    let m = subband_mosaic(&img).unwrap();
    assert_eq!(m.shape(), &[3, 8, 6]);
    let v = m.to_vec();
    assert!(v.iter().all(|&p| (0.0..=1.0).contains(&p)));
    // top-left tile is LL
    let ll = dwt2(&img.reshape(&[1, 3, 8, 6]).unwrap()).unwrap().ll.to_vec();
    let (lo, hi) = ll
        .iter()
        .fold((f32::MAX, f32::MIN), |(a, b), &x| (a.min(x), b.max(x)));
    let expect = (ll[0] - lo) / (hi - lo);
    assert!((v[0] - expect).abs() < 1e-6);
    assert!(subband_mosaic(&Tensor::zeros(&[3, 7, 8])).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn round_trip_on_random_sizes(hh in 1usize..6, ww in 1usize..6, c in 1usize..4, seed in 0u64..1000) {
        let x = rand_images(&[1, c, 2 * hh, 2 * ww], seed);
        let s = dwt2(&x).unwrap();
        prop_assert!(max_abs_diff(&idwt2(&s).unwrap(), &x) <= 1e-5);
        let e: f64 = x.to_f64_vec().iter().map(|v| v * v).sum();
        prop_assert!((s.energy() - e).abs() <= 1e-4 * e.max(1e-12));
    }

    #[test]
    fn transform_is_linear(seed in 0u64..1000, a in -3.0f32..3.0) {
        let x = rand_images(&[1, 1, 4, 4], seed);
        let y = rand_images(&[1, 1, 4, 4], seed + 1);
        let lhs = high_pass_reconstruct(&x.scale(a).add(&y).unwrap()).unwrap();
        let rhs = high_pass_reconstruct(&x).unwrap().scale(a).add(&high_pass_reconstruct(&y).unwrap()).unwrap();
        prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-5);
    }
}
