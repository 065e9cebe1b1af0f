//! Finite-difference checks of every differentiable op.

use hfedit_tensor::gradcheck::GradCheck;
use hfedit_tensor::{grad, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-3;

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Random values kept at least `gap` away from zero.
fn away_from_zero(shape: &[usize], seed: u64, gap: f32) -> Tensor {
    let t = randn(shape, seed);
    let data = t
        .data()
        .iter()
        .map(|&v| if v.abs() < gap { v.signum() * gap + v } else { v })
        .collect();
    Tensor::from_vec(data, shape).unwrap()
}

fn check(inputs: &[Tensor], f: impl Fn(&[Tensor]) -> hfedit_tensor::Result<Tensor>) {
    let report = GradCheck::default().run(inputs, f).unwrap();
    assert!(report.coords >= 1);
    assert!(report.passes(TOL), "{report:?}");
}

#[test]
fn conv2d_input_gradient_of_sum() {
    let x = randn(&[2, 3, 8, 8], 1);
    let w = randn(&[4, 3, 4, 4], 2).scale(0.3);
    let report = GradCheck::default()
        .run(&[x], |t| {
            Ok(t[0].conv2d(&w.to_dtype(t[0].dtype()), None, 2, 1)?.sum_all())
        })
        .unwrap();
    assert!(report.coords >= 100);
    assert!(report.passes(TOL), "{report:?}");
}

#[test]
fn conv2d_all_arguments() {
    let x = randn(&[2, 3, 8, 8], 3);
    let w = randn(&[4, 3, 4, 4], 4).scale(0.3);
    let b = randn(&[4], 5);
    check(&[x, w, b], |t| t[0].conv2d(&t[1], Some(&t[2]), 2, 1));
}

#[test]
fn wide_filter_banks() {
    let x = randn(&[2, 3, 8, 8], 40);
    let w = randn(&[6, 3, 4, 4], 41).scale(0.3);
    let b = randn(&[6], 42);
    check(&[x.clone(), w.clone(), b], |t| {
        t[0].conv2d(&t[1], Some(&t[2]), 2, 1)
    });
    let z = randn(&[2, 6, 4, 4], 43);
    let wt = randn(&[6, 5, 4, 4], 44).scale(0.3);
    check(&[z, wt], |t| t[0].conv_transpose2d(&t[1], None, 2, 1));
}

#[test]
fn conv2d_same_padding() {
    let x = randn(&[1, 2, 7, 7], 6);
    let w = randn(&[3, 2, 3, 3], 7).scale(0.3);
    check(&[x, w], |t| t[0].conv2d(&t[1], None, 1, 1));
}

#[test]
fn conv_transpose_all_arguments() {
    let x = randn(&[2, 4, 4, 4], 8);
    let w = randn(&[4, 3, 4, 4], 9).scale(0.3);
    let b = randn(&[3], 10);
    check(&[x, w, b], |t| t[0].conv_transpose2d(&t[1], Some(&t[2]), 2, 1));
}

#[test]
fn instance_norm_all_arguments() {
    let x = randn(&[2, 4, 6, 6], 11);
    let g = randn(&[4], 12).shift(1.0);
    let b = randn(&[4], 13);
    check(&[x, g, b], |t| t[0].instance_norm(&t[1], &t[2], 1e-5));
}

#[test]
fn activations_away_from_kinks() {
    let x = away_from_zero(&[3, 50], 14, 1e-2);
    check(std::slice::from_ref(&x), |t| Ok(t[0].leaky_relu(0.2)));
    check(std::slice::from_ref(&x), |t| Ok(t[0].relu()));
    check(std::slice::from_ref(&x), |t| Ok(t[0].tanh()));
    check(std::slice::from_ref(&x), |t| Ok(t[0].abs()));
}

#[test]
fn elementwise_arithmetic_with_broadcasting() {
    let a = randn(&[2, 3, 4, 4], 15);
    let b = away_from_zero(&[1, 3, 1, 1], 16, 0.5);
    check(&[a.clone(), b.clone()], |t| t[0].add(&t[1]));
    check(&[a.clone(), b.clone()], |t| t[0].sub(&t[1]));
    check(&[a.clone(), b.clone()], |t| t[0].mul(&t[1]));
    check(&[a.clone(), b], |t| t[0].div(&t[1]));
    let pos = randn(&[40], 17).abs().shift(0.5);
    check(std::slice::from_ref(&pos), |t| Ok(t[0].sqrt()));
    check(std::slice::from_ref(&pos), |t| Ok(t[0].ln()));
    check(std::slice::from_ref(&pos), |t| Ok(t[0].powf(-0.5)));
    check(&[randn(&[40], 18)], |t| Ok(t[0].exp()));
}

#[test]
fn shape_ops() {
    let a = randn(&[2, 3, 4, 4], 19);
    check(std::slice::from_ref(&a), |t| t[0].sum_to(&[1, 3, 1, 1]));
    check(std::slice::from_ref(&a), |t| t[0].mean_keepdim(&[2, 3]));
    check(std::slice::from_ref(&a), |t| t[0].narrow(1, 1, 2));
    check(&[randn(&[1, 3, 1, 1], 20)], |t| t[0].broadcast_to(&[2, 3, 4, 4]));
    let b = randn(&[2, 2, 4, 4], 21);
    check(&[a, b], |t| t[0].concat_channels(&t[1]));
}

#[test]
fn composite_conv_norm_activation_mean() {
    let x = randn(&[2, 3, 8, 8], 22);
    let w = randn(&[5, 3, 4, 4], 23).scale(0.3);
    let b = randn(&[5], 24);
    let g = randn(&[5], 25).shift(1.0);
    let be = randn(&[5], 26);
    let report = GradCheck::default()
        .with_samples(45)
        .run(&[x, w, b, g, be], |t| {
            t[0].conv2d(&t[1], Some(&t[2]), 2, 1)?
                .instance_norm(&t[3], &t[4], 1e-5)?
                .leaky_relu(0.2)
                .mean_all()
        })
        .unwrap();
    assert!(report.coords >= 100 && report.coords <= 200);
    assert!(report.passes(TOL), "{report:?}");
}

#[test]
fn penalty_style_second_order_gradients() {
    // d/dw (|grad_x f(x, w)| - 1)^2 for a conv/norm/leaky critic, checked by
    // differencing a function that itself runs a first-order backward pass.
    let x = randn(&[2, 2, 8, 8], 27);
    let w1 = randn(&[3, 2, 4, 4], 28).scale(0.4);
    let w2 = randn(&[1, 3, 3, 3], 29).scale(0.4);
    let g = randn(&[3], 30).shift(1.0);
    let b = randn(&[3], 31);
    let report = GradCheck::default()
        .with_samples(30)
        .run(&[w1, w2, g, b], |t| {
            let xi = x.to_dtype(t[0].dtype()).into_leaf();
            let score = xi
                .conv2d(&t[0], None, 2, 1)?
                .instance_norm(&t[2], &t[3], 1e-5)?
                .leaky_relu(0.2)
                .conv2d(&t[1], None, 1, 1)?
                .sum_all();
            let gx = grad(&score, &[&xi], true)?.remove(0);
            let norm = gx.reshape(&[2, 128])?.square().sum_to(&[2, 1])?.sqrt();
            norm.shift(-1.0).square().mean_all()
        })
        .unwrap();
    assert!(report.coords >= 60);
    assert!(report.passes(TOL), "{report:?}");
}
