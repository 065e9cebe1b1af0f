mod common;

use common::{max_abs_diff, param, rng, substitute, te, uniform};
use hfedit_core::networks::{DiscriminatorH, DiscriminatorI, Generator};
use hfedit_core::nn::Module;
use hfedit_core::{Ablation, ArchConfig};
use hfedit_tensor::gradcheck::GradCheck;
use hfedit_tensor::{no_grad, Tensor};

fn tiny() -> ArchConfig {
    ArchConfig {
        image_size: 16,
        in_channels: 3,
        n_down: 2,
        channel_widths: vec![3, 4, 4],
        n_au: 2,
        dit_levels: vec![1],
        d_base_width: 2,
    }
}

fn weights_of<M: Module>(m: &M) -> Vec<(String, Vec<f32>)> {
    let mut out = Vec::new();
    m.visit(&mut |p| out.push((p.name().to_string(), p.tensor().to_vec())));
    out
}

#[test]
fn desk_generator_keeps_shape_and_range() {
    let arch = ArchConfig::desk();
    let g = Generator::new(&arch, &Ablation::default(), &mut rng(1)).unwrap();
    let x = uniform(&[2, 3, 64, 64], -1.0, 1.0, 2);
    let u = uniform(&[2, 5], -1.0, 1.0, 3);
    let y = no_grad(|| g.forward(&x, &u)).unwrap();
    assert_eq!(y.shape(), &[2, 3, 64, 64]);
    assert!(y.to_vec().iter().all(|v| v.abs() < 1.0 && v.is_finite()));
}

#[test]
fn paper_geometry() {
    let arch = ArchConfig::paper();
    let g = Generator::new(&arch, &Ablation::default(), &mut rng(4)).unwrap();
    assert_eq!(param(&g, "G.fuse.0.weight").shape(), &[512, 512 + 17, 3, 3]);
    assert_eq!(param(&g, "G.fuse.2.weight").shape(), &[512, 2 * (512 + 17), 3, 3]);
    let x = uniform(&[1, 3, 128, 128], -1.0, 1.0, 5);
    let u = uniform(&[1, 17], -1.0, 1.0, 6);
    let y = no_grad(|| g.forward(&x, &u)).unwrap();
    assert_eq!(y.shape(), &[1, 3, 128, 128]);

    let di = DiscriminatorI::new(&arch, &mut rng(7)).unwrap();
    assert_eq!(di.trunk.len(), 6);
    let (score, au) = no_grad(|| di.forward(&x)).unwrap();
    assert_eq!(score.shape(), &[1, 1, 2, 2]);
    assert_eq!(au.shape(), &[1, 17]);
    let dh = DiscriminatorH::new(&arch, &mut rng(8)).unwrap();
    assert_eq!(param(&dh, "DH.trunk.5.weight").shape(), &[2048, 1024, 4, 4]);
    assert_eq!(no_grad(|| dh.forward(&x)).unwrap().shape(), &[1, 1, 2, 2]);
}

#[test]
fn desk_critics_end_in_two_by_two_maps() {
    let arch = ArchConfig::desk();
    let x = uniform(&[3, 3, 64, 64], -1.0, 1.0, 9);
    let di = DiscriminatorI::new(&arch, &mut rng(10)).unwrap();
    assert_eq!(di.trunk.len(), 5);
    let (score, au) = no_grad(|| di.forward(&x)).unwrap();
    assert_eq!(score.shape(), &[3, 1, 2, 2]);
    assert_eq!(au.shape(), &[3, 5]);
    let dh = DiscriminatorH::new(&arch, &mut rng(11)).unwrap();
    assert_eq!(no_grad(|| dh.forward(&x)).unwrap().shape(), &[3, 1, 2, 2]);
}

#[test]
fn fresh_generator_backward_reaches_every_parameter() {
    let arch = tiny();
    let g = Generator::new(&arch, &Ablation::default(), &mut rng(12)).unwrap();
    let x = uniform(&[2, 3, 16, 16], -1.0, 1.0, 13);
    let u = uniform(&[2, 2], -1.0, 1.0, 14);
    let y = g.forward(&x, &u).unwrap();
    y.mean_all().unwrap().backward().unwrap();
    g.visit(&mut |p| {
        let grad = p.grad().unwrap_or_else(|| panic!("{} has no gradient", p.name()));
        assert!(grad.to_vec().iter().all(|v| v.is_finite()), "{}", p.name());
    });
}

#[test]
fn zeroed_fusion_output_is_identity() {
    let arch = ArchConfig::desk();
    for multi in [true, false] {
        let ablation = Ablation {
            use_mul_au: multi,
            ..Ablation::default()
        };
        let mut g = Generator::new(&arch, &ablation, &mut rng(15)).unwrap();
        let w = g.fusion.last_conv_mut();
        let n = w.weight.numel();
        w.weight.set_data(vec![0.0; n]).unwrap();
        let z = uniform(&[2, 128, 4, 4], -2.0, 2.0, 16);
        let u = uniform(&[2, 5], -1.0, 1.0, 17);
        let out = no_grad(|| g.fusion.forward(&z, &u)).unwrap();
        assert_eq!(out.to_vec(), z.to_vec());
    }
}

#[test]
fn output_responds_to_each_au_entry() {
    let arch = ArchConfig::desk();
    let g = Generator::new(&arch, &Ablation::default(), &mut rng(18)).unwrap();
    let x = uniform(&[1, 3, 64, 64], -1.0, 1.0, 19);
    let base = no_grad(|| g.forward(&x, &Tensor::zeros(&[1, 5]))).unwrap();
    for k in 0..5 {
        let mut e = vec![0.0; 5];
        e[k] = 1.0;
        let moved = no_grad(|| g.forward(&x, &Tensor::from_vec(e, &[1, 5]).unwrap())).unwrap();
        assert!(max_abs_diff(&moved, &base) > 0.0, "entry {k}");
    }
}

#[test]
fn detail_skips_halve_decoder_widths_when_ablated() {
    let arch = ArchConfig::desk();
    let full = Generator::new(&arch, &Ablation::default(), &mut rng(20)).unwrap();
    let plain = Generator::new(&arch, &Ablation::parse("no-dit").unwrap(), &mut rng(20)).unwrap();
    assert!(plain.dit_levels().is_empty());
    // decoder stage i reads level 4 - i; levels 3, 2, 1 carry skips
    for (i, level) in [(1, 3), (2, 2), (3, 1)] {
        let w_full = param(&full, &format!("G.dec.{i}.weight"));
        let w_plain = param(&plain, &format!("G.dec.{i}.weight"));
        assert_eq!(w_full.shape()[0], 2 * arch.channel_widths[level]);
        assert_eq!(w_plain.shape()[0], arch.channel_widths[level]);
    }
    assert_eq!(
        param(&full, "G.dec.0.weight").shape(),
        param(&plain, "G.dec.0.weight").shape()
    );
    assert!(plain.num_params() < full.num_params());

    let x = uniform(&[1, 3, 64, 64], -1.0, 1.0, 21);
    let u = Tensor::zeros(&[1, 5]);
    let y = plain.forward(&x, &u).unwrap();
    y.mean_all().unwrap().backward().unwrap();
    assert_eq!(y.shape(), x.shape());
}

#[test]
fn single_fusion_ablation_shrinks_the_block() {
    let arch = ArchConfig::desk();
    let full = Generator::new(&arch, &Ablation::default(), &mut rng(22)).unwrap();
    let single = Generator::new(&arch, &Ablation::parse("no-mul-au").unwrap(), &mut rng(22)).unwrap();
    assert!(single.num_params() < full.num_params());
    let names: Vec<String> = single.parameters().iter().map(|p| p.name().to_string()).collect();
    assert!(names.iter().any(|n| n.starts_with("G.fuse.0")));
    assert!(!names
        .iter()
        .any(|n| n.starts_with("G.fuse.1") || n.starts_with("G.fuse.2")));
}

#[test]
fn skips_carry_only_detail() {
    let arch = ArchConfig::desk();
    let g = Generator::new(&arch, &Ablation::default(), &mut rng(23)).unwrap();
    let x = uniform(&[2, 3, 64, 64], -1.0, 1.0, 24);
    let u = uniform(&[2, 5], -1.0, 1.0, 25);
    let (_, skips) = no_grad(|| g.forward_with_skips(&x, &u)).unwrap();
    assert_eq!(skips.len(), 3);
    for s in &skips {
        let (h, w) = (s.dim(2), s.dim(3));
        let v = s.to_vec();
        for plane in v.chunks(h * w) {
            for i in (0..h).step_by(2) {
                for j in (0..w).step_by(2) {
                    let m = (plane[i * w + j]
                        + plane[i * w + j + 1]
                        + plane[(i + 1) * w + j]
                        + plane[(i + 1) * w + j + 1])
                        / 4.0;
                    assert!(m.abs() < 1e-4);
                }
            }
        }
    }
}

#[test]
fn construction_is_deterministic() {
    let arch = ArchConfig::paper();
    let a = Generator::new(&arch, &Ablation::default(), &mut rng(26)).unwrap();
    let b = Generator::new(&arch, &Ablation::default(), &mut rng(99)).unwrap();
    assert_eq!(a.num_params(), b.num_params());
    let desk = ArchConfig::desk();
    let c = DiscriminatorI::new(&desk, &mut rng(27)).unwrap();
    let d = DiscriminatorI::new(&desk, &mut rng(27)).unwrap();
    assert_eq!(weights_of(&c), weights_of(&d));
}

#[test]
fn parameter_names_are_unique() {
    let arch = ArchConfig::desk();
    let g = Generator::new(&arch, &Ablation::default(), &mut rng(28)).unwrap();
    let di = DiscriminatorI::new(&arch, &mut rng(29)).unwrap();
    let dh = DiscriminatorH::new(&arch, &mut rng(30)).unwrap();
    let mut names: Vec<String> = Vec::new();
    for m in [weights_of(&g), weights_of(&di), weights_of(&dh)] {
        names.extend(m.into_iter().map(|(n, _)| n));
    }
    let total = names.len();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), total);
}

#[test]
fn critic_bias_shifts_every_map_entry() {
    let arch = ArchConfig::desk();
    let mut di = DiscriminatorI::new(&arch, &mut rng(31)).unwrap();
    let x = uniform(&[2, 3, 64, 64], -1.0, 1.0, 32);
    let (before, au_before) = no_grad(|| di.forward(&x)).unwrap();
    di.critic.bias.as_mut().unwrap().set_data(vec![0.75]).unwrap();
    let (after, au_after) = no_grad(|| di.forward(&x)).unwrap();
    for (a, b) in after.to_vec().iter().zip(before.to_vec()) {
        assert!((a - b - 0.75).abs() < 1e-6);
    }
    assert_eq!(au_before.to_vec(), au_after.to_vec());
}

#[test]
fn detail_critic_maps_zero_to_zero() {
    let arch = ArchConfig::desk();
    let dh = DiscriminatorH::new(&arch, &mut rng(33)).unwrap();
    let s = no_grad(|| dh.forward(&Tensor::zeros(&[2, 3, 64, 64]))).unwrap();
    assert!(s.to_vec().iter().all(|&v| v == 0.0));
}

#[test]
fn shape_errors_are_reported() {
    let arch = ArchConfig::desk();
    let g = Generator::new(&arch, &Ablation::default(), &mut rng(34)).unwrap();
    let x = Tensor::zeros(&[1, 3, 64, 64]);
    assert!(g
        .forward(&Tensor::zeros(&[1, 3, 32, 32]), &Tensor::zeros(&[1, 5]))
        .is_err());
    assert!(g.forward(&x, &Tensor::zeros(&[1, 4])).is_err());
    assert!(g.forward(&x, &Tensor::zeros(&[2, 5])).is_err());
    let di = DiscriminatorI::new(&arch, &mut rng(35)).unwrap();
    assert!(di.forward(&Tensor::zeros(&[1, 1, 64, 64])).is_err());
    let dh = DiscriminatorH::new(&arch, &mut rng(36)).unwrap();
    assert!(dh.forward(&Tensor::zeros(&[64, 64])).is_err());

    let mut bad = ArchConfig::desk();
    bad.dit_levels = vec![4];
    assert!(Generator::new(&bad, &Ablation::default(), &mut rng(0)).is_err());
    bad = ArchConfig::desk();
    bad.image_size = 32;
    assert!(bad.validate().is_err());
}

#[test]
fn generator_graph_matches_finite_differences() {
    let arch = tiny();
    let g = Generator::new(&arch, &Ablation::default(), &mut rng(37)).unwrap();
    let x = uniform(&[2, 3, 16, 16], -1.0, 1.0, 38);
    let u = uniform(&[2, 2], -1.0, 1.0, 39);
    let g64 = g.cast(hfedit_tensor::DType::F64);
    let run = |t: &[Tensor]| {
        let m = if t[0].dtype() == hfedit_tensor::DType::F64 {
            &g64
        } else {
            &g
        };
        te(m.forward(&t[0], &t[1]))
    };
    let report = GradCheck::default()
        .with_eps(1e-5)
        .run(&[x.clone(), u.clone()], run)
        .unwrap();
    assert!(report.coords >= 100, "{}", report.coords);
    assert!(report.passes(1e-3), "{report:?}");

    for name in [
        "G.enc.1.weight",
        "G.fuse.2.weight",
        "G.dec.1.weight",
        "G.out.bias",
    ] {
        let w = param(&g, name);
        let report = GradCheck::default()
            .with_eps(1e-5)
            .run(&[w], |t| {
                let m = substitute(&g, name, &t[0]);
                let dt = t[0].dtype();
                te(m.forward(&x.to_dtype(dt), &u.to_dtype(dt)))
            })
            .unwrap();
        assert!(report.passes(1e-3), "{name}: {report:?}");
    }
}

#[test]
fn critic_graphs_match_finite_differences() {
    let arch = tiny();
    let di = DiscriminatorI::new(&arch, &mut rng(40)).unwrap();
    let dh = DiscriminatorH::new(&arch, &mut rng(41)).unwrap();
    let x = uniform(&[2, 3, 16, 16], -1.0, 1.0, 42);
    let di64 = di.cast(hfedit_tensor::DType::F64);
    let dh64 = dh.cast(hfedit_tensor::DType::F64);
    let wide = |t: &Tensor| t.dtype() == hfedit_tensor::DType::F64;

    let report = GradCheck::default()
        .with_eps(1e-5)
        .run(std::slice::from_ref(&x), |t| {
            let m = if wide(&t[0]) { &di64 } else { &di };
            let (s, a) = te(m.forward(&t[0]))?;
            Tensor::cat(&[&s.reshape(&[2, 4])?, &a], 1)
        })
        .unwrap();
    assert!(report.coords >= 100);
    assert!(report.passes(1e-3), "{report:?}");

    let report = GradCheck::default()
        .with_eps(1e-5)
        .run(std::slice::from_ref(&x), |t| {
            let m = if wide(&t[0]) { &dh64 } else { &dh };
            te(m.forward(&t[0]))
        })
        .unwrap();
    assert!(report.coords >= 100);
    assert!(report.passes(1e-3), "{report:?}");

    for name in ["DI.trunk.1.weight", "DI.au.weight", "DI.critic.weight"] {
        let report = GradCheck::default()
            .with_eps(1e-5)
            .run(&[param(&di, name)], |t| {
                let m = substitute(&di, name, &t[0]);
                let (s, a) = te(m.forward(&x.to_dtype(t[0].dtype())))?;
                s.sum_all().add(&a.sum_all())
            })
            .unwrap();
        assert!(report.passes(1e-3), "{name}: {report:?}");
    }
}
