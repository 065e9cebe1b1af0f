use hfedit_core::{Ablation, ArchConfig, LossWeights, TrainConfig};

#[test]
fn presets() {
    let p = ArchConfig::paper();
    assert_eq!(
        (p.image_size, p.n_down, p.n_au, p.bottleneck_size()),
        (128, 5, 17, 4)
    );
    assert_eq!(p.channel_widths, [64, 128, 256, 512, 512, 512]);
    assert_eq!(p.dit_levels, [1, 2, 3]);
    assert_eq!(p.d_trunk_depth(), 6);
    let d = ArchConfig::desk();
    assert_eq!(
        (d.image_size, d.n_down, d.n_au, d.bottleneck_size()),
        (64, 4, 5, 4)
    );
    assert_eq!(d.d_trunk_depth(), 5);
    assert!(p.validate().is_ok() && d.validate().is_ok());

    let t = TrainConfig::paper();
    assert_eq!(
        (t.batch_size, t.epochs, t.decay_start_epoch, t.critic_iters),
        (16, 50, 31, 4)
    );
    assert_eq!((t.lr, t.beta1, t.beta2), (1e-4, 0.5, 0.999));
    let w = t.weights;
    assert_eq!(
        (w.lambda_gp, w.lambda1, w.lambda2, w.lambda3),
        (10.0, 150.0, 150.0, 30.0)
    );
    let t = TrainConfig::desk();
    assert_eq!((t.epochs, t.decay_start_epoch), (20, 11));
    assert!(TrainConfig::preset("laptop").is_err());
}

#[test]
fn validation_names_the_problem() {
    let mut a = ArchConfig::desk();
    a.channel_widths.pop();
    assert!(a.validate().unwrap_err().to_string().contains("channel_widths"));
    let mut a = ArchConfig::desk();
    a.image_size = 48;
    assert!(a.validate().unwrap_err().to_string().contains("power of two"));
    let mut a = ArchConfig::desk();
    a.dit_levels = vec![0];
    assert!(a.validate().is_err());

    let mut t = TrainConfig::desk();
    t.decay_start_epoch = 21;
    assert!(t
        .validate()
        .unwrap_err()
        .to_string()
        .contains("decay_start_epoch"));
    let mut t = TrainConfig::desk();
    t.critic_iters = 0;
    assert!(t.validate().is_err());
    let mut t = TrainConfig::desk();
    t.beta2 = 1.0;
    assert!(t.validate().is_err());
    assert!(LossWeights {
        lambda1: -1.0,
        ..LossWeights::default()
    }
    .validate()
    .is_err());
}

#[test]
fn toml_round_trip() {
    let mut t = TrainConfig::desk();
    t.seed = 42;
    t.ablation = Ablation::parse("no-dit+no-dh").unwrap();
    let text = t.to_toml();
    assert_eq!(TrainConfig::from_toml(&text).unwrap(), t);
    assert!(TrainConfig::from_toml(&text.replace("batch_size", "batchsize")).is_err());
}

#[test]
fn ablation_switches() {
    assert_eq!(Ablation::parse("full").unwrap(), Ablation::default());
    let a = Ablation::parse("no-dh + no-mul-au").unwrap();
    assert!(a.use_dit && !a.use_dh && !a.use_mul_au);
    assert!(Ablation::parse("no-wavelets").is_err());
}
