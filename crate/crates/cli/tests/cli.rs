use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hfedit_cli::eval::{pair_partners, report, run_pairs};
use hfedit_cli::settings::{resolve_train_config, TrainOverrides};
use hfedit_core::imageio::{load_png, save_png};
use hfedit_core::networks::ImageEditor;
use hfedit_core::nn::Module;
use hfedit_core::synthfaces::{render_face, Dataset, IdentityParams};
use hfedit_core::trainer::TrainState;
use hfedit_core::{Ablation, TrainConfig};
use hfedit_tensor::Tensor;

fn hfedit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hfedit"))
        .args(args)
        .env_remove(hfedit_cli::OUT_ROOT_ENV)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = hfedit(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Exit status is nonzero and stderr ends with one `hfedit: error[..]` line.
fn fails(args: &[&str]) -> String {
    let out = hfedit(args);
    assert!(!out.status.success(), "{args:?} succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    let last = err.lines().last().unwrap_or_default().to_string();
    assert!(last.starts_with("hfedit: error["), "{err}");
    last
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(
        &path,
        r#"
preset = "desk"
batch_size = 4
epochs = 2
decay_start_epoch = 2

[arch]
image_size = 32
n_down = 3
channel_widths = [4, 8, 8, 8]
dit_levels = [1, 2]
d_base_width = 4
"#,
    )
    .unwrap();
    path
}

fn synth(dir: &Path, seed: u64) -> PathBuf {
    let data = dir.join(format!("data-{seed}"));
    ok(&[
        "synth",
        "--people",
        "2",
        "--per-person",
        "4",
        "--size",
        "32",
        "--seed",
        &seed.to_string(),
        "--out",
        s(&data),
    ]);
    data
}

#[test]
fn synth_is_reproducible_and_validates_size() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), 3);
    let b = dir.path().join("again");
    ok(&[
        "synth",
        "--people",
        "2",
        "--per-person",
        "4",
        "--size",
        "32",
        "--seed",
        "3",
        "--out",
        s(&b),
    ]);
    for f in ["labels.jsonl", "images/000005.png"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap()
        );
    }
    assert!(a.join("config.toml").exists() && a.join("VERSION").exists());
    let line = fails(&["synth", "--size", "33", "--out", s(&dir.path().join("odd"))]);
    assert!(line.contains("even"), "{line}");
}

#[test]
fn train_resume_edit_eval_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 1);
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&run),
        "--config",
        s(&cfg),
        "--stop-after",
        "1",
        "--quiet",
    ]);
    assert!(run.join("checkpoints/epoch-001/manifest.json").exists());
    assert!(!run.join("checkpoints/final").exists());
    let line = fails(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&run),
        "--config",
        s(&cfg),
        "--quiet",
    ]);
    assert!(line.contains("--resume"), "{line}");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&run),
        "--config",
        s(&cfg),
        "--resume",
        "--quiet",
    ]);

    let log = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    let steps: Vec<u64> = log
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(steps, (1..=4).collect::<Vec<_>>());
    for f in [
        "config.toml",
        "VERSION",
        "samples/epoch-001.png",
        "samples/epoch-002.png",
        "checkpoints/final/params.bin",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let snap = TrainConfig::from_toml(&std::fs::read_to_string(run.join("config.toml")).unwrap()).unwrap();
    assert_eq!(snap.arch.image_size, 32);
    let grid = load_png(run.join("samples/epoch-002.png")).unwrap();
    assert_eq!(grid.shape(), &[3, 64, 8 * 32]);

    let ckpt = run.join("checkpoints/final");
    let input = data.join("images/000002.png");
    let strip = dir.path().join("strip");
    ok(&[
        "edit",
        "--ckpt",
        s(&ckpt),
        "--input",
        s(&input),
        "--delta",
        "0=0.8,3=-0.2",
        "--steps",
        "4",
        "--out",
        s(&strip),
    ]);
    assert_eq!(
        load_png(strip.join("edit.png")).unwrap().shape(),
        &[3, 32, 5 * 32]
    );
    let interp = dir.path().join("interp");
    ok(&[
        "edit",
        "--ckpt",
        s(&ckpt),
        "--input",
        s(&input),
        "--interp",
        "0,0,0,0,0;1,1,1,1,1",
        "--steps",
        "3",
        "--out",
        s(&interp),
    ]);
    assert_eq!(
        load_png(interp.join("edit.png")).unwrap().shape(),
        &[3, 32, 4 * 32]
    );
    let line = fails(&[
        "edit",
        "--ckpt",
        s(&ckpt),
        "--input",
        s(&input),
        "--delta",
        "7=1",
        "--out",
        s(&strip),
    ]);
    assert!(line.contains("out of range"), "{line}");
    fails(&[
        "edit",
        "--ckpt",
        s(&dir.path().join("nope")),
        "--input",
        s(&input),
        "--out",
        s(&strip),
    ]);

    let eval_a = dir.path().join("eval-a");
    let eval_b = dir.path().join("eval-b");
    for out in [&eval_a, &eval_b] {
        let args = [
            "eval",
            "--ckpt",
            s(&ckpt),
            "--data",
            s(&data),
            "--out",
            s(out),
            "--seed",
            "4",
            "--feature-samples",
            "64",
            "--feature-epochs",
            "1",
        ];
        let res = hfedit(&args);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        // a one-epoch feature net misses the accuracy bar, which is reported
        assert!(String::from_utf8_lossy(&res.stderr).contains("error[feature-net]"));
    }
    let report_a = std::fs::read_to_string(eval_a.join("report.csv")).unwrap();
    assert_eq!(
        report_a,
        std::fs::read_to_string(eval_b.join("report.csv")).unwrap()
    );
    let mut lines = report_a.lines();
    assert_eq!(lines.next().unwrap(), "is,fid,acd,ssim,psnr,l1,ed,n,seed");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..2], &["NA", "NA"]);
    assert!(row[2..7].iter().all(|v| v.parse::<f64>().unwrap().is_finite()));
}

#[test]
fn ablated_training_has_fewer_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let full = resolve_train_config(Some(&cfg), &TrainOverrides::default()).unwrap();
    let reduced = resolve_train_config(
        Some(&cfg),
        &TrainOverrides {
            ablation: Some("no-dit".into()),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(reduced.ablation, Ablation::parse("no-dit").unwrap());
    let (a, b) = (TrainState::new(full).unwrap(), TrainState::new(reduced).unwrap());
    assert!(b.g.num_params() < a.g.num_params());
}

#[test]
fn config_layers_merge_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let c = resolve_train_config(Some(&cfg), &TrainOverrides::default()).unwrap();
    assert_eq!(
        (c.batch_size, c.epochs, c.arch.image_size, c.arch.n_au),
        (4, 2, 32, 5)
    );
    assert_eq!(c.lr, TrainConfig::desk().lr);
    let c = resolve_train_config(
        Some(&cfg),
        &TrainOverrides {
            epochs: Some(3),
            seed: Some(8),
            lr: Some(2e-4),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!((c.epochs, c.seed, c.lr), (3, 8, 2e-4));
    assert_eq!(
        resolve_train_config(None, &TrainOverrides::default()).unwrap(),
        TrainConfig::desk()
    );
    let paper = TrainOverrides {
        preset: Some("paper".into()),
        ..Default::default()
    };
    assert_eq!(resolve_train_config(None, &paper).unwrap(), TrainConfig::paper());

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "epochs = 2\nepoch = 3\n").unwrap();
    assert!(resolve_train_config(Some(&bad), &TrainOverrides::default()).is_err());
    std::fs::write(&bad, "epochs = 2\ndecay_start_epoch = 5\n").unwrap();
    assert!(resolve_train_config(Some(&bad), &TrainOverrides::default()).is_err());
    let line = fails(&[
        "train",
        "--data",
        "x",
        "--out",
        s(&dir.path().join("r")),
        "--config",
        s(&bad),
    ]);
    assert!(line.starts_with("hfedit: error[invalid]"), "{line}");
}

#[test]
fn wavelet_mosaic_layout() {
    let dir = tempfile::tempdir().unwrap();
    let face = dir.path().join("face.png");
    let id = IdentityParams {
        face_hue: 0.4,
        face_aspect: 1.0,
        eye_spacing: 0.3,
        skin_tone: 0.6,
    };
    save_png(&face, &render_face(&id, &[0.5; 5], 64).unwrap()).unwrap();
    let out = dir.path().join("w");
    ok(&["wavelet", "--input", s(&face), "--out", s(&out)]);
    let m = load_png(out.join("mosaic.png")).unwrap();
    assert_eq!(m.shape(), &[3, 64, 64]);
    let v = m.to_vec();
    let hh: Vec<f32> = (0..3)
        .flat_map(|c| (32..64).flat_map(move |y| (32..64).map(move |x| (c, y, x))))
        .map(|(c, y, x)| v[c * 4096 + y * 64 + x])
        .collect();
    assert!(hh.iter().any(|&p| p != hh[0]));

    let flat = dir.path().join("flat.png");
    save_png(&flat, &Tensor::full(&[3, 32, 32], 0.3)).unwrap();
    ok(&["wavelet", "--input", s(&flat), "--out", s(&out)]);
    let m = load_png(out.join("mosaic.png")).unwrap().to_vec();
    for (y0, x0) in [(0, 16), (16, 0), (16, 16)] {
        let q: Vec<f32> = (0..3)
            .flat_map(|c| (y0..y0 + 16).flat_map(move |y| (x0..x0 + 16).map(move |x| c * 1024 + y * 32 + x)))
            .map(|i| m[i])
            .collect();
        assert!(q.iter().all(|&p| p == q[0]));
    }

    let odd = dir.path().join("odd.png");
    save_png(&odd, &Tensor::full(&[3, 31, 32], 0.0)).unwrap();
    let line = fails(&["wavelet", "--input", s(&odd), "--out", s(&out)]);
    assert!(line.contains("even"), "{line}");
}

#[test]
fn out_root_env_relocates_relative_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hfedit"))
        .args([
            "synth",
            "--people",
            "1",
            "--per-person",
            "2",
            "--size",
            "32",
            "--out",
            "ds",
        ])
        .env(hfedit_cli::OUT_ROOT_ENV, dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("ds/labels.jsonl").exists());
}

/// Returns its input whatever the AUs.
struct Identity;

impl ImageEditor for Identity {
    fn edit(&self, x: &Tensor, _: &Tensor) -> hfedit_core::Result<Tensor> {
        Ok(x.clone())
    }
}

#[test]
fn identity_editor_scores_perfect_reconstruction() {
    let dir = tempfile::tempdir().unwrap();
    let data = Dataset::load(synth(dir.path(), 2)).unwrap();
    let images = run_pairs(&Identity, &data, 8, 0).unwrap();
    let r = report(&images, None).unwrap();
    assert!((r.ssim - 1.0).abs() < 1e-9);
    assert_eq!(r.l1, 0.0);
    assert_eq!(r.acd, 0.0);
    assert_eq!((r.is_score, r.fid), (None, None));
    assert!(r.ed > 0.0);
    assert_eq!(
        run_pairs(&Identity, &data, 8, 0).unwrap().partners,
        images.partners
    );
}

#[test]
fn pairing_is_seeded_and_never_self() {
    let a = pair_partners(50, 7);
    assert_eq!(a, pair_partners(50, 7));
    assert_ne!(a, pair_partners(50, 8));
    assert!(a.iter().enumerate().all(|(i, &j)| i != j && j < 50));
}
