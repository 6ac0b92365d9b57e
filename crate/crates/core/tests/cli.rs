mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{tiny_config, write_images};
use noise_transfer::config::{Pairing, TrainConfig};
use noise_transfer::image::{Image, NoiseLevelMap};
use noise_transfer::manifest::Manifest;
use noise_transfer::training::{files, read_metrics};
use noise_transfer::Checkpoint32;

fn run(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_noise-transfer"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    out
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, cfg: &TrainConfig) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

#[test]
fn synthesize_writes_pairs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    write_images(&images, 10, 3, 24, 24, 0);
    std::fs::write(images.join("broken.png"), b"not an image").unwrap();
    let cfg = TrainConfig {
        pairing: Pairing::Camera,
        patches_per_image: 4,
        ..tiny_config()
    };
    let config = write_config(dir.path(), "cfg.toml", &cfg);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "--config",
            s(&config),
            "--out-dir",
            s(out),
            "synthesize",
            s(&images),
        ]);
    }
    let m = Manifest::load(&a.join("manifest.json")).unwrap();
    assert_eq!(m.entries.len(), 40);
    assert_eq!(m.run_seed, cfg.seed);
    assert_eq!(m.config_hash, cfg.synthesis_hash());
    for e in &m.entries {
        assert!(e.sigma_s > 0.0 && e.sigma_s <= 0.06);
        assert!(e.sigma_c > 0.0 && e.sigma_c <= 0.03);
        assert!(!e.source.to_str().unwrap().contains("broken"));
        let map = e.map.as_ref().unwrap();
        let bytes_a = std::fs::read(m.resolve(map)).unwrap();
        let bytes_b = std::fs::read(b.join(map)).unwrap();
        assert_eq!(bytes_a, bytes_b);
        let target = Image::<f32>::load(&m.resolve(e.target.as_ref().unwrap()), Some(3)).unwrap();
        assert_eq!(target.dims(), (16, 16));
    }
    let ds = m.dataset::<f32>(3).unwrap();
    assert_eq!(ds.len(), 40);
}

#[test]
fn train_resume_and_ablation_flags() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    write_images(&images, 3, 3, 20, 20, 100);
    let cfg = TrainConfig {
        total_iters: 100,
        checkpoint_every: 50,
        lr_halve_at: 60,
        long_skip_last_iters: 30,
        ..tiny_config()
    };
    let config = write_config(dir.path(), "cfg.toml", &cfg);
    let data = dir.path().join("data");
    ok(&[
        "--config",
        s(&config),
        "--out-dir",
        s(&data),
        "synthesize",
        s(&images),
    ]);
    let manifest = data.join("manifest.json");

    let full = dir.path().join("full");
    ok(&[
        "--config",
        s(&config),
        "--out-dir",
        s(&full),
        "train",
        s(&manifest),
    ]);
    assert!(full.join(files::checkpoint(50)).exists());
    assert!(full.join(files::FINAL).exists());
    let reference = read_metrics(&full.join(files::METRICS)).unwrap();
    assert_eq!(reference.len(), 100);

    let part = dir.path().join("part");
    ok(&[
        "--config",
        s(&config),
        "--out-dir",
        s(&part),
        "train",
        s(&manifest),
        "--stop-at",
        "50",
    ]);
    assert!(!part.join(files::FINAL).exists());
    let ck = part.join(files::checkpoint(50));
    ok(&[
        "--config",
        s(&config),
        "--out-dir",
        s(&part),
        "train",
        s(&manifest),
        "--resume",
        s(&ck),
    ]);
    assert_eq!(read_metrics(&part.join(files::METRICS)).unwrap(), reference);
    assert_eq!(
        std::fs::read(part.join(files::FINAL)).unwrap(),
        std::fs::read(full.join(files::FINAL)).unwrap()
    );

    let no_sa = TrainConfig {
        no_sa: true,
        total_iters: 5,
        ..cfg.clone()
    };
    let no_sa_cfg = write_config(dir.path(), "no_sa.toml", &no_sa);
    let out = dir.path().join("no_sa");
    ok(&[
        "--config",
        s(&no_sa_cfg),
        "--out-dir",
        s(&out),
        "train",
        s(&manifest),
    ]);
    let ck = Checkpoint32::load(&out.join(files::FINAL)).unwrap();
    assert!(ck.state.gen_params.paths().all(|p| !p.contains(".sa.")));
    assert!(ck.state.gen_params.paths().any(|p| p.contains(".ca.")));
}

#[test]
fn manifest_hash_mismatch_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    write_images(&images, 2, 3, 16, 16, 7);
    let cfg = tiny_config();
    let config = write_config(dir.path(), "cfg.toml", &cfg);
    let data = dir.path().join("data");
    ok(&[
        "--config",
        s(&config),
        "--out-dir",
        s(&data),
        "synthesize",
        s(&images),
    ]);
    let other = write_config(
        dir.path(),
        "other.toml",
        &TrainConfig {
            crf_gamma: 2.0,
            ..cfg
        },
    );
    let out_dir = dir.path().join("run");
    let out = run(&[
        "--config",
        s(&other),
        "--out-dir",
        s(&out_dir),
        "train",
        s(&data.join("manifest.json")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("hash"));
    assert!(!out_dir.exists());
}

#[test]
fn inference_commands() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    write_images(&images, 3, 3, 20, 20, 200);
    let cfg = TrainConfig {
        total_iters: 10,
        ..tiny_config()
    };
    let config = write_config(dir.path(), "cfg.toml", &cfg);
    let data = dir.path().join("data");
    ok(&[
        "--config",
        s(&config),
        "--out-dir",
        s(&data),
        "synthesize",
        s(&images),
    ]);
    let run_dir = dir.path().join("run");
    ok(&[
        "--config",
        s(&config),
        "--out-dir",
        s(&run_dir),
        "train",
        s(&data.join("manifest.json")),
    ]);
    let ck = run_dir.join(files::FINAL);

    // evaluation set: AWGN sources, clean targets
    let eval_set = dir.path().join("eval");
    ok(&[
        "--config",
        s(&config),
        "--out-dir",
        s(&eval_set),
        "synthesize",
        s(&images),
        "--eval-sigma",
        "0.1",
    ]);
    let report_dir = dir.path().join("report");
    let printed = ok(&[
        "--out-dir",
        s(&report_dir),
        "eval",
        s(&ck),
        s(&eval_set.join("manifest.json")),
    ]);
    assert!(printed.contains("6 rows"), "{printed}");
    let report = std::fs::read_to_string(report_dir.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 6 + 1);

    let inputs: Vec<PathBuf> = (0..3)
        .map(|i| images.join(format!("img{i:03}.png")))
        .collect();
    let mut args = vec!["denoise", s(&ck)];
    args.extend(inputs.iter().map(|p| s(p)));
    let printed = ok(&args);
    assert_eq!(printed.lines().count(), inputs.len());

    let transfer_dir = dir.path().join("transfer0");
    let mut args = vec![
        "--out-dir",
        s(&transfer_dir),
        "transfer",
        s(&ck),
        "--map",
        "0",
    ];
    args.extend(inputs.iter().map(|p| s(p)));
    ok(&args);
    for i in 0..3 {
        let d = std::fs::read(images.join(format!("img{i:03}_denoised.png"))).unwrap();
        let t = std::fs::read(transfer_dir.join(format!("img{i:03}_transfer.png"))).unwrap();
        assert_eq!(d, t);
    }

    let transfer_dir = dir.path().join("transfer1");
    let mut args = vec![
        "--out-dir",
        s(&transfer_dir),
        "--seed",
        "3",
        "transfer",
        s(&ck),
        "--map",
        "0.1",
    ];
    args.extend(inputs.iter().map(|p| s(p)));
    ok(&args);
    for i in 0..3 {
        let m = NoiseLevelMap::<f32>::load_npy(
            &transfer_dir.join(format!("img{i:03}_transfer_map.npy")),
        )
        .unwrap();
        assert_eq!(m.dims(), (20, 20));
        assert!(m.data().iter().all(|v| *v == 0.1));
    }

    // a model whose shape differs from the configured one is rejected
    let wider = write_config(
        dir.path(),
        "wider.toml",
        &TrainConfig {
            channels: 12,
            ..cfg
        },
    );
    let out = run(&["--config", s(&wider), "denoise", s(&ck), s(&inputs[0])]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("image.head.weight"), "{err}");
}
