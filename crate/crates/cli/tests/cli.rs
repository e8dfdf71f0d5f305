use std::path::Path;
use std::process::{Command, Output};

use kinr::{Checkpoint, InrModel, TrainConfig};

fn kinr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: [&str; 18] = [
    "--set", "iterations=3",
    "--set", "encoder_channels=4",
    "--set", "encoder_blocks=1",
    "--set", "groups=2",
    "--set", "feature_dim=4",
    "--set", "pe_features=4",
    "--set", "hidden=8",
    "--set", "scales=[2,3]",
    "--set", "acs_fraction=0.25",
];

fn phantoms(path: &Path, count: &str) {
    let o = kinr(&[
        "phantom-gen", "--out", p(path), "--count", count, "--size", "16", "16", "--coils", "2", "--noise", "0.01",
        "--seed", "5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let o = kinr(&[]);
    assert_eq!(o.status.code(), Some(2));
    let text = String::from_utf8_lossy(&o.stderr).to_string() + &stdout(&o);
    assert!(text.contains("Usage"));
}

#[test]
fn unknown_subcommand_and_flag_exit_2() {
    assert_eq!(kinr(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(kinr(&["mask-gen", "--width", "10", "--scale", "2", "--bogus"]).status.code(), Some(2));
}

#[test]
fn mask_gen_selects_31_of_100() {
    let o = kinr(&["mask-gen", "--width", "100", "--scale", "4", "--acs", "0.08"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("# selected = 31"));
    let line = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(line.split(',').count(), 100);
    assert_eq!(line.split(',').filter(|v| *v == "1").count(), 31);
}

#[test]
fn missing_input_is_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = kinr(&["baseline", "--method", "zerofill", "--data", p(&dir.path().join("none.h5")), "--out", "x.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(String::from_utf8_lossy(&o.stderr).trim().lines().count(), 1);
}

#[test]
fn phantom_gen_is_idempotent_with_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.h5"), dir.path().join("b.h5"));
    phantoms(&a, "3");
    phantoms(&b, "3");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let meta = std::fs::read_to_string(dir.path().join("a.h5.meta.json")).unwrap();
    assert!(meta.contains("created_unix"));
}

#[test]
fn zero_iteration_training_writes_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.h5");
    let ckpt = dir.path().join("m.h5");
    phantoms(&data, "2");
    let mut args = vec!["train", "--data", p(&data), "--out", p(&ckpt)];
    args.extend(TINY);
    args.extend(["--set", "iterations=0", "--set", "seed=11"]);
    let o = kinr(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stored = Checkpoint::load(&ckpt).unwrap();
    let cfg = TrainConfig { iterations: 0, seed: 11, ..stored.config.clone() };
    let init = InrModel::<f32>::new(cfg.model_config(2), 11).unwrap();
    assert_eq!(stored, Checkpoint::from_model(&init, &cfg));
}

#[test]
fn config_file_and_overrides_merge() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.h5");
    let cfg_path = dir.path().join("c.toml");
    let ckpt = dir.path().join("m.h5");
    phantoms(&data, "2");
    std::fs::write(&cfg_path, "seed = 3\nlr0 = 0.005\niterations = 50\n").unwrap();
    let mut args = vec!["train", "--data", p(&data), "--config", p(&cfg_path), "--out", p(&ckpt)];
    args.extend(TINY);
    let o = kinr(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let c = Checkpoint::load(&ckpt).unwrap().config;
    assert_eq!((c.seed, c.lr0, c.iterations, c.hidden), (3, 0.005, 3, 8));

    let bad = kinr(&["train", "--data", p(&data), "--out", p(&ckpt), "--set", "bogus=1"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn train_reconstruct_evaluate_baseline_round() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.h5");
    let ckpt = dir.path().join("m.h5");
    phantoms(&data, "3");
    let mut args = vec!["train", "--data", p(&data), "--out", p(&ckpt)];
    args.extend(TINY);
    assert!(kinr(&args).status.success());
    assert!(dir.path().join("m.h5.loss.csv").exists());

    let out = dir.path().join("recon");
    let o = kinr(&["reconstruct", "--ckpt", p(&ckpt), "--data", p(&data), "--scale", "2", "--out", p(&out), "--record", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("record=1 scale=2 ssim="));
    for name in ["recon_0001.png", "error_0001.png"] {
        let img = image::open(out.join(name)).unwrap();
        assert_eq!((img.width(), img.height()), (16, 16));
    }

    let csv = dir.path().join("eval.csv");
    let o = kinr(&[
        "evaluate", "--ckpt", p(&ckpt), "--data", p(&data), "--scales", "2,3", "--baselines", "zerofill", "--out", p(&csv),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.contains("# hidden = 8"));
    assert!(text.contains("method,scale,mean_ssim,mean_psnr,n_records\n"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 5);
    let again = dir.path().join("eval2.csv");
    kinr(&[
        "evaluate", "--ckpt", p(&ckpt), "--data", p(&data), "--scales", "2,3", "--baselines", "zerofill", "--out", p(&again),
    ]);
    let strip = |s: String| s.lines().filter(|l| !l.starts_with("# checkpoint")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(text), strip(std::fs::read_to_string(&again).unwrap()));

    let base = dir.path().join("zf.csv");
    let o = kinr(&["baseline", "--method", "zerofill", "--data", p(&data), "--scales", "2", "--out", p(&base)]);
    assert!(o.status.success());
    assert!(std::fs::read_to_string(&base).unwrap().contains("zerofill,2,"));
}

#[test]
fn ablate_writes_five_arms() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.h5");
    let csv = dir.path().join("abl.csv");
    phantoms(&data, "3");
    let mut args = vec!["ablate", "--data", p(&data), "--holdout", "1", "--out", p(&csv)];
    args.extend(TINY);
    let o = kinr(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let arms: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(arms, ["none", "pe", "se", "pp", "all"]);
    assert!(stdout(&o).contains("reference"));
}
