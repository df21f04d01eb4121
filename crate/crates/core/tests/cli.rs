use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn luml1(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_luml1")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY_TRAIN: &str = "steps = 3\nbatch_size = 2\npatch_size = 12\ncorpus_count = 2\ncorpus_size = 16x16\n\
hidden_layers = 0\nwidth = 4\nval_count = 0\n";

#[test]
fn usage_errors_exit_1() {
    assert_eq!(luml1(&[]).status.code(), Some(1));
    assert_eq!(luml1(&["gen", "--count", "x", "--out", "/tmp/x"]).status.code(), Some(1));
    assert_eq!(luml1(&["gen", "--size", "8y8", "--out", "/tmp/x"]).status.code(), Some(1));
    assert_eq!(luml1(&["--help"]).status.code(), Some(0));
}

#[test]
fn gen_then_metric() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = luml1(&["gen", "--seed", "3", "--count", "2", "--size", "16x24", "--out", p(&data)]);
    assert!(out.status.success());
    let manifest = fs::read_to_string(data.join("manifest.txt")).unwrap();
    assert!(manifest.contains("0 25 clean_0000.ppm noisy_0000.lumf"));

    let clean = data.join("clean_0000.ppm");
    let same = luml1(&["metric", "--a", p(&clean), "--b", p(&clean), "--psnr", "--ssim"]);
    let text = String::from_utf8(same.stdout).unwrap();
    assert_eq!(text, "psnr inf\nssim 1.000000\n");

    let noisy = data.join("noisy_0000.lumf");
    let m = luml1(&["metric", "--a", p(&noisy), "--b", p(&clean), "--luml1", "--lambda", "0.5"]);
    assert!(m.status.success());
    assert!(String::from_utf8(m.stdout).unwrap().starts_with("luml1 0."));

    let other = dir.path().join("other");
    luml1(&["gen", "--count", "1", "--size", "20x20", "--out", p(&other)]);
    let mismatch = luml1(&["metric", "--a", p(&clean), "--b", p(&other.join("clean_0000.ppm"))]);
    assert_eq!(mismatch.status.code(), Some(1));
}

#[test]
fn bad_files_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ppm");
    fs::write(&bad, b"P6\n2 2\n255\n\x01\x02").unwrap();
    let out = luml1(&["metric", "--a", p(&bad), "--b", p(&bad)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte"));
    let missing = luml1(&["denoise", "--ckpt", p(&dir.path().join("none")), "--in", p(&bad), "--out", p(&bad)]);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn train_eval_denoise_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.conf");
    fs::write(&cfg, TINY_TRAIN).unwrap();
    let ckpt = dir.path().join("net.ckpt");
    let log = dir.path().join("log.csv");
    let out = luml1(&["train", "--config", p(&cfg), "--loss", "luml1", "--lambda", "0.5", "--out", p(&ckpt), "--log", p(&log)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = fs::read_to_string(&log).unwrap();
    assert_eq!(log.lines().count(), 4);

    let data = dir.path().join("data");
    luml1(&["gen", "--count", "2", "--size", "16x16", "--out", p(&data)]);
    let csv = dir.path().join("eval.csv");
    let ev = luml1(&["eval", "--ckpt", p(&ckpt), "--data", p(&data), "--sigmas", "5,25", "--csv", p(&csv)]);
    assert!(ev.status.success(), "{}", String::from_utf8_lossy(&ev.stderr));
    let table = fs::read_to_string(&csv).unwrap();
    assert!(table.starts_with("sigma,input_psnr,input_ssim,model_psnr,model_ssim\n5,"));
    assert_eq!(table.lines().count(), 3);

    let a = dir.path().join("a.ppm");
    let b = dir.path().join("b.ppm");
    let input = data.join("noisy_0001.lumf");
    assert!(luml1(&["denoise", "--ckpt", p(&ckpt), "--in", p(&input), "--out", p(&a)]).status.success());
    assert!(luml1(&["denoise", "--ckpt", p(&ckpt), "--in", p(&input), "--out", p(&b)]).status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn invalid_configs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("bad.plan");
    fs::write(&plan, "eval_sigmas = 10, 5\n").unwrap();
    let out = luml1(&["bench", "--plan", p(&plan), "--csv", p(&dir.path().join("o.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    let cfg = dir.path().join("t.conf");
    fs::write(&cfg, "steps = 1\nbogus = 2\n").unwrap();
    let out = luml1(&["train", "--config", p(&cfg), "--out", p(&dir.path().join("n.ckpt"))]);
    assert_eq!(out.status.code(), Some(1));
    let out = luml1(&["train", "--loss", "luml1", "--lambda", "-1", "--out", p(&dir.path().join("n.ckpt"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn pixopt_moves_toward_target() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    luml1(&["gen", "--count", "2", "--size", "16x16", "--out", p(&data)]);
    let init = data.join("clean_0000.ppm");
    let target = data.join("clean_0001.ppm");
    let out = dir.path().join("opt.lumf");
    let r = luml1(&["pixopt", "--init", p(&init), "--target", p(&target), "--loss", "luml1:1", "--steps", "50", "--out", p(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let before = String::from_utf8(luml1(&["metric", "--a", p(&init), "--b", p(&target), "--psnr"]).stdout).unwrap();
    let after = String::from_utf8(luml1(&["metric", "--a", p(&out), "--b", p(&target), "--psnr"]).stdout).unwrap();
    let db = |s: &str| s.trim().trim_start_matches("psnr ").parse::<f64>().unwrap();
    assert!(db(&after) > db(&before) + 3.0, "{before} -> {after}");
}
