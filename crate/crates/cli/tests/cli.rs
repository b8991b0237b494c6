use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn adawave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adawave"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const SMALL: &[&str] = &[
    "--set", "input_len=32",
    "--set", "horizon=32",
    "--set", "levels=2",
    "--set", "ma_window=5",
    "--set", "d_model=8",
    "--set", "heads=2",
    "--set", "max_epochs=1",
    "--set", "max_steps_per_epoch=2",
];

fn train_small(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", "synthetic:simple", "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--set", "synth_points=512"]);
    args.extend_from_slice(extra);
    adawave(&args)
}

fn write_csv(path: &Path, rows: usize) {
    let mut s = String::from("date,a,b\n");
    for i in 0..rows {
        let t = i as f64;
        s.push_str(&format!("2020-01-01 {i},{},{}\n", (0.3 * t).sin() + 0.01 * t, (0.1 * t).cos()));
    }
    fs::write(path, s).unwrap();
}

#[test]
fn train_writes_its_artifacts_and_checkpoint_drives_eval_and_forecast() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_small(dir.path(), &["--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = fs::read_to_string(dir.path().join("train_config.txt")).unwrap();
    assert!(cfg.contains("subtract_detail_first=false"));
    for f in ["model.awn", "train_log.csv", "metrics.csv", "train_config.txt", "test_example.svg"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let log = fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,val_loss,lr,seconds"));
    assert_eq!(log.lines().count(), 2);

    let ck = dir.path().join("model.awn");
    let d = dir.path().to_str().unwrap();
    let eval = adawave(&["eval", "--data", "synthetic:simple", "--checkpoint", ck.to_str().unwrap(), "--out", d, "--set", "synth_points=512"]);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    assert!(dir.path().join("eval_metrics.csv").exists());

    let fc = adawave(&["forecast", "--data", "synthetic:simple", "--checkpoint", ck.to_str().unwrap(), "--out", d, "--set", "synth_points=512"]);
    assert_eq!(code(&fc), 0, "{}", String::from_utf8_lossy(&fc.stderr));
    let text = fs::read_to_string(dir.path().join("forecast.csv")).unwrap();
    assert_eq!(text.lines().count(), 33);
    assert!(dir.path().join("forecast.svg").exists());

    // a forecasting checkpoint cannot impute
    let im = adawave(&["impute", "--data", "synthetic:simple", "--checkpoint", ck.to_str().unwrap(), "--out", d, "--set", "synth_points=512"]);
    assert_eq!(code(&im), 1);
}

#[test]
fn eq9_literal_flag_reaches_the_model_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_small(dir.path(), &["--eq9-literal"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = fs::read_to_string(dir.path().join("train_config.txt")).unwrap();
    assert!(cfg.contains("subtract_detail_first=true"), "{cfg}");
}

#[test]
fn impute_and_superres_round_trip_through_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_csv(&csv, 500);
    let d = dir.path().to_str().unwrap();
    for (task, cmd, file, extra) in [
        ("impute", "impute", "imputed.csv", "mask_mode=extended"),
        ("superres", "superres", "superres.csv", "sr_ratio=4"),
    ] {
        let mut args = vec!["train", "--data", csv.to_str().unwrap(), "--out", d];
        args.extend_from_slice(SMALL);
        let task_kv = format!("task={task}");
        args.extend_from_slice(&["--set", &task_kv, "--set", extra]);
        let out = adawave(&args);
        assert_eq!(code(&out), 0, "{task}: {}", String::from_utf8_lossy(&out.stderr));
        let ck = dir.path().join("model.awn");
        let run = adawave(&[cmd, "--data", csv.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap(), "--out", d]);
        assert_eq!(code(&run), 0, "{cmd}: {}", String::from_utf8_lossy(&run.stderr));
        let text = fs::read_to_string(dir.path().join(file)).unwrap();
        assert!(text.lines().count() > 1);
    }
}

#[test]
fn synth_and_decompose_write_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let s = adawave(&["synth", "traffic", "--out", d, "--set", "synth_points=256", "--seed", "4"]);
    assert_eq!(code(&s), 0, "{}", String::from_utf8_lossy(&s.stderr));
    let text = fs::read_to_string(dir.path().join("synthetic_traffic.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("t,value,denoised"));
    assert_eq!(text.lines().count(), 257);
    assert!(fs::read_to_string(dir.path().join("synthetic_traffic.svg")).unwrap().contains("<svg"));

    let csv = dir.path().join("data.csv");
    write_csv(&csv, 128);
    let dec = adawave(&["decompose", "--data", csv.to_str().unwrap(), "--wavelet", "--out", d, "--set", "ma_window=5", "--set", "levels=3"]);
    assert_eq!(code(&dec), 0, "{}", String::from_utf8_lossy(&dec.stderr));
    let text = fs::read_to_string(dir.path().join("decomposition.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 128);
    // value = trend + seasonal on every row
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split(',').skip(2).map(|x| x.parse().unwrap()).collect();
        assert!((v[0] - v[1] - v[2]).abs() < 1e-9);
    }
    let wavelet = fs::read_to_string(dir.path().join("wavelet.csv")).unwrap();
    // 2 channels x (64 + 32 + 16 details + 16 approx)
    assert_eq!(wavelet.lines().count(), 1 + 2 * (64 + 32 + 16 + 16));
}

#[test]
fn bench_writes_results_and_flags_partial_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let manifest = dir.path().join("m.toml");
    fs::write(
        &manifest,
        r#"
[[cell]]
task = "forecast"
dataset = "synthetic:simple"
model = "persistence"
settings = [32]
seeds = [0, 1]
"#,
    )
    .unwrap();
    let ok = adawave(&["bench", "--manifest", manifest.to_str().unwrap(), "--out", d]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let results = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 3);
    assert!(fs::read_to_string(dir.path().join("report.md")).unwrap().contains("persistence MSE"));

    fs::write(&manifest, "[[cell]]\ntask = \"forecast\"\ndataset = \"absent.csv\"\n").unwrap();
    let partial = adawave(&["bench", "--manifest", manifest.to_str().unwrap(), "--out", d]);
    assert_eq!(code(&partial), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&adawave(&[])), 1);
    assert_eq!(code(&adawave(&["train", "--bogus"])), 1);
    assert_eq!(code(&adawave(&["--help"])), 0);
    let missing = adawave(&["train", "--data", "/nonexistent/data.csv", "--out", d]);
    assert_eq!(code(&missing), 2);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/data.csv"));
    let even = train_small(dir.path(), &["--set", "kernel_size=4"]);
    assert_eq!(code(&even), 1);
    let unknown = train_small(dir.path(), &["--set", "no_such_key=1"]);
    assert_eq!(code(&unknown), 1);
    let bad_ck = dir.path().join("bad.awn");
    fs::write(&bad_ck, b"not a checkpoint").unwrap();
    let ck = adawave(&["eval", "--data", "synthetic:simple", "--checkpoint", bad_ck.to_str().unwrap(), "--out", d]);
    assert_eq!(code(&ck), 2);
    let blowup = train_small(dir.path(), &["--set", "lr=1e300", "--set", "clip_norm=0"]);
    assert_eq!(code(&blowup), 3, "{}", String::from_utf8_lossy(&blowup.stderr));
}
