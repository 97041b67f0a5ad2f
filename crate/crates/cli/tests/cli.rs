use std::path::Path;
use std::process::{Command, Output};

fn moco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moco"))
        .args(args)
        .env("MOCO_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = moco(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// The single error line a failing run leaves on stderr.
fn error_line(out: &Output) -> String {
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = stderr.lines().filter(|l| l.starts_with("error ")).collect();
    assert_eq!(lines.len(), 1, "stderr: {stderr}");
    lines[0].to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate_tiny(dir: &Path) -> std::path::PathBuf {
    ok(&["simulate", "--preset", "tiny", "--seed", "2", "--out", p(dir)]);
    dir.join("data.mcsd")
}

#[test]
fn simulate_reconstruct_metrics_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate_tiny(&tmp.path().join("sim"));
    for f in ["config_echo.json", "template.png", "motion_peak.png", "respiratory.csv"] {
        assert!(tmp.path().join("sim").join(f).exists(), "{f}");
    }
    let rec = tmp.path().join("rec");
    ok(&[
        "reconstruct", "--data", p(&data), "--out", p(&rec), "--epochs-coarse", "10", "--epochs-fine", "20",
        "--batch-frames", "4", "--quiver-frames", "1,5",
    ]);
    for f in [
        "checkpoint.mcsk", "loss.csv", "template.png", "latents.csv", "motion_frame_1.csv", "motion_frame_5.csv",
        "summary.json", "config_echo.json",
    ] {
        assert!(rec.join(f).exists(), "{f}");
    }
    let loss = std::fs::read_to_string(rec.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 31);
    assert!(loss.lines().nth(11).unwrap().contains(",fine,"));
    let png = std::fs::read(rec.join("template.png")).unwrap();
    assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");

    let met = tmp.path().join("met");
    ok(&["metrics", "--checkpoint", p(&rec.join("checkpoint.mcsk")), "--data", p(&data), "--out", p(&met)]);
    let csv = std::fs::read_to_string(met.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "psnr_template,motion_epe,latent_corr,period_error,runtime");
    let values: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(values.len(), 5);
    assert!(values.iter().all(|v| v.is_finite()));
    assert!(values[2].abs() <= 1.0);
    assert!(values[4] > 0.0);
}

#[test]
fn config_file_is_overridden_by_flags_and_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate_tiny(&tmp.path().join("sim"));
    let config = tmp.path().join("config.json");
    std::fs::write(&config, r#"{"lambda_smooth": 3.0, "epochs_coarse": 2, "epochs_fine": 2, "seed": 9}"#).unwrap();
    let rec = tmp.path().join("rec");
    ok(&["reconstruct", "--data", p(&data), "--out", p(&rec), "--config", p(&config), "--lambda", "0.25"]);
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(rec.join("config_echo.json")).unwrap()).unwrap();
    let params = &echo["parameters"];
    assert_eq!(params["config"]["lambda_smooth"], 0.25);
    assert_eq!(params["config"]["epochs_fine"], 2);
    assert_eq!(params["seed"], 9);
    assert_eq!(echo["threads"], 1);
}

#[test]
fn interrupted_and_resumed_run_matches_uninterrupted() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate_tiny(&tmp.path().join("sim"));
    let common = ["--epochs-coarse", "6", "--epochs-fine", "6", "--batch-frames", "3", "--seed", "4"];
    let full = tmp.path().join("full");
    let mut args = vec!["reconstruct", "--data", p(&data), "--out", p(&full)];
    args.extend(common);
    ok(&args);

    let part = tmp.path().join("part");
    let mut args = vec!["reconstruct", "--data", p(&data), "--out", p(&part), "--stop-after", "8"];
    args.extend(common);
    ok(&args);
    assert!(!part.join("summary.json").exists());
    let resumed = tmp.path().join("resumed");
    ok(&[
        "reconstruct", "--data", p(&data), "--out", p(&resumed), "--resume", p(&part.join("checkpoint.mcsk")),
    ]);
    let a = std::fs::read(full.join("checkpoint.mcsk")).unwrap();
    let b = std::fs::read(resumed.join("checkpoint.mcsk")).unwrap();
    assert!(a == b, "resumed checkpoint differs");
    assert_eq!(
        std::fs::read_to_string(full.join("loss.csv")).unwrap(),
        std::fs::read_to_string(resumed.join("loss.csv")).unwrap()
    );
}

#[test]
fn resume_rejects_configuration_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate_tiny(&tmp.path().join("sim"));
    let rec = tmp.path().join("rec");
    ok(&["reconstruct", "--data", p(&data), "--out", p(&rec), "--epochs-coarse", "1", "--epochs-fine", "1"]);
    let out = moco(&[
        "reconstruct", "--data", p(&data), "--out", p(&rec), "--resume", p(&rec.join("checkpoint.mcsk")),
        "--lambda", "2",
    ]);
    assert!(error_line(&out).contains("--resume"));
}

#[test]
fn baseline_writes_gating_and_phase_images() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate_tiny(&tmp.path().join("sim"));
    let out = tmp.path().join("base");
    let stdout = ok(&["baseline", "--data", p(&data), "--out", p(&out), "--phases", "3", "--max-iters", "20"]);
    assert!(stdout.contains("best_phase_psnr"));
    for i in 0..3 {
        assert!(out.join(format!("phase_{i}.png")).exists());
    }
    let gating = std::fs::read_to_string(out.join("gating.csv")).unwrap();
    assert_eq!(gating.lines().next().unwrap(), "spoke_index,frame_index,value,phase");
    assert_eq!(gating.lines().count(), 1 + 8 * 8);
    assert!(out.join("config_echo.json").exists());
}

#[test]
fn sweep_lambda_reports_each_value() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate_tiny(&tmp.path().join("sim"));
    let out = tmp.path().join("sweep");
    let stdout = ok(&[
        "sweep-lambda", "--data", p(&data), "--out", p(&out), "--lambdas", "0.1,10", "--epochs-coarse", "3",
        "--epochs-fine", "3",
    ]);
    assert!(stdout.contains("best lambda"));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("0.1,"));
}

#[test]
fn numerical_checks_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(&["adjointcheck", "--out", p(tmp.path())]);
    for line in stdout.lines() {
        let err: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
        assert!(err < 1e-10, "{line}");
    }
    assert_eq!(stdout.lines().count(), 2);
    let stdout = ok(&["gradcheck", "--directions", "3", "--out", p(tmp.path())]);
    let err: f64 = stdout.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!(err < 1e-4);
}

#[test]
fn errors_are_single_machine_readable_lines() {
    let out = moco(&["reconstruct", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out).starts_with("error kind=usage message="));

    let out = moco(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));

    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.mcsd");
    let out = moco(&["baseline", "--data", p(&missing), "--out", p(tmp.path())]);
    let line = error_line(&out);
    assert!(line.starts_with("error kind=io message="), "{line}");
    assert!(line.contains("missing.mcsd"));

    let data = simulate_tiny(&tmp.path().join("sim"));
    let mut bytes = std::fs::read(&data).unwrap();
    bytes[4] = 9;
    let bad = tmp.path().join("bad.mcsd");
    std::fs::write(&bad, bytes).unwrap();
    let out = moco(&["baseline", "--data", p(&bad), "--out", p(tmp.path())]);
    let line = error_line(&out);
    assert!(line.starts_with("error kind=format"), "{line}");
    assert!(line.contains("version 9"), "{line}");

    let out = Command::new(env!("CARGO_BIN_EXE_moco"))
        .args(["adjointcheck", "--instances", "1", "--out", p(tmp.path())])
        .env("MOCO_THREADS", "zero")
        .output()
        .unwrap();
    assert!(error_line(&out).contains("MOCO_THREADS"));
}
