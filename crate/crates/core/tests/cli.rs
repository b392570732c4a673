use std::path::Path;
use std::process::Command;

use brb::cli::{self, io};

const HEATING: &str = r#"
seed = 11

[drive]
rabi_frequency = "hz:1680"
step_magnitude = 0.1

[plan]
lengths = [0.4, 0.8, 1.2, 1.6, 2.0, 2.4, 3.2, 4.0]
randomizations = 40
noise_averages = 100

[noise]
kind = "heating"
heating_rate = 1530.0

[output]
plots = false
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn brb(args: &[&str]) -> i32 {
    cli::run(std::iter::once("brb").chain(args.iter().copied()))
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn simulate_is_deterministic_and_echo_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "h.toml", HEATING);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(brb(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]), 0);
    assert_eq!(brb(&["--threads", "1", "simulate", "--config", &cfg, "--out", b.to_str().unwrap()]), 0);
    assert_eq!(read(a.join("dataset.csv")), read(b.join("dataset.csv")));
    let echo = a.join("config.toml");
    assert_eq!(brb(&["simulate", "--config", echo.to_str().unwrap(), "--out", c.to_str().unwrap()]), 0);
    assert_eq!(read(a.join("dataset.csv")), read(c.join("dataset.csv")));
    for f in ["histograms.csv", "fit_report.json", "summary.txt", "manifest.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert!(!a.join("plots").exists());

    let d = dir.path().join("d");
    assert_eq!(brb(&["simulate", "--config", &cfg, "--seed", "12", "--out", d.to_str().unwrap()]), 0);
    assert_ne!(read(a.join("dataset.csv")), read(d.join("dataset.csv")));
    assert!(read(d.join("config.toml")).starts_with("seed = 12\n"));
}

#[test]
fn heating_bundle_matches_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "h.toml", HEATING);
    let out = dir.path().join("out");
    assert_eq!(brb(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]), 0);
    let ds = io::read_dataset_file(&out.join("dataset.csv")).unwrap();
    for s in ds.summaries() {
        let model = 1.0 / (1.0 + 0.29 * s.length);
        assert!((s.mean - model).abs() < 4.0 * s.stderr + 2e-3, "L = {}: {} vs {model}", s.length, s.mean);
    }
    let report: serde_json::Value = serde_json::from_str(&read(out.join("fit_report.json"))).unwrap();
    assert_eq!(report["command"], "simulate");
    assert_eq!(report["selected"], "heating");
    let manifest: serde_json::Value = serde_json::from_str(&read(out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["version"], cli::VERSION);
}

#[test]
fn zero_noise_gives_unit_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "z.toml",
        &HEATING.replace("kind = \"heating\"\nheating_rate = 1530.0", "kind = \"dephasing\"\nsigma = \"hz:0\""),
    );
    let out = dir.path().join("out");
    assert_eq!(brb(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]), 0);
    let ds = io::read_dataset_file(&out.join("dataset.csv")).unwrap();
    assert!(ds.records.iter().all(|r| r.fidelity_mean == 1.0));
    assert!(read(out.join("summary.txt")).contains("selected: none"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let bad = write(dir.path(), "bad.toml", &HEATING.replace("noise_averages = 100", "noise_averages = 100\nshotz = 3"));
    assert_eq!(brb(&["simulate", "--config", &bad, "--out", out.to_str().unwrap()]), 2);
    assert!(!out.exists());
    assert_eq!(brb(&["simulate", "--out", out.to_str().unwrap()]), 2);
    assert_eq!(brb(&["simulate", "--config", "/nonexistent.toml"]), 2);
}

#[test]
fn budget_refusal_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "h.toml", HEATING);
    let out = dir.path().join("out");
    assert_eq!(brb(&["simulate", "--config", &cfg, "--budget", "1000", "--out", out.to_str().unwrap()]), 3);
    assert!(!out.join("dataset.csv").exists());
    assert_eq!(brb(&["validate", "--budget", "1000", "--out", out.to_str().unwrap()]), 3);
}

#[test]
fn characterize_reports_and_rejects_malformed_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "h.toml", HEATING);
    let sim = dir.path().join("sim");
    assert_eq!(brb(&["simulate", "--config", &cfg, "--out", sim.to_str().unwrap()]), 0);
    let out = dir.path().join("fit");
    let csv = sim.join("dataset.csv");
    assert_eq!(brb(&["characterize", csv.to_str().unwrap(), "--config", &cfg, "--out", out.to_str().unwrap()]), 0);
    let v: serde_json::Value = serde_json::from_str(&read(out.join("fit_report.json"))).unwrap();
    assert_eq!(v["command"], "characterize");
    assert_eq!(v["report"]["selected"], "heating");
    assert_eq!(v["options"]["window"], 1.5);
    let rate = v["report"]["physical"]
        .as_array()
        .unwrap()
        .iter()
        .find(|p| p["name"] == "heating_rate")
        .unwrap()["value"]
        .as_f64()
        .unwrap();
    assert!((rate / 1530.0 - 1.0).abs() < 0.1, "{rate}");

    let bad = write(
        dir.path(),
        "bad.csv",
        "length_L,circuit_index,fidelity_mean,fidelity_stderr,M,shots\n0.4,0,0.9,0.01,10,exact\n0.8,zero,0.9,0.01,10,exact\n",
    );
    assert_eq!(brb(&["characterize", &bad, "--out", out.to_str().unwrap()]), 2);
}

#[test]
fn fit_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("length_L,circuit_index,fidelity_mean,fidelity_stderr,M,shots\n");
    for l in ["0.4", "0.8", "1.2", "1.6"] {
        for c in 0..3 {
            text.push_str(&format!("{l},{c},1e-9,0,10,exact\n"));
        }
    }
    let csv = write(dir.path(), "dead.csv", &text);
    assert_eq!(brb(&["characterize", &csv, "--out", dir.path().join("o").to_str().unwrap()]), 4);
}

#[test]
fn validate_grid_properties_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = |o: &Path| {
        vec![
            "validate".to_string(),
            "--randomizations".into(),
            "20".into(),
            "--noise-averages".into(),
            "50".into(),
            "--seed".into(),
            "4".into(),
            "--out".into(),
            o.to_str().unwrap().into(),
        ]
    };
    assert_eq!(cli::run(std::iter::once("brb".to_string()).chain(args(&a))), 0);
    assert_eq!(cli::run(std::iter::once("brb".to_string()).chain(args(&b))), 0);
    assert_eq!(read(a.join("validate.json")), read(b.join("validate.json")));
    let v: serde_json::Value = serde_json::from_str(&read(a.join("validate.json"))).unwrap();
    let cases = v["cases"].as_array().unwrap();
    assert_eq!(cases.len(), 4);
    for c in cases {
        let sigma = c["sigma_hz"].as_f64().unwrap();
        if sigma == 200.0 {
            assert!(c["max_gap_short"].as_f64().unwrap() < 0.02, "{c}");
        } else {
            assert!(c["gap_slope"].as_f64().unwrap() > 0.0, "{c}");
        }
    }
    assert!(a.join("plots/mean_1000hz_dc.svg").exists());
}

#[test]
fn calibrate_writes_both_constants() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cal");
    let code = brb(&["calibrate-c", "--randomizations", "30", "--noise-averages", "60", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&read(out.join("calibration.json"))).unwrap();
    let r = v["results"].as_array().unwrap();
    assert_eq!(r[0]["correlation"], "markovian");
    assert_eq!(r[1]["correlation"], "dc");
    assert!(r[1]["c_hat"].as_f64().unwrap() > r[0]["c_hat"].as_f64().unwrap());
}

#[test]
fn binary_uses_out_dir_env_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "h.toml", HEATING);
    let out = dir.path().join("from-env");
    let status = Command::new(env!("CARGO_BIN_EXE_brb"))
        .args(["simulate", "--config", &cfg])
        .env(cli::OUT_DIR_ENV, &out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(out.join("dataset.csv").exists());

    let bad = write(dir.path(), "bad.toml", &HEATING.replace("\"hz:1680\"", "1680"));
    let o = Command::new(env!("CARGO_BIN_EXE_brb"))
        .args(["simulate", "--config", &bad])
        .env(cli::OUT_DIR_ENV, &out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.toml:5"), "{err}");
}
