use std::path::Path;
use std::process::{Command, Output};

use magio::cli::{exit_code, EXIT_DATA, EXIT_NUMERICAL, EXIT_USAGE};
use magio::msckf::FilterError;
use magio::pipeline::PipelineError;
use magio::Error;

fn magio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magio")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, extra: &[&str]) {
    let mut args = vec!["simulate", "--out", p(dir), "--seed", "3"];
    args.extend_from_slice(extra);
    let out = magio(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn evaluate_identical_files_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), &[]);
    let r = dir.path().join("ref.csv");
    let out = magio(&["evaluate", "--est", p(&r), "--ref", p(&r)]);
    assert_eq!(out.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["rms_h_m", "cdf68_m", "rms_v_mps", "rms_heading_deg"] {
        assert_eq!(json[key].as_f64(), Some(0.0), "{key}");
    }
}

#[test]
fn missing_config_key_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), &[]);
    let cfg = dir.path().join("config.toml");
    let text = std::fs::read_to_string(&cfg).unwrap();
    let pruned: String = text
        .lines()
        .filter(|l| !l.starts_with("decimate_hz"))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(&cfg, pruned).unwrap();
    let out = magio(&[
        "run",
        "--config",
        p(&cfg),
        "--imu",
        p(&dir.path().join("imu.csv")),
        "--mag",
        p(&dir.path().join("mag.csv")),
        "--out",
        p(&dir.path().join("est.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("decimate_hz"));
}

#[test]
fn simulate_run_evaluate_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, &["--height", "0.45"]);
    let est = d.join("est.csv");
    let (cfg, imu, mag) = (d.join("config.toml"), d.join("imu.csv"), d.join("mag.csv"));
    let run_args = [
        "run",
        "--config",
        p(&cfg),
        "--imu",
        p(&imu),
        "--mag",
        p(&mag),
        "--out",
        p(&est),
        "--decimate",
        "10",
    ];
    let out = magio(&run_args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let metrics = d.join("metrics.json");
    let out = magio(&[
        "evaluate",
        "--est",
        p(&est),
        "--ref",
        p(&d.join("ref.csv")),
        "--out",
        p(&metrics),
    ]);
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    let rms = json["rms_h_m"].as_f64().unwrap();
    assert!(rms > 0.0 && rms < 0.01 * json["length_m"].as_f64().unwrap());

    let out = magio(&["export-plot", "--est", p(&est), "--ref", p(&d.join("ref.csv"))]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("t,est_x,est_y,est_z,ref_x,ref_y,ref_z,err_h_m,err_v_mps,err_heading_deg\n"));
    assert!(text.lines().count() > 1000);

    // both flags together still run and change the result
    let mut flagged = run_args.to_vec();
    let est2 = d.join("est2.csv");
    flagged[8] = p(&est2);
    flagged.extend_from_slice(&["--no-att-constraint", "--strict-eq39"]);
    assert!(magio(&flagged).status.success());
    assert_ne!(std::fs::read(&est).unwrap(), std::fs::read(&est2).unwrap());
}

#[test]
fn sweep_three_heights_five_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("sweep.csv");
    let out = magio(&["sweep", "--heights", "0.4,0.55,0.7", "--seeds", "5", "--out", p(&table)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(&table).unwrap();
    let header = reader.headers().unwrap().clone();
    let col = header.iter().position(|h| h == "rms_v_mps").unwrap();
    let rows: Vec<(f64, f64)> = reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[col].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 15);
    let mean = |h: f64| rows.iter().filter(|r| r.0 == h).map(|r| r.1).sum::<f64>() / 5.0;
    assert!(mean(0.4) < mean(0.55) && mean(0.55) < mean(0.7));
}

#[test]
fn unsorted_imu_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), &[]);
    let imu = dir.path().join("imu.csv");
    let text = std::fs::read_to_string(&imu).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.swap(10, 11);
    std::fs::write(&imu, lines.join("\n")).unwrap();
    let out = magio(&[
        "run",
        "--config",
        p(&dir.path().join("config.toml")),
        "--imu",
        p(&imu),
        "--mag",
        p(&dir.path().join("mag.csv")),
        "--out",
        p(&dir.path().join("est.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 12"));
}

#[test]
fn usage_errors() {
    assert_eq!(magio(&["bogus"]).status.code(), Some(1));
    assert_eq!(magio(&["run", "--imu", "x"]).status.code(), Some(1));
    assert_eq!(
        magio(&["evaluate", "--est", "/nonexistent.csv", "--ref", "/nonexistent.csv"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(magio(&["--help"]).status.code(), Some(0));
}

#[test]
fn exit_code_classes() {
    assert_eq!(
        exit_code(&Error::Pipeline(PipelineError::Config("x".into()))),
        EXIT_USAGE
    );
    assert_eq!(exit_code(&Error::Pipeline(PipelineError::Data("x".into()))), EXIT_DATA);
    assert_eq!(
        exit_code(&Error::Pipeline(PipelineError::Numerical("x".into()))),
        EXIT_NUMERICAL
    );
    assert_eq!(
        exit_code(&Error::Filter(FilterError::SingularInnovation)),
        EXIT_NUMERICAL
    );
    assert_eq!(
        exit_code(&Error::Filter(FilterError::NonPositiveNoise("gyro_arw"))),
        EXIT_USAGE
    );
}
