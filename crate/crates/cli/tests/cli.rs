//! End-to-end checks of the command-line interface.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> PathBuf {
    let mut path = PathBuf::from(env!("CARGO_BIN_EXE_countiptw"));
    assert!(path.exists(), "binary not built at {}", path.display());
    path = path.canonicalize().unwrap();
    path
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("countiptw_cli_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn simulate_aggregate_round_trip() {
    let dir = workdir("sim");
    let config = dir.join("scenario.txt");
    std::fs::write(
        &config,
        "exposure_dgm = negbin\ntrue_rr = 1.1\nmethods = unadjusted, adjusted\n\
         n_obs = 300\nn_reps = 3\nseed = 9\n",
    )
    .unwrap();
    let out = dir.join("out");
    let status = Command::new(bin())
        .args(["simulate", "--config"])
        .arg(&config)
        .args(["--workers", "2", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let reps = out.join("negbin_rr1.1_complete_replications.csv");
    assert!(reps.exists());
    assert!(out.join("negbin_rr1.1_complete_summary.csv").exists());

    let merged = dir.join("merged.csv");
    let status = Command::new(bin())
        .arg("aggregate")
        .arg(&reps)
        .arg("--out")
        .arg(&merged)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&merged).unwrap();
    assert!(text.lines().count() >= 3, "{text}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn weights_then_diagnose() {
    let dir = workdir("wts");
    // small complete dataset via a simulate run is overkill; write one directly
    let data = dir.join("data.csv");
    let mut csv = String::from("c1,c2,c3,a,y\n");
    let mut state = 11u64;
    for i in 0..200 {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let u = (state >> 11) as f64 / (1u64 << 53) as f64;
        let c1 = i % 2;
        let c2 = (u - 0.5) * 2.0;
        let c3 = ((i % 7) as f64 - 3.0) / 2.0;
        let a = (i % 5) as u32;
        let y = ((i / 3) % 2) as u32;
        csv.push_str(&format!("{c1},{c2},{c3},{a},{y}\n"));
    }
    std::fs::write(&data, csv).unwrap();

    let weights = dir.join("w.csv");
    let status = Command::new(bin())
        .args(["weights", "--data"])
        .arg(&data)
        .args(["--method", "multinomial", "--winsorize", "0.99", "--out"])
        .arg(&weights)
        .status()
        .unwrap();
    assert!(status.success());
    let wtext = std::fs::read_to_string(&weights).unwrap();
    assert!(wtext.starts_with("row,weight,numerator,denominator\n"));
    assert_eq!(wtext.lines().count(), 201);

    let report = dir.join("report.csv");
    let output = Command::new(bin())
        .args(["diagnose", "--data"])
        .arg(&data)
        .arg("--weights")
        .arg(&weights)
        .arg("--out")
        .arg(&report)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("ESS"), "{stdout}");
    assert!(report.exists());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn calibrate_emits_plan_file() {
    let dir = workdir("cal");
    let config = dir.join("scenario.txt");
    std::fs::write(
        &config,
        "exposure_dgm = negbin\ntrue_rr = 1.1\nmissingness = mcar\nphi_target = 0.4\n\
         methods = adjusted\nseed = 4\n",
    )
    .unwrap();
    let plan = dir.join("plan.txt");
    let status = Command::new(bin())
        .args(["calibrate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&plan)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&plan).unwrap();
    assert!(text.contains("mechanism = mcar"), "{text}");
    assert!(text.contains("p_c2 ="), "{text}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn errors_are_one_line_and_nonzero() {
    let dir = workdir("err");
    let missing = dir.join("nope.txt");
    let output = Command::new(bin())
        .args(["simulate", "--config"])
        .arg(&missing)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.starts_with("error: "), "{stderr}");
    assert_eq!(stderr.trim().lines().count(), 1, "{stderr}");
    let _ = std::fs::remove_dir_all(&dir);
}
