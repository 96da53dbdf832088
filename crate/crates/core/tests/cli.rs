use std::fs;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn dfp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dfp"))
}

#[test]
fn fit_then_purity_on_separated_blobs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("blobs.csv");
    let run = dir.path().join("run.json");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut csv = String::from("x,y,cls\n");
    for i in 0..90 {
        let (cx, cy, name) = [(0.0, 0.0, "a"), (20.0, 0.0, "b"), (0.0, 20.0, "c")][i % 3];
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        csv.push_str(&format!("{},{},{name}\n", cx + dx, cy + dy));
    }
    fs::write(&data, csv).unwrap();
    let fit = dfp()
        .args(["fit", "--depth", "3", "--sweeps", "200", "--burn-in", "100", "--seed", "1"])
        .args(["--label-col", "cls", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
    let purity = dfp()
        .args(["purity", "--label-col", "cls", "--data"])
        .arg(&data)
        .arg("--run")
        .arg(&run)
        .output()
        .unwrap();
    assert!(purity.status.success(), "{}", String::from_utf8_lossy(&purity.stderr));
    let value: f64 = String::from_utf8_lossy(&purity.stdout).trim().parse().unwrap();
    assert!(value > 0.9, "purity {value}");
}

#[test]
fn missing_data_is_a_usage_error() {
    let out = dfp().args(["fit", "--depth", "3"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unreadable_file_is_a_runtime_error() {
    let out = dfp().args(["eval", "--data", "/nonexistent/x.csv"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/x.csv"));
}

#[test]
fn sampled_points_are_reproducible() {
    let run = || {
        dfp()
            .args(["sample", "--n", "50", "--depth", "5", "--seed", "3"])
            .output()
            .unwrap()
            .stdout
    };
    let a = run();
    assert_eq!(a, run());
    assert_eq!(String::from_utf8_lossy(&a).lines().count(), 51);
}
