use std::process::Command;

use tempfile::tempdir;

fn swarmeq(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_swarmeq"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn experiment_writes_csv_with_sidecars() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("kp2.csv");
    let o = swarmeq(&[
        "experiment",
        "kp2",
        "--set",
        "N=257",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().count(), 3);
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 4);
    assert!(dir.path().join("kp2.samples.2.csv").exists());
}

#[test]
fn solve_writes_json() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("run.json");
    let o = swarmeq(&[
        "solve",
        "--set",
        "kernel=qanr",
        "--set",
        "nu=2^-5",
        "--set",
        "N=129",
        "--format",
        "json",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let recs = swarmeq::experiments::read_json(&out).unwrap();
    assert_eq!(recs.len(), 1);
    assert!(recs[0].converged);
}

#[test]
fn unknown_keys_are_rejected() {
    let o = swarmeq(&["experiment", "kp2", "--set", "colour=red"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
    let o = swarmeq(&["experiment", "kp9"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_only_for_stochastic_experiments() {
    let o = swarmeq(&["experiment", "kp2", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = swarmeq(&[
        "experiment",
        "effdim",
        "--seed",
        "1",
        "--set",
        "samples=10000",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unconverged_runs_set_the_exit_code() {
    let o = swarmeq(&[
        "solve",
        "--set",
        "N_max=1",
        "--set",
        "N=65",
        "--set",
        "init=0:0.1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAILED"));
}

#[test]
fn list_names_every_experiment() {
    let o = swarmeq(&["list"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for name in [
        "kp2",
        "kpsmall",
        "kplarge",
        "multistate",
        "gamma-energy",
        "effdim",
        "custom",
    ] {
        assert!(text.contains(name), "{name}");
    }
}
