use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[scenario]
mc_bins = 3000
bc_bins = 2000

[calibration]
walk_window_s = 8.0

[gapp]
n_particles = 200

[decoder]
n_particles = 200

[dsmcpp]
n_tuning_particles = 50
n_kin_particles = 200
"#;

fn spiketrack(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spiketrack"))
        .args(args)
        .current_dir(dir)
        .env_remove("SPIKETRACK_SEED")
        .env_remove("SPIKETRACK_METHOD")
        .env_remove("SPIKETRACK_OUT")
        .env_remove("SPIKETRACK_CONFIG")
        .env_remove("SPIKETRACK_DATASET")
        .output()
        .unwrap()
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.toml");
    fs::write(&p, SMALL).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn simulate_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    for out in ["a", "b"] {
        let o = spiketrack(&["simulate", "--config", &cfg, "--seed", "4", "--out", out], tmp.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("16 neurons, 5000 bins, switch at bin 3000"));
    }
    for f in ["kinematics.csv", "spikes_n0.csv", "spikes_n15.csv", "truth.json", "events.csv", "dataset.json"] {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = fs::read(tmp.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let kin = fs::read_to_string(tmp.path().join("a/kinematics.csv")).unwrap();
    assert_eq!(kin.lines().next(), Some("bin_index,px,py,vx,vy"));
}

#[test]
fn track_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let o = spiketrack(&["simulate", "--config", &cfg, "--seed", "2", "--out", "data"], tmp.path());
    assert!(o.status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_spiketrack"))
        .args(["track", "--config", &cfg, "--seed", "2", "--out", "run", "--dataset", "data"])
        .env("SPIKETRACK_METHOD", "gapp")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = tmp.path().join("run");
    for f in ["metrics.json", "record.json", "gapp/manifest.json", "gapp/zhat_n3.csv", "gapp/xhat.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert!(!run.join("dsmcpp").exists());
    let record = fs::read_to_string(run.join("record.json")).unwrap();
    assert!(record.contains(r#""psi": 0.08"#));
    assert!(record.contains(r#""method": "gapp""#));

    let o = spiketrack(&["report", "run", "--out", "rep"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("run"));
    assert!(tmp.path().join("rep/report.csv").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.toml"), "[scenario.task]\nn_trials = -3\n").unwrap();
    fs::write(tmp.path().join("unknown.json"), r#"{"gapp": {"particles": 10}}"#).unwrap();
    let code = |args: &[&str]| spiketrack(args, tmp.path()).status.code();

    assert_eq!(code(&["simulate", "--config", "bad.toml", "--out", "x"]), Some(2));
    assert_eq!(code(&["track", "--config", "unknown.json", "--out", "x"]), Some(2));
    assert_eq!(code(&["simulate", "--config", "missing.toml"]), Some(2));
    assert_eq!(code(&["track", "--method", "kalman"]), Some(2));
    assert_eq!(code(&["report"]), Some(2));

    let o = spiketrack(&["track", "--dataset", "nowhere", "--out", "x"], tmp.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere"));
    assert_eq!(code(&["report", "nowhere"]), Some(3));
}
