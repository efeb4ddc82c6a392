use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use robocal::solver::CalibrationRecord;
use robocal::simulator::Scenario;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn robocal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robocal"))
        .args(args)
        .env_remove("ROBOCAL_SEED")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_column(path: &Path, column: &str) -> Vec<f64> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let idx = rdr.headers().unwrap().iter().position(|h| h == column).unwrap();
    rdr.records().map(|r| r.unwrap()[idx].parse().unwrap()).collect()
}

#[test]
fn noise_free_monte_carlo_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let o = robocal(&["monte-carlo", "--scenario", s(&scenario("noise-free.toml")), "--trials", "3", "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trials = dir.path().join("trials.csv");
    for col in ["pos_error_m", "x_angle_error_rad", "y_angle_error_rad", "z_angle_error_rad"] {
        let v = csv_column(&trials, col);
        assert_eq!(v.len(), 3);
        assert!(v.iter().all(|e| *e < 1e-9), "{col}: {v:?}");
    }
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with("statistic,pos_error_m,"));
    assert!(summary.contains("\nmean,") && summary.contains("\nmedian,"));
}

#[test]
fn monte_carlo_output_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = robocal(&["monte-carlo", "--scenario", s(&scenario("horizontal.toml")), "--trials", "4", "--seed", "9", "--out", s(d.path())]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["trials.csv", "summary.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
    let seeds = csv_column(&a.path().join("trials.csv"), "seed");
    assert_eq!(seeds, vec![9.0, 10.0, 11.0, 12.0]);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_robocal"))
        .args(["monte-carlo", "--scenario", s(&scenario("noise-free.toml")), "--trials", "1", "--out", s(dir.path())])
        .env("ROBOCAL_SEED", "77")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(csv_column(&dir.path().join("trials.csv"), "seed"), vec![77.0]);
}

#[test]
fn simulated_log_round_trips_through_file_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let sim_out = dir.path().join("sim");
    let o = robocal(&["calibrate-sim", "--scenario", s(&scenario("noise-free.toml")), "--out", s(&sim_out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let file_out = dir.path().join("file");
    let log = sim_out.join("keyframes.csv");
    let o = robocal(&["calibrate-file", "--log", s(&log), "--out", s(&file_out)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let record: CalibrationRecord =
        serde_json::from_str(&fs::read_to_string(file_out.join("calibration.json")).unwrap()).unwrap();
    let truth = Scenario::default().sim_config().unwrap().x_true;
    let (dr, dt) = record.pose().unwrap().distance_to(&truth);
    assert!(dr < 1e-9 && dt < 1e-9, "rotation {dr} translation {dt}");
}

#[test]
fn single_rotation_log_reports_insufficient_motion() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one-rotation.toml");
    fs::write(
        &path,
        "name = \"one-rotation\"\n[noise]\njoint_angle = 0.0\ndevice_position = 0.0\ndevice_orientation = 0.0\n\
         [[script]]\ncommand = \"head-move\"\npitch = 0.0\nyaw = 0.3\n",
    )
    .unwrap();
    let sim_out = dir.path().join("sim");
    let o = robocal(&["calibrate-sim", "--scenario", s(&path), "--out", s(&sim_out)]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    let o = robocal(&["calibrate-file", "--log", s(&sim_out.join("keyframes.csv")), "--out", s(&dir.path().join("f"))]);
    assert_eq!(o.status.code(), Some(4));
    let err = stderr(&o);
    assert!(err.contains("t_z") && err.contains("yaw"), "{err}");

    let o = robocal(&["calibrate-file", "--allow-partial", "--log", s(&sim_out.join("keyframes.csv")), "--out", s(&dir.path().join("f"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("t_z=free"));
}

#[test]
fn malformed_log_line_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let sim_out = dir.path().join("sim");
    let o = robocal(&["calibrate-sim", "--scenario", s(&scenario("two-way-rotation.toml")), "--out", s(&sim_out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(sim_out.join("trace.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[16] = lines[16].replacen(',', ",oops,", 1);
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, lines.join("\n") + "\n").unwrap();
    let o = robocal(&["calibrate-file", "--log", s(&bad), "--out", s(&dir.path().join("f"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("line 17"), "{}", stderr(&o));
}

#[test]
fn shake_scenarios_separate_and_disable() {
    let dir = tempfile::tempdir().unwrap();
    let max_of = |p: &Path, col: &str| csv_column(p, col).into_iter().fold(0.0, f64::max);

    let out = dir.path().join("lag");
    let o = robocal(&["shake", "--scenario", s(&scenario("shake.toml")), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = out.join("shake.csv");
    assert!(fs::read_to_string(&csv).unwrap().starts_with("time_s,uncorrected_error_m,corrected_error_m,correction_angle_rad"));
    assert!(max_of(&csv, "uncorrected_error_m") > 0.3);
    assert!(max_of(&csv, "corrected_error_m") < 0.1);

    let out = dir.path().join("zero");
    let o = robocal(&["shake", "--scenario", s(&scenario("shake-zero-latency.toml")), "--out", s(&out)]);
    assert!(o.status.success());
    let csv = out.join("shake.csv");
    assert!(max_of(&csv, "uncorrected_error_m") < 0.02);
    assert!(max_of(&csv, "corrected_error_m") < 0.02);

    let out = dir.path().join("off");
    let o = robocal(&["shake", "--scenario", s(&scenario("shake.toml")), "--no-correction", "--out", s(&out)]);
    assert!(o.status.success());
    let csv = out.join("shake.csv");
    assert_eq!(csv_column(&csv, "uncorrected_error_m"), csv_column(&csv, "corrected_error_m"));
}

#[test]
fn invalid_inputs_fail_with_messages() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[noise]\njoint_angle = -1.0\n").unwrap();
    let o = robocal(&["monte-carlo", "--scenario", s(&bad), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("joint_angle_noise"), "{}", stderr(&o));
    assert!(!dir.path().join("trials.csv").exists());

    let o = robocal(&["monte-carlo", "--trials", "lots"]);
    assert_eq!(o.status.code(), Some(2));

    let o = robocal(&["calibrate-file", "--log", s(&dir.path().join("missing.csv")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn every_bundled_scenario_parses() {
    for entry in fs::read_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")).unwrap() {
        let path = entry.unwrap().path();
        Scenario::from_toml(&fs::read_to_string(&path).unwrap())
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
    let preset = Scenario::from_toml(&fs::read_to_string(scenario("two-way-rotation.toml")).unwrap()).unwrap();
    assert_eq!(preset, Scenario::default());
    let horizontal = Scenario::from_toml(&fs::read_to_string(scenario("horizontal.toml")).unwrap()).unwrap();
    assert_eq!(horizontal.motion_script(), Scenario::horizontal().motion_script());
}
