use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};

use robocal::online::CorrectionRecord;
use robocal::pose_log::{read_pose_log_file, session_from_records, write_pose_log_file, PoseLogError, PoseLogRecord};
use robocal::simulator::{
    angle_errors, run_script, run_trials, shake_experiment, summarize, CorrectionSettings, ErrorStats,
    Scenario, TrialOutcome, TrialSummary,
};
use robocal::solver::{calibrate, CalibrationRecord, CalibrationResult, SolveConfig, SolveError};
use robocal::RobotKinematics;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_PARSE: u8 = 3;
pub const EXIT_INSUFFICIENT_MOTION: u8 = 4;

pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError {
            code: EXIT_FAILURE,
            error: e.into(),
        }
    }
}

type CliResult = Result<(), CliError>;

fn fail(code: u8, error: anyhow::Error) -> CliError {
    CliError { code, error }
}

fn load_scenario(path: Option<&Path>, seed: Option<u64>) -> Result<Scenario, CliError> {
    let mut scenario = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading scenario {}", p.display()))?;
            Scenario::from_toml(&text).with_context(|| format!("scenario {}", p.display()))?
        }
        None => Scenario::default(),
    };
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn solve(session: &robocal::CalibrationSession, allow_partial: bool) -> Result<CalibrationResult, CliError> {
    let cfg = SolveConfig {
        allow_partial,
        ..SolveConfig::default()
    };
    calibrate(session, &cfg).map_err(|e| match e {
        SolveError::InsufficientMotion { .. } => fail(
            EXIT_INSUFFICIENT_MOTION,
            anyhow!("{e}; rerun with --allow-partial to accept a partial solution"),
        ),
        other => fail(EXIT_FAILURE, other.into()),
    })
}

fn print_result(record: &CalibrationRecord, path: &Path) {
    print!("{record}");
    println!("written:              {}", path.display());
}

pub fn calibrate_sim(scenario: Option<&Path>, seed: Option<u64>, out: &Path, allow_partial: bool) -> CliResult {
    let scenario = load_scenario(scenario, seed)?;
    let cfg = scenario.sim_config()?;
    let run = run_script(&scenario.motion_script(), &cfg, &mut cfg.rng())?;
    let use_floor = scenario.uses_floor();
    prepare_out(out)?;
    let keyframes: Vec<PoseLogRecord> = run
        .keyframes
        .iter()
        .map(|k| PoseLogRecord {
            sample: k.sample,
            floor: if use_floor { k.floor } else { None },
        })
        .collect();
    let trace: Vec<PoseLogRecord> = run.observations.iter().map(|o| o.to_record()).collect();
    write_pose_log_file(&out.join("keyframes.csv"), &keyframes)?;
    write_pose_log_file(&out.join("trace.csv"), &trace)?;

    let session = run.session(use_floor, cfg.kinematics());
    let result = solve(&session, allow_partial || scenario.solve.allow_partial)?;
    let record = result.to_record();
    let path = out.join("calibration.json");
    write_json(&path, &record)?;
    print_result(&record, &path);
    let [ax, ay, az] = angle_errors(&result.x.rotation, &cfg.x_true.rotation);
    println!(
        "error vs truth:       pos {:.6} m, x {ax:.6} rad, y {ay:.6} rad, z {az:.6} rad",
        (result.x.translation - cfg.x_true.translation).norm()
    );
    Ok(())
}

pub fn calibrate_file(log: &Path, out: &Path, head_height: f64, allow_partial: bool) -> CliResult {
    let records = read_pose_log_file(log).map_err(|e| match e {
        PoseLogError::Io(io) => fail(EXIT_FAILURE, anyhow!(io).context(format!("reading {}", log.display()))),
        other => fail(EXIT_PARSE, anyhow!("{}: {other}", log.display())),
    })?;
    let kinematics = RobotKinematics::upright(head_height)?;
    let session = session_from_records(&records, Some(kinematics))
        .map_err(|e| fail(EXIT_PARSE, anyhow!("{}: {e}", log.display())))?;
    let result = solve(&session, allow_partial)?;
    prepare_out(out)?;
    let record = result.to_record();
    let path = out.join("calibration.json");
    write_json(&path, &record)?;
    print_result(&record, &path);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct TrialRow {
    trial: usize,
    seed: u64,
    pos_error_m: f64,
    x_angle_error_rad: f64,
    y_angle_error_rad: f64,
    z_angle_error_rad: f64,
    error: String,
}

impl From<&TrialOutcome> for TrialRow {
    fn from(o: &TrialOutcome) -> Self {
        TrialRow {
            trial: o.trial,
            seed: o.seed,
            pos_error_m: o.position_error_m,
            x_angle_error_rad: o.angle_error_x_rad,
            y_angle_error_rad: o.angle_error_y_rad,
            z_angle_error_rad: o.angle_error_z_rad,
            error: o.error.clone().unwrap_or_default(),
        }
    }
}

impl From<TrialRow> for TrialOutcome {
    fn from(r: TrialRow) -> Self {
        TrialOutcome {
            trial: r.trial,
            seed: r.seed,
            position_error_m: r.pos_error_m,
            angle_error_x_rad: r.x_angle_error_rad,
            angle_error_y_rad: r.y_angle_error_rad,
            angle_error_z_rad: r.z_angle_error_rad,
            estimate: None,
            error: (!r.error.is_empty()).then_some(r.error),
        }
    }
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    statistic: &'static str,
    pos_error_m: f64,
    x_angle_error_rad: f64,
    y_angle_error_rad: f64,
    z_angle_error_rad: f64,
}

fn summary_rows(s: &TrialSummary) -> Vec<SummaryRow> {
    let pick = |f: fn(&ErrorStats) -> f64, statistic| SummaryRow {
        statistic,
        pos_error_m: f(&s.position_error_m),
        x_angle_error_rad: f(&s.angle_error_x_rad),
        y_angle_error_rad: f(&s.angle_error_y_rad),
        z_angle_error_rad: f(&s.angle_error_z_rad),
    };
    vec![pick(|e| e.mean, "mean"), pick(|e| e.median, "median")]
}

fn print_summary(name: &str, s: &TrialSummary) {
    println!("scenario {name}: {} trials, {} failed", s.trials, s.failures);
    println!("{:<8} {:>12} {:>18} {:>18} {:>18}", "", "pos error(m)", "x angle error(rad)", "y angle error(rad)", "z angle error(rad)");
    for r in summary_rows(s) {
        println!(
            "{:<8} {:>12.6} {:>18.6} {:>18.6} {:>18.6}",
            r.statistic, r.pos_error_m, r.x_angle_error_rad, r.y_angle_error_rad, r.z_angle_error_rad
        );
    }
}

pub fn monte_carlo(scenario: Option<&Path>, seed: Option<u64>, out: &Path, trials: Option<usize>) -> CliResult {
    let scenario = load_scenario(scenario, seed)?;
    let n = trials.unwrap_or(scenario.trials);
    if n == 0 {
        return Err(fail(EXIT_FAILURE, anyhow!("--trials must be at least 1")));
    }
    let outcomes = run_trials(&scenario, n)?;
    let summary = summarize(&outcomes);
    prepare_out(out)?;
    let rows: Vec<TrialRow> = outcomes.iter().map(TrialRow::from).collect();
    write_csv(&out.join("trials.csv"), &rows)?;
    write_csv(&out.join("summary.csv"), &summary_rows(&summary))?;
    print_summary(&scenario.name, &summary);
    println!("written: {}, {}", out.join("trials.csv").display(), out.join("summary.csv").display());
    Ok(())
}

pub fn shake(scenario: Option<&Path>, seed: Option<u64>, out: &Path, latency: Option<f64>, no_correction: bool) -> CliResult {
    let scenario = load_scenario(scenario, seed)?;
    let cfg = scenario.sim_config()?;
    let settings = CorrectionSettings {
        enabled: !no_correction,
        online: scenario.shake.online(),
    };
    let latency = latency.unwrap_or(scenario.shake.latency);
    let records = shake_experiment(&cfg, &scenario.shake.params(), latency, &settings, &mut cfg.rng())?;
    prepare_out(out)?;
    let path: PathBuf = out.join("shake.csv");
    write_csv(&path, &records)?;
    let max = |f: fn(&CorrectionRecord) -> f64| records.iter().map(f).fold(0.0, f64::max);
    println!("shake: {} steps, latency {latency} s", records.len());
    println!("max uncorrected planar foot error: {:.4} m", max(|r| r.uncorrected_error_m));
    println!("max corrected planar foot error:   {:.4} m", max(|r| r.corrected_error_m));
    println!("written: {}", path.display());
    Ok(())
}

pub fn report(path: &Path) -> CliResult {
    let is_csv = path.extension().and_then(|e| e.to_str()) == Some("csv");
    if is_csv {
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| fail(EXIT_PARSE, anyhow!("{}: {e}", path.display())))?;
        let mut outcomes = Vec::new();
        for row in rdr.deserialize::<TrialRow>() {
            let row = row.map_err(|e| fail(EXIT_PARSE, anyhow!("{}: {e}", path.display())))?;
            outcomes.push(TrialOutcome::from(row));
        }
        print_summary(&path.display().to_string(), &summarize(&outcomes));
    } else {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let record: CalibrationRecord = serde_json::from_str(&text)
            .map_err(|e| fail(EXIT_PARSE, anyhow!("{}: {e}", path.display())))?;
        print!("{record}");
    }
    Ok(())
}
