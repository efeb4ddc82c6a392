//! Monte-Carlo calibration trials and the head-shake experiment.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{floor_patch, gauss, head_pose, perturb_device, run_script, Planar, Scenario, SimConfig, SimError};
use crate::geometry::{Pose, Rotation, Vec3};
use crate::online::{
    correct_footprint, correction_step, estimate_floor_normal, localize_footprint, planar_error,
    CorrectionRecord, CorrectionState, OnlineConfig,
};
use crate::solver::calibrate;

/// Angle between each estimated frame axis and the true one, rad.
pub fn angle_errors(estimate: &Rotation, truth: &Rotation) -> [f64; 3] {
    let axes = [Vec3::x(), Vec3::y(), Vec3::z()];
    axes.map(|e| (estimate * &e).angle(&(truth * &e)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    /// Distance between estimated and true translation, m.
    pub position_error_m: f64,
    pub angle_error_x_rad: f64,
    pub angle_error_y_rad: f64,
    pub angle_error_z_rad: f64,
    #[serde(skip)]
    pub estimate: Option<Pose>,
    pub error: Option<String>,
}

impl TrialOutcome {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

/// Simulates and calibrates trial `trial` of a scenario with seed
/// `scenario.seed + trial`.
pub fn run_trial(scenario: &Scenario, trial: usize) -> Result<TrialOutcome, SimError> {
    let mut cfg = scenario.sim_config()?;
    cfg.rng_seed = scenario.seed.wrapping_add(trial as u64);
    let mut rng = cfg.rng();
    let run = run_script(&scenario.motion_script(), &cfg, &mut rng)?;
    let session = run.session(scenario.uses_floor(), cfg.kinematics());
    let mut outcome = TrialOutcome {
        trial,
        seed: cfg.rng_seed,
        position_error_m: f64::NAN,
        angle_error_x_rad: f64::NAN,
        angle_error_y_rad: f64::NAN,
        angle_error_z_rad: f64::NAN,
        estimate: None,
        error: None,
    };
    match calibrate(&session, &scenario.solve_config()) {
        Ok(result) => {
            let [ax, ay, az] = angle_errors(&result.x.rotation, &cfg.x_true.rotation);
            outcome.position_error_m = (result.x.translation - cfg.x_true.translation).norm();
            outcome.angle_error_x_rad = ax;
            outcome.angle_error_y_rad = ay;
            outcome.angle_error_z_rad = az;
            outcome.estimate = Some(result.x);
        }
        Err(e) => outcome.error = Some(e.to_string()),
    }
    Ok(outcome)
}

/// Runs trials `0..n` in parallel; the result is ordered by trial index.
pub fn run_trials(scenario: &Scenario, n: usize) -> Result<Vec<TrialOutcome>, SimError> {
    scenario.validate()?;
    (0..n).into_par_iter().map(|i| run_trial(scenario, i)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub median: f64,
}

impl ErrorStats {
    pub fn of(mut values: Vec<f64>) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                median: f64::NAN,
            };
        }
        values.sort_by(f64::total_cmp);
        let n = values.len();
        let median = if n % 2 == 1 {
            values[n / 2]
        } else {
            (values[n / 2 - 1] + values[n / 2]) / 2.0
        };
        Self {
            mean: values.iter().sum::<f64>() / n as f64,
            median,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trials: usize,
    pub failures: usize,
    pub position_error_m: ErrorStats,
    pub angle_error_x_rad: ErrorStats,
    pub angle_error_y_rad: ErrorStats,
    pub angle_error_z_rad: ErrorStats,
}

/// Mean and median over the successful trials.
pub fn summarize(outcomes: &[TrialOutcome]) -> TrialSummary {
    let ok: Vec<&TrialOutcome> = outcomes.iter().filter(|o| o.succeeded()).collect();
    let col = |f: fn(&TrialOutcome) -> f64| ErrorStats::of(ok.iter().map(|o| f(o)).collect());
    TrialSummary {
        trials: outcomes.len(),
        failures: outcomes.len() - ok.len(),
        position_error_m: col(|o| o.position_error_m),
        angle_error_x_rad: col(|o| o.angle_error_x_rad),
        angle_error_y_rad: col(|o| o.angle_error_y_rad),
        angle_error_z_rad: col(|o| o.angle_error_z_rad),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShakeParams {
    /// Pitch amplitude, rad.
    pub amplitude: f64,
    pub frequency: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionSettings {
    pub enabled: bool,
    pub online: OnlineConfig,
}

impl Default for CorrectionSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            online: OnlineConfig::default(),
        }
    }
}

/// Points in the static floor map used for the floor normal.
const MAP_POINTS: usize = 400;
/// Side of the mapped floor square, m.
const MAP_EXTENT: f64 = 2.0;

/// Shakes the head of a stationary robot in pitch and localizes its foot
/// through the observed device pose, the true extrinsic and joint readings
/// delayed by `encoder_latency`. The foot stays at the origin, so every
/// reported error comes from the observation chain.
pub fn shake_experiment<R: Rng + ?Sized>(
    cfg: &SimConfig,
    shake: &ShakeParams,
    encoder_latency: f64,
    correction: &CorrectionSettings,
    rng: &mut R,
) -> Result<Vec<CorrectionRecord>, SimError> {
    cfg.validate()?;
    if !(encoder_latency.is_finite() && encoder_latency >= 0.0) {
        return Err(SimError::InvalidConfig(format!(
            "encoder latency must be non-negative, got {encoder_latency}"
        )));
    }
    if !(shake.duration > 0.0 && shake.amplitude.abs() <= cfg.joint_limit) {
        return Err(SimError::InvalidConfig("shake needs a positive duration and an amplitude within the joint limit".into()));
    }
    let base = Planar::default();
    let true_foot = base.to_pose().translation;
    let pitch_at = |t: f64| {
        if t < 0.0 {
            0.0
        } else {
            shake.amplitude * (2.0 * PI * shake.frequency * t).sin()
        }
    };

    let map = floor_patch(&Vec3::zeros(), MAP_POINTS, MAP_EXTENT, cfg.floor_point_noise, rng);
    let floor_normal = estimate_floor_normal(&map)
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?
        .normal;

    let steps = (shake.duration / cfg.dt).round() as usize;
    let mut state = CorrectionState::default();
    let mut records = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        let true_head = head_pose(&base, pitch_at(t), 0.0, cfg.head_height);
        let device = perturb_device(&(true_head * cfg.x_true), cfg, rng);
        let reported_pitch = pitch_at(t - encoder_latency) + gauss(rng, cfg.joint_angle_noise);
        let reported_yaw = gauss(rng, cfg.joint_angle_noise);
        let chain = head_pose(&Planar::default(), reported_pitch, reported_yaw, cfg.head_height).inverse();
        let footprint = localize_footprint(&device, &cfg.x_true, &chain);

        let corrected = if correction.enabled {
            if let Ok(next) = correction_step(&state, &footprint, &floor_normal, &correction.online) {
                state = next;
            }
            correct_footprint(&device, &footprint, &state.r_add)
        } else {
            footprint
        };
        records.push(CorrectionRecord {
            time_s: t,
            uncorrected_error_m: planar_error(&footprint.foot_pose.translation, &true_foot),
            corrected_error_m: planar_error(&corrected.foot_pose.translation, &true_foot),
            correction_angle_rad: if correction.enabled { state.last_angle } else { 0.0 },
        });
    }
    Ok(records)
}
