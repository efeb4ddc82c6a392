//! Seedable simulation of a mobile robot with a two-joint head carrying a
//! SLAM device.
//!
//! The base is driven by velocity commands through a noisy velocity model
//! with multiplicative slip; the robot's odometry integrates the velocity
//! it observes while the true pose integrates the slipped displacement.
//! Observations add Gaussian noise to the joint angles, the device pose and
//! points on the floor plane `z = 0`.

mod experiment;
mod scenario;

pub use experiment::{
    angle_errors, run_trial, run_trials, shake_experiment, summarize, CorrectionSettings,
    ErrorStats, ShakeParams, TrialOutcome, TrialSummary,
};
pub use scenario::{
    ExtrinsicSection, Method, NoiseSection, RobotSection, SamplingSection, Scenario,
    ShakeSection, SolveSection,
};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Rotation, Vec3};
use crate::online::estimate_floor_normal;
use crate::pose_log::{session_from_records, FloorSample, PoseLogRecord};
use crate::session::{PosePairSample, RobotKinematics};
use crate::solver::CalibrationSession;

/// Settling time appended after a script that does not end in a hold, s.
pub const TRAILING_HOLD: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("invalid motion script: {0}")]
    InvalidScript(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Update period, s.
    pub dt: f64,
    /// Standard deviations of the observation noise.
    pub joint_angle_noise: f64,
    pub device_position_noise: f64,
    pub device_orientation_noise: f64,
    pub floor_point_noise: f64,
    /// Velocity noise coefficients.
    pub gamma1: f64,
    pub gamma2: f64,
    /// Mean and deviation of the per-step slip factor.
    pub slip_mean: f64,
    pub slip_dev: f64,
    /// Height of the head joints above the floor, m.
    pub head_height: f64,
    /// Head to device transform.
    pub x_true: Pose,
    pub rng_seed: u64,
    pub linear_accel_limit: f64,
    pub angular_accel_limit: f64,
    /// Time taken by one head move, s.
    pub head_move_duration: f64,
    /// Absolute limit on both head joints, rad.
    pub joint_limit: f64,
    /// Keyframe samples are averaged over this much of the end of each
    /// hold, s. Zero takes a single sample.
    pub keyframe_window: f64,
    /// Every `decimation`-th step is kept in the observation trace.
    pub decimation: usize,
    pub floor_patch_points: usize,
    /// Side of the square floor patch observed at each keyframe, m.
    pub floor_patch_extent: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            joint_angle_noise: 0.001,
            device_position_noise: 0.002,
            device_orientation_noise: 0.004,
            floor_point_noise: 0.02,
            gamma1: 0.04,
            gamma2: 0.04,
            slip_mean: 0.985,
            slip_dev: 0.01,
            head_height: 1.1,
            x_true: Pose::from_translation(Vec3::new(0.12, 0.12, 0.12)),
            rng_seed: 0,
            linear_accel_limit: 1.0,
            angular_accel_limit: 1.0,
            head_move_duration: 1.0,
            joint_limit: 2.0,
            keyframe_window: 0.5,
            decimation: 1,
            floor_patch_points: 50,
            floor_patch_extent: 1.0,
        }
    }
}

impl SimConfig {
    /// Default geometry with every noise source off and no slip.
    pub fn noiseless() -> Self {
        Self {
            joint_angle_noise: 0.0,
            device_position_noise: 0.0,
            device_orientation_noise: 0.0,
            floor_point_noise: 0.0,
            gamma1: 0.0,
            gamma2: 0.0,
            slip_mean: 1.0,
            slip_dev: 0.0,
            ..Self::default()
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.rng_seed)
    }

    pub fn kinematics(&self) -> RobotKinematics {
        RobotKinematics {
            head_to_foot: Vec3::new(0.0, 0.0, -self.head_height),
            head_height: self.head_height,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        for (name, v) in [
            ("joint_angle_noise", self.joint_angle_noise),
            ("device_position_noise", self.device_position_noise),
            ("device_orientation_noise", self.device_orientation_noise),
            ("floor_point_noise", self.floor_point_noise),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("slip_dev", self.slip_dev),
            ("keyframe_window", self.keyframe_window),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        for (name, v) in [
            ("slip_mean", self.slip_mean),
            ("head_height", self.head_height),
            ("linear_accel_limit", self.linear_accel_limit),
            ("angular_accel_limit", self.angular_accel_limit),
            ("head_move_duration", self.head_move_duration),
            ("joint_limit", self.joint_limit),
            ("floor_patch_extent", self.floor_patch_extent),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.decimation == 0 {
            return bad("decimation must be at least 1".into());
        }
        if self.floor_patch_points < 3 {
            return bad("floor_patch_points must be at least 3".into());
        }
        Ok(())
    }
}

/// Position and heading on the floor plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Planar {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Planar {
    pub fn to_pose(&self) -> Pose {
        Pose::new(Rotation::rz(self.theta), Vec3::new(self.x, self.y, 0.0))
    }

    /// Moves by a body-frame displacement, heading last.
    fn advance(&self, d: [f64; 3]) -> Planar {
        let (s, c) = self.theta.sin_cos();
        Planar {
            x: self.x + c * d[0] - s * d[1],
            y: self.y + s * d[0] + c * d[1],
            theta: self.theta + d[2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimState {
    /// True base pose.
    pub base: Planar,
    /// Base pose as integrated by the robot's odometry.
    pub odometry: Planar,
    pub pitch: f64,
    pub yaw: f64,
    /// Observed velocity per channel: forward, lateral (m/s), yaw rate (rad/s).
    pub dv: [f64; 3],
    pub time: f64,
}

/// Velocity and head joint targets for one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CommandInput {
    pub velocity: [f64; 3],
    pub pitch: f64,
    pub yaw: f64,
}

/// Head frame for a base pose and joint angles: yaw joint then pitch joint,
/// `head_height` above the base.
pub fn head_pose(base: &Planar, pitch: f64, yaw: f64, head_height: f64) -> Pose {
    base.to_pose()
        * Pose::from_translation(Vec3::new(0.0, 0.0, head_height))
        * Pose::from_rotation(Rotation::rz(yaw) * Rotation::ry(pitch))
}

impl SimState {
    pub fn true_head_pose(&self, cfg: &SimConfig) -> Pose {
        head_pose(&self.base, self.pitch, self.yaw, cfg.head_height)
    }

    pub fn true_device_pose(&self, cfg: &SimConfig) -> Pose {
        self.true_head_pose(cfg) * cfg.x_true
    }
}

fn gauss<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sigma * z
}

/// Advances the state by one `cfg.dt`.
pub fn step<R: Rng + ?Sized>(state: &SimState, cmd: &CommandInput, cfg: &SimConfig, rng: &mut R) -> SimState {
    let limits = [cfg.linear_accel_limit, cfg.linear_accel_limit, cfg.angular_accel_limit];
    let mut dv = [0.0; 3];
    let mut actual = [0.0; 3];
    let mut believed = [0.0; 3];
    for i in 0..3 {
        let v = state.dv[i];
        let accel = ((cmd.velocity[i] - v) / cfg.dt).clamp(-limits[i], limits[i]);
        let n1 = gauss(rng, cfg.gamma1 * v.abs());
        let n2 = gauss(rng, cfg.gamma2 * v.abs());
        let slip = cfg.slip_mean + gauss(rng, cfg.slip_dev);
        dv[i] = v + accel * cfg.dt + n1 + n2;
        actual[i] = dv[i] * slip * cfg.dt;
        believed[i] = dv[i] * cfg.dt;
    }
    SimState {
        base: state.base.advance(actual),
        odometry: state.odometry.advance(believed),
        pitch: cmd.pitch,
        yaw: cmd.yaw,
        dv,
        time: state.time + cfg.dt,
    }
}

/// One noisy sample. `floor` and `floor_points` are filled at keyframes.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub sample: PosePairSample,
    pub floor: Option<FloorSample>,
    pub floor_points: Vec<Vec3>,
}

impl Observation {
    pub fn to_record(&self) -> PoseLogRecord {
        PoseLogRecord {
            sample: self.sample,
            floor: self.floor,
        }
    }
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(gauss(rng, 1.0), gauss(rng, 1.0), gauss(rng, 1.0));
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Device pose with per-axis position noise and a random-axis orientation
/// error applied in the device frame.
pub fn perturb_device<R: Rng + ?Sized>(device: &Pose, cfg: &SimConfig, rng: &mut R) -> Pose {
    let dt = Vec3::new(
        gauss(rng, cfg.device_position_noise),
        gauss(rng, cfg.device_position_noise),
        gauss(rng, cfg.device_position_noise),
    );
    let axis = random_unit(rng);
    let angle = gauss(rng, cfg.device_orientation_noise);
    Pose::new(
        device.rotation * Rotation::from_axis_angle(&axis, angle),
        device.translation + dt,
    )
}

/// Noisy floor points on `z = 0` around `center`: the foot of the
/// perpendicular first, then a uniform square patch.
pub fn floor_patch<R: Rng + ?Sized>(center: &Vec3, points: usize, extent: f64, sigma: f64, rng: &mut R) -> Vec<Vec3> {
    (0..points)
        .map(|i| {
            let offset = if i == 0 {
                Vec3::zeros()
            } else {
                Vec3::new(
                    (rng.random::<f64>() - 0.5) * extent,
                    (rng.random::<f64>() - 0.5) * extent,
                    0.0,
                )
            };
            let p = Vec3::new(center.x, center.y, 0.0) + offset;
            p + Vec3::new(gauss(rng, sigma), gauss(rng, sigma), gauss(rng, sigma))
        })
        .collect()
}

/// Samples the current state. The head pose comes from odometry and noisy
/// joint readings, the device pose from the true head pose and `x_true`.
pub fn observe<R: Rng + ?Sized>(state: &SimState, cfg: &SimConfig, with_floor: bool, rng: &mut R) -> Observation {
    let pitch = state.pitch + gauss(rng, cfg.joint_angle_noise);
    let yaw = state.yaw + gauss(rng, cfg.joint_angle_noise);
    let head = head_pose(&state.odometry, pitch, yaw, cfg.head_height);
    let device = perturb_device(&state.true_device_pose(cfg), cfg, rng);
    let mut obs = Observation {
        sample: PosePairSample {
            timestamp: state.time,
            head_pose: head,
            device_pose: device,
        },
        floor: None,
        floor_points: Vec::new(),
    };
    if with_floor {
        attach_floor(&mut obs, state, cfg, rng);
    }
    obs
}

fn attach_floor<R: Rng + ?Sized>(obs: &mut Observation, state: &SimState, cfg: &SimConfig, rng: &mut R) {
    let points = floor_patch(
        &state.true_device_pose(cfg).translation,
        cfg.floor_patch_points,
        cfg.floor_patch_extent,
        cfg.floor_point_noise,
        rng,
    );
    // a square patch of at least three points is never collinear
    let fit = estimate_floor_normal(&points).expect("floor patch is planar");
    obs.floor = Some(FloorSample {
        normal: fit.normal,
        height: fit.height_of(&obs.sample.device_pose.translation),
    });
    obs.floor_points = points;
}

/// Average of several samples: chordal mean rotation, mean translation,
/// timestamp of the last one.
fn average_samples(samples: &[PosePairSample]) -> PosePairSample {
    let mean_pose = |f: fn(&PosePairSample) -> &Pose| {
        let rotations: Vec<Rotation> = samples.iter().map(|s| f(s).rotation).collect();
        let t = samples.iter().fold(Vec3::zeros(), |acc, s| acc + f(s).translation) / samples.len() as f64;
        Pose::new(Rotation::chordal_mean(&rotations).expect("non-empty"), t)
    };
    PosePairSample {
        timestamp: samples.last().expect("non-empty").timestamp,
        head_pose: mean_pose(|s| &s.head_pose),
        device_pose: mean_pose(|s| &s.device_pose),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Command {
    /// Turn the base at `rate` rad/s.
    RotateInPlace { rate: f64, duration: f64 },
    /// Drive straight at `speed` m/s.
    Forward { speed: f64, duration: f64 },
    /// Move the head joints by the given deltas over the configured time.
    HeadMove { pitch: f64, yaw: f64 },
    /// Sinusoidal pitch about the current pitch.
    ShakeHead { amplitude: f64, frequency: f64, duration: f64 },
    /// Stop and wait. Keyframes are taken at the end of each hold.
    Hold { duration: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MotionScript(pub Vec<Command>);

impl MotionScript {
    pub fn validate(&self, cfg: &SimConfig) -> Result<(), SimError> {
        let (mut pitch, mut yaw) = (0.0f64, 0.0f64);
        for (i, c) in self.0.iter().enumerate() {
            let bad = |m: &str| Err(SimError::InvalidScript(format!("command {}: {m}", i + 1)));
            let values: &[f64] = match c {
                Command::RotateInPlace { rate, duration } => &[*rate, *duration],
                Command::Forward { speed, duration } => &[*speed, *duration],
                Command::HeadMove { pitch, yaw } => &[*pitch, *yaw],
                Command::ShakeHead { amplitude, frequency, duration } => &[*amplitude, *frequency, *duration],
                Command::Hold { duration } => &[*duration],
            };
            if values.iter().any(|v| !v.is_finite()) {
                return bad("non-finite value");
            }
            match c {
                Command::RotateInPlace { duration, .. }
                | Command::Forward { duration, .. }
                | Command::ShakeHead { duration, .. }
                | Command::Hold { duration }
                    if *duration <= 0.0 =>
                {
                    return bad("duration must be positive");
                }
                Command::HeadMove { pitch: dp, yaw: dy } => {
                    pitch += dp;
                    yaw += dy;
                }
                Command::ShakeHead { amplitude, .. } if (pitch.abs() + amplitude.abs()) > cfg.joint_limit => {
                    return bad("shake exceeds the joint limit");
                }
                _ => {}
            }
            if pitch.abs() > cfg.joint_limit || yaw.abs() > cfg.joint_limit {
                return bad("head joint target exceeds the joint limit");
            }
        }
        Ok(())
    }

    /// Two horizontal and two vertical head rotations of 0.3 rad.
    pub fn two_way_rotation() -> Self {
        let hold = Command::Hold { duration: 1.0 };
        MotionScript(vec![
            Command::HeadMove { pitch: 0.0, yaw: 0.3 },
            hold,
            Command::HeadMove { pitch: 0.0, yaw: -0.3 },
            hold,
            Command::HeadMove { pitch: 0.3, yaw: 0.0 },
            hold,
            Command::HeadMove { pitch: -0.3, yaw: 0.0 },
        ])
    }

    /// Two in-place turns and two forward drives of 2 s each.
    pub fn horizontal() -> Self {
        let hold = Command::Hold { duration: 1.0 };
        MotionScript(vec![
            Command::RotateInPlace { rate: 0.3, duration: 2.0 },
            hold,
            Command::RotateInPlace { rate: -0.3, duration: 2.0 },
            hold,
            Command::Forward { speed: 0.3, duration: 2.0 },
            hold,
            Command::Forward { speed: 0.3, duration: 2.0 },
        ])
    }
}

/// Ground truth at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub time: f64,
    pub base: Pose,
    pub head: Pose,
    pub device: Pose,
}

impl TruthSample {
    fn of(state: &SimState, cfg: &SimConfig) -> Self {
        TruthSample {
            time: state.time,
            base: state.base.to_pose(),
            head: state.true_head_pose(cfg),
            device: state.true_device_pose(cfg),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptRun {
    /// Decimated per-step observations.
    pub observations: Vec<Observation>,
    /// Ground truth matching `observations`.
    pub truth: Vec<TruthSample>,
    /// Settled samples bracketing each motion, with floor observations.
    pub keyframes: Vec<Observation>,
    pub final_state: SimState,
}

impl ScriptRun {
    /// Calibration session over consecutive keyframes.
    pub fn session(&self, use_floor: bool, kinematics: RobotKinematics) -> CalibrationSession {
        let records: Vec<PoseLogRecord> = self
            .keyframes
            .iter()
            .map(|k| PoseLogRecord {
                sample: k.sample,
                floor: if use_floor { k.floor } else { None },
            })
            .collect();
        session_from_records(&records, use_floor.then_some(kinematics))
            .expect("simulated keyframes form a valid session")
    }
}

fn steps_for(duration: f64, dt: f64) -> usize {
    ((duration / dt).round() as usize).max(1)
}

struct Runner<'a, R: Rng + ?Sized> {
    cfg: &'a SimConfig,
    rng: &'a mut R,
    state: SimState,
    step_index: usize,
    run: ScriptRun,
    hold_samples: Vec<PosePairSample>,
}

impl<R: Rng + ?Sized> Runner<'_, R> {
    fn advance(&mut self, cmd: CommandInput, in_hold: bool) {
        self.state = step(&self.state, &cmd, self.cfg, self.rng);
        self.step_index += 1;
        let obs = observe(&self.state, self.cfg, false, self.rng);
        if in_hold {
            self.hold_samples.push(obs.sample);
        }
        if self.step_index.is_multiple_of(self.cfg.decimation) {
            self.run.truth.push(TruthSample::of(&self.state, self.cfg));
            self.run.observations.push(obs);
        }
    }

    fn keyframe(&mut self) {
        let window = steps_for(self.cfg.keyframe_window.max(self.cfg.dt), self.cfg.dt);
        let start = self.hold_samples.len().saturating_sub(window);
        let sample = average_samples(&self.hold_samples[start..]);
        let mut obs = Observation {
            sample,
            floor: None,
            floor_points: Vec::new(),
        };
        attach_floor(&mut obs, &self.state, self.cfg, self.rng);
        self.run.keyframes.push(obs);
        self.hold_samples.clear();
    }

    fn execute(&mut self, c: &Command) {
        let hold_joints = |s: &SimState| CommandInput {
            velocity: [0.0; 3],
            pitch: s.pitch,
            yaw: s.yaw,
        };
        match *c {
            Command::RotateInPlace { rate, duration } => {
                for _ in 0..steps_for(duration, self.cfg.dt) {
                    let cmd = CommandInput { velocity: [0.0, 0.0, rate], ..hold_joints(&self.state) };
                    self.advance(cmd, false);
                }
            }
            Command::Forward { speed, duration } => {
                for _ in 0..steps_for(duration, self.cfg.dt) {
                    let cmd = CommandInput { velocity: [speed, 0.0, 0.0], ..hold_joints(&self.state) };
                    self.advance(cmd, false);
                }
            }
            Command::HeadMove { pitch, yaw } => {
                let (p0, y0) = (self.state.pitch, self.state.yaw);
                let n = steps_for(self.cfg.head_move_duration, self.cfg.dt);
                for k in 1..=n {
                    let ramp = (1.0 - (std::f64::consts::PI * k as f64 / n as f64).cos()) / 2.0;
                    let ramp = if k == n { 1.0 } else { ramp };
                    let cmd = CommandInput {
                        velocity: [0.0; 3],
                        pitch: p0 + pitch * ramp,
                        yaw: y0 + yaw * ramp,
                    };
                    self.advance(cmd, false);
                }
            }
            Command::ShakeHead { amplitude, frequency, duration } => {
                let p0 = self.state.pitch;
                let n = steps_for(duration, self.cfg.dt);
                for k in 1..=n {
                    let t = k as f64 * self.cfg.dt;
                    let phase = 2.0 * std::f64::consts::PI * frequency * t;
                    let pitch = if k == n { p0 } else { p0 + amplitude * phase.sin() };
                    self.advance(CommandInput { pitch, ..hold_joints(&self.state) }, false);
                }
            }
            Command::Hold { duration } => {
                self.hold_samples.clear();
                for _ in 0..steps_for(duration, self.cfg.dt) {
                    let cmd = hold_joints(&self.state);
                    self.advance(cmd, true);
                }
                self.keyframe();
            }
        }
    }
}

/// Executes a script from the rest state at the origin.
///
/// Keyframes are taken at the start and at the end of every hold; a hold
/// is appended when the script does not end in one. With a positive
/// keyframe window the start is a hold of that length so the first
/// keyframe is averaged like the others. An empty script yields a single
/// observation of the initial state.
pub fn run_script<R: Rng + ?Sized>(script: &MotionScript, cfg: &SimConfig, rng: &mut R) -> Result<ScriptRun, SimError> {
    cfg.validate()?;
    script.validate(cfg)?;
    let initial = SimState::default();
    if script.0.is_empty() {
        let obs = observe(&initial, cfg, true, rng);
        return Ok(ScriptRun {
            observations: vec![obs.clone()],
            truth: vec![TruthSample::of(&initial, cfg)],
            keyframes: vec![obs],
            final_state: initial,
        });
    }
    let first = observe(&initial, cfg, false, rng);
    let mut runner = Runner {
        cfg,
        rng,
        state: initial,
        step_index: 0,
        run: ScriptRun {
            observations: vec![first.clone()],
            truth: vec![TruthSample::of(&initial, cfg)],
            keyframes: Vec::new(),
            final_state: initial,
        },
        hold_samples: vec![first.sample],
    };
    if cfg.keyframe_window > 0.0 {
        runner.execute(&Command::Hold { duration: cfg.keyframe_window });
    } else {
        runner.keyframe();
    }
    for c in &script.0 {
        runner.execute(c);
    }
    if !matches!(script.0.last(), Some(Command::Hold { .. })) {
        runner.execute(&Command::Hold { duration: TRAILING_HOLD });
    }
    runner.run.final_state = runner.state;
    Ok(runner.run)
}
