//! Scenario files: simulation settings, a motion script or preset method,
//! and the shake experiment, in TOML.

use serde::{Deserialize, Serialize};

use super::{MotionScript, ShakeParams, SimConfig, SimError};
use crate::geometry::{Pose, Rotation, Vec3};
use crate::online::OnlineConfig;
use crate::solver::SolveConfig;

/// Preset calibration procedures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Head yaw and pitch moves; no floor observations.
    TwoWayRotation,
    /// Base turns and forward drives with floor observations.
    Horizontal,
}

impl Method {
    pub fn script(&self) -> MotionScript {
        match self {
            Method::TwoWayRotation => MotionScript::two_way_rotation(),
            Method::Horizontal => MotionScript::horizontal(),
        }
    }

    pub fn uses_floor(&self) -> bool {
        matches!(self, Method::Horizontal)
    }
}

/// Observation and odometry noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub joint_angle: f64,
    pub device_position: f64,
    pub device_orientation: f64,
    pub floor_point: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Slip factor mean.
    pub a: f64,
    /// Slip factor deviation.
    pub b: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let c = SimConfig::default();
        Self {
            joint_angle: c.joint_angle_noise,
            device_position: c.device_position_noise,
            device_orientation: c.device_orientation_noise,
            floor_point: c.floor_point_noise,
            gamma1: c.gamma1,
            gamma2: c.gamma2,
            a: c.slip_mean,
            b: c.slip_dev,
        }
    }
}

impl NoiseSection {
    pub fn off() -> Self {
        Self {
            joint_angle: 0.0,
            device_position: 0.0,
            device_orientation: 0.0,
            floor_point: 0.0,
            gamma1: 0.0,
            gamma2: 0.0,
            a: 1.0,
            b: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotSection {
    pub head_height: f64,
    pub dt: f64,
    pub linear_accel_limit: f64,
    pub angular_accel_limit: f64,
    pub head_move_duration: f64,
    pub joint_limit: f64,
}

impl Default for RobotSection {
    fn default() -> Self {
        let c = SimConfig::default();
        Self {
            head_height: c.head_height,
            dt: c.dt,
            linear_accel_limit: c.linear_accel_limit,
            angular_accel_limit: c.angular_accel_limit,
            head_move_duration: c.head_move_duration,
            joint_limit: c.joint_limit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub keyframe_window: f64,
    pub decimation: usize,
    pub floor_patch_points: usize,
    pub floor_patch_extent: f64,
}

impl Default for SamplingSection {
    fn default() -> Self {
        let c = SimConfig::default();
        Self {
            keyframe_window: c.keyframe_window,
            decimation: c.decimation,
            floor_patch_points: c.floor_patch_points,
            floor_patch_extent: c.floor_patch_extent,
        }
    }
}

/// True head to device transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtrinsicSection {
    pub translation: [f64; 3],
    /// Unit quaternion, `w, x, y, z`.
    pub rotation_wxyz: [f64; 4],
}

impl Default for ExtrinsicSection {
    fn default() -> Self {
        Self {
            translation: [0.12, 0.12, 0.12],
            rotation_wxyz: [1.0, 0.0, 0.0, 0.0],
        }
    }
}

impl ExtrinsicSection {
    pub fn pose(&self) -> Result<Pose, SimError> {
        let [w, x, y, z] = self.rotation_wxyz;
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(SimError::InvalidScenario(format!(
                "extrinsic rotation quaternion is not unit length (|q| = {norm})"
            )));
        }
        let r = Rotation::from_quaternion(w, x, y, z)
            .map_err(|e| SimError::InvalidScenario(format!("extrinsic rotation: {e}")))?;
        Ok(Pose::new(r, Vec3::from(self.translation)))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSection {
    pub allow_partial: bool,
    /// Nonlinear refinement after the linear solve.
    pub refine: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShakeSection {
    pub amplitude: f64,
    pub frequency: f64,
    pub duration: f64,
    /// Transport delay of the reported joint angles, s.
    pub latency: f64,
    pub smoothing: f64,
    pub max_correction: f64,
}

impl Default for ShakeSection {
    fn default() -> Self {
        let online = OnlineConfig::default();
        Self {
            amplitude: 0.5,
            frequency: 1.0,
            duration: 3.0,
            latency: 0.1,
            smoothing: online.smoothing,
            max_correction: online.max_correction,
        }
    }
}

impl ShakeSection {
    pub fn params(&self) -> ShakeParams {
        ShakeParams {
            amplitude: self.amplitude,
            frequency: self.frequency,
            duration: self.duration,
        }
    }

    pub fn online(&self) -> OnlineConfig {
        OnlineConfig {
            max_correction: self.max_correction,
            smoothing: self.smoothing,
            ..OnlineConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub method: Method,
    /// Overrides the method's floor usage when set.
    pub use_floor: Option<bool>,
    /// Default trial count for Monte-Carlo runs.
    pub trials: usize,
    pub noise: NoiseSection,
    pub robot: RobotSection,
    pub sampling: SamplingSection,
    pub extrinsic: ExtrinsicSection,
    pub solve: SolveSection,
    pub shake: ShakeSection,
    /// Replaces the method's preset script when non-empty.
    pub script: Vec<super::Command>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "two-way-rotation".into(),
            seed: 1,
            method: Method::TwoWayRotation,
            use_floor: None,
            trials: 5,
            noise: NoiseSection::default(),
            robot: RobotSection::default(),
            sampling: SamplingSection {
                keyframe_window: 0.0,
                ..SamplingSection::default()
            },
            extrinsic: ExtrinsicSection::default(),
            solve: SolveSection::default(),
            shake: ShakeSection::default(),
            script: Vec::new(),
        }
    }
}

impl Scenario {
    /// Head rotations at the default noise levels.
    pub fn two_way_rotation() -> Self {
        Self::default()
    }

    /// Base motion with floor observations at the default noise levels.
    pub fn horizontal() -> Self {
        Self {
            name: "horizontal".into(),
            method: Method::Horizontal,
            ..Self::default()
        }
    }

    pub fn noiseless(mut self) -> Self {
        self.noise = NoiseSection::off();
        self.name = format!("{}-noiseless", self.name);
        self
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let s: Scenario = toml::from_str(text).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let cfg = self.sim_config()?;
        cfg.validate()?;
        self.motion_script().validate(&cfg)?;
        if self.trials == 0 {
            return Err(SimError::InvalidScenario("trials must be at least 1".into()));
        }
        let s = &self.shake;
        if !(s.latency.is_finite() && s.latency >= 0.0) {
            return Err(SimError::InvalidScenario(format!("shake latency must be non-negative, got {}", s.latency)));
        }
        if !(s.duration > 0.0 && s.frequency >= 0.0 && s.amplitude.is_finite()) {
            return Err(SimError::InvalidScenario("shake duration must be positive and frequency non-negative".into()));
        }
        if !(0.0..=1.0).contains(&s.smoothing) || s.max_correction.is_nan() || s.max_correction <= 0.0 {
            return Err(SimError::InvalidScenario(
                "shake smoothing must lie in [0, 1] and max_correction be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn sim_config(&self) -> Result<SimConfig, SimError> {
        Ok(SimConfig {
            dt: self.robot.dt,
            joint_angle_noise: self.noise.joint_angle,
            device_position_noise: self.noise.device_position,
            device_orientation_noise: self.noise.device_orientation,
            floor_point_noise: self.noise.floor_point,
            gamma1: self.noise.gamma1,
            gamma2: self.noise.gamma2,
            slip_mean: self.noise.a,
            slip_dev: self.noise.b,
            head_height: self.robot.head_height,
            x_true: self.extrinsic.pose()?,
            rng_seed: self.seed,
            linear_accel_limit: self.robot.linear_accel_limit,
            angular_accel_limit: self.robot.angular_accel_limit,
            head_move_duration: self.robot.head_move_duration,
            joint_limit: self.robot.joint_limit,
            keyframe_window: self.sampling.keyframe_window,
            decimation: self.sampling.decimation,
            floor_patch_points: self.sampling.floor_patch_points,
            floor_patch_extent: self.sampling.floor_patch_extent,
        })
    }

    pub fn motion_script(&self) -> MotionScript {
        if self.script.is_empty() {
            self.method.script()
        } else {
            MotionScript(self.script.clone())
        }
    }

    pub fn uses_floor(&self) -> bool {
        self.use_floor.unwrap_or(self.method.uses_floor())
    }

    pub fn solve_config(&self) -> SolveConfig {
        SolveConfig {
            allow_partial: self.solve.allow_partial,
            refine: self.solve.refine,
            ..SolveConfig::default()
        }
    }
}
