//! Calibration inputs: pose-pair samples, head/device transitions, motion
//! classification and the observability of the six extrinsic parameters.
//!
//! A transition pairs the head motion `A = before_head⁻¹ · after_head` with
//! the device motion `B = before_device⁻¹ · after_device`. Both are expressed
//! in their own frame at the pre-transition sample, so classification is
//! done against the head's z axis at that sample and does not depend on the
//! world frame of either stream.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Vec3};
use crate::linalg::{numerical_rank, row_singular_values};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("sample {index}: timestamp {timestamp} is earlier than the previous sample")]
    NonMonotonicTimestamp { index: usize, timestamp: f64 },
    #[error("floor observation is invalid: {0}")]
    InvalidFloorObservation(String),
    #[error("robot kinematics are invalid: {0}")]
    InvalidKinematics(String),
}

/// Head and device poses recorded at the same instant, each in its own
/// local/world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosePairSample {
    pub timestamp: f64,
    pub head_pose: Pose,
    pub device_pose: Pose,
}

/// `a` is the head transition, `b` the device transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub a: Pose,
    pub b: Pose,
}

pub fn relative_transition(before: &PosePairSample, after: &PosePairSample) -> Transition {
    Transition {
        a: before.head_pose.inverse() * after.head_pose,
        b: before.device_pose.inverse() * after.device_pose,
    }
}

/// Transitions between consecutive samples.
pub fn transitions_from_samples(
    samples: &[PosePairSample],
) -> Result<Vec<Transition>, SessionError> {
    for (index, w) in samples.windows(2).enumerate() {
        if w[1].timestamp < w[0].timestamp {
            return Err(SessionError::NonMonotonicTimestamp {
                index: index + 1,
                timestamp: w[1].timestamp,
            });
        }
    }
    Ok(samples
        .windows(2)
        .map(|w| relative_transition(&w[0], &w[1]))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyConfig {
    /// rad
    pub min_angle: f64,
    /// m
    pub min_translation: f64,
    /// rad, tolerance on the rotation axis direction
    pub axis_tolerance: f64,
    /// m, translation allowed alongside a pure rotation
    pub max_incidental_translation: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            min_angle: 0.05,
            min_translation: 0.02,
            axis_tolerance: 0.1,
            max_incidental_translation: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MotionClass {
    /// Rotation about the head's vertical axis.
    HorizontalRotation,
    /// Rotation about an axis in the head's horizontal plane.
    VerticalRotation,
    /// Translation without rotation.
    ForwardTranslation,
    /// Any other rotation, with its unit axis in the pre-transition head frame.
    Complex { axis: Vec3 },
    Negligible,
}

impl MotionClass {
    pub fn name(&self) -> &'static str {
        match self {
            MotionClass::HorizontalRotation => "horizontal-rotation",
            MotionClass::VerticalRotation => "vertical-rotation",
            MotionClass::ForwardTranslation => "forward-translation",
            MotionClass::Complex { .. } => "complex",
            MotionClass::Negligible => "negligible",
        }
    }

    pub fn is_rotational(&self) -> bool {
        matches!(
            self,
            MotionClass::HorizontalRotation
                | MotionClass::VerticalRotation
                | MotionClass::Complex { .. }
        )
    }
}

impl fmt::Display for MotionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn classify_motion(t: &Transition, cfg: &ClassifyConfig) -> MotionClass {
    let angle = t.a.rotation.angle();
    let translation = t.a.translation.norm();
    if angle < cfg.min_angle {
        return if translation < cfg.min_translation {
            MotionClass::Negligible
        } else {
            MotionClass::ForwardTranslation
        };
    }
    let axis = match t.a.rotation.to_axis_angle() {
        Ok(aa) => aa.axis,
        // min_angle is configured below the axis threshold
        Err(_) => return MotionClass::Negligible,
    };
    let vertical_component = axis.z.abs().min(1.0);
    let tilt_from_vertical = vertical_component.acos();
    let elevation = vertical_component.asin();
    let small_translation = translation < cfg.max_incidental_translation;
    if small_translation && tilt_from_vertical < cfg.axis_tolerance {
        MotionClass::HorizontalRotation
    } else if small_translation && elevation < cfg.axis_tolerance {
        MotionClass::VerticalRotation
    } else {
        MotionClass::Complex { axis }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Parameter {
    #[serde(rename = "t_x")]
    Tx,
    #[serde(rename = "t_y")]
    Ty,
    #[serde(rename = "t_z")]
    Tz,
    #[serde(rename = "roll")]
    Roll,
    #[serde(rename = "pitch")]
    Pitch,
    #[serde(rename = "yaw")]
    Yaw,
}

impl Parameter {
    pub const ALL: [Parameter; 6] = [
        Parameter::Tx,
        Parameter::Ty,
        Parameter::Tz,
        Parameter::Roll,
        Parameter::Pitch,
        Parameter::Yaw,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Parameter::Tx => "t_x",
            Parameter::Ty => "t_y",
            Parameter::Tz => "t_z",
            Parameter::Roll => "roll",
            Parameter::Pitch => "pitch",
            Parameter::Yaw => "yaw",
        }
    }

    /// Head-frame axis index (x = 0) the parameter translates along or
    /// rotates about.
    pub fn axis_index(&self) -> usize {
        match self {
            Parameter::Tx | Parameter::Roll => 0,
            Parameter::Ty | Parameter::Pitch => 1,
            Parameter::Tz | Parameter::Yaw => 2,
        }
    }

    pub fn is_translation(&self) -> bool {
        matches!(self, Parameter::Tx | Parameter::Ty | Parameter::Tz)
    }

    /// Which motion adds a constraint on this parameter.
    pub fn hint(&self) -> &'static str {
        match self {
            Parameter::Tx => "add a horizontal or vertical rotation",
            Parameter::Ty => "add a horizontal rotation",
            Parameter::Tz => "add vertical rotation or floor observations",
            Parameter::Roll => "add a horizontal or vertical rotation",
            Parameter::Pitch => "add a horizontal rotation or forward movement",
            Parameter::Yaw => "add a vertical rotation or forward movement",
        }
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which extrinsic parameters are constrained (`true`) by a set of motions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParameterMask {
    pub t_x: bool,
    pub t_y: bool,
    pub t_z: bool,
    pub roll: bool,
    pub pitch: bool,
    pub yaw: bool,
}

impl ParameterMask {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        Self::from_params(&Parameter::ALL)
    }

    pub fn from_params(params: &[Parameter]) -> Self {
        let mut m = Self::none();
        for &p in params {
            m.set(p, true);
        }
        m
    }

    pub fn get(&self, p: Parameter) -> bool {
        match p {
            Parameter::Tx => self.t_x,
            Parameter::Ty => self.t_y,
            Parameter::Tz => self.t_z,
            Parameter::Roll => self.roll,
            Parameter::Pitch => self.pitch,
            Parameter::Yaw => self.yaw,
        }
    }

    pub fn set(&mut self, p: Parameter, value: bool) {
        let slot = match p {
            Parameter::Tx => &mut self.t_x,
            Parameter::Ty => &mut self.t_y,
            Parameter::Tz => &mut self.t_z,
            Parameter::Roll => &mut self.roll,
            Parameter::Pitch => &mut self.pitch,
            Parameter::Yaw => &mut self.yaw,
        };
        *slot = value;
    }

    pub fn union(&self, other: &ParameterMask) -> ParameterMask {
        let mut out = *self;
        for p in Parameter::ALL {
            if other.get(p) {
                out.set(p, true);
            }
        }
        out
    }

    pub fn is_complete(&self) -> bool {
        Parameter::ALL.iter().all(|&p| self.get(p))
    }

    pub fn constrained(&self) -> Vec<Parameter> {
        Parameter::ALL.into_iter().filter(|&p| self.get(p)).collect()
    }

    pub fn unconstrained(&self) -> Vec<Parameter> {
        Parameter::ALL.into_iter().filter(|&p| !self.get(p)).collect()
    }
}

impl fmt::Display for ParameterMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = Parameter::ALL
            .iter()
            .map(|p| format!("{}={}", p, if self.get(*p) { "constrained" } else { "free" }))
            .collect();
        f.write_str(&parts.join(" "))
    }
}

/// Per-axis rule: a rotation about `axis` (or a translation along it)
/// constrains the parameters of every head axis that is not aligned with it.
fn axis_constraints(axis: &Vec3, rotation: bool, translation: bool) -> ParameterMask {
    let aligned_cos = ClassifyConfig::default().axis_tolerance.cos();
    let mut m = ParameterMask::none();
    for p in Parameter::ALL {
        let aligned = axis[p.axis_index()].abs() >= aligned_cos;
        let wanted = if p.is_translation() { translation } else { rotation };
        if wanted && !aligned {
            m.set(p, true);
        }
    }
    m
}

/// Parameters a motion class constrains, for motions along the head's
/// canonical axes (horizontal rotation about z, vertical rotation about y,
/// forward translation along x).
pub fn constrained_parameters(class: MotionClass) -> ParameterMask {
    match class {
        MotionClass::HorizontalRotation => axis_constraints(&Vec3::z(), true, true),
        MotionClass::VerticalRotation => axis_constraints(&Vec3::y(), true, true),
        MotionClass::ForwardTranslation => axis_constraints(&Vec3::x(), true, false),
        MotionClass::Complex { axis } => axis_constraints(&axis, true, true),
        MotionClass::Negligible => ParameterMask::none(),
    }
}

/// Parameters constrained by one transition, using its actual rotation axis
/// or translation direction rather than the canonical one of its class.
pub fn transition_constraints(t: &Transition, class: MotionClass) -> ParameterMask {
    match class {
        MotionClass::Negligible => ParameterMask::none(),
        MotionClass::ForwardTranslation => {
            axis_constraints(&t.a.translation.normalize(), true, false)
        }
        MotionClass::HorizontalRotation | MotionClass::VerticalRotation => {
            match t.a.rotation.to_axis_angle() {
                Ok(aa) => axis_constraints(&aa.axis, true, true),
                Err(_) => constrained_parameters(class),
            }
        }
        MotionClass::Complex { axis } => axis_constraints(&axis, true, true),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservabilityReport {
    pub mask: ParameterMask,
    #[serde(serialize_with = "serialize_classes")]
    pub classes: Vec<MotionClass>,
    /// Numerical rank of the stacked rotation-axis / forward-direction system.
    pub rotation_rank: usize,
    pub rotation_singular_values: [f64; 3],
    /// Numerical rank of the stacked `(I - R_A)` translation system.
    pub translation_rank: usize,
    pub translation_singular_values: [f64; 3],
    pub floor_rows: usize,
    pub warnings: Vec<String>,
}

fn serialize_classes<S: serde::Serializer>(
    classes: &[MotionClass],
    s: S,
) -> Result<S::Ok, S::Error> {
    s.collect_seq(classes.iter().map(|c| c.name()))
}

impl ObservabilityReport {
    pub fn is_complete(&self) -> bool {
        self.mask.is_complete()
    }
}

pub fn observability_report(
    transitions: &[Transition],
    floor_observations: usize,
    cfg: &ClassifyConfig,
) -> ObservabilityReport {
    let classes: Vec<MotionClass> = transitions
        .iter()
        .map(|t| classify_motion(t, cfg))
        .collect();

    let mut mask = ParameterMask::none();
    let mut direction_rows = Vec::new();
    let mut translation_rows = Vec::new();
    let mut warnings = Vec::new();
    for (i, (t, class)) in transitions.iter().zip(&classes).enumerate() {
        mask = mask.union(&transition_constraints(t, *class));
        match class {
            MotionClass::ForwardTranslation => direction_rows.push(t.a.translation.normalize()),
            c if c.is_rotational() => {
                if let Ok(aa) = t.a.rotation.to_axis_angle() {
                    direction_rows.push(aa.axis);
                }
                let block = nalgebra::Matrix3::identity() - t.a.rotation.matrix();
                for r in 0..3 {
                    translation_rows.push(Vec3::new(block[(r, 0)], block[(r, 1)], block[(r, 2)]));
                }
                if let MotionClass::Complex { .. } = c {
                    warnings.push(format!(
                        "transition {i} mixes rotation and translation; pure rotations and pure translations calibrate more accurately"
                    ));
                }
            }
            _ => {}
        }
    }
    if floor_observations > 0 {
        mask.t_z = true;
    }
    let rotation_singular_values = row_singular_values(&direction_rows);
    let translation_singular_values = row_singular_values(&translation_rows);
    ObservabilityReport {
        mask,
        classes,
        rotation_rank: numerical_rank(&rotation_singular_values),
        rotation_singular_values,
        translation_rank: numerical_rank(&translation_singular_values),
        translation_singular_values,
        floor_rows: floor_observations,
        warnings,
    }
}

/// Floor normal and device height above the floor at one sample.
///
/// The normal is stored in the device frame at that sample, which keeps the
/// observation independent of the device's world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorObservation {
    pub normal: Vec3,
    pub height: f64,
}

impl FloorObservation {
    pub fn new(normal: Vec3, height: f64) -> Result<Self, SessionError> {
        let n = normal.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(SessionError::InvalidFloorObservation(
                "normal has zero length".into(),
            ));
        }
        if (n - 1.0).abs() > 1e-6 {
            return Err(SessionError::InvalidFloorObservation(format!(
                "normal is not unit length (|n| = {n})"
            )));
        }
        if !(height.is_finite() && height > 0.0) {
            return Err(SessionError::InvalidFloorObservation(format!(
                "height must be positive, got {height}"
            )));
        }
        Ok(Self {
            normal: normal / n,
            height,
        })
    }

    /// From a normal expressed in the device's map frame and the device pose
    /// in that frame at the same instant.
    pub fn from_map_frame(
        normal_in_map: Vec3,
        height: f64,
        device_pose: &Pose,
    ) -> Result<Self, SessionError> {
        Self::new(device_pose.rotation.inverse() * normal_in_map, height)
    }
}

/// Robot shape information needed by the floor constraint and footprint
/// localization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotKinematics {
    /// Vector from the head frame origin to the foot frame origin, in the
    /// head frame, m.
    pub head_to_foot: Vec3,
    /// Height of the head frame origin above the floor, m.
    pub head_height: f64,
}

impl RobotKinematics {
    pub fn new(head_to_foot: Vec3, head_height: f64) -> Result<Self, SessionError> {
        if !(head_height.is_finite() && head_height > 0.0) {
            return Err(SessionError::InvalidKinematics(format!(
                "head height must be positive, got {head_height}"
            )));
        }
        if !head_to_foot.iter().all(|c| c.is_finite()) {
            return Err(SessionError::InvalidKinematics(
                "head_to_foot is not finite".into(),
            ));
        }
        Ok(Self {
            head_to_foot,
            head_height,
        })
    }

    /// Head directly above the foot with level head joints.
    pub fn upright(head_height: f64) -> Result<Self, SessionError> {
        Self::new(Vec3::new(0.0, 0.0, -head_height), head_height)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;

    fn sample(head: Pose, device: Pose, timestamp: f64) -> PosePairSample {
        PosePairSample {
            timestamp,
            head_pose: head,
            device_pose: device,
        }
    }

    fn pure(r: Rotation) -> Transition {
        Transition {
            a: Pose::from_rotation(r),
            b: Pose::from_rotation(r),
        }
    }

    #[test]
    fn relative_transition_examples() {
        let id = sample(Pose::identity(), Pose::identity(), 0.0);
        let t = relative_transition(&id, &id);
        assert_eq!(t.a, Pose::identity());
        assert_eq!(t.b, Pose::identity());

        let moved = Pose::from_translation(Vec3::x());
        let t = relative_transition(&id, &sample(moved, moved, 1.0));
        assert_eq!(t.a.translation, Vec3::x());
        assert_eq!(t.b.translation, Vec3::x());

        // device poses generated forward from the ground-truth extrinsic
        let x = Pose::from_translation(Vec3::new(0.12, 0.12, 0.12));
        let h1 = Pose::identity();
        let h2 = Pose::from_rotation(Rotation::rz(0.3));
        let t = relative_transition(&sample(h1, h1 * x, 0.0), &sample(h2, h2 * x, 1.0));
        let (dr, dt) = (t.a * x).distance_to(&(x * t.b));
        assert!(dr < 1e-9 && dt < 1e-9);
    }

    #[test]
    fn timestamps_must_not_decrease() {
        let s = |ts| sample(Pose::identity(), Pose::identity(), ts);
        assert_eq!(transitions_from_samples(&[s(0.0), s(1.0), s(1.0)]).unwrap().len(), 2);
        assert_eq!(
            transitions_from_samples(&[s(0.0), s(2.0), s(1.0)]),
            Err(SessionError::NonMonotonicTimestamp {
                index: 2,
                timestamp: 1.0
            })
        );
    }

    #[test]
    fn classify_examples() {
        let cfg = ClassifyConfig::default();
        assert_eq!(
            classify_motion(&pure(Rotation::rz(0.3)), &cfg),
            MotionClass::HorizontalRotation
        );
        assert_eq!(
            classify_motion(&pure(Rotation::ry(0.3)), &cfg),
            MotionClass::VerticalRotation
        );
        let fwd = Pose::from_translation(Vec3::new(0.6, 0.0, 0.0));
        assert_eq!(
            classify_motion(&Transition { a: fwd, b: fwd }, &cfg),
            MotionClass::ForwardTranslation
        );
        assert_eq!(
            classify_motion(&pure(Rotation::rz(0.01)), &cfg),
            MotionClass::Negligible
        );
        let tilted = Rotation::from_axis_angle(&Vec3::new(1.0, 0.0, 1.0), 0.3);
        assert!(matches!(
            classify_motion(&pure(tilted), &cfg),
            MotionClass::Complex { .. }
        ));
        // rotation plus a large translation
        let mixed = Pose::new(Rotation::rz(0.3), Vec3::new(0.5, 0.0, 0.0));
        assert!(matches!(
            classify_motion(&Transition { a: mixed, b: mixed }, &cfg),
            MotionClass::Complex { .. }
        ));
    }

    #[test]
    fn fixed_masks_match_motion_table() {
        use Parameter::*;
        assert_eq!(
            constrained_parameters(MotionClass::HorizontalRotation),
            ParameterMask::from_params(&[Roll, Pitch, Tx, Ty])
        );
        assert_eq!(
            constrained_parameters(MotionClass::VerticalRotation),
            ParameterMask::from_params(&[Roll, Yaw, Tx, Tz])
        );
        assert_eq!(
            constrained_parameters(MotionClass::ForwardTranslation),
            ParameterMask::from_params(&[Pitch, Yaw])
        );
        assert_eq!(
            constrained_parameters(MotionClass::Negligible),
            ParameterMask::none()
        );
        let complex = constrained_parameters(MotionClass::Complex {
            axis: Vec3::new(1.0, 0.0, 1.0).normalize(),
        });
        assert!(complex.is_complete());
    }

    #[test]
    fn report_examples() {
        let cfg = ClassifyConfig::default();
        let h = pure(Rotation::rz(0.3));
        let v = pure(Rotation::ry(0.3));
        let fwd = Pose::from_translation(Vec3::new(0.6, 0.0, 0.0));
        let f = Transition { a: fwd, b: fwd };

        let r = observability_report(&[h], 0, &cfg);
        assert_eq!(r.mask.unconstrained(), vec![Parameter::Tz, Parameter::Yaw]);
        assert_eq!(r.rotation_rank, 1);
        assert_eq!(r.translation_rank, 2);

        let r = observability_report(&[h, h, v, v], 0, &cfg);
        assert!(r.is_complete());
        assert_eq!(r.rotation_rank, 2);
        assert_eq!(r.translation_rank, 3);

        let r = observability_report(&[h, h, f, f], 5, &cfg);
        assert!(r.is_complete());
        assert_eq!(r.translation_rank, 2);
        assert_eq!(r.floor_rows, 5);

        let r = observability_report(&[h, h, f, f], 0, &cfg);
        assert_eq!(r.mask.unconstrained(), vec![Parameter::Tz]);
    }

    #[test]
    fn complex_transition_warns() {
        let mixed = Pose::new(Rotation::rz(0.3), Vec3::new(0.5, 0.0, 0.0));
        let r = observability_report(
            &[Transition { a: mixed, b: mixed }],
            0,
            &ClassifyConfig::default(),
        );
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn floor_observation_validation() {
        assert!(FloorObservation::new(Vec3::z(), 1.2).is_ok());
        assert!(FloorObservation::new(Vec3::z() * 2.0, 1.2).is_err());
        assert!(FloorObservation::new(Vec3::z(), -1.0).is_err());
        let device = Pose::from_rotation(Rotation::rx(0.5));
        let f = FloorObservation::from_map_frame(Vec3::z(), 1.0, &device).unwrap();
        assert!((device.rotation * f.normal - Vec3::z()).norm() < 1e-12);
        assert!(RobotKinematics::upright(0.0).is_err());
    }
}
