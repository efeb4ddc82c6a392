//! Robot to SLAM-device extrinsic calibration.
//!
//! - [`geometry`]: rotations and rigid transforms.
//! - [`session`]: transitions, motion classes and observability.
//! - [`solver`]: the `AX = XB` calibration with optional floor constraints.
//! - [`online`]: vertical-consistency correction of the localized footprint.
//! - [`simulator`]: seedable robot/device simulation and experiments.
//! - [`pose_log`]: the line-delimited pose-log file format.

pub mod geometry;
mod linalg;
pub mod online;
pub mod pose_log;
pub mod session;
pub mod simulator;
pub mod solver;

pub use geometry::{AxisAngle, GeometryError, Pose, Rotation, Vec3};
pub use linalg::RANK_TOLERANCE;
pub use session::{
    ClassifyConfig, FloorObservation, MotionClass, Parameter, ParameterMask, PosePairSample,
    RobotKinematics, Transition,
};
pub use solver::{calibrate, CalibrationResult, CalibrationSession, SolveConfig, SolveError};
