//! Online vertical-consistency correction.
//!
//! A robot standing on the floor has its foot frame's z axis parallel to the
//! floor normal. When the footprint is localized through the device pose,
//! the extrinsic and the joint chain, any roll/pitch error in that chain
//! tilts the localized foot and, at head height `h`, moves it sideways by
//! roughly `h·sin(error)`. The correction rotation `R_add` takes the
//! localized up vector `n'` onto the observed floor normal `n`; applying it
//! to the device→foot vector removes the height-proportional error and
//! leaves the rotation about `n` untouched.

use std::collections::VecDeque;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rotation_between_vectors, GeometryError, Pose, Rotation, Vec3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OnlineError {
    #[error("floor normal and robot up vector are antiparallel")]
    DegenerateAntiparallel,
    #[error("correction angle {angle:.4} rad exceeds the limit {limit:.4} rad; floor estimate is suspect")]
    AnomalousTilt { angle: f64, limit: f64 },
    #[error("degenerate point set: {0}")]
    DegenerateGeometry(String),
    #[error(transparent)]
    Geometry(GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineConfig {
    /// Largest correction applied, rad. Larger tilts are rejected.
    pub max_correction: f64,
    /// Smoothing factor in `[0, 1]`; 1 applies each correction directly.
    pub smoothing: f64,
    pub history_len: usize,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            max_correction: 0.5,
            smoothing: 1.0,
            history_len: 100,
        }
    }
}

/// Localized foot frame and its up vector, both in the map frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizedFootprint {
    pub foot_pose: Pose,
    pub up_vector: Vec3,
}

/// Foot pose through the chain `device · X⁻¹ · joint_chain`, where
/// `joint_chain` is the head→foot pose from the robot's encoders.
pub fn localize_footprint(device_pose_in_map: &Pose, x: &Pose, joint_chain: &Pose) -> LocalizedFootprint {
    let foot_pose = *device_pose_in_map * x.inverse() * *joint_chain;
    LocalizedFootprint {
        foot_pose,
        up_vector: foot_pose.rotation * Vec3::z(),
    }
}

/// Rotation taking the localized up vector `n_prime` onto the observed
/// floor normal `n_observed`, about `n' × n` by the angle between them.
pub fn compute_correction(
    n_observed: &Vec3,
    n_prime: &Vec3,
    cfg: &OnlineConfig,
) -> Result<Rotation, OnlineError> {
    let r_add = match rotation_between_vectors(n_prime, n_observed) {
        Ok(r) => r,
        Err(GeometryError::DegenerateAntiparallel { .. }) => {
            return Err(OnlineError::DegenerateAntiparallel)
        }
        Err(e) => return Err(OnlineError::Geometry(e)),
    };
    let angle = r_add.angle();
    if angle > cfg.max_correction {
        return Err(OnlineError::AnomalousTilt {
            angle,
            limit: cfg.max_correction,
        });
    }
    debug_assert!((r_add * n_prime.normalize() - n_observed.normalize()).norm() < 1e-9);
    Ok(r_add)
}

/// Corrected device→foot vector `R_add · a_obs`.
pub fn apply_correction(a_obs: &Vec3, r_add: &Rotation) -> Vec3 {
    r_add * a_obs
}

/// Applies `r_add` to the device→foot part of a localized footprint, with
/// the device position held fixed.
pub fn correct_footprint(
    device_pose_in_map: &Pose,
    footprint: &LocalizedFootprint,
    r_add: &Rotation,
) -> LocalizedFootprint {
    let device = device_pose_in_map.translation;
    let a_obs = footprint.foot_pose.translation - device;
    let rotation = *r_add * footprint.foot_pose.rotation;
    LocalizedFootprint {
        foot_pose: Pose::new(rotation, device + apply_correction(&a_obs, r_add)),
        up_vector: rotation * Vec3::z(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionState {
    pub r_add: Rotation,
    /// Angle of `r_add` after the last step, rad.
    pub last_angle: f64,
    pub history: VecDeque<f64>,
}

impl Default for CorrectionState {
    fn default() -> Self {
        Self {
            r_add: Rotation::identity(),
            last_angle: 0.0,
            history: VecDeque::new(),
        }
    }
}

/// One correction update. The instantaneous correction is computed from the
/// raw (uncorrected) footprint and blended into the current one by moving
/// a fraction `cfg.smoothing` along the geodesic towards it. An anomalous
/// tilt returns an error and the caller keeps its previous state.
pub fn correction_step(
    state: &CorrectionState,
    footprint: &LocalizedFootprint,
    floor_normal: &Vec3,
    cfg: &OnlineConfig,
) -> Result<CorrectionState, OnlineError> {
    let instant = compute_correction(floor_normal, &footprint.up_vector, cfg)?;
    let alpha = cfg.smoothing.clamp(0.0, 1.0);
    let r_add = if alpha >= 1.0 {
        instant
    } else {
        let delta = (instant * state.r_add.inverse()).rotation_vector();
        Rotation::from_rotation_vector(&(delta * alpha)) * state.r_add
    };
    let last_angle = r_add.angle();
    let mut history = state.history.clone();
    history.push_back(last_angle);
    while history.len() > cfg.history_len.max(1) {
        history.pop_front();
    }
    Ok(CorrectionState {
        r_add,
        last_angle,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFit {
    /// Unit normal with positive z component.
    pub normal: Vec3,
    pub centroid: Vec3,
    /// RMS point-to-plane distance, m.
    pub rms_residual: f64,
}

impl PlaneFit {
    /// Signed distance of `p` above the plane along the normal.
    pub fn height_of(&self, p: &Vec3) -> f64 {
        self.normal.dot(&(p - self.centroid))
    }
}

/// Total-least-squares plane through a point set.
pub fn estimate_floor_normal(points: &[Vec3]) -> Result<PlaneFit, OnlineError> {
    if points.len() < 3 {
        return Err(OnlineError::DegenerateGeometry(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    let centroid = points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / points.len() as f64;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (smallest, middle, largest) = (
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    if largest <= f64::EPSILON * (1.0 + centroid.norm_squared()) {
        return Err(OnlineError::DegenerateGeometry("points are coincident".into()));
    }
    if middle <= 1e-12 * largest {
        return Err(OnlineError::DegenerateGeometry("points are collinear".into()));
    }
    let mut normal: Vec3 = eig.eigenvectors.column(order[0]).into_owned();
    normal.normalize_mut();
    let flip = if normal.z.abs() > 1e-12 {
        normal.z < 0.0
    } else {
        normal.iter().find(|c| c.abs() > 1e-12).is_some_and(|c| *c < 0.0)
    };
    if flip {
        normal = -normal;
    }
    Ok(PlaneFit {
        normal,
        centroid,
        rms_residual: (smallest.max(0.0) / points.len() as f64).sqrt(),
    })
}

/// One row of the streamed correction log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRecord {
    pub time_s: f64,
    pub uncorrected_error_m: f64,
    pub corrected_error_m: f64,
    pub correction_angle_rad: f64,
}

/// Planar (x, y) distance between two map-frame positions.
pub fn planar_error(a: &Vec3, b: &Vec3) -> f64 {
    (a.xy() - b.xy()).norm()
}
