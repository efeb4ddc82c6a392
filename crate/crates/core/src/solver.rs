//! Extrinsic calibration `AX = XB` under restricted robot motion.
//!
//! `X = (R, t)` is the head→device extrinsic, i.e. the transform with
//! `device_pose = head_pose · X`; `t` is the device origin in the head frame.
//!
//! The rotation comes from the axis constraints `k_A = R k_B` of every
//! rotational transition together with the direction constraints
//! `t_A/|t_A| = R t_B/|t_B|` of forward translations, solved jointly as an
//! orthogonal Procrustes problem. The translation comes from the stacked
//! rows `(I - R_A) t = t_A - R t_B` of the rotational transitions, optionally
//! augmented with one row per floor observation:
//!
//! ```text
//! m · t = h + m · b,   m = R n
//! ```
//!
//! where `n` is the floor normal in the device frame, `h` the device height
//! above the floor and `b` the head→foot vector in the head frame. This is
//! the statement that the foot lies on the floor, `h` below the device.

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rotation_between_vectors, GeometryError, Pose, Rotation, Vec3};
use crate::linalg::{numerical_rank, row_singular_values, solve_stacked, stack_blocks};
use crate::session::{
    observability_report, transition_constraints, ClassifyConfig, FloorObservation, MotionClass,
    ObservabilityReport, Parameter, ParameterMask, RobotKinematics, Transition,
};

#[derive(Debug, Clone, Error)]
pub enum SolveError {
    #[error("not enough data: {0}")]
    NotEnoughData(String),
    #[error("rotation is unconstrained about axis ({:.4}, {:.4}, {:.4})", free_axis.x, free_axis.y, free_axis.z)]
    RotationUnderConstrained {
        estimate: Box<RotationEstimate>,
        free_axis: Vec3,
    },
    #[error("translation is unconstrained along {} direction(s)", null_directions.len())]
    TranslationUnderConstrained {
        estimate: TranslationEstimate,
        null_directions: Vec<Vec3>,
    },
    #[error("insufficient motion: {}", describe_missing(unconstrained))]
    InsufficientMotion {
        unconstrained: Vec<Parameter>,
        report: Box<ObservabilityReport>,
    },
    #[error("floor observations require robot kinematics")]
    MissingKinematics,
    #[error("refinement did not converge after {iterations} iterations")]
    NoConvergence {
        best: Box<CalibrationResult>,
        iterations: usize,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn describe_missing(params: &[Parameter]) -> String {
    params
        .iter()
        .map(|p| format!("{p}: {}", p.hint()))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Default)]
pub struct CalibrationSession {
    pub transitions: Vec<Transition>,
    pub floor_observations: Vec<FloorObservation>,
    pub kinematics: Option<RobotKinematics>,
}

impl CalibrationSession {
    pub fn new(transitions: Vec<Transition>) -> Self {
        Self {
            transitions,
            ..Self::default()
        }
    }

    pub fn with_floor(
        mut self,
        observations: Vec<FloorObservation>,
        kinematics: RobotKinematics,
    ) -> Self {
        self.floor_observations = observations;
        self.kinematics = Some(kinematics);
        self
    }

    fn floor_rows(&self) -> Result<Vec<(FloorObservation, RobotKinematics)>, SolveError> {
        if self.floor_observations.is_empty() {
            return Ok(Vec::new());
        }
        let kin = self.kinematics.ok_or(SolveError::MissingKinematics)?;
        Ok(self.floor_observations.iter().map(|f| (*f, kin)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub max_iters: usize,
    /// Converged when the step norm falls below this.
    pub step_tolerance: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            step_tolerance: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub classify: ClassifyConfig,
    /// Return a minimum-norm solution instead of failing when some
    /// parameters are unconstrained.
    pub allow_partial: bool,
    /// Follow the linear solution with nonlinear refinement.
    pub refine: bool,
    pub refine_config: RefineConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationEstimate {
    pub rotation: Rotation,
    /// RMS angle between `k_A` and `R k_B`, rad.
    pub rms_residual: f64,
    /// Singular values (descending) of the stacked `k_A` directions.
    pub singular_values: [f64; 3],
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationEstimate {
    pub translation: Vec3,
    /// RMS over all scalar rows, m.
    pub rms_residual: f64,
    pub singular_values: [f64; 3],
    pub rank: usize,
    pub null_space: Vec<Vec3>,
}

/// Least-squares rotation `R` with `k_a ≈ R k_b` for every `(k_a, k_b)` pair.
///
/// Pairs are unit directions. With fewer than two independent `k_a`
/// directions the rotation about the common axis is free; the error then
/// carries the smallest rotation aligning the mean directions.
pub fn solve_rotation(pairs: &[(Vec3, Vec3)]) -> Result<RotationEstimate, SolveError> {
    if pairs.is_empty() {
        return Err(SolveError::NotEnoughData("no rotation constraints".into()));
    }
    let a_rows: Vec<Vec3> = pairs.iter().map(|(a, _)| *a).collect();
    let singular_values = row_singular_values(&a_rows);
    let rank = numerical_rank(&singular_values);

    if rank < 2 {
        let reference = pairs[0].0;
        let (mut sum_a, mut sum_b) = (Vec3::zeros(), Vec3::zeros());
        for (a, b) in pairs {
            let s = if a.dot(&reference) < 0.0 { -1.0 } else { 1.0 };
            sum_a += a * s;
            sum_b += b * s;
        }
        let rotation = match rotation_between_vectors(&sum_b, &sum_a) {
            Ok(r) => r,
            Err(GeometryError::DegenerateAntiparallel { fallback }) => fallback,
            Err(e) => return Err(e.into()),
        };
        let estimate = RotationEstimate {
            rotation,
            rms_residual: axis_rms(pairs, &rotation),
            singular_values,
            rank,
        };
        return Err(SolveError::RotationUnderConstrained {
            estimate: Box::new(estimate),
            free_axis: sum_a.normalize(),
        });
    }

    // maximize sum k_a^T R k_b = tr(R M), M = sum k_b k_a^T = U S V^T  =>  R = V U^T
    let mut m = Matrix3::zeros();
    for (a, b) in pairs {
        m += b * a.transpose();
    }
    let svd = m.svd(true, true);
    let (u, v) = (svd.u.unwrap(), svd.v_t.unwrap().transpose());
    let d = (v * u.transpose()).determinant().signum();
    let rotation =
        Rotation::project(&(v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose()));
    Ok(RotationEstimate {
        rotation,
        rms_residual: axis_rms(pairs, &rotation),
        singular_values,
        rank,
    })
}

fn axis_rms(pairs: &[(Vec3, Vec3)], r: &Rotation) -> f64 {
    let sum: f64 = pairs
        .iter()
        .map(|(a, b)| {
            let rb = r * b;
            a.cross(&rb).norm().atan2(a.dot(&rb)).powi(2)
        })
        .sum();
    (sum / pairs.len() as f64).sqrt()
}

fn floor_row(r: &Rotation, floor: &FloorObservation, kin: &RobotKinematics) -> (Vec3, f64) {
    let m = r * &floor.normal;
    (m, floor.height + m.dot(&kin.head_to_foot))
}

/// Least-squares translation given the rotation.
///
/// Each transition contributes `(I - R_A) t = t_A - R t_B`; each floor row
/// contributes `(R n) · t = h + (R n) · b`. Rank-deficient directions come
/// back as [`SolveError::TranslationUnderConstrained`] carrying the
/// minimum-norm solution.
pub fn solve_translation(
    rows: &[Transition],
    r: &Rotation,
    floor_rows: &[(FloorObservation, RobotKinematics)],
) -> Result<TranslationEstimate, SolveError> {
    if rows.is_empty() && floor_rows.is_empty() {
        return Err(SolveError::NotEnoughData("no translation constraints".into()));
    }
    let blocks: Vec<Matrix3<f64>> = rows
        .iter()
        .map(|t| Matrix3::identity() - t.a.rotation.matrix())
        .collect();
    let n_rows = 3 * rows.len() + floor_rows.len();
    let mut a = DMatrix::zeros(n_rows, 3);
    a.view_mut((0, 0), (3 * rows.len(), 3))
        .copy_from(&stack_blocks(&blocks));
    let mut b = DVector::zeros(n_rows);
    for (i, t) in rows.iter().enumerate() {
        let rhs = t.a.translation - r * &t.b.translation;
        b.fixed_rows_mut::<3>(3 * i).copy_from(&rhs);
    }
    for (j, (floor, kin)) in floor_rows.iter().enumerate() {
        let (m, rhs) = floor_row(r, floor, kin);
        let i = 3 * rows.len() + j;
        a.set_row(i, &m.transpose());
        b[i] = rhs;
    }

    let ls = solve_stacked(&a, &b);
    let residual = &a * DVector::from_column_slice(ls.solution.as_slice()) - &b;
    let estimate = TranslationEstimate {
        translation: ls.solution,
        rms_residual: (residual.norm_squared() / n_rows as f64).sqrt(),
        singular_values: ls.singular_values,
        rank: ls.rank,
        null_space: ls.null_space.clone(),
    };
    if ls.rank < 3 {
        return Err(SolveError::TranslationUnderConstrained {
            estimate,
            null_directions: ls.null_space,
        });
    }
    Ok(estimate)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    /// Head→device extrinsic.
    pub x: Pose,
    /// RMS angle residual of the rotation constraints, rad.
    pub rotation_residual: f64,
    /// RMS residual of the translation rows, m.
    pub translation_residual: f64,
    pub observability: ParameterMask,
    pub report: ObservabilityReport,
    /// Ratio of largest to smallest used singular value of the rotation
    /// direction system (infinite when rank-deficient).
    pub rotation_condition: f64,
    pub translation_condition: f64,
    /// `sum ||log(X⁻¹ A⁻¹ X B)||²` over all transitions.
    pub objective: f64,
    pub refined: bool,
    pub warnings: Vec<String>,
}

impl CalibrationResult {
    pub fn to_record(&self) -> CalibrationRecord {
        let rv = self.x.rotation.rotation_vector();
        let angle = rv.norm();
        CalibrationRecord {
            translation_m: self.x.translation.into(),
            rotation_quaternion_wxyz: self.x.rotation.to_quaternion(),
            rotation_axis: (angle > 0.0).then(|| (rv / angle).into()),
            rotation_angle_rad: angle,
            rotation_residual_rad: self.rotation_residual,
            translation_residual_m: self.translation_residual,
            observability: self.observability,
            unconstrained: self.observability.unconstrained(),
            rotation_condition: finite_or_none(self.rotation_condition),
            translation_condition: finite_or_none(self.translation_condition),
            objective: self.objective,
            refined: self.refined,
            motion_classes: self.report.classes.iter().map(|c| c.name().into()).collect(),
            warnings: self.warnings.clone(),
        }
    }
}

fn finite_or_none(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Serialized form of a [`CalibrationResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub translation_m: [f64; 3],
    pub rotation_quaternion_wxyz: [f64; 4],
    /// `None` for the identity rotation.
    pub rotation_axis: Option<[f64; 3]>,
    pub rotation_angle_rad: f64,
    pub rotation_residual_rad: f64,
    pub translation_residual_m: f64,
    pub observability: ParameterMask,
    pub unconstrained: Vec<Parameter>,
    pub rotation_condition: Option<f64>,
    pub translation_condition: Option<f64>,
    pub objective: f64,
    pub refined: bool,
    pub motion_classes: Vec<String>,
    pub warnings: Vec<String>,
}

impl CalibrationRecord {
    pub fn pose(&self) -> Result<Pose, GeometryError> {
        let [w, x, y, z] = self.rotation_quaternion_wxyz;
        Ok(Pose::new(
            Rotation::from_quaternion(w, x, y, z)?,
            Vec3::from(self.translation_m),
        ))
    }
}

impl fmt::Display for CalibrationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [tx, ty, tz] = self.translation_m;
        writeln!(f, "translation (m):      {tx:.6} {ty:.6} {tz:.6}")?;
        let [w, x, y, z] = self.rotation_quaternion_wxyz;
        writeln!(f, "rotation (wxyz):      {w:.6} {x:.6} {y:.6} {z:.6}")?;
        match self.rotation_axis {
            Some([ax, ay, az]) => writeln!(
                f,
                "rotation axis-angle:  {:.6} rad about ({ax:.6}, {ay:.6}, {az:.6})",
                self.rotation_angle_rad
            )?,
            None => writeln!(f, "rotation axis-angle:  identity")?,
        }
        writeln!(f, "rotation residual:    {:.3e} rad", self.rotation_residual_rad)?;
        writeln!(f, "translation residual: {:.3e} m", self.translation_residual_m)?;
        writeln!(f, "observability:        {}", self.observability)?;
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// Axis pairs, forward-direction pairs and translation rows of a session.
struct Constraints {
    direction_pairs: Vec<(Vec3, Vec3)>,
    translation_rows: Vec<Transition>,
    warnings: Vec<String>,
}

fn gather_constraints(session: &CalibrationSession, classes: &[MotionClass]) -> Constraints {
    let mut direction_pairs = Vec::new();
    let mut translation_rows = Vec::new();
    let mut warnings = Vec::new();
    for (i, (t, class)) in session.transitions.iter().zip(classes).enumerate() {
        match class {
            MotionClass::ForwardTranslation => {
                let (ta, tb) = (t.a.translation, t.b.translation);
                if tb.norm() > 0.0 {
                    direction_pairs.push((ta.normalize(), tb.normalize()));
                }
            }
            c if c.is_rotational() => {
                translation_rows.push(*t);
                // A and B are conjugate, so both canonical (positive-angle)
                // axes carry the same sign unless the angle is a half-turn.
                match (t.a.rotation.to_axis_angle(), t.b.rotation.to_axis_angle()) {
                    (Ok(ka), Ok(kb)) if !ka.near_pi && !kb.near_pi => {
                        direction_pairs.push((ka.axis, kb.axis))
                    }
                    (Ok(_), Ok(_)) => warnings.push(format!(
                        "transition {i} is a half-turn; its axis sign is ambiguous and it is left out of the rotation solve"
                    )),
                    _ => warnings.push(format!(
                        "transition {i}: device rotation too small to extract an axis"
                    )),
                }
            }
            _ => {}
        }
    }
    Constraints {
        direction_pairs,
        translation_rows,
        warnings,
    }
}

/// Head-frame parameter whose axis dominates `v`.
fn dominant(v: &Vec3, translation: bool) -> Parameter {
    let i = v.iamax();
    let params = if translation {
        [Parameter::Tx, Parameter::Ty, Parameter::Tz]
    } else {
        [Parameter::Roll, Parameter::Pitch, Parameter::Yaw]
    };
    params[i]
}

fn condition(singular_values: &[f64; 3], rank: usize, needed: usize) -> f64 {
    if rank < needed || singular_values[needed - 1] <= 0.0 {
        f64::INFINITY
    } else {
        singular_values[0] / singular_values[needed - 1]
    }
}

/// Full linear calibration: classification, observability gate, rotation
/// solve, then translation solve (with floor rows when present).
pub fn calibrate(
    session: &CalibrationSession,
    cfg: &SolveConfig,
) -> Result<CalibrationResult, SolveError> {
    if session.transitions.is_empty() {
        return Err(SolveError::NotEnoughData("session has no transitions".into()));
    }
    let floor_rows = session.floor_rows()?;
    let report = observability_report(
        &session.transitions,
        session.floor_observations.len(),
        &cfg.classify,
    );
    let mut missing = report.mask.unconstrained();
    if !missing.is_empty() && !cfg.allow_partial {
        return Err(SolveError::InsufficientMotion {
            unconstrained: missing,
            report: Box::new(report),
        });
    }

    let constraints = gather_constraints(session, &report.classes);
    let mut warnings = report.warnings.clone();
    warnings.extend(constraints.warnings.iter().cloned());

    let rotation = match solve_rotation(&constraints.direction_pairs) {
        Ok(est) => est,
        Err(SolveError::RotationUnderConstrained {
            estimate,
            free_axis,
        }) => {
            let p = dominant(&free_axis, false);
            if !missing.contains(&p) {
                missing.push(p);
            }
            if !cfg.allow_partial {
                missing.sort();
                return Err(SolveError::InsufficientMotion {
                    unconstrained: missing,
                    report: Box::new(report),
                });
            }
            *estimate
        }
        Err(SolveError::NotEnoughData(_)) if cfg.allow_partial => RotationEstimate {
            rotation: Rotation::identity(),
            rms_residual: 0.0,
            singular_values: [0.0; 3],
            rank: 0,
        },
        Err(SolveError::NotEnoughData(_)) => {
            return Err(SolveError::InsufficientMotion {
                unconstrained: ParameterMask::none().unconstrained(),
                report: Box::new(report),
            })
        }
        Err(e) => return Err(e),
    };

    let translation = match solve_translation(
        &constraints.translation_rows,
        &rotation.rotation,
        &floor_rows,
    ) {
        Ok(est) => est,
        Err(SolveError::TranslationUnderConstrained {
            estimate,
            null_directions,
        }) => {
            for v in &null_directions {
                let p = dominant(v, true);
                if !missing.contains(&p) {
                    missing.push(p);
                }
            }
            if !cfg.allow_partial {
                missing.sort();
                return Err(SolveError::InsufficientMotion {
                    unconstrained: missing,
                    report: Box::new(report),
                });
            }
            estimate
        }
        Err(SolveError::NotEnoughData(_)) if cfg.allow_partial => TranslationEstimate {
            translation: Vec3::zeros(),
            rms_residual: 0.0,
            singular_values: [0.0; 3],
            rank: 0,
            null_space: vec![Vec3::x(), Vec3::y(), Vec3::z()],
        },
        Err(SolveError::NotEnoughData(_)) => {
            missing.extend([Parameter::Tx, Parameter::Ty, Parameter::Tz]);
            missing.sort();
            missing.dedup();
            return Err(SolveError::InsufficientMotion {
                unconstrained: missing,
                report: Box::new(report),
            });
        }
        Err(e) => return Err(e),
    };

    let mut observability = report.mask;
    for p in &missing {
        observability.set(*p, false);
    }
    let x = Pose::new(rotation.rotation, translation.translation);
    let result = CalibrationResult {
        x,
        rotation_residual: rotation.rms_residual,
        translation_residual: translation.rms_residual,
        observability,
        rotation_condition: condition(&rotation.singular_values, rotation.rank, 2),
        translation_condition: condition(&translation.singular_values, translation.rank, 3),
        objective: ax_xb_objective(&session.transitions, &x),
        refined: false,
        warnings,
        report,
    };
    if cfg.refine {
        return refine_nonlinear(session, &result, &cfg.refine_config);
    }
    Ok(result)
}

/// 6-vector residual `(log R_E, t_E)` of `E = X⁻¹ A⁻¹ X B`.
fn ax_xb_residual(t: &Transition, x: &Pose) -> Vector6<f64> {
    let e = x.inverse() * t.a.inverse() * *x * t.b;
    let rv = e.rotation.rotation_vector();
    Vector6::new(
        rv.x,
        rv.y,
        rv.z,
        e.translation.x,
        e.translation.y,
        e.translation.z,
    )
}

/// `sum ||log(X⁻¹ A⁻¹ X B)||²`, rotation in rad and translation in m.
pub fn ax_xb_objective(transitions: &[Transition], x: &Pose) -> f64 {
    transitions
        .iter()
        .map(|t| ax_xb_residual(t, x).norm_squared())
        .sum()
}

fn perturb(x: &Pose, delta: &Vector6<f64>) -> Pose {
    let dr = Rotation::from_rotation_vector(&Vec3::new(delta[0], delta[1], delta[2]));
    Pose::new(
        dr * x.rotation,
        x.translation + Vec3::new(delta[3], delta[4], delta[5]),
    )
}

fn param_slot(p: Parameter) -> usize {
    match p {
        Parameter::Roll => 0,
        Parameter::Pitch => 1,
        Parameter::Yaw => 2,
        Parameter::Tx => 3,
        Parameter::Ty => 4,
        Parameter::Tz => 5,
    }
}

/// Levenberg-Marquardt refinement of the full `AX = XB` objective.
///
/// Perturbations are head-frame rotations (left) and translation offsets.
/// Parameters the transitions alone leave unconstrained are frozen. A step
/// is only accepted when it lowers the objective.
pub fn refine_nonlinear(
    session: &CalibrationSession,
    initial: &CalibrationResult,
    cfg: &RefineConfig,
) -> Result<CalibrationResult, SolveError> {
    let transitions = &session.transitions;
    if transitions.is_empty() {
        return Err(SolveError::NotEnoughData("session has no transitions".into()));
    }
    if initial.report.classes.len() != transitions.len() {
        return Err(SolveError::NotEnoughData(
            "initial result does not belong to this session".into(),
        ));
    }
    // floor rows are not part of this objective, so only motion-constrained
    // parameters move
    let free_mask = transitions
        .iter()
        .zip(&initial.report.classes)
        .fold(ParameterMask::none(), |m, (t, c)| {
            m.union(&transition_constraints(t, *c))
        });
    let free: Vec<usize> = Parameter::ALL
        .iter()
        .filter(|p| free_mask.get(**p))
        .map(|p| param_slot(*p))
        .collect();

    let residuals = |x: &Pose| -> DVector<f64> {
        let mut r = DVector::zeros(6 * transitions.len());
        for (i, t) in transitions.iter().enumerate() {
            r.fixed_rows_mut::<6>(6 * i)
                .copy_from(&ax_xb_residual(t, x));
        }
        r
    };

    let mut x = initial.x;
    let mut r = residuals(&x);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-6;
    let mut converged = free.is_empty();
    let mut iterations = 0;
    const H: f64 = 1e-7;

    while !converged && iterations < cfg.max_iters {
        iterations += 1;
        let mut j = DMatrix::zeros(r.len(), free.len());
        for (col, &slot) in free.iter().enumerate() {
            let mut d = Vector6::zeros();
            d[slot] = H;
            let plus = residuals(&perturb(&x, &d));
            d[slot] = -H;
            let minus = residuals(&perturb(&x, &d));
            j.set_column(col, &((plus - minus) / (2.0 * H)));
        }
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        if g.amax() < 1e-15 {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e12 {
            let mut damped = jtj.clone();
            for k in 0..free.len() {
                damped[(k, k)] += lambda * (jtj[(k, k)] + 1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let mut delta = Vector6::zeros();
            for (k, &slot) in free.iter().enumerate() {
                delta[slot] = step[k];
            }
            let candidate = perturb(&x, &delta);
            let r_new = residuals(&candidate);
            let cost_new = r_new.norm_squared();
            if cost_new < cost {
                x = candidate;
                r = r_new;
                let decrease = cost - cost_new;
                cost = cost_new;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                if step.norm() < cfg.step_tolerance || decrease <= 1e-15 * cost.max(1e-300) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left at working precision
            converged = true;
        }
    }

    let mut result = initial.clone();
    result.x = x;
    result.objective = cost;
    result.refined = true;
    recompute_residuals(session, &mut result)?;
    if !converged {
        return Err(SolveError::NoConvergence {
            best: Box::new(result),
            iterations,
        });
    }
    Ok(result)
}

fn recompute_residuals(
    session: &CalibrationSession,
    result: &mut CalibrationResult,
) -> Result<(), SolveError> {
    let constraints = gather_constraints(session, &result.report.classes);
    if !constraints.direction_pairs.is_empty() {
        result.rotation_residual = axis_rms(&constraints.direction_pairs, &result.x.rotation);
    }
    let floor_rows = session.floor_rows()?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in &constraints.translation_rows {
        let lhs = (Matrix3::identity() - t.a.rotation.matrix()) * result.x.translation;
        let rhs = t.a.translation - result.x.rotation * t.b.translation;
        sum += (lhs - rhs).norm_squared();
        n += 3;
    }
    for (floor, kin) in &floor_rows {
        let (m, rhs) = floor_row(&result.x.rotation, floor, kin);
        sum += (m.dot(&result.x.translation) - rhs).powi(2);
        n += 1;
    }
    if n > 0 {
        result.translation_residual = (sum / n as f64).sqrt();
    }
    Ok(())
}
