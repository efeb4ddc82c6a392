//! Rigid-body math: rotations, rigid transforms and axis-angle views.
//!
//! # Conventions
//!
//! Column vectors, left multiplication. A [`Pose`] maps coordinates expressed
//! in its child frame into its parent frame:
//!
//! ```text
//! p_parent = R * p_child + t
//! ```
//!
//! `a.compose(&b)` (also `a * b`) is the 4x4 homogeneous product `a · b`:
//! `b` is applied to the point first, then `a`. With this convention the
//! transition between two samples of the same frame is
//! `before.inverse() * after`, and the extrinsic `X` between the robot head
//! and the device satisfies `device_pose = head_pose * X`.
//!
//! Rotations are stored as orthonormal matrices. Axis-angle and quaternion
//! forms are conversion views only.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector3};
use thiserror::Error;

/// 3-vector in meters (translations) or dimensionless (directions).
pub type Vec3 = Vector3<f64>;

/// Angles below this are treated as "no rotation" when extracting an axis.
pub const DEFAULT_NEAR_IDENTITY: f64 = 1e-6;
/// Angles within this of pi carry the near-pi flag.
pub const DEFAULT_NEAR_PI: f64 = 1e-6;
/// Orthonormality defect above which composed rotations are re-projected.
pub const RENORMALIZE_THRESHOLD: f64 = 1e-9;
/// Largest orthonormality defect accepted by [`Rotation::from_matrix`].
pub const MATRIX_ACCEPT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("rotation angle {angle:e} rad is below the near-identity threshold; axis is undefined")]
    NearIdentity { angle: f64 },
    /// The two vectors point in opposite directions. `fallback` is a valid
    /// half-turn about an arbitrary perpendicular axis.
    #[error("vectors are antiparallel; rotation axis is ambiguous")]
    DegenerateAntiparallel { fallback: Rotation },
    #[error("zero-length vector")]
    ZeroVector,
    #[error("matrix is not a proper rotation (orthonormality defect {defect:e}, det {det})")]
    NotARotation { defect: f64, det: f64 },
    #[error("non-finite component")]
    NonFinite,
}

/// Skew-symmetric cross-product matrix: `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Proper rotation stored as a 3x3 orthonormal matrix with det = +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn rx(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn ry(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn rz(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Rodrigues' formula. The axis is normalized; a zero axis yields identity.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::identity();
        }
        let k = axis / n;
        let kx = skew(&k);
        let (s, c) = angle.sin_cos();
        Self(Matrix3::identity() + kx * s + kx * kx * (1.0 - c))
    }

    /// Exponential map from a rotation vector (axis scaled by angle).
    pub fn from_rotation_vector(v: &Vec3) -> Self {
        let angle = v.norm();
        if angle < 1e-12 {
            // first-order expansion, re-projected
            return Self(Matrix3::identity() + skew(v)).renormalized();
        }
        Self::from_axis_angle(v, angle)
    }

    /// Accepts a matrix that is orthonormal within [`MATRIX_ACCEPT_TOLERANCE`]
    /// and projects it exactly onto SO(3).
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let defect = orthonormality_defect(&m);
        let det = m.determinant();
        if defect > MATRIX_ACCEPT_TOLERANCE || det <= 0.0 {
            return Err(GeometryError::NotARotation { defect, det });
        }
        Ok(Self(m).renormalized())
    }

    /// Nearest rotation (Frobenius norm) to an arbitrary matrix.
    pub fn project(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let d = (u * v_t).determinant().signum();
        let fix = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d));
        Self(u * fix * v_t)
    }

    /// Quaternion in `w, x, y, z` order. Need not be normalized.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let q = nalgebra::Quaternion::new(w, x, y, z);
        if !q.coords.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if q.norm() < 1e-12 {
            return Err(GeometryError::ZeroVector);
        }
        let uq = UnitQuaternion::from_quaternion(q);
        Ok(Self(*uq.to_rotation_matrix().matrix()))
    }

    /// Unit quaternion `[w, x, y, z]` with `w >= 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let r = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = UnitQuaternion::from_rotation_matrix(&r);
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        let m = self.0 * other.0;
        if orthonormality_defect(&m) > RENORMALIZE_THRESHOLD {
            Self(m).renormalized()
        } else {
            Self(m)
        }
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let cos = ((self.0.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let sin = vee(&(self.0 - self.0.transpose())).norm() * 0.5;
        sin.atan2(cos)
    }

    /// Geodesic distance to another rotation, in radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.inverse().compose(other).angle()
    }

    /// Logarithm map; the zero vector for the identity. At exactly pi the
    /// axis sign follows the canonical rule of [`Rotation::to_axis_angle`].
    pub fn rotation_vector(&self) -> Vec3 {
        match self.to_axis_angle_with(1e-12, DEFAULT_NEAR_PI) {
            Ok(aa) => aa.axis * aa.angle,
            Err(_) => {
                // tiny angle: log(R) ~ vee(R - R^T) / 2
                vee(&(self.0 - self.0.transpose())) * 0.5
            }
        }
    }

    pub fn to_axis_angle(&self) -> Result<AxisAngle, GeometryError> {
        self.to_axis_angle_with(DEFAULT_NEAR_IDENTITY, DEFAULT_NEAR_PI)
    }

    /// Canonical axis-angle view: angle in `(0, pi]`, unit axis.
    ///
    /// Close to pi the skew part of the matrix no longer carries the axis
    /// sign; when it vanishes below numerical precision the axis whose first
    /// nonzero component is positive is chosen.
    pub fn to_axis_angle_with(
        &self,
        near_identity: f64,
        near_pi: f64,
    ) -> Result<AxisAngle, GeometryError> {
        let m = &self.0;
        let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let w = vee(&(m - m.transpose())) * 0.5;
        let sin = w.norm();
        let angle = sin.atan2(cos);
        if angle < near_identity {
            return Err(GeometryError::NearIdentity { angle });
        }
        let mut axis = if cos > -0.5 {
            w / sin
        } else {
            // symmetric part: (R + R^T)/2 - cos I = (1 - cos) k k^T
            let s = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos;
            let i = (0..3)
                .max_by(|&a, &b| s[(a, a)].total_cmp(&s[(b, b)]))
                .unwrap_or(0);
            let col: Vec3 = s.column(i).into();
            let mut k = col.normalize();
            if k.dot(&w) < 0.0 {
                k = -k;
            }
            k
        };
        if sin < 1e-12 {
            axis = canonical_sign(axis);
        }
        Ok(AxisAngle {
            axis,
            angle,
            near_pi: PI - angle < near_pi,
        })
    }

    pub fn orthonormality_defect(&self) -> f64 {
        orthonormality_defect(&self.0)
    }

    /// Polar-decomposition re-projection onto SO(3).
    pub fn renormalized(&self) -> Self {
        Self::project(&self.0)
    }

    /// Chordal L2 mean of a set of rotations.
    pub fn chordal_mean<'a, I>(rotations: I) -> Option<Self>
    where
        I: IntoIterator<Item = &'a Rotation>,
    {
        let mut sum = Matrix3::zeros();
        let mut n = 0usize;
        for r in rotations {
            sum += r.0;
            n += 1;
        }
        (n > 0).then(|| Self::project(&sum))
    }
}

fn orthonormality_defect(m: &Matrix3<f64>) -> f64 {
    (m * m.transpose() - Matrix3::identity()).amax()
}

fn canonical_sign(v: Vec3) -> Vec3 {
    match v.iter().find(|c| c.abs() > 1e-9) {
        Some(c) if *c < 0.0 => -v,
        _ => v,
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        self.compose(&rhs)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Canonical axis-angle: unit axis, angle in `(0, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle {
    pub axis: Vec3,
    pub angle: f64,
    /// Angle lies within the near-pi threshold; the axis sign is then
    /// resolved by the canonical rule only.
    pub near_pi: bool,
}

impl AxisAngle {
    pub fn to_rotation(&self) -> Rotation {
        Rotation::from_axis_angle(&self.axis, self.angle)
    }
}

/// Rigid transform (rotation + translation in meters).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Rotation::identity(), t)
    }

    pub fn from_rotation(r: Rotation) -> Self {
        Self::new(r, Vec3::zeros())
    }

    /// `self · other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.apply(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose {
            rotation: r_inv,
            translation: -r_inv.apply(&self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.apply(p) + self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Rotation geodesic distance and translation distance to another pose.
    pub fn distance_to(&self, other: &Pose) -> (f64, f64) {
        (
            self.rotation.angle_to(&other.rotation),
            (self.translation - other.translation).norm(),
        )
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

/// Smallest rotation taking the direction of `from` onto the direction of
/// `to`. Its axis is `from x to` and its angle the angle between the vectors.
pub fn rotation_between_vectors(from: &Vec3, to: &Vec3) -> Result<Rotation, GeometryError> {
    if !from.iter().chain(to.iter()).all(|c| c.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let (nf, nt) = (from.norm(), to.norm());
    if nf < f64::MIN_POSITIVE || nt < f64::MIN_POSITIVE {
        return Err(GeometryError::ZeroVector);
    }
    let f = from / nf;
    let t = to / nt;
    let c = f.dot(&t);
    let cross = f.cross(&t);
    if c < 0.0 && cross.norm() < 1e-9 {
        return Err(GeometryError::DegenerateAntiparallel {
            fallback: Rotation::from_axis_angle(&any_perpendicular(&f), PI),
        });
    }
    // R = I + K + K^2 / (1 + c), K = skew(f x t); exact for unit f, t
    let k = skew(&cross);
    Ok(Rotation(Matrix3::identity() + k + k * k / (1.0 + c)).renormalized())
}

/// Some unit vector perpendicular to `v` (which must be nonzero).
pub fn any_perpendicular(v: &Vec3) -> Vec3 {
    let a = v.abs();
    let helper = if a.x <= a.y && a.x <= a.z {
        Vec3::x()
    } else if a.y <= a.z {
        Vec3::y()
    } else {
        Vec3::z()
    };
    v.cross(&helper).normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hom(r: [[f64; 3]; 3], t: [f64; 3]) -> Matrix4<f64> {
        Matrix4::new(
            r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1],
            r[2][2], t[2], 0.0, 0.0, 0.0, 1.0,
        )
    }

    #[test]
    fn compose_examples() {
        let id = Pose::identity();
        assert_eq!(id * id, id);

        let a = Pose::from_translation(Vec3::new(1.0, 0.0, 0.0));
        let b = Pose::from_translation(Vec3::new(0.0, 1.0, 0.0));
        assert_relative_eq!((a * b).translation, Vec3::new(1.0, 1.0, 0.0));

        // hand-written 4x4 product oracle
        let rz = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let expected = hom(rz, [0.0; 3]) * hom(eye, [1.0, 0.0, 0.0]);
        let got = Pose::from_rotation(Rotation::rz(PI / 2.0)) * Pose::from_translation(Vec3::x());
        assert_relative_eq!(got.to_matrix(), expected, epsilon = 1e-12);
        assert_relative_eq!(got.translation, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(Pose::identity().inverse(), Pose::identity());
        let p = Pose::from_translation(Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(p.inverse().translation, Vec3::new(-1.0, -2.0, -3.0));

        let p = Pose::new(Rotation::rz(PI / 2.0), Vec3::x());
        let inv = p.inverse();
        let oracle = p.to_matrix().try_inverse().unwrap();
        assert_relative_eq!(inv.to_matrix(), oracle, epsilon = 1e-12);
        assert_relative_eq!(inv.translation, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
        assert!(inv.rotation.angle_to(&Rotation::rz(-PI / 2.0)) < 1e-12);
        let back = p * inv;
        assert!(back.distance_to(&Pose::identity()).0 < 1e-12);
        assert!(back.distance_to(&Pose::identity()).1 < 1e-12);
    }

    #[test]
    fn axis_angle_examples() {
        let aa = Rotation::rz(0.3).to_axis_angle().unwrap();
        assert_relative_eq!(aa.axis, Vec3::z(), epsilon = 1e-12);
        assert_relative_eq!(aa.angle, 0.3, epsilon = 1e-12);

        let aa = Rotation::rz(-0.3).to_axis_angle().unwrap();
        assert_relative_eq!(aa.axis, -Vec3::z(), epsilon = 1e-12);
        assert_relative_eq!(aa.angle, 0.3, epsilon = 1e-12);

        let r = Rotation::rx(0.2) * Rotation::ry(0.1);
        let back = r.to_axis_angle().unwrap().to_rotation();
        assert!((back.matrix() - r.matrix()).amax() < 1e-9);
    }

    #[test]
    fn axis_angle_near_identity_is_error() {
        let err = Rotation::rz(1e-8).to_axis_angle().unwrap_err();
        assert!(matches!(err, GeometryError::NearIdentity { .. }));
        assert!(Rotation::identity().to_axis_angle().is_err());
    }

    #[test]
    fn axis_angle_at_pi_is_canonical() {
        for axis in [Vec3::new(0.0, -1.0, 0.0), Vec3::new(-1.0, 2.0, 0.5)] {
            let r = Rotation::from_axis_angle(&axis, PI);
            let aa = r.to_axis_angle().unwrap();
            assert!(aa.near_pi);
            assert!(aa.axis.iter().find(|c| c.abs() > 1e-9).unwrap() > &0.0);
            assert!((aa.to_rotation().matrix() - r.matrix()).amax() < 1e-9);
        }
        // slightly below pi the sign still comes from the matrix
        let r = Rotation::from_axis_angle(&Vec3::new(-1.0, 0.0, 0.0), PI - 1e-3);
        let aa = r.to_axis_angle().unwrap();
        assert!(!aa.near_pi);
        assert_relative_eq!(aa.axis, -Vec3::x(), epsilon = 1e-9);
    }

    #[test]
    fn rotation_between_examples() {
        let r = rotation_between_vectors(&Vec3::z(), &Vec3::z()).unwrap();
        assert!(r.angle() < 1e-15);

        let r = rotation_between_vectors(&Vec3::x(), &Vec3::z()).unwrap();
        assert_relative_eq!(r * Vec3::x(), Vec3::z(), epsilon = 1e-9);
        let aa = r.to_axis_angle().unwrap();
        assert_relative_eq!(aa.axis, -Vec3::y(), epsilon = 1e-12);
        assert_relative_eq!(aa.angle, PI / 2.0, epsilon = 1e-12);

        let from = Vec3::new(0.1f64.sin(), 0.0, 0.1f64.cos());
        let r = rotation_between_vectors(&from, &Vec3::z()).unwrap();
        assert_relative_eq!(r.angle(), 0.1, epsilon = 1e-12);
        assert_relative_eq!(r * from, Vec3::z(), epsilon = 1e-9);
    }

    #[test]
    fn rotation_between_degenerate_inputs() {
        match rotation_between_vectors(&Vec3::z(), &-Vec3::z()) {
            Err(GeometryError::DegenerateAntiparallel { fallback }) => {
                assert_relative_eq!(fallback * Vec3::z(), -Vec3::z(), epsilon = 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(
            rotation_between_vectors(&Vec3::zeros(), &Vec3::z()),
            Err(GeometryError::ZeroVector)
        );
    }

    #[test]
    fn quaternion_round_trip() {
        let r = Rotation::from_axis_angle(&Vec3::new(0.3, -0.2, 0.9), 2.1);
        let [w, x, y, z] = r.to_quaternion();
        assert!(w >= 0.0);
        let back = Rotation::from_quaternion(w, x, y, z).unwrap();
        assert!(back.angle_to(&r) < 1e-12);
        assert!(Rotation::from_quaternion(0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn from_matrix_rejects_reflections() {
        let m = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(matches!(
            Rotation::from_matrix(m),
            Err(GeometryError::NotARotation { .. })
        ));
        assert!(Rotation::from_matrix(*Rotation::rx(0.4).matrix()).is_ok());
    }

    #[test]
    fn long_chains_stay_orthonormal() {
        let step = Rotation::from_axis_angle(&Vec3::new(0.3, 0.5, -0.7), 0.0123);
        let mut r = Rotation::identity();
        for _ in 0..100_000 {
            r = r * step;
        }
        assert!(r.orthonormality_defect() <= RENORMALIZE_THRESHOLD);
        assert!((r.matrix().determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn chordal_mean_of_symmetric_pair() {
        let a = Rotation::rz(0.1);
        let b = Rotation::rz(-0.1);
        let m = Rotation::chordal_mean([&a, &b]).unwrap();
        assert!(m.angle() < 1e-12);
    }
}
