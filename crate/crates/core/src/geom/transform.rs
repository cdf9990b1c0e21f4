//! Rigid transforms and the SE(3) exponential/logarithm.
//!
//! Tangent vectors are ordered `[ω; v]`: rotation (radians) first, then
//! translation (meters). Perturbations are applied on the left,
//! `T ← exp(ξ) ∘ T`, everywhere in the crate.

use nalgebra::{Matrix3, Matrix6, Point3, Rotation3, UnitQuaternion, Vector3, Vector6};

/// Below this rotation angle the exponential uses its two-term Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Below this angle the Jacobian coefficients switch to their series forms;
/// the closed forms lose digits to cancellation well before `SMALL_ANGLE`.
const SERIES_ANGLE: f64 = 0.1;

/// An element of SE(3): `p ↦ R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform from a rotation matrix that the caller guarantees
    /// to be orthonormal with determinant +1.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Like [`from_parts`](Self::from_parts) but projects `rotation` onto
    /// SO(3) first, for matrices read from text files or accumulated updates.
    pub fn from_parts_orthonormalized(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix(&rotation);
        Self {
            rotation: *rot.matrix(),
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self {
            rotation,
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation_about_z(angle: f64) -> Self {
        Self::from_rotation(*Rotation3::from_axis_angle(&Vector3::z_axis(), angle).matrix())
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        so3_log(&self.rotation).norm()
    }

    /// Row-major 3×4 matrix `[R | t]`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
        ]
    }

    pub fn from_row_major(m: &[f64; 12]) -> Self {
        Self {
            rotation: Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]),
            translation: Vector3::new(m[3], m[7], m[11]),
        }
    }

    /// Adjoint in `[ω; v]` ordering: `T exp(ξ) T⁻¹ = exp(Ad_T ξ)`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.rotation);
        ad.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(skew(&self.translation) * self.rotation));
        ad
    }

    /// Largest deviation of `RᵀR` from the identity, and `|det R − 1|`.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        e.max((self.rotation.determinant() - 1.0).abs())
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
    }

    /// Re-projects the rotation onto SO(3). Used after long chains of updates.
    pub fn renormalized(&self) -> Self {
        let q = UnitQuaternion::from_matrix(&self.rotation);
        Self {
            rotation: *q.to_rotation_matrix().matrix(),
            translation: self.translation,
        }
    }
}

pub fn apply_transform(t: &RigidTransform, p: &Point3<f64>) -> Point3<f64> {
    t.apply(p)
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// `(1 − cos θ)/θ²` and `(θ − sin θ)/θ³`.
fn so3_coefficients(theta: f64) -> (f64, f64) {
    if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        (
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        let half = (0.5 * theta).sin();
        (
            2.0 * half * half / (theta * theta),
            (theta - theta.sin()) / (theta * theta * theta),
        )
    }
}

pub fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = skew(omega);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + w + 0.5 * w * w;
    }
    let a = theta.sin() / theta;
    let half = (0.5 * theta).sin();
    let b = 2.0 * half * half / (theta * theta);
    Matrix3::identity() + a * w + b * w * w
}

/// Rotation vector of `r`, via the quaternion to stay accurate near 0 and π.
pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let q = UnitQuaternion::from_matrix(r);
    let (mut w, mut v) = (q.w, q.imag());
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let s = v.norm();
    if s < 1e-300 {
        return Vector3::zeros();
    }
    let theta = 2.0 * s.atan2(w);
    v * (theta / s)
}

/// Left Jacobian of SO(3).
pub fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let (a, b) = so3_coefficients(omega.norm());
    let w = skew(omega);
    Matrix3::identity() + a * w + b * w * w
}

pub fn so3_left_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let e = if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    let w = skew(omega);
    Matrix3::identity() - 0.5 * w + e * w * w
}

/// SE(3) exponential of `[ω; v]`.
pub fn se3_exp(xi: &Vector6<f64>) -> RigidTransform {
    let omega = xi.fixed_rows::<3>(0).into_owned();
    let v = xi.fixed_rows::<3>(3).into_owned();
    let rotation = so3_exp(&omega);
    let translation = if omega.norm() < SMALL_ANGLE {
        (Matrix3::identity() + 0.5 * skew(&omega)) * v
    } else {
        so3_left_jacobian(&omega) * v
    };
    RigidTransform {
        rotation,
        translation,
    }
}

/// Inverse of [`se3_exp`] for rotation angles below π.
pub fn se3_log(t: &RigidTransform) -> Vector6<f64> {
    let omega = so3_log(&t.rotation);
    let v = so3_left_jacobian_inv(&omega) * t.translation;
    let mut xi = Vector6::zeros();
    xi.fixed_rows_mut::<3>(0).copy_from(&omega);
    xi.fixed_rows_mut::<3>(3).copy_from(&v);
    xi
}

/// The coupling block `Q(ω, v)` of the SE(3) left Jacobian.
fn se3_q(omega: &Vector3<f64>, v: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let (c1, c2, c3) = if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        (
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
            1.0 / 24.0 - t2 / 720.0 + t4 / 40320.0,
            1.0 / 120.0 - t2 / 2520.0 + t4 / 120960.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        (
            (theta - s) / (t2 * theta),
            (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t2 * t2 * theta),
        )
    };
    let w = skew(omega);
    let p = skew(v);
    let wp = w * p;
    let pw = p * w;
    let wpw = wp * w;
    0.5 * p + c1 * (wp + pw + wpw) + c2 * (w * wp + pw * w - 3.0 * wpw) + c3 * (wpw * w + w * wpw)
}

/// SE(3) left Jacobian in `[ω; v]` ordering:
/// `exp(ξ + δ) ≈ exp(J_l(ξ) δ) exp(ξ)`.
pub fn se3_left_jacobian(xi: &Vector6<f64>) -> Matrix6<f64> {
    let omega = xi.fixed_rows::<3>(0).into_owned();
    let v = xi.fixed_rows::<3>(3).into_owned();
    let j = so3_left_jacobian(&omega);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&se3_q(&omega, &v));
    out
}

/// Inverse of the SE(3) right Jacobian: `log(exp(ξ) exp(ε)) ≈ ξ + J_r⁻¹(ξ) ε`.
pub fn se3_right_jacobian_inv(xi: &Vector6<f64>) -> Matrix6<f64> {
    let omega = -xi.fixed_rows::<3>(0).into_owned();
    let v = -xi.fixed_rows::<3>(3).into_owned();
    let j_inv = so3_left_jacobian_inv(&omega);
    let q = se3_q(&omega, &v);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j_inv);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j_inv);
    out.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(-(j_inv * q * j_inv)));
    out
}
