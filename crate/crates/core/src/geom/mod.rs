//! Geometric primitives shared by every stage: rigid transforms, planes,
//! and oriented points.

mod plane;
mod transform;

pub use nalgebra::{Matrix3, Matrix6, Point3, Vector3, Vector6};

pub use plane::{
    fit_plane_ls, orthonormal_basis, point_plane_distance, smallest_symmetric_eigenvalue, Moments,
    PlaneHypothesis,
};
pub(crate) use plane::fit_plane_ls_iter;
pub use transform::{
    apply_transform, compose, se3_exp, se3_left_jacobian, se3_log, se3_right_jacobian_inv, skew,
    so3_exp, so3_log, RigidTransform, SMALL_ANGLE,
};

/// A surface sample: position plus unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedPoint {
    pub position: Point3<f64>,
    pub normal: Vector3<f64>,
}

impl OrientedPoint {
    /// Normalizes `normal`; a zero normal yields `None`.
    pub fn new(position: Point3<f64>, normal: Vector3<f64>) -> Option<Self> {
        let normal = normal.try_normalize(0.0)?;
        Some(Self { position, normal })
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            position: t.apply(&self.position),
            normal: t.rotate(&self.normal),
        }
    }
}
