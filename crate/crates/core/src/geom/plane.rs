use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};

use super::RigidTransform;
use crate::error::{Error, Result};

/// An oriented plane `{x : n·x + offset = 0}` with `|n| = 1`.
///
/// A homogeneous `[a, b, c, 1]` parameter cannot describe planes through
/// the origin; dividing it by `|(a, b, c)|` gives exactly this form, and the
/// point distance `|πᵀp̄| / |(a, b, c)|` becomes `|n·p + offset|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneHypothesis {
    normal: Vector3<f64>,
    offset: f64,
}

impl PlaneHypothesis {
    /// Normalizes `normal`; returns `None` for a zero or non-finite normal.
    pub fn new(normal: Vector3<f64>, offset: f64) -> Option<Self> {
        let norm = normal.norm();
        if !(norm > 0.0) || !norm.is_finite() || !offset.is_finite() {
            return None;
        }
        Some(Self {
            normal: normal / norm,
            offset: offset / norm,
        })
    }

    /// Like [`new`](Self::new), but keeps `normal` bit-for-bit when it is
    /// already unit length to within 1e-12.
    pub fn from_unit_normal(normal: Vector3<f64>, offset: f64) -> Option<Self> {
        let norm = normal.norm();
        if (norm - 1.0).abs() <= 1e-12 && offset.is_finite() {
            Some(Self { normal, offset })
        } else {
            Self::new(normal, offset)
        }
    }

    pub fn from_normal_and_point(normal: Vector3<f64>, point: &Point3<f64>) -> Option<Self> {
        let n = normal.try_normalize(0.0)?;
        Some(Self {
            normal: n,
            offset: -n.dot(&point.coords),
        })
    }

    /// Plane through three points; `None` when they are (nearly) collinear.
    pub fn through_points(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> Option<Self> {
        let e1 = b - a;
        let e2 = c - a;
        let cross = e1.cross(&e2);
        let scale = e1.norm() * e2.norm();
        if !(scale > 0.0) || cross.norm() <= 1e-9 * scale {
            return None;
        }
        Self::from_normal_and_point(cross, a)
    }

    pub fn normal(&self) -> &Vector3<f64> {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        self.normal.dot(&p.coords) + self.offset
    }

    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        self.signed_distance(p).abs()
    }

    /// Orthogonal projection of `p` onto the plane.
    pub fn project(&self, p: &Point3<f64>) -> Point3<f64> {
        p - self.normal * self.signed_distance(p)
    }

    pub fn flipped(&self) -> Self {
        Self {
            normal: -self.normal,
            offset: -self.offset,
        }
    }

    /// Flips the plane, if needed, so `viewpoint` lies on its non-negative side.
    pub fn oriented_toward(&self, viewpoint: &Point3<f64>) -> Self {
        if self.signed_distance(viewpoint) < 0.0 {
            self.flipped()
        } else {
            *self
        }
    }

    /// Expresses the plane in the frame that `t` maps into.
    pub fn transformed(&self, t: &RigidTransform) -> Self {
        let normal = t.rotate(&self.normal);
        Self {
            normal,
            offset: self.offset - normal.dot(t.translation()),
        }
    }

    /// Deterministic orthonormal in-plane axes `(u, v)` with `u × v = n`.
    pub fn basis(&self) -> (Vector3<f64>, Vector3<f64>) {
        orthonormal_basis(&self.normal)
    }

    /// Least-squares offset for a fixed normal.
    pub fn refit_offset<'a>(normal: Vector3<f64>, points: impl IntoIterator<Item = &'a Point3<f64>>) -> Option<Self> {
        let n = normal.try_normalize(0.0)?;
        let mut sum = 0.0;
        let mut count = 0usize;
        for p in points {
            sum += n.dot(&p.coords);
            count += 1;
        }
        if count == 0 {
            return None;
        }
        Some(Self {
            normal: n,
            offset: -sum / count as f64,
        })
    }
}

pub fn orthonormal_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let a = n.abs();
    let helper = if a.x <= a.y && a.x <= a.z {
        Vector3::x()
    } else if a.y <= a.z {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let u = n.cross(&helper).normalize();
    let v = n.cross(&u);
    (u, v)
}

pub fn point_plane_distance(plane: &PlaneHypothesis, p: &Point3<f64>) -> f64 {
    plane.distance(p)
}

/// Least-squares plane through `points`.
///
/// The normal is the scatter-matrix eigenvector of the smallest eigenvalue,
/// signed so its largest-magnitude component is positive.
pub fn fit_plane_ls(points: &[Point3<f64>]) -> Result<PlaneHypothesis> {
    fit_plane_ls_iter(points.iter())
}

pub(crate) fn fit_plane_ls_iter<'a, I>(points: I) -> Result<PlaneHypothesis>
where
    I: Iterator<Item = &'a Point3<f64>> + Clone,
{
    let mut count = 0usize;
    let mut sum = Vector3::zeros();
    for p in points.clone() {
        sum += p.coords;
        count += 1;
    }
    if count < 3 {
        return Err(Error::DegenerateInput(format!(
            "plane fit needs at least 3 points, got {count}"
        )));
    }
    let centroid = sum / count as f64;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = p.coords - centroid;
        scatter += d * d.transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l_mid, l_max) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(l_max > 0.0) || l_mid <= 1e-12 * l_max {
        return Err(Error::DegenerateInput(
            "points are collinear or coincident".to_string(),
        ));
    }
    let mut normal: Vector3<f64> = eig.eigenvectors.column(order[0]).normalize();
    let imax = normal.iamax();
    if normal[imax] < 0.0 {
        normal = -normal;
    }
    Ok(PlaneHypothesis {
        normal,
        offset: -normal.dot(&centroid),
    })
}

/// Running first and second moments of a point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub count: f64,
    pub sum: Vector3<f64>,
    pub outer: Matrix3<f64>,
}

impl Default for Moments {
    fn default() -> Self {
        Self {
            count: 0.0,
            sum: Vector3::zeros(),
            outer: Matrix3::zeros(),
        }
    }
}

impl Moments {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3<f64>>) -> Self {
        let mut m = Self::default();
        for p in points {
            m.count += 1.0;
            m.sum += p.coords;
            m.outer += p.coords * p.coords.transpose();
        }
        m
    }

    pub fn add(&self, other: &Moments) -> Moments {
        Moments {
            count: self.count + other.count,
            sum: self.sum + other.sum,
            outer: self.outer + other.outer,
        }
    }

    pub fn sub(&self, other: &Moments) -> Moments {
        Moments {
            count: self.count - other.count,
            sum: self.sum - other.sum,
            outer: self.outer - other.outer,
        }
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.sum / self.count
    }

    /// Mean squared distance to the least-squares plane: `λ_min(C)/n`.
    pub fn mean_squared_residual(&self) -> f64 {
        if self.count < 1.0 {
            return 0.0;
        }
        let c = self.centroid();
        let cov = self.outer / self.count - c * c.transpose();
        smallest_symmetric_eigenvalue(&cov).max(0.0)
    }
}

/// Closed-form smallest eigenvalue of a symmetric 3×3 matrix.
pub fn smallest_symmetric_eigenvalue(a: &Matrix3<f64>) -> f64 {
    let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
    let q = a.trace() / 3.0;
    let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
    if p2 <= 0.0 {
        return q;
    }
    let p = (p2 / 6.0).sqrt();
    let b = (a - Matrix3::identity() * q) / p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos()
}
