//! Evaluation against ground truth: point-cloud and trajectory errors.

use nalgebra::{Matrix3, Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::RigidTransform;
use crate::spatial::SpatialIndex;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionError {
    pub average: f64,
    pub median: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryError {
    pub rmse: f64,
    pub median: f64,
}

/// How an estimated trajectory is brought into the ground-truth frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryAlignment {
    /// Map estimated pose 0 onto ground-truth pose 0.
    #[default]
    AnchorFirst,
    /// Least-squares rigid fit of the camera positions.
    Rigid,
}

/// Median of a non-empty slice; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Distance from every estimated point to its nearest ground-truth point.
/// One-directional: ground-truth points far from the estimate do not count.
pub fn reconstruction_error(estimated: &[Point3<f64>], ground_truth: &[Point3<f64>]) -> Result<ReconstructionError> {
    if estimated.is_empty() || ground_truth.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let index = SpatialIndex::from_slice(ground_truth);
    let d: Vec<f64> = estimated
        .par_iter()
        .map(|p| index.nearest(p).expect("non-empty index").distance())
        .collect();
    Ok(ReconstructionError {
        average: d.iter().sum::<f64>() / d.len() as f64,
        median: median(&d),
    })
}

/// Rigid transform `A` minimizing `Σ |A(from_k) − to_k|²`.
fn fit_rigid(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> RigidTransform {
    let n = from.len() as f64;
    let cf = from.iter().sum::<Vector3<f64>>() / n;
    let ct = to.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (f, t) in from.iter().zip(to) {
        cov += (t - ct) * (f - cf).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    RigidTransform::from_parts_orthonormalized(r, ct - r * cf)
}

/// Transform taking the estimated trajectory into the ground-truth frame.
pub fn alignment_transform(
    estimated: &[RigidTransform],
    ground_truth: &[RigidTransform],
    alignment: TrajectoryAlignment,
) -> Result<RigidTransform> {
    if estimated.len() != ground_truth.len() {
        return Err(Error::LengthMismatch {
            estimated: estimated.len(),
            ground_truth: ground_truth.len(),
        });
    }
    if estimated.is_empty() {
        return Ok(RigidTransform::identity());
    }
    Ok(match alignment {
        TrajectoryAlignment::AnchorFirst => ground_truth[0].compose(&estimated[0].inverse()),
        TrajectoryAlignment::Rigid => {
            let from: Vec<_> = estimated.iter().map(|t| *t.translation()).collect();
            let to: Vec<_> = ground_truth.iter().map(|t| *t.translation()).collect();
            fit_rigid(&from, &to)
        }
    })
}

/// Camera-position error after alignment: RMSE and median of the
/// per-pose translation error norms.
pub fn trajectory_error(
    estimated: &[RigidTransform],
    ground_truth: &[RigidTransform],
    alignment: TrajectoryAlignment,
) -> Result<TrajectoryError> {
    if estimated.len() != ground_truth.len() {
        return Err(Error::LengthMismatch {
            estimated: estimated.len(),
            ground_truth: ground_truth.len(),
        });
    }
    if estimated.is_empty() {
        return Ok(TrajectoryError { rmse: 0.0, median: 0.0 });
    }
    let align = alignment_transform(estimated, ground_truth, alignment)?;
    let errors: Vec<f64> = estimated
        .iter()
        .zip(ground_truth)
        .map(|(e, g)| (align.compose(e).translation() - g.translation()).norm())
        .collect();
    Ok(TrajectoryError {
        rmse: (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt(),
        median: median(&errors),
    })
}
