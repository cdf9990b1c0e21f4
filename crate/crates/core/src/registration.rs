//! Pairwise point-to-plane ICP.
//!
//! Residuals use target normals, `r = (T(p) − q)·n_q`, and updates are
//! applied on the left, `T ← exp(ξ) ∘ T`.

use std::collections::HashMap;

use nalgebra::{Matrix6, Point3, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Fragment;
use crate::error::{Error, Result};
use crate::geom::{se3_exp, RigidTransform};
use crate::linalg::solve_psd_pinv6;
use crate::spatial::SpatialIndex;

/// Fewest correspondences that can pin down all six degrees of freedom.
pub const MIN_CORRESPONDENCES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Correspondence gate, meters.
    pub max_dist: f64,
    /// Normal agreement gate, degrees.
    pub max_normal_angle_deg: f64,
    /// Stop once the update norm falls below this.
    pub convergence: f64,
    /// Distance used for the reported overlap ratio, meters.
    pub overlap_dist: f64,
    /// The source is voxel-downsampled to at most this many points.
    pub max_source_points: usize,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 40,
            max_dist: 0.1,
            max_normal_angle_deg: 30.0,
            convergence: 1e-7,
            overlap_dist: 0.05,
            max_source_points: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source_index: usize,
    pub target_index: usize,
    pub target_normal: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub transform: RigidTransform,
    pub rmse: f64,
    pub overlap_ratio: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Point-to-plane RMSE at the start of each iteration.
    pub rmse_history: Vec<f64>,
}

/// A target cloud with its search structure, reusable across ICP runs.
#[derive(Debug, Clone)]
pub struct PreparedCloud {
    index: SpatialIndex,
    normals: Vec<Vector3<f64>>,
}

impl PreparedCloud {
    pub fn new(fragment: &Fragment) -> Self {
        Self {
            index: SpatialIndex::new(fragment.positions()),
            normals: fragment.points.iter().map(|p| p.normal).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        self.index.points()
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn index(&self) -> &SpatialIndex {
        &self.index
    }
}

/// Point-to-plane residual `(T(p) − q)·n` for an already transformed `x = T(p)`.
#[inline]
pub fn point_to_plane_residual(x: &Point3<f64>, q: &Point3<f64>, n: &Vector3<f64>) -> f64 {
    (x - q).dot(n)
}

/// Derivative of the point-to-plane residual with respect to a left
/// perturbation `[ω; v]`, evaluated at `x = T(p)`.
#[inline]
pub fn point_to_plane_jacobian(x: &Point3<f64>, n: &Vector3<f64>) -> Vector6<f64> {
    let w = x.coords.cross(n);
    Vector6::new(w.x, w.y, w.z, n.x, n.y, n.z)
}

fn match_points(
    source: &[(Point3<f64>, Vector3<f64>)],
    target: &PreparedCloud,
    t: &RigidTransform,
    max_dist: f64,
    cos_gate: f64,
) -> Vec<Correspondence> {
    source
        .par_iter()
        .enumerate()
        .map(|(i, (p, n))| {
            let x = t.apply(p);
            let nb = target.index.nearest_within(&x, max_dist)?;
            let nq = target.normals[nb.index];
            if t.rotate(n).dot(&nq) < cos_gate {
                return None;
            }
            Some(Correspondence {
                source_index: i,
                target_index: nb.index,
                target_normal: nq,
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Nearest-neighbor correspondences under `t`, gated by distance and
/// normal agreement. Not one-to-one.
pub fn find_correspondences(
    source: &Fragment,
    target: &Fragment,
    t: &RigidTransform,
    max_dist: f64,
    max_normal_angle: f64,
) -> Vec<Correspondence> {
    let prepared = PreparedCloud::new(target);
    find_correspondences_prepared(source, &prepared, t, max_dist, max_normal_angle)
}

pub fn find_correspondences_prepared(
    source: &Fragment,
    target: &PreparedCloud,
    t: &RigidTransform,
    max_dist: f64,
    max_normal_angle: f64,
) -> Vec<Correspondence> {
    let pts: Vec<_> = source.points.iter().map(|p| (p.position, p.normal)).collect();
    match_points(&pts, target, t, max_dist, max_normal_angle.cos())
}

/// Fraction of source points whose nearest target point under `t` lies
/// within `dist_thresh`.
pub fn overlap_ratio(source: &Fragment, target: &Fragment, t: &RigidTransform, dist_thresh: f64) -> f64 {
    overlap_ratio_prepared(&source.positions(), &PreparedCloud::new(target), t, dist_thresh)
}

pub fn overlap_ratio_prepared(
    source: &[Point3<f64>],
    target: &PreparedCloud,
    t: &RigidTransform,
    dist_thresh: f64,
) -> f64 {
    if source.is_empty() || target.is_empty() {
        return 0.0;
    }
    let hits: usize = source
        .par_iter()
        .map(|p| {
            let x = t.apply(p);
            target.index.nearest_within(&x, dist_thresh).is_some() as usize
        })
        .sum();
    hits as f64 / source.len() as f64
}

/// Indices of one representative point per occupied voxel (the lowest
/// index), in increasing order.
pub fn voxel_downsample(points: &[Point3<f64>], voxel: f64) -> Vec<usize> {
    let mut first: HashMap<(i64, i64, i64), usize> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        let key = (
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        );
        first.entry(key).or_insert(i);
    }
    let mut keep: Vec<usize> = first.into_values().collect();
    keep.sort_unstable();
    keep
}

/// Source samples used for matching: all points, or a voxel subsample of
/// at most `max_points` when the cloud is larger.
fn source_samples(source: &Fragment, max_points: usize) -> Vec<(Point3<f64>, Vector3<f64>)> {
    let all = || source.points.iter().map(|p| (p.position, p.normal)).collect();
    if max_points == 0 || source.points.len() <= max_points {
        return all();
    }
    let positions = source.positions();
    let mut voxel = 0.005;
    loop {
        let keep = voxel_downsample(&positions, voxel);
        if keep.len() <= max_points {
            return keep
                .into_iter()
                .map(|i| (source.points[i].position, source.points[i].normal))
                .collect();
        }
        voxel *= 1.25;
    }
}

fn rmse_of(source: &[(Point3<f64>, Vector3<f64>)], target: &PreparedCloud, corr: &[Correspondence], t: &RigidTransform) -> f64 {
    if corr.is_empty() {
        return 0.0;
    }
    let sum: f64 = corr
        .iter()
        .map(|c| {
            let r = point_to_plane_residual(&t.apply(&source[c.source_index].0), &target.points()[c.target_index], &c.target_normal);
            r * r
        })
        .sum();
    (sum / corr.len() as f64).sqrt()
}

pub fn icp_point_to_plane(source: &Fragment, target: &Fragment, t0: &RigidTransform, params: &IcpParams) -> Result<IcpResult> {
    icp_prepared(source, &PreparedCloud::new(target), t0, params)
}

/// ICP against a prepared target.
pub fn icp_prepared(source: &Fragment, target: &PreparedCloud, t0: &RigidTransform, params: &IcpParams) -> Result<IcpResult> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::InsufficientCorrespondences {
            found: 0,
            needed: MIN_CORRESPONDENCES,
        });
    }
    let samples = source_samples(source, params.max_source_points);
    let cos_gate = params.max_normal_angle_deg.to_radians().cos();
    let mut t = *t0;
    let mut converged = false;
    let mut iterations = 0;
    let mut history = Vec::new();

    for _ in 0..params.max_iterations {
        let corr = match_points(&samples, target, &t, params.max_dist, cos_gate);
        if corr.len() < MIN_CORRESPONDENCES {
            return Err(Error::InsufficientCorrespondences {
                found: corr.len(),
                needed: MIN_CORRESPONDENCES,
            });
        }
        iterations += 1;

        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        let mut cost = 0.0;
        for c in &corr {
            let x = t.apply(&samples[c.source_index].0);
            let q = &target.points()[c.target_index];
            let r = point_to_plane_residual(&x, q, &c.target_normal);
            let j = point_to_plane_jacobian(&x, &c.target_normal);
            h += j * j.transpose();
            g += j * r;
            cost += r * r;
        }
        history.push((cost / corr.len() as f64).sqrt());

        let mut xi = solve_psd_pinv6(&h, &(-g));
        let fixed_cost = |cand: &RigidTransform| -> f64 {
            corr.iter()
                .map(|c| {
                    let r = point_to_plane_residual(&cand.apply(&samples[c.source_index].0), &target.points()[c.target_index], &c.target_normal);
                    r * r
                })
                .sum()
        };
        let mut accepted = None;
        for _ in 0..=8 {
            let cand = se3_exp(&xi).compose(&t);
            if fixed_cost(&cand) <= cost {
                accepted = Some(cand);
                break;
            }
            xi *= 0.5;
        }
        let Some(next) = accepted else {
            converged = true;
            break;
        };
        t = next;
        if xi.norm() < params.convergence {
            converged = true;
            break;
        }
    }

    let t = t.renormalized();
    let corr = match_points(&samples, target, &t, params.max_dist, cos_gate);
    let rmse = rmse_of(&samples, target, &corr, &t);
    let positions: Vec<_> = samples.iter().map(|s| s.0).collect();
    let overlap = overlap_ratio_prepared(&positions, target, &t, params.overlap_dist);
    Ok(IcpResult {
        transform: t,
        rmse,
        overlap_ratio: overlap,
        iterations,
        converged,
        rmse_history: history,
    })
}
