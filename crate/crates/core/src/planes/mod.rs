//! Per-fragment plane extraction: oversegmentation, hypothesis sampling,
//! agglomerative clustering and a Potts-model assignment with a null label.

mod graphcut;
mod hac;
mod maxflow;
mod segment;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::dataset::Fragment;
use crate::error::{Error, Result};
use crate::geom::{fit_plane_ls_iter, Moments, PlaneHypothesis};
use crate::spatial::SpatialIndex;

pub use graphcut::{alpha_expansion, ExpansionResult, PottsProblem};
pub use hac::{hac_cluster, HacCluster};
pub(crate) use hac::{cluster_atoms, plane_from_moments};
pub use maxflow::FlowGraph;
pub use segment::{oversegment, Segment};

/// Smallest mean |n_p · n| between a segment's point normals and a
/// hypothesis through it (cos 45°).
const NORMAL_AGREEMENT: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Potts energy parameters for the point-to-plane assignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyParams {
    /// Penalty for each neighbor pair with different labels.
    pub potts_weight: f64,
    /// Data cost of the null label, in meters.
    pub null_cost: f64,
    pub neighbor_k: usize,
    pub neighbor_radius: f64,
    /// Planes with fewer inliers are dropped after assignment.
    pub min_support: usize,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            potts_weight: 0.02,
            null_cost: 0.05,
            neighbor_k: 8,
            neighbor_radius: 0.15,
            min_support: 50,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.potts_weight > 0.0) || !(self.null_cost > 0.0) || !(self.neighbor_radius > 0.0) {
            return Err(Error::Config(
                "potts_weight, null_cost and neighbor_radius must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaneParams {
    pub seed_resolution: f64,
    pub merge_threshold: f64,
    pub energy: EnergyParams,
}

impl Default for PlaneParams {
    fn default() -> Self {
        Self {
            seed_resolution: 0.25,
            merge_threshold: 0.05,
            energy: EnergyParams::default(),
        }
    }
}

impl PlaneParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.seed_resolution > 0.0) || !(self.merge_threshold > 0.0) {
            return Err(Error::Config(
                "seed_resolution and merge_threshold must be positive".into(),
            ));
        }
        self.energy.validate()
    }
}

/// Per-point plane assignment; `None` is the null label.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneLabeling {
    pub labels: Vec<Option<usize>>,
    pub planes: Vec<PlaneHypothesis>,
}

impl PlaneLabeling {
    pub fn empty(points: usize) -> Self {
        Self {
            labels: vec![None; points],
            planes: Vec::new(),
        }
    }

    pub fn inliers(&self, plane: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(plane))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn support(&self) -> Vec<usize> {
        let mut counts = vec![0; self.planes.len()];
        for l in self.labels.iter().flatten() {
            counts[*l] += 1;
        }
        counts
    }

    pub fn null_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }
}

/// Mean point distance from the segment's points to `plane`.
pub fn segment_plane_cost(plane: &PlaneHypothesis, segment: &Segment, fragment: &Fragment) -> f64 {
    if segment.point_indices.is_empty() {
        return 0.0;
    }
    let sum: f64 = segment
        .point_indices
        .iter()
        .map(|&i| plane.distance(&fragment.points[i].position))
        .sum();
    sum / segment.point_indices.len() as f64
}

/// Hypotheses through the centroids of every triangle of mutually adjacent
/// segments, oriented toward the sensor, with the supporting segment ids.
fn sample_with_support(segments: &[Segment], fragment: &Fragment) -> Vec<(PlaneHypothesis, [usize; 3])> {
    let mut out = Vec::new();
    for (a, sa) in segments.iter().enumerate() {
        for (bi, &b) in sa.adjacency.iter().enumerate() {
            if b <= a {
                continue;
            }
            for &c in &sa.adjacency[bi + 1..] {
                if segments[b].adjacency.binary_search(&c).is_err() {
                    continue;
                }
                let plane = PlaneHypothesis::through_points(
                    &sa.centroid,
                    &segments[b].centroid,
                    &segments[c].centroid,
                );
                if let Some(plane) = plane {
                    out.push((plane.oriented_toward(&fragment.sensor_origin), [a, b, c]));
                }
            }
        }
    }
    out
}

/// One plane per triangle of mutually adjacent segments (collinear
/// centroids skipped).
pub fn sample_hypotheses(segments: &[Segment], fragment: &Fragment) -> Vec<PlaneHypothesis> {
    sample_with_support(segments, fragment)
        .into_iter()
        .map(|(p, _)| p)
        .collect()
}

/// Unique neighbor pairs `(p, q)` with `p < q`: each point's `k` nearest
/// neighbors that lie within `radius`.
fn neighbor_pairs(positions: &[Point3<f64>], k: usize, radius: f64) -> Vec<(usize, usize)> {
    let index = SpatialIndex::from_slice(positions);
    let mut pairs: Vec<(usize, usize)> = positions
        .iter()
        .enumerate()
        .flat_map(|(p, pos)| {
            index
                .knn_within(pos, k + 1, radius)
                .into_iter()
                .filter(move |nb| nb.index != p)
                .map(move |nb| (p.min(nb.index), p.max(nb.index)))
        })
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

fn assign(
    fragment: &Fragment,
    planes: &[PlaneHypothesis],
    params: &EnergyParams,
    pairs: &[(usize, usize)],
) -> (PlaneLabeling, ExpansionResult) {
    let null = planes.len();
    let unary = fragment
        .points
        .iter()
        .map(|p| {
            let mut row: Vec<f64> = planes.iter().map(|pl| pl.distance(&p.position)).collect();
            row.push(params.null_cost);
            row
        })
        .collect();
    let problem = PottsProblem {
        unary,
        edges: pairs.iter().map(|&(p, q)| (p, q, params.potts_weight)).collect(),
        label_count: null + 1,
    };
    let result = alpha_expansion(&problem, problem.unary_argmin());

    let mut counts = vec![0usize; null];
    for &l in &result.labels {
        if l < null {
            counts[l] += 1;
        }
    }
    let mut remap = vec![None; null];
    let mut kept = Vec::new();
    for (l, &c) in counts.iter().enumerate() {
        if c >= params.min_support {
            remap[l] = Some(kept.len());
            kept.push(planes[l]);
        }
    }
    let labels = result
        .labels
        .iter()
        .map(|&l| if l < null { remap[l] } else { None })
        .collect();
    (
        PlaneLabeling {
            labels,
            planes: kept,
        },
        result,
    )
}

/// Assigns every point to one of `planes` or to the null label by
/// minimizing the Potts energy with α-expansion.
pub fn graphcut_assign(
    fragment: &Fragment,
    planes: &[PlaneHypothesis],
    params: &EnergyParams,
) -> Result<PlaneLabeling> {
    graphcut_assign_traced(fragment, planes, params).map(|(l, _)| l)
}

/// [`graphcut_assign`] plus the energy after every accepted move.
pub fn graphcut_assign_traced(
    fragment: &Fragment,
    planes: &[PlaneHypothesis],
    params: &EnergyParams,
) -> Result<(PlaneLabeling, ExpansionResult)> {
    if planes.is_empty() {
        return Err(Error::NoPlanes);
    }
    let pairs = neighbor_pairs(&fragment.positions(), params.neighbor_k, params.neighbor_radius);
    Ok(assign(fragment, planes, params, &pairs))
}

/// Moves points whose normal disagrees with their plane to the null label,
/// then drops planes left with fewer than `min_support` inliers.
fn drop_inconsistent(fragment: &Fragment, labeling: PlaneLabeling, min_support: usize) -> PlaneLabeling {
    let mut labels = labeling.labels;
    for (i, l) in labels.iter_mut().enumerate() {
        if let Some(k) = *l {
            let agree = fragment.points[i].normal.dot(labeling.planes[k].normal()).abs();
            if agree < NORMAL_AGREEMENT {
                *l = None;
            }
        }
    }
    let mut counts = vec![0usize; labeling.planes.len()];
    for l in labels.iter().flatten() {
        counts[*l] += 1;
    }
    let mut remap = vec![None; counts.len()];
    let mut planes = Vec::new();
    for (k, &c) in counts.iter().enumerate() {
        if c >= min_support {
            remap[k] = Some(planes.len());
            planes.push(labeling.planes[k]);
        }
    }
    PlaneLabeling {
        labels: labels.into_iter().map(|l| l.and_then(|k| remap[k])).collect(),
        planes,
    }
}

/// Least-squares refit of every plane on its inliers, keeping the old plane
/// when the inliers are degenerate.
fn refit(fragment: &Fragment, labeling: &PlaneLabeling) -> Vec<PlaneHypothesis> {
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); labeling.planes.len()];
    for (i, l) in labeling.labels.iter().enumerate() {
        if let Some(l) = l {
            groups[*l].push(i);
        }
    }
    groups
        .iter()
        .zip(&labeling.planes)
        .map(|(idx, old)| {
            fit_plane_ls_iter(idx.iter().map(|&i| &fragment.points[i].position))
                .map(|p| p.oriented_toward(&fragment.sensor_origin))
                .unwrap_or(*old)
        })
        .collect()
}

/// Clustered plane candidates for a fragment before assignment.
pub fn candidate_planes(fragment: &Fragment, params: &PlaneParams) -> Vec<PlaneHypothesis> {
    let segments = oversegment(fragment, params.seed_resolution);
    let sampled = sample_with_support(&segments, fragment);
    if sampled.is_empty() {
        return Vec::new();
    }
    let atoms: Vec<Vec<Point3<f64>>> = segments
        .iter()
        .map(|s| s.point_indices.iter().map(|&i| fragment.points[i].position).collect())
        .collect();
    // Triples that are not planar on their own, or whose point normals
    // disagree with the plane, are dropped before clustering; on cluttered
    // or noisy input they dominate the pair count.
    let moments: Vec<Moments> = atoms.iter().map(|a| Moments::from_points(a)).collect();
    let normals_agree = |plane: &PlaneHypothesis, seg: usize| {
        let idx = &segments[seg].point_indices;
        let sum: f64 = idx
            .iter()
            .map(|&i| fragment.points[i].normal.dot(plane.normal()).abs())
            .sum();
        sum >= NORMAL_AGREEMENT * idx.len() as f64
    };
    let planar: Vec<&(PlaneHypothesis, [usize; 3])> = sampled
        .iter()
        .filter(|(plane, tri)| tri.iter().all(|&k| normals_agree(plane, k)))
        .filter(|(_, tri)| {
            let m = tri.iter().fold(Moments::default(), |acc, &k| acc.add(&moments[k]));
            plane_from_moments(&m).is_some_and(|plane| {
                let sum: f64 = tri
                    .iter()
                    .flat_map(|&k| atoms[k].iter())
                    .map(|p| plane.distance(p))
                    .sum();
                sum <= params.merge_threshold * m.count
            })
        })
        .collect();
    let hypotheses: Vec<PlaneHypothesis> = planar.iter().map(|s| s.0).collect();
    let members: Vec<Vec<usize>> = planar.iter().map(|s| s.1.to_vec()).collect();
    cluster_atoms(&hypotheses, &atoms, &members, params.merge_threshold)
        .into_iter()
        .filter(|c| c.cost <= params.merge_threshold && c.point_count >= params.energy.min_support)
        .map(|c| c.plane.oriented_toward(&fragment.sensor_origin))
        .collect()
}

/// Full per-fragment extraction. Assignment and refitting alternate twice;
/// after each assignment, points whose normal is more than 45° off their
/// plane are moved to the null label so that corner points pulled across by
/// the smoothness term do not bias the refit. The returned planes are
/// least-squares fits to their final inliers.
pub fn extract_fragment_planes(fragment: &Fragment, params: &PlaneParams) -> Result<PlaneLabeling> {
    params.validate()?;
    if fragment.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut planes = candidate_planes(fragment, params);
    if planes.is_empty() {
        return Ok(PlaneLabeling::empty(fragment.len()));
    }
    let pairs = neighbor_pairs(
        &fragment.positions(),
        params.energy.neighbor_k,
        params.energy.neighbor_radius,
    );
    let mut labeling = PlaneLabeling::empty(fragment.len());
    for _ in 0..2 {
        if planes.is_empty() {
            return Ok(PlaneLabeling::empty(fragment.len()));
        }
        let assigned = assign(fragment, &planes, &params.energy, &pairs).0;
        labeling = drop_inconsistent(fragment, assigned, params.energy.min_support);
        planes = refit(fragment, &labeling);
    }
    labeling.planes = planes;
    Ok(labeling)
}
