//! Layout-constrained global registration.
//!
//! The energy over world poses `T_k` is
//!
//! ```text
//! E = Σ ((T_i p − q)·(R_i n_p))²                  layout: q is a virtual point on a layout plane
//!   + λ1 Σ ((T_i p − T_j q)·(R_i n_p))²           fragment pairs
//!   + λ2 Σ |T_i ∘ T̃_ij − T_j|₁                    relative poses, entrywise L1 over the 3×4 matrix
//! ```
//!
//! minimized by damped Gauss-Newton with left updates `T ← exp(ξ) ∘ T`,
//! pose 0 held fixed. The L1 term is handled by iteratively reweighted least
//! squares. [`joint_optimize`] alternates layout estimation with the
//! registration solve.

use nalgebra::{DMatrix, DVector, Matrix3, Point3, SMatrix, SVector, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Fragment;
use crate::error::{Error, Result};
use crate::geom::{se3_exp, skew, PlaneHypothesis, RigidTransform};
use crate::layout::{estimate_layout, Layout, LayoutParams};
use crate::linalg::solve_spd;
use crate::planes::PlaneLabeling;
use crate::registration::{find_correspondences_prepared, PreparedCloud};

pub type Vector12 = SVector<f64, 12>;
pub type Matrix12x6 = SMatrix<f64, 12, 6>;

/// Residuals of the L1 relative-pose term smaller than this get the weight
/// of this value when reweighting.
const L1_EPSILON: f64 = 1e-4;

const MAX_HALVINGS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    /// Weight of the fragment-pair term; derived from correspondence counts when unset.
    pub lambda_frag: Option<f64>,
    /// Weight of the relative-pose term; derived from counts when unset.
    pub lambda_pair: Option<f64>,
    /// Enables the layout term. Off reproduces the layout-free baseline.
    pub use_layout: bool,
    pub layout_max_dist: f64,
    pub pair_max_dist: f64,
    /// Normal agreement gate for both correspondence kinds, degrees.
    pub max_normal_angle_deg: f64,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    /// Stop once no fragment centroid moves more than this in one outer iteration, meters.
    pub convergence_eps: f64,
    /// Re-establish fragment-pair correspondences at every outer iteration.
    pub refresh_pair_correspondences: bool,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            lambda_frag: None,
            lambda_pair: None,
            use_layout: true,
            layout_max_dist: 0.1,
            pair_max_dist: 0.05,
            max_normal_angle_deg: 30.0,
            inner_iterations: 10,
            outer_iterations: 20,
            convergence_eps: 1e-5,
            refresh_pair_correspondences: false,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_frag", self.lambda_frag), ("lambda_pair", self.lambda_pair)] {
            if let Some(v) = v {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::Config(format!("{name} must be a finite value ≥ 0")));
                }
            }
        }
        if self.inner_iterations == 0 || self.outer_iterations == 0 {
            return Err(Error::Config("inner_iterations and outer_iterations must be ≥ 1".into()));
        }
        if !(self.layout_max_dist > 0.0) || !(self.pair_max_dist > 0.0) || !(self.convergence_eps >= 0.0) {
            return Err(Error::Config("registration distances must be positive".into()));
        }
        if !(self.max_normal_angle_deg > 0.0 && self.max_normal_angle_deg <= 180.0) {
            return Err(Error::Config("max_normal_angle_deg must lie in (0, 180]".into()));
        }
        Ok(())
    }
}

/// A fragment point matched to a virtual point on a layout plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayoutCorrespondence {
    pub fragment: usize,
    pub point_index: usize,
    /// Fragment-local position.
    pub point: Point3<f64>,
    /// Fragment-local unit normal.
    pub point_normal: Vector3<f64>,
    /// World-frame target on the layout plane.
    pub virtual_point: Point3<f64>,
    pub plane: usize,
}

/// Point `p` of fragment `i` matched to point `q` of fragment `j`, all in
/// fragment-local coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FragmentMatch {
    pub i: usize,
    pub j: usize,
    pub p: Point3<f64>,
    pub normal: Vector3<f64>,
    pub q: Point3<f64>,
}

/// Measured relative pose: ideally `T_i ∘ relative = T_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairConstraint {
    pub i: usize,
    pub j: usize,
    pub relative: RigidTransform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub frag: f64,
    pub pair: f64,
}

impl Weights {
    /// Explicit config values win. Otherwise the fragment term is scaled to
    /// the layout correspondence count and the relative-pose term to a
    /// hundredth of it per constraint; without layout correspondences the
    /// fragment term takes that role.
    pub fn resolve(config: &RegistrationConfig, layout_count: usize, match_count: usize, constraint_count: usize) -> Self {
        let anchor = if layout_count > 0 { layout_count } else { match_count };
        let frag = match (layout_count, match_count) {
            (0, _) | (_, 0) => 1.0,
            (l, m) => l as f64 / m as f64,
        };
        let pair = if constraint_count == 0 {
            0.0
        } else {
            anchor as f64 / (100.0 * constraint_count as f64)
        };
        Self {
            frag: config.lambda_frag.unwrap_or(frag),
            pair: config.lambda_pair.unwrap_or(pair),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyBreakdown {
    pub e_layout: f64,
    pub e_frag: f64,
    pub e_pair: f64,
    pub total: f64,
}

/// Everything the registration energy is built from.
#[derive(Debug, Clone, Default)]
pub struct RegistrationProblem {
    pub layout: Vec<LayoutCorrespondence>,
    pub matches: Vec<FragmentMatch>,
    pub constraints: Vec<PairConstraint>,
}

/// `(T p − q)·(R n)`.
pub fn layout_residual(pose: &RigidTransform, c: &LayoutCorrespondence) -> f64 {
    (pose.apply(&c.point) - c.virtual_point).dot(&pose.rotate(&c.point_normal))
}

/// Derivative of [`layout_residual`] under a left perturbation `[ω; v]`:
/// `[q × m; m]` with `m = R n`.
pub fn layout_jacobian(pose: &RigidTransform, c: &LayoutCorrespondence) -> Vector6<f64> {
    let m = pose.rotate(&c.point_normal);
    let w = c.virtual_point.coords.cross(&m);
    Vector6::new(w.x, w.y, w.z, m.x, m.y, m.z)
}

/// `(T_i p − T_j q)·(R_i n)`.
pub fn match_residual(ti: &RigidTransform, tj: &RigidTransform, m: &FragmentMatch) -> f64 {
    (ti.apply(&m.p) - tj.apply(&m.q)).dot(&ti.rotate(&m.normal))
}

/// Derivatives of [`match_residual`] with respect to left perturbations of
/// `T_i` and `T_j`.
pub fn match_jacobians(ti: &RigidTransform, tj: &RigidTransform, m: &FragmentMatch) -> (Vector6<f64>, Vector6<f64>) {
    let n = ti.rotate(&m.normal);
    let w = tj.apply(&m.q).coords.cross(&n);
    let ji = Vector6::new(w.x, w.y, w.z, n.x, n.y, n.z);
    (ji, -ji)
}

/// Entries of the 3×4 matrix `T_i ∘ T̃ − T_j`, row-major.
pub fn relative_residual(ti: &RigidTransform, tj: &RigidTransform, relative: &RigidTransform) -> Vector12 {
    let a = ti.compose(relative).to_row_major();
    let b = tj.to_row_major();
    Vector12::from_fn(|k, _| a[k] - b[k])
}

/// Derivatives of [`relative_residual`] with respect to left perturbations
/// of `T_i` and `T_j`.
pub fn relative_jacobians(ti: &RigidTransform, tj: &RigidTransform, relative: &RigidTransform) -> (Matrix12x6, Matrix12x6) {
    let a = ti.compose(relative);
    let mut ji = Matrix12x6::zeros();
    let mut jj = Matrix12x6::zeros();
    // Row-major layout: row r holds entries 4r..4r+3, i.e. rotation column
    // k sits at 4r+k for r = 0..3, translation at 4r+3.
    let put = |target: &mut Matrix12x6, col: usize, d: &Matrix3<f64>, dv: Option<f64>| {
        for r in 0..3 {
            for c in 0..3 {
                target[(4 * r + col, c)] = d[(r, c)];
            }
            if let Some(s) = dv {
                target[(4 * r + col, 3 + r)] = s;
            }
        }
    };
    for k in 0..3 {
        put(&mut ji, k, &-skew(&a.rotation().column(k).into_owned()), None);
        put(&mut jj, k, &skew(&tj.rotation().column(k).into_owned()), None);
    }
    put(&mut ji, 3, &-skew(a.translation()), Some(1.0));
    put(&mut jj, 3, &skew(tj.translation()), Some(-1.0));
    (ji, jj)
}

pub fn energy(poses: &[RigidTransform], problem: &RegistrationProblem, weights: &Weights) -> EnergyBreakdown {
    let e_layout: f64 = problem
        .layout
        .iter()
        .map(|c| layout_residual(&poses[c.fragment], c).powi(2))
        .sum();
    let e_frag: f64 = problem
        .matches
        .iter()
        .map(|m| match_residual(&poses[m.i], &poses[m.j], m).powi(2))
        .sum();
    let e_pair: f64 = problem
        .constraints
        .iter()
        .map(|c| relative_residual(&poses[c.i], &poses[c.j], &c.relative).abs().sum())
        .sum();
    EnergyBreakdown {
        e_layout,
        e_frag,
        e_pair,
        total: e_layout + weights.frag * e_frag + weights.pair * e_pair,
    }
}

/// Normal equations over poses `1..n`.
struct System {
    h: DMatrix<f64>,
    g: DVector<f64>,
}

impl System {
    fn new(poses: usize) -> Self {
        let dim = 6 * poses.saturating_sub(1);
        Self {
            h: DMatrix::zeros(dim, dim),
            g: DVector::zeros(dim),
        }
    }

    /// Adds `w·(Σ_k J_k δ_k + r)²` for the blocks `J_k` of poses `k`.
    fn add<const R: usize>(&mut self, blocks: &[(usize, SMatrix<f64, R, 6>)], r: &SVector<f64, R>, w: f64) {
        for (a, ja) in blocks {
            if *a == 0 {
                continue;
            }
            let oa = 6 * (a - 1);
            let ga = ja.transpose() * r * w;
            for x in 0..6 {
                self.g[oa + x] += ga[x];
            }
            for (b, jb) in blocks {
                if *b == 0 {
                    continue;
                }
                let ob = 6 * (b - 1);
                let hab = ja.transpose() * jb * w;
                for x in 0..6 {
                    for y in 0..6 {
                        self.h[(oa + x, ob + y)] += hab[(x, y)];
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub poses: Vec<RigidTransform>,
    pub energy: EnergyBreakdown,
    /// Norm of the accepted (possibly halved) update.
    pub step_norm: f64,
    pub accepted: bool,
}

/// One damped Gauss-Newton step on all poses jointly, pose 0 fixed.
///
/// The L1 term is linearized with weights `1 / max(|r|, ε)`, which majorizes
/// it. The update is halved until the total energy does not increase; if
/// eight halvings fail the poses are returned unchanged.
pub fn gauss_newton_step(
    poses: &[RigidTransform],
    problem: &RegistrationProblem,
    weights: &Weights,
) -> Result<StepResult> {
    let n = poses.len();
    let before = energy(poses, problem, weights);
    if n <= 1 {
        return Ok(StepResult {
            poses: poses.to_vec(),
            energy: before,
            step_norm: 0.0,
            accepted: true,
        });
    }
    let mut sys = System::new(n);
    for c in &problem.layout {
        let t = &poses[c.fragment];
        let j = layout_jacobian(t, c).transpose();
        sys.add(&[(c.fragment, j)], &SVector::<f64, 1>::new(layout_residual(t, c)), 1.0);
    }
    if weights.frag > 0.0 {
        for m in &problem.matches {
            let (ti, tj) = (&poses[m.i], &poses[m.j]);
            let (ji, jj) = match_jacobians(ti, tj, m);
            let r = SVector::<f64, 1>::new(match_residual(ti, tj, m));
            sys.add(&[(m.i, ji.transpose()), (m.j, jj.transpose())], &r, weights.frag);
        }
    }
    if weights.pair > 0.0 {
        for c in &problem.constraints {
            let (ti, tj) = (&poses[c.i], &poses[c.j]);
            let r = relative_residual(ti, tj, &c.relative);
            let (ji, jj) = relative_jacobians(ti, tj, &c.relative);
            // |r| ≤ (r² / |r0| + |r0|) / 2, so each entry gets weight λ / (2 |r0|).
            for k in 0..12 {
                let w = weights.pair / (2.0 * r[k].abs().max(L1_EPSILON));
                let rk = SVector::<f64, 1>::new(r[k]);
                let bi: SMatrix<f64, 1, 6> = ji.row(k).into_owned();
                let bj: SMatrix<f64, 1, 6> = jj.row(k).into_owned();
                sys.add(&[(c.i, bi), (c.j, bj)], &rk, w);
            }
        }
    }
    let delta = solve_spd(sys.h, &(-sys.g), "global registration")?;

    let mut scale = 1.0;
    for _ in 0..=MAX_HALVINGS {
        let candidate: Vec<RigidTransform> = poses
            .iter()
            .enumerate()
            .map(|(k, t)| {
                if k == 0 {
                    *t
                } else {
                    let xi = Vector6::from_fn(|x, _| scale * delta[6 * (k - 1) + x]);
                    se3_exp(&xi).compose(t).renormalized()
                }
            })
            .collect();
        let after = energy(&candidate, problem, weights);
        if after.total <= before.total {
            return Ok(StepResult {
                poses: candidate,
                energy: after,
                step_norm: scale * delta.norm(),
                accepted: true,
            });
        }
        scale *= 0.5;
    }
    Ok(StepResult {
        poses: poses.to_vec(),
        energy: before,
        step_norm: 0.0,
        accepted: false,
    })
}

/// Fragment-pair correspondences under the current poses: each point of
/// fragment `i` is matched to its nearest neighbor in fragment `j`, gated by
/// distance and normal agreement.
pub fn establish_pair_correspondences(
    fragments: &[Fragment],
    poses: &[RigidTransform],
    pairs: &[(usize, usize)],
    max_dist: f64,
    max_normal_angle_deg: f64,
) -> Vec<Vec<FragmentMatch>> {
    let mut targets: Vec<usize> = pairs.iter().map(|&(_, j)| j).collect();
    targets.sort_unstable();
    targets.dedup();
    let prepared: Vec<(usize, PreparedCloud)> = targets
        .par_iter()
        .map(|&j| (j, PreparedCloud::new(&fragments[j])))
        .collect();
    let angle = max_normal_angle_deg.to_radians();
    pairs
        .par_iter()
        .map(|&(i, j)| {
            let target = &prepared[prepared.binary_search_by_key(&j, |(k, _)| *k).expect("prepared target")].1;
            let t = poses[j].inverse().compose(&poses[i]);
            find_correspondences_prepared(&fragments[i], target, &t, max_dist, angle)
                .into_iter()
                .map(|c| {
                    let sp = &fragments[i].points[c.source_index];
                    FragmentMatch {
                        i,
                        j,
                        p: sp.position,
                        normal: sp.normal,
                        q: fragments[j].points[c.target_index].position,
                    }
                })
                .collect()
        })
        .collect()
}

/// Projects every point of `fragment` (under `pose`) onto the nearest layout
/// plane and keeps it when the distance is at most `max_dist` and the
/// world-frame point normal is within `max_normal_angle_deg` of the plane
/// normal.
pub fn establish_layout_correspondences(
    fragment_id: usize,
    fragment: &Fragment,
    pose: &RigidTransform,
    layout_planes: &[PlaneHypothesis],
    max_dist: f64,
    max_normal_angle_deg: f64,
) -> Vec<LayoutCorrespondence> {
    let cos_gate = max_normal_angle_deg.to_radians().cos();
    let mut out = Vec::new();
    for (idx, p) in fragment.points.iter().enumerate() {
        let x = pose.apply(&p.position);
        let nearest = layout_planes
            .iter()
            .enumerate()
            .map(|(k, pl)| (pl.distance(&x), k))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let Some((dist, k)) = nearest else {
            break;
        };
        if dist > max_dist || pose.rotate(&p.normal).dot(layout_planes[k].normal()) < cos_gate {
            continue;
        }
        out.push(LayoutCorrespondence {
            fragment: fragment_id,
            point_index: idx,
            point: p.position,
            point_normal: p.normal,
            virtual_point: layout_planes[k].project(&x),
            plane: k,
        });
    }
    out
}

/// One line of the optimization trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub energy: EnergyBreakdown,
    pub weights: Weights,
    pub layout_planes: usize,
    /// Total energy before the first and after every inner step.
    pub inner_totals: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct JointResult {
    pub poses: Vec<RigidTransform>,
    pub layout: Option<Layout>,
    pub trace: Vec<TraceRow>,
    /// No base plane was found; `poses` are the initial poses.
    pub layout_not_found: bool,
}

impl JointResult {
    /// `iter e_layout e_frag e_pair total n_layout_planes`, one row per outer iteration.
    pub fn format_trace(&self) -> String {
        let mut s = String::from("# iter e_layout e_frag e_pair total n_layout_planes\n");
        if self.layout_not_found {
            s.push_str("# layout not found: poses fall back to the pose-graph solution\n");
        }
        for r in &self.trace {
            s.push_str(&format!(
                "{} {:.9e} {:.9e} {:.9e} {:.9e} {}\n",
                r.iteration, r.energy.e_layout, r.energy.e_frag, r.energy.e_pair, r.energy.total, r.layout_planes
            ));
        }
        s
    }
}

fn layout_correspondences(
    fragments: &[Fragment],
    poses: &[RigidTransform],
    planes: &[PlaneHypothesis],
    config: &RegistrationConfig,
) -> Vec<LayoutCorrespondence> {
    fragments
        .par_iter()
        .enumerate()
        .map(|(k, f)| {
            establish_layout_correspondences(k, f, &poses[k], planes, config.layout_max_dist, config.max_normal_angle_deg)
        })
        .collect::<Vec<_>>()
        .concat()
}

/// Largest displacement of any fragment centroid between two pose sets.
fn max_pose_change(fragments: &[Fragment], a: &[RigidTransform], b: &[RigidTransform]) -> f64 {
    fragments
        .iter()
        .zip(a.iter().zip(b))
        .map(|(f, (ta, tb))| {
            let c = f.centroid();
            (ta.apply(&c) - tb.apply(&c)).norm()
        })
        .fold(0.0, f64::max)
}

/// Alternates layout estimation and registration.
///
/// Fragment-pair correspondences are established once from the initial
/// poses (or every outer iteration when configured). Each outer iteration
/// estimates the layout from the current poses, matches points to it and
/// runs `inner_iterations` Gauss-Newton steps. `labelings` are the
/// fragment-local planes, extracted once.
pub fn joint_optimize(
    fragments: &[Fragment],
    labelings: &[PlaneLabeling],
    initial_poses: &[RigidTransform],
    constraints: &[PairConstraint],
    config: &RegistrationConfig,
    layout_params: &LayoutParams,
) -> Result<JointResult> {
    config.validate()?;
    if fragments.len() != initial_poses.len() || fragments.len() != labelings.len() {
        return Err(Error::DegenerateInput(format!(
            "{} fragments, {} poses, {} labelings",
            fragments.len(),
            initial_poses.len(),
            labelings.len()
        )));
    }
    let pairs: Vec<(usize, usize)> = constraints.iter().map(|c| (c.i, c.j)).collect();
    let establish_matches = |poses: &[RigidTransform]| {
        establish_pair_correspondences(fragments, poses, &pairs, config.pair_max_dist, config.max_normal_angle_deg).concat()
    };
    let mut problem = RegistrationProblem {
        layout: Vec::new(),
        matches: establish_matches(initial_poses),
        constraints: constraints.to_vec(),
    };
    let mut poses = initial_poses.to_vec();
    let mut trace = Vec::new();
    let mut layout = None;

    for iteration in 0..config.outer_iterations {
        if iteration > 0 && config.refresh_pair_correspondences {
            problem.matches = establish_matches(&poses);
        }
        let mut layout_planes = 0;
        if config.use_layout {
            let est = match estimate_layout(fragments, labelings, &poses, layout_params) {
                Ok(l) => l,
                Err(Error::LayoutNotFound) => {
                    log::warn!("outer iteration {iteration}: no base plane; keeping the initial poses");
                    return Ok(JointResult {
                        poses: initial_poses.to_vec(),
                        layout: None,
                        trace,
                        layout_not_found: true,
                    });
                }
                Err(e) => return Err(e),
            };
            let planes = est.planes();
            layout_planes = planes.len();
            problem.layout = layout_correspondences(fragments, &poses, &planes, config);
            layout = Some(est);
        }
        let weights = Weights::resolve(config, problem.layout.len(), problem.matches.len(), problem.constraints.len());

        let start = poses.clone();
        let mut current = energy(&poses, &problem, &weights);
        let mut inner_totals = vec![current.total];
        for _ in 0..config.inner_iterations {
            let step = gauss_newton_step(&poses, &problem, &weights)?;
            poses = step.poses;
            current = step.energy;
            inner_totals.push(current.total);
            if !step.accepted || step.step_norm < 1e-12 {
                break;
            }
        }
        log::debug!(
            "outer {iteration}: layout planes {layout_planes}, {} layout / {} pair correspondences, total {:.6e}",
            problem.layout.len(),
            problem.matches.len(),
            current.total
        );
        trace.push(TraceRow {
            iteration,
            energy: current,
            weights,
            layout_planes,
            inner_totals,
        });
        if max_pose_change(fragments, &start, &poses) < config.convergence_eps {
            break;
        }
    }

    // Layout of the final poses; the last estimate stands if this one fails.
    match estimate_layout(fragments, labelings, &poses, layout_params) {
        Ok(l) => layout = Some(l),
        Err(Error::LayoutNotFound) => {}
        Err(e) => return Err(e),
    }
    Ok(JointResult {
        poses,
        layout,
        trace,
        layout_not_found: false,
    })
}
