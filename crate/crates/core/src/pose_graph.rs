//! Odometry chain, loop-closure detection, and robust pose-graph
//! optimization with a line process on loop edges.
//!
//! The objective is
//!
//! ```text
//! F(T, l) = Σ_odo w‖f‖² + Σ_loop ( l·w‖f‖² + μ·Ψ(l) ),   f = log(T̂⁻¹ Tᵢ⁻¹ Tⱼ)
//! ```
//!
//! minimized by alternating Gauss-Newton over the poses (node 0 fixed) with
//! the exact per-edge minimizer over `l`. With the smooth prior
//! `Ψ(l) = (√l − 1)²` the minimizer is `l = (μ / (μ + w‖f‖²))²`; with the
//! hard gate `Ψ(l) = √(1 − l²)` it is `l = 1` when `w‖f‖² < μ`, else `0`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{chain, Dataset};
use crate::error::{Error, Result};
use crate::geom::{se3_exp, se3_log, se3_right_jacobian_inv, RigidTransform};
use crate::linalg::solve_spd;
use crate::registration::{icp_prepared, IcpParams, PreparedCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinePrior {
    /// `Ψ(l) = (√l − 1)²`, continuous weights.
    Smooth,
    /// `Ψ(l) = √(1 − l²)`, weights snap to 0 or 1.
    HardGate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseGraphParams {
    /// Line-process prior weight μ.
    pub mu: f64,
    pub line_prior: LinePrior,
    /// Loop edges with `l` below this are pruned.
    pub prune_threshold: f64,
    pub max_outer_iterations: usize,
    pub max_gauss_newton_iterations: usize,
    /// Stop when the relative objective decrease falls below this.
    pub tolerance: f64,
    /// Minimum overlap ratio for a loop closure.
    pub loop_overlap: f64,
    /// Candidate pairs need centroids within this many fragment diameters.
    pub gate_diameters: f64,
}

impl Default for PoseGraphParams {
    fn default() -> Self {
        Self {
            mu: 0.05 * 0.05,
            line_prior: LinePrior::Smooth,
            prune_threshold: 0.25,
            max_outer_iterations: 50,
            max_gauss_newton_iterations: 10,
            tolerance: 1e-12,
            loop_overlap: 0.30,
            gate_diameters: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryEdge {
    pub i: usize,
    pub j: usize,
    /// Maps fragment `j` coordinates into fragment `i`.
    pub measurement: RigidTransform,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopEdge {
    pub i: usize,
    pub j: usize,
    pub measurement: RigidTransform,
    pub weight: f64,
    pub line_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraph {
    pub nodes: Vec<RigidTransform>,
    pub odometry_edges: Vec<OdometryEdge>,
    pub loop_edges: Vec<LoopEdge>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopCandidate {
    pub i: usize,
    pub j: usize,
    pub transform: RigidTransform,
    pub overlap: f64,
}

/// Result of [`optimize_pose_graph_traced`]: the graph plus the objective
/// after every pose update and every line-weight update.
#[derive(Debug, Clone)]
pub struct PoseGraphReport {
    pub graph: PoseGraph,
    pub objective_history: Vec<f64>,
}

/// `log(T̂⁻¹ ∘ Ta⁻¹ ∘ Tb)`; zero iff `Ta⁻¹ ∘ Tb = T̂`.
pub fn pose_residual(ta: &RigidTransform, tb: &RigidTransform, measured: &RigidTransform) -> Vector6<f64> {
    se3_log(&measured.inverse().compose(&ta.inverse().compose(tb)))
}

/// Derivatives of [`pose_residual`] with respect to left perturbations of
/// `Ta` and `Tb`.
pub fn pose_residual_jacobians(
    ta: &RigidTransform,
    tb: &RigidTransform,
    measured: &RigidTransform,
) -> (Matrix6<f64>, Matrix6<f64>) {
    let r = pose_residual(ta, tb, measured);
    let jb = se3_right_jacobian_inv(&r) * tb.inverse().adjoint();
    (-jb, jb)
}

impl PoseGraph {
    /// Nodes initialized by chaining the odometry, no loops.
    pub fn from_odometry(odometry: &[RigidTransform]) -> Self {
        Self {
            nodes: chain(odometry),
            odometry_edges: odometry
                .iter()
                .enumerate()
                .map(|(k, m)| OdometryEdge {
                    i: k,
                    j: k + 1,
                    measurement: *m,
                    weight: 1.0,
                })
                .collect(),
            loop_edges: Vec::new(),
        }
    }

    pub fn add_loops(&mut self, loops: &[LoopCandidate]) {
        for c in loops {
            self.loop_edges.push(LoopEdge {
                i: c.i,
                j: c.j,
                measurement: c.transform,
                weight: 1.0,
                line_weight: 1.0,
            });
        }
    }

    fn check(&self) -> Result<()> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(Error::DegenerateInput("pose graph has no nodes".into()));
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let edges = self
            .odometry_edges
            .iter()
            .map(|e| (e.i, e.j))
            .chain(self.loop_edges.iter().map(|e| (e.i, e.j)));
        for (i, j) in edges {
            if i >= n || j >= n || i == j {
                return Err(Error::DegenerateInput(format!("edge ({i}, {j}) is invalid for {n} nodes")));
            }
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            parent[a] = b;
        }
        let root = find(&mut parent, 0);
        for k in 1..n {
            if find(&mut parent, k) != root {
                return Err(Error::NotConnected(k));
            }
        }
        Ok(())
    }

    /// The full objective for the given line prior and μ.
    pub fn objective(&self, params: &PoseGraphParams) -> f64 {
        objective_for(self, &self.nodes, params)
    }

    /// One line per loop edge: `i j residual l`.
    pub fn loop_diagnostics(&self) -> String {
        let mut out = String::new();
        for e in &self.loop_edges {
            let r = pose_residual(&self.nodes[e.i], &self.nodes[e.j], &e.measurement).norm();
            let _ = writeln!(out, "{} {} {} {}", e.i, e.j, r, e.line_weight);
        }
        out
    }
}

fn prior(l: f64, params: &PoseGraphParams) -> f64 {
    match params.line_prior {
        LinePrior::Smooth => {
            let s = l.sqrt() - 1.0;
            params.mu * s * s
        }
        LinePrior::HardGate => params.mu * (1.0 - l * l).max(0.0).sqrt(),
    }
}

fn best_line_weight(f: f64, params: &PoseGraphParams) -> f64 {
    match params.line_prior {
        LinePrior::Smooth => {
            let s = params.mu / (params.mu + f);
            s * s
        }
        LinePrior::HardGate => {
            if f < params.mu {
                1.0
            } else {
                0.0
            }
        }
    }
}

fn objective_for(graph: &PoseGraph, nodes: &[RigidTransform], params: &PoseGraphParams) -> f64 {
    let odo: f64 = graph
        .odometry_edges
        .iter()
        .map(|e| e.weight * pose_residual(&nodes[e.i], &nodes[e.j], &e.measurement).norm_squared())
        .sum();
    let loops: f64 = graph
        .loop_edges
        .iter()
        .map(|e| {
            let f = e.weight * pose_residual(&nodes[e.i], &nodes[e.j], &e.measurement).norm_squared();
            e.line_weight * f + prior(e.line_weight, params)
        })
        .sum();
    odo + loops
}

/// Pose-only objective (line weights fixed) after one Gauss-Newton update
/// with step halving. Returns `None` when no step decreases it.
fn gauss_newton_step(graph: &PoseGraph, params: &PoseGraphParams) -> Result<Option<Vec<RigidTransform>>> {
    let n = graph.nodes.len();
    let dim = 6 * (n - 1);
    let mut h = DMatrix::zeros(dim, dim);
    let mut g = DVector::zeros(dim);
    let mut add = |i: usize, j: usize, m: &RigidTransform, w: f64| {
        let r = pose_residual(&graph.nodes[i], &graph.nodes[j], m);
        let (ja, jb) = pose_residual_jacobians(&graph.nodes[i], &graph.nodes[j], m);
        let blocks = [(i, ja), (j, jb)];
        for (a, ja) in &blocks {
            if *a == 0 {
                continue;
            }
            let ra = 6 * (a - 1);
            let ga = ja.transpose() * r * w;
            for k in 0..6 {
                g[ra + k] += ga[k];
            }
            for (b, jb) in &blocks {
                if *b == 0 {
                    continue;
                }
                let rb = 6 * (b - 1);
                let hab = ja.transpose() * jb * w;
                for x in 0..6 {
                    for y in 0..6 {
                        h[(ra + x, rb + y)] += hab[(x, y)];
                    }
                }
            }
        }
    };
    for e in &graph.odometry_edges {
        add(e.i, e.j, &e.measurement, e.weight);
    }
    for e in &graph.loop_edges {
        add(e.i, e.j, &e.measurement, e.weight * e.line_weight);
    }
    let delta = solve_spd(h, &(-g), "pose graph")?;

    let current = objective_for(graph, &graph.nodes, params);
    let mut scale = 1.0;
    for _ in 0..=8 {
        let nodes: Vec<RigidTransform> = (0..n)
            .map(|k| {
                if k == 0 {
                    graph.nodes[0]
                } else {
                    let xi = Vector6::from_iterator((0..6).map(|c| delta[6 * (k - 1) + c] * scale));
                    se3_exp(&xi).compose(&graph.nodes[k])
                }
            })
            .collect();
        if objective_for(graph, &nodes, params) < current {
            return Ok(Some(nodes));
        }
        scale *= 0.5;
    }
    Ok(None)
}

fn is_simple_chain(graph: &PoseGraph) -> bool {
    graph.odometry_edges.len() + 1 == graph.nodes.len()
        && graph.odometry_edges.iter().enumerate().all(|(k, e)| e.i == k && e.j == k + 1)
}

pub fn optimize_pose_graph(graph: &PoseGraph, params: &PoseGraphParams) -> Result<PoseGraph> {
    optimize_pose_graph_traced(graph, params).map(|r| r.graph)
}

pub fn optimize_pose_graph_traced(graph: &PoseGraph, params: &PoseGraphParams) -> Result<PoseGraphReport> {
    graph.check()?;
    let mut g = graph.clone();
    g.nodes[0] = RigidTransform::identity();
    let mut history = vec![g.objective(params)];

    if g.loop_edges.is_empty() && is_simple_chain(&g) {
        let relative: Vec<_> = g.odometry_edges.iter().map(|e| e.measurement).collect();
        g.nodes = chain(&relative);
        history.push(g.objective(params));
        return Ok(PoseGraphReport {
            graph: g,
            objective_history: history,
        });
    }
    if g.nodes.len() == 1 {
        return Ok(PoseGraphReport {
            graph: g,
            objective_history: history,
        });
    }

    for _ in 0..params.max_outer_iterations {
        let start = *history.last().expect("non-empty");
        for _ in 0..params.max_gauss_newton_iterations {
            let before = *history.last().expect("non-empty");
            match gauss_newton_step(&g, params)? {
                Some(nodes) => {
                    g.nodes = nodes;
                    let after = g.objective(params);
                    history.push(after);
                    if before - after <= params.tolerance * before.max(1e-300) {
                        break;
                    }
                }
                None => break,
            }
        }
        for e in &mut g.loop_edges {
            let f = e.weight * pose_residual(&g.nodes[e.i], &g.nodes[e.j], &e.measurement).norm_squared();
            e.line_weight = best_line_weight(f, params);
        }
        let end = g.objective(params);
        history.push(end);
        if start - end <= params.tolerance * start.max(1e-300) {
            break;
        }
    }
    for node in g.nodes.iter_mut().skip(1) {
        *node = node.renormalized();
    }
    Ok(PoseGraphReport {
        graph: g,
        objective_history: history,
    })
}

/// Drops loop edges whose line weight is below `threshold` and resets the
/// survivors to full weight.
pub fn prune_loops(graph: &PoseGraph, threshold: f64) -> PoseGraph {
    let mut g = graph.clone();
    g.loop_edges.retain(|e| e.line_weight >= threshold);
    for e in &mut g.loop_edges {
        e.line_weight = 1.0;
    }
    g
}

/// Refines each odometry transform by ICP of fragment `k+1` against `k`,
/// keeping the measured value when ICP fails.
pub fn refine_odometry(dataset: &Dataset, prepared: &[PreparedCloud], icp: &IcpParams) -> Vec<RigidTransform> {
    dataset
        .odometry
        .par_iter()
        .enumerate()
        .map(|(k, t0)| match icp_prepared(&dataset.fragments[k + 1], &prepared[k], t0, icp) {
            Ok(r) => r.transform,
            Err(e) => {
                log::warn!("odometry {k}->{}: ICP failed ({e}); keeping the measurement", k + 1);
                *t0
            }
        })
        .collect()
}

/// Loop closures among inconsecutive fragment pairs.
///
/// Pairs whose current world centroids are within `gate_diameters` fragment
/// diameters are aligned by ICP (fragment `j` onto `i`, starting from the
/// relative current pose) and kept when the overlap ratio reaches
/// `loop_overlap`.
pub fn detect_loop_closures(
    dataset: &Dataset,
    poses: &[RigidTransform],
    prepared: &[PreparedCloud],
    params: &PoseGraphParams,
    icp: &IcpParams,
) -> Vec<LoopCandidate> {
    let n = dataset.fragments.len();
    let centroids: Vec<_> = dataset
        .fragments
        .iter()
        .zip(poses)
        .map(|(f, t)| t.apply(&f.centroid()))
        .collect();
    let diameters: Vec<f64> = dataset.fragments.iter().map(|f| f.diameter()).collect();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 2..n {
            let gate = params.gate_diameters * diameters[i].max(diameters[j]);
            if (centroids[i] - centroids[j]).norm() <= gate {
                pairs.push((i, j));
            }
        }
    }
    pairs
        .par_iter()
        .map(|&(i, j)| {
            let t0 = poses[i].inverse().compose(&poses[j]);
            let r = icp_prepared(&dataset.fragments[j], &prepared[i], &t0, icp).ok()?;
            log::debug!("loop candidate ({i}, {j}): overlap {:.3}", r.overlap_ratio);
            (r.overlap_ratio >= params.loop_overlap).then_some(LoopCandidate {
                i,
                j,
                transform: r.transform,
                overlap: r.overlap_ratio,
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn circle_poses(n: usize) -> Vec<RigidTransform> {
        (0..n)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                se3_exp(&Vector6::new(0.0, 0.0, a, 0.0, 0.0, 0.0))
                    .compose(&RigidTransform::from_translation(nalgebra::Vector3::new(0.3, 0.0, 0.0)))
            })
            .collect()
    }

    fn relative(gt: &[RigidTransform], i: usize, j: usize) -> RigidTransform {
        gt[i].inverse().compose(&gt[j])
    }

    fn noisy(rng: &mut ChaCha8Rng, sigma_r: f64, sigma_t: f64) -> RigidTransform {
        let mut xi = Vector6::zeros();
        for k in 0..6 {
            let z: f64 = rng.sample(StandardNormal);
            xi[k] = z * if k < 3 { sigma_r } else { sigma_t };
        }
        se3_exp(&xi)
    }

    fn anchored(gt: &[RigidTransform]) -> Vec<RigidTransform> {
        let inv0 = gt[0].inverse();
        gt.iter().map(|t| inv0.compose(t)).collect()
    }

    fn rmse(a: &[RigidTransform], b: &[RigidTransform]) -> f64 {
        let s: f64 = a.iter().zip(b).map(|(x, y)| (x.translation() - y.translation()).norm_squared()).sum();
        (s / a.len() as f64).sqrt()
    }

    #[test]
    fn residual_examples() {
        let id = RigidTransform::identity();
        let tx = RigidTransform::from_translation(nalgebra::Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(pose_residual(&id, &id, &id), Vector6::zeros());
        assert!(pose_residual(&id, &tx, &tx).norm() < 1e-15);
        let r = pose_residual(&id, &id, &tx);
        assert!((r.fixed_rows::<3>(3).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn residual_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let ta = noisy(&mut rng, 0.5, 1.0);
            let tb = noisy(&mut rng, 0.5, 1.0);
            let m = ta.inverse().compose(&tb).compose(&noisy(&mut rng, 0.3, 0.3));
            let (ja, jb) = pose_residual_jacobians(&ta, &tb, &m);
            let h = 1e-6;
            for k in 0..6 {
                let mut d = Vector6::zeros();
                d[k] = h;
                let fa = (pose_residual(&se3_exp(&d).compose(&ta), &tb, &m) - pose_residual(&se3_exp(&-d).compose(&ta), &tb, &m)) / (2.0 * h);
                let fb = (pose_residual(&ta, &se3_exp(&d).compose(&tb), &m) - pose_residual(&ta, &se3_exp(&-d).compose(&tb), &m)) / (2.0 * h);
                for row in 0..6 {
                    assert!((fa[row] - ja[(row, k)]).abs() <= 1e-5 * ja[(row, k)].abs().max(1.0));
                    assert!((fb[row] - jb[(row, k)]).abs() <= 1e-5 * jb[(row, k)].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn exact_measurements_are_a_fixed_point() {
        let gt = anchored(&circle_poses(6));
        let odo: Vec<_> = (0..5).map(|k| relative(&gt, k, k + 1)).collect();
        let mut g = PoseGraph::from_odometry(&odo);
        g.add_loops(&[
            LoopCandidate { i: 0, j: 5, transform: relative(&gt, 0, 5), overlap: 1.0 },
            LoopCandidate { i: 1, j: 4, transform: relative(&gt, 1, 4), overlap: 1.0 },
        ]);
        let out = optimize_pose_graph(&g, &PoseGraphParams::default()).unwrap();
        for (a, b) in out.nodes.iter().zip(&gt) {
            assert!((a.translation() - b.translation()).norm() < 1e-9);
            assert!((a.rotation() - b.rotation()).abs().max() < 1e-9);
        }
        assert!(out.loop_edges.iter().all(|e| e.line_weight >= 0.99));
    }

    #[test]
    fn no_loops_returns_chained_odometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let odo: Vec<_> = (0..5).map(|_| noisy(&mut rng, 0.1, 0.3)).collect();
        let out = optimize_pose_graph(&PoseGraph::from_odometry(&odo), &PoseGraphParams::default()).unwrap();
        assert_eq!(out.nodes, chain(&odo));
    }

    #[test]
    fn outlier_loop_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let gt = anchored(&circle_poses(8));
        let odo: Vec<_> = (0..7)
            .map(|k| relative(&gt, k, k + 1).compose(&noisy(&mut rng, 0.005, 0.01)))
            .collect();
        let mut g = PoseGraph::from_odometry(&odo);
        let before = rmse(&g.nodes, &gt);
        for (i, j) in [(0, 7), (0, 4), (2, 6)] {
            g.add_loops(&[LoopCandidate { i, j, transform: relative(&gt, i, j), overlap: 1.0 }]);
        }
        let outlier = noisy(&mut rng, 1.0, 1.0);
        g.add_loops(&[LoopCandidate { i: 1, j: 5, transform: outlier, overlap: 1.0 }]);
        let params = PoseGraphParams::default();
        let report = optimize_pose_graph_traced(&g, &params).unwrap();
        let out = &report.graph;
        for w in report.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs());
        }
        assert!(out.loop_edges[3].line_weight < params.prune_threshold);
        assert!(out.loop_edges[..3].iter().all(|e| e.line_weight > params.prune_threshold));
        assert!(rmse(&out.nodes, &gt) < before);
        assert_eq!(out.nodes[0], RigidTransform::identity());
    }

    #[test]
    fn hard_gate_yields_binary_weights() {
        let gt = anchored(&circle_poses(5));
        let odo: Vec<_> = (0..4).map(|k| relative(&gt, k, k + 1)).collect();
        let mut g = PoseGraph::from_odometry(&odo);
        g.add_loops(&[
            LoopCandidate { i: 0, j: 4, transform: relative(&gt, 0, 4), overlap: 1.0 },
            LoopCandidate { i: 0, j: 2, transform: RigidTransform::from_translation(nalgebra::Vector3::new(3.0, 0.0, 0.0)), overlap: 1.0 },
        ]);
        let params = PoseGraphParams { line_prior: LinePrior::HardGate, ..Default::default() };
        let out = optimize_pose_graph(&g, &params).unwrap();
        assert_eq!(out.loop_edges[0].line_weight, 1.0);
        assert_eq!(out.loop_edges[1].line_weight, 0.0);
    }

    #[test]
    fn prune_examples() {
        let odo = vec![RigidTransform::identity(); 3];
        let mut g = PoseGraph::from_odometry(&odo);
        g.add_loops(&[
            LoopCandidate { i: 0, j: 2, transform: RigidTransform::identity(), overlap: 1.0 },
            LoopCandidate { i: 0, j: 3, transform: RigidTransform::identity(), overlap: 1.0 },
        ]);
        assert_eq!(prune_loops(&g, 0.25), g);
        g.loop_edges[0].line_weight = 0.1;
        g.loop_edges[1].line_weight = 0.9;
        let p = prune_loops(&g, 0.25);
        assert_eq!(p.loop_edges.len(), 1);
        assert_eq!((p.loop_edges[0].j, p.loop_edges[0].line_weight), (3, 1.0));
        g.loop_edges[1].line_weight = 0.0;
        assert!(prune_loops(&g, 0.25).loop_edges.is_empty());
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let mut g = PoseGraph::from_odometry(&[RigidTransform::identity()]);
        g.nodes.push(RigidTransform::identity());
        assert!(matches!(optimize_pose_graph(&g, &PoseGraphParams::default()), Err(Error::NotConnected(2))));
    }
}
