//! Greedy agglomerative clustering of plane hypotheses.
//!
//! Supports are unions of disjoint point groups ("atoms"), so hypotheses
//! that share points are merged without double counting. The merge cost
//! is the mean point distance to the least-squares plane of the union.
//! Candidate pairs sit in a lazy heap keyed first by a cheap lower bound
//! and then by the exact cost once popped.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use nalgebra::{Point3, SymmetricEigen, Vector3};

use crate::geom::{fit_plane_ls_iter, Moments, PlaneHypothesis};

#[derive(Debug, Clone, PartialEq)]
pub struct HacCluster {
    pub plane: PlaneHypothesis,
    /// Sorted indices of the input hypotheses merged into this cluster.
    pub members: Vec<usize>,
    /// Sorted indices of the point groups backing the cluster.
    pub atoms: Vec<usize>,
    pub point_count: usize,
    /// Mean point distance to `plane` over the support.
    pub cost: f64,
}

/// Clusters hypotheses whose `support[i]` groups are disjoint. Returns the
/// refit planes, ordered by their lowest member index.
pub fn hac_cluster(
    hypotheses: &[PlaneHypothesis],
    support: &[Vec<Point3<f64>>],
    merge_threshold: f64,
) -> Vec<PlaneHypothesis> {
    let members: Vec<Vec<usize>> = (0..hypotheses.len()).map(|i| vec![i]).collect();
    cluster_atoms(hypotheses, support, &members, merge_threshold)
        .into_iter()
        .map(|c| c.plane)
        .collect()
}

#[derive(Debug, Clone)]
struct Node {
    atoms: Vec<usize>,
    bits: Vec<u64>,
    members: Vec<usize>,
    moments: Moments,
    lo: Vector3<f64>,
    hi: Vector3<f64>,
    alive: bool,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    key: f64,
    exact: bool,
    a: usize,
    b: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .total_cmp(&other.key)
            .then(self.a.cmp(&other.a))
            .then(self.b.cmp(&other.b))
            .then(self.exact.cmp(&other.exact))
    }
}

/// Least-squares plane of a moment set, with the same sign convention as
/// [`crate::fit_plane_ls`]. `None` for fewer than three points.
pub(crate) fn plane_from_moments(m: &Moments) -> Option<PlaneHypothesis> {
    if m.count < 3.0 {
        return None;
    }
    let c = m.centroid();
    let cov = m.outer / m.count - c * c.transpose();
    let eig = SymmetricEigen::new(cov);
    let imin = eig.eigenvalues.imin();
    let mut normal: Vector3<f64> = eig.eigenvectors.column(imin).normalize();
    if normal[normal.iamax()] < 0.0 {
        normal = -normal;
    }
    PlaneHypothesis::from_unit_normal(normal, -normal.dot(&c))
}

struct Clusterer<'a> {
    atoms: &'a [Vec<Point3<f64>>],
    atom_moments: Vec<Moments>,
    nodes: Vec<Node>,
}

impl Clusterer<'_> {
    fn union_moments(&self, a: &Node, b: &Node) -> Moments {
        let mut m = a.moments.add(&b.moments);
        for (w, (x, y)) in a.bits.iter().zip(&b.bits).enumerate() {
            let mut common = x & y;
            while common != 0 {
                let bit = common.trailing_zeros() as usize;
                m = m.sub(&self.atom_moments[w * 64 + bit]);
                common &= common - 1;
            }
        }
        m
    }

    /// Lower bound on the merged mean distance: for any plane through the
    /// centroid, mean |d| ≥ mean d² / max |d|.
    fn lower_bound(&self, a: usize, b: usize) -> f64 {
        let (na, nb) = (&self.nodes[a], &self.nodes[b]);
        let m = self.union_moments(na, nb);
        if m.count < 3.0 {
            return f64::INFINITY;
        }
        let ms = m.mean_squared_residual();
        let c = m.centroid();
        let lo = na.lo.inf(&nb.lo);
        let hi = na.hi.sup(&nb.hi);
        let far = Vector3::new(
            (c.x - lo.x).abs().max((hi.x - c.x).abs()),
            (c.y - lo.y).abs().max((hi.y - c.y).abs()),
            (c.z - lo.z).abs().max((hi.z - c.z).abs()),
        )
        .norm();
        if far > 0.0 {
            ms / far
        } else {
            0.0
        }
    }

    fn merged_atoms(a: &[usize], b: &[usize]) -> Vec<usize> {
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            let take = match (a.get(i), b.get(j)) {
                (Some(&x), Some(&y)) if x == y => {
                    i += 1;
                    j += 1;
                    x
                }
                (Some(&x), Some(&y)) if x < y => {
                    i += 1;
                    x
                }
                (Some(&x), None) => {
                    i += 1;
                    x
                }
                (_, Some(&y)) => {
                    j += 1;
                    y
                }
                (None, None) => unreachable!(),
            };
            out.push(take);
        }
        out
    }

    fn mean_distance(&self, atoms: &[usize], plane: &PlaneHypothesis) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for &k in atoms {
            for p in &self.atoms[k] {
                sum += plane.distance(p);
            }
            count += self.atoms[k].len();
        }
        sum / count as f64
    }

    fn exact_cost(&self, a: usize, b: usize) -> f64 {
        let (na, nb) = (&self.nodes[a], &self.nodes[b]);
        let m = self.union_moments(na, nb);
        match plane_from_moments(&m) {
            Some(plane) => self.mean_distance(&Self::merged_atoms(&na.atoms, &nb.atoms), &plane),
            None => f64::INFINITY,
        }
    }
}

/// Clustering over shared atoms: hypothesis `i` is supported by the union
/// of `atoms[k]` for `k` in `members[i]`.
///
/// Merging runs in two phases. The local phase only considers clusters
/// that share an atom, and a cluster whose atoms are all inside a freshly
/// merged one is absorbed without changing it. The global phase then runs
/// over every pair of the surviving clusters, so on return all pairs have
/// a merged cost above `merge_threshold`.
pub(crate) fn cluster_atoms(
    hypotheses: &[PlaneHypothesis],
    atoms: &[Vec<Point3<f64>>],
    members: &[Vec<usize>],
    merge_threshold: f64,
) -> Vec<HacCluster> {
    assert_eq!(hypotheses.len(), members.len(), "one support per hypothesis");
    let words = atoms.len().div_ceil(64).max(1);
    let atom_moments: Vec<Moments> = atoms.iter().map(|a| Moments::from_points(a)).collect();
    let atom_boxes: Vec<(Vector3<f64>, Vector3<f64>)> = atoms
        .iter()
        .map(|pts| {
            pts.iter().fold(
                (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
                |(lo, hi), p| (lo.inf(&p.coords), hi.sup(&p.coords)),
            )
        })
        .collect();

    let mut nodes = Vec::with_capacity(2 * hypotheses.len());
    let mut owners: Vec<Vec<usize>> = vec![Vec::new(); atoms.len()];
    for (i, ms) in members.iter().enumerate() {
        let mut list = ms.clone();
        list.sort_unstable();
        list.dedup();
        let mut bits = vec![0u64; words];
        let mut moments = Moments::default();
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &k in &list {
            bits[k / 64] |= 1 << (k % 64);
            moments = moments.add(&atom_moments[k]);
            lo = lo.inf(&atom_boxes[k].0);
            hi = hi.sup(&atom_boxes[k].1);
            owners[k].push(i);
        }
        nodes.push(Node {
            atoms: list,
            bits,
            members: vec![i],
            moments,
            lo,
            hi,
            alive: true,
        });
    }
    let mut state = State {
        cl: Clusterer {
            atoms,
            atom_moments,
            nodes,
        },
        owners,
        heap: BinaryHeap::new(),
        threshold: merge_threshold,
        local: true,
    };

    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for list in &state.owners {
        for (x, &a) in list.iter().enumerate() {
            for &b in &list[x + 1..] {
                pairs.push((a.min(b), a.max(b)));
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    for (a, b) in pairs {
        state.push_bound(a, b);
    }
    state.run();

    state.local = false;
    let live: Vec<usize> = state.live().collect();
    for (x, &a) in live.iter().enumerate() {
        for &b in &live[x + 1..] {
            state.push_bound(a, b);
        }
    }
    state.run();

    let cl = &state.cl;
    let mut out: Vec<HacCluster> = cl
        .nodes
        .iter()
        .filter(|n| n.alive)
        .map(|n| {
            let points = n.atoms.iter().flat_map(|&k| cl.atoms[k].iter());
            let plane = fit_plane_ls_iter(points)
                .ok()
                .or_else(|| plane_from_moments(&n.moments))
                .unwrap_or(hypotheses[n.members[0]]);
            let point_count = n.atoms.iter().map(|&k| cl.atoms[k].len()).sum();
            let cost = if point_count > 0 {
                cl.mean_distance(&n.atoms, &plane)
            } else {
                0.0
            };
            HacCluster {
                plane,
                members: n.members.clone(),
                atoms: n.atoms.clone(),
                point_count,
                cost,
            }
        })
        .collect();
    out.sort_by_key(|c| c.members[0]);
    out
}

struct State<'a> {
    cl: Clusterer<'a>,
    /// Per atom, the clusters that contain it (dead entries pruned lazily).
    owners: Vec<Vec<usize>>,
    heap: BinaryHeap<Reverse<Candidate>>,
    threshold: f64,
    local: bool,
}

impl State<'_> {
    fn live(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.cl.nodes.len()).filter(|&i| self.cl.nodes[i].alive)
    }

    fn push_bound(&mut self, a: usize, b: usize) {
        let key = self.cl.lower_bound(a, b);
        if key <= self.threshold {
            self.heap.push(Reverse(Candidate { key, exact: false, a, b }));
        }
    }

    fn run(&mut self) {
        while let Some(Reverse(c)) = self.heap.pop() {
            if c.key > self.threshold {
                self.heap.clear();
                break;
            }
            if !self.cl.nodes[c.a].alive || !self.cl.nodes[c.b].alive {
                continue;
            }
            if !c.exact {
                let key = self.cl.exact_cost(c.a, c.b);
                if key <= self.threshold {
                    self.heap.push(Reverse(Candidate { key, exact: true, ..c }));
                }
                continue;
            }
            self.merge(c.a, c.b);
        }
    }

    fn merge(&mut self, a: usize, b: usize) {
        let nodes = &self.cl.nodes;
        let (na, nb) = (&nodes[a], &nodes[b]);
        let moments = self.cl.union_moments(na, nb);
        let atoms_ab = Clusterer::merged_atoms(&na.atoms, &nb.atoms);
        let bits: Vec<u64> = na.bits.iter().zip(&nb.bits).map(|(x, y)| x | y).collect();
        let mut members = [na.members.as_slice(), nb.members.as_slice()].concat();
        let (lo, hi) = (na.lo.inf(&nb.lo), na.hi.sup(&nb.hi));
        self.cl.nodes[a].alive = false;
        self.cl.nodes[b].alive = false;
        let id = self.cl.nodes.len();

        let partners: Vec<usize> = if self.local {
            let mut p: Vec<usize> = atoms_ab
                .iter()
                .flat_map(|&k| self.owners[k].iter().copied())
                .filter(|&o| self.cl.nodes[o].alive)
                .collect();
            p.sort_unstable();
            p.dedup();
            p
        } else {
            self.live().collect()
        };
        let mut others = Vec::with_capacity(partners.len());
        for o in partners {
            let inside = self.cl.nodes[o]
                .bits
                .iter()
                .zip(&bits)
                .all(|(x, y)| x & !y == 0);
            if inside {
                self.cl.nodes[o].alive = false;
                members.extend_from_slice(&self.cl.nodes[o].members);
            } else {
                others.push(o);
            }
        }
        members.sort_unstable();
        for &k in &atoms_ab {
            let nodes = &self.cl.nodes;
            self.owners[k].retain(|&o| nodes[o].alive);
            self.owners[k].push(id);
        }
        self.cl.nodes.push(Node {
            atoms: atoms_ab,
            bits,
            members,
            moments,
            lo,
            hi,
            alive: true,
        });
        for o in others {
            self.push_bound(o, id);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::orthonormal_basis;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn patch(
        rng: &mut ChaCha8Rng,
        plane: &PlaneHypothesis,
        center: (f64, f64),
        half: f64,
        count: usize,
        sigma: f64,
    ) -> Vec<Point3<f64>> {
        let (u, v) = orthonormal_basis(plane.normal());
        let origin = -plane.normal() * plane.offset();
        let noise = Normal::new(0.0, sigma.max(1e-300)).unwrap();
        (0..count)
            .map(|_| {
                let a = center.0 + rng.random_range(-half..half);
                let b = center.1 + rng.random_range(-half..half);
                let e = if sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                Point3::from(origin + u * a + v * b + plane.normal() * e)
            })
            .collect()
    }

    fn angle_deg(a: &PlaneHypothesis, b: &PlaneHypothesis) -> f64 {
        a.normal().dot(b.normal()).abs().min(1.0).acos().to_degrees()
    }

    #[test]
    fn identical_planes_merge() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plane = PlaneHypothesis::new(Vector3::z(), -1.0).unwrap();
        let s = vec![
            patch(&mut rng, &plane, (0.0, 0.0), 0.3, 50, 0.0),
            patch(&mut rng, &plane, (2.0, 0.0), 0.3, 50, 0.0),
        ];
        let out = hac_cluster(&[plane, plane], &s, 0.05);
        assert_eq!(out.len(), 1);
        assert!(angle_deg(&out[0], &plane) < 1e-6);
        assert!((out[0].offset() - plane.offset()).abs() < 1e-9);
    }

    #[test]
    fn parallel_planes_stay_apart() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = PlaneHypothesis::new(Vector3::z(), 0.0).unwrap();
        let b = PlaneHypothesis::new(Vector3::z(), -1.0).unwrap();
        let s = vec![
            patch(&mut rng, &a, (0.0, 0.0), 0.5, 60, 0.0),
            patch(&mut rng, &b, (0.0, 0.0), 0.5, 60, 0.0),
        ];
        assert_eq!(hac_cluster(&[a, b], &s, 0.05).len(), 2);
    }

    fn noisy_wall(rng: &mut ChaCha8Rng) -> (PlaneHypothesis, Vec<PlaneHypothesis>, Vec<Vec<Point3<f64>>>) {
        let truth = PlaneHypothesis::new(Vector3::new(1.0, 0.2, 0.1), -2.0).unwrap();
        let mut hyps = Vec::new();
        let mut supports = Vec::new();
        for k in 0..20 {
            let pts = patch(rng, &truth, ((k % 5) as f64 * 0.5, (k / 5) as f64 * 0.5), 0.25, 40, 0.01);
            hyps.push(crate::fit_plane_ls(&pts[..3]).unwrap_or(truth));
            supports.push(pts);
        }
        (truth, hyps, supports)
    }

    #[test]
    fn noisy_wall_collapses_to_one_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (truth, hyps, supports) = noisy_wall(&mut rng);
        let out = hac_cluster(&hyps, &supports, 0.05);
        assert_eq!(out.len(), 1);
        assert!(angle_deg(&out[0], &truth) < 1.0);
        let signed = if out[0].normal().dot(truth.normal()) > 0.0 { 1.0 } else { -1.0 };
        assert!((out[0].offset() * signed - truth.offset()).abs() < 0.01);
    }

    #[test]
    fn shared_atoms_are_counted_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let plane = PlaneHypothesis::new(Vector3::y(), 0.5).unwrap();
        let atoms: Vec<_> = (0..4)
            .map(|k| patch(&mut rng, &plane, (k as f64, 0.0), 0.4, 30, 0.005))
            .collect();
        let members = vec![vec![0, 1, 2], vec![1, 2, 3]];
        let out = cluster_atoms(&[plane, plane], &atoms, &members, 0.05);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].atoms, vec![0, 1, 2, 3]);
        assert_eq!(out[0].point_count, 120);
        assert_eq!(out[0].members, vec![0, 1]);
    }

    #[test]
    fn outputs_exceed_threshold_pairwise_and_are_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let planes = [
            PlaneHypothesis::new(Vector3::z(), 0.0).unwrap(),
            PlaneHypothesis::new(Vector3::x(), -2.0).unwrap(),
            PlaneHypothesis::new(Vector3::new(0.0, 1.0, 1.0), 0.3).unwrap(),
        ];
        let mut hyps = Vec::new();
        let mut supports = Vec::new();
        for k in 0..15 {
            let p = planes[k % 3];
            let pts = patch(&mut rng, &p, ((k / 3) as f64 * 0.4, 0.0), 0.3, 40, 0.01);
            hyps.push(p);
            supports.push(pts);
        }
        let members: Vec<Vec<usize>> = (0..hyps.len()).map(|i| vec![i]).collect();
        let first = cluster_atoms(&hyps, &supports, &members, 0.05);
        assert_eq!(first.len(), 3);

        let planes1: Vec<_> = first.iter().map(|c| c.plane).collect();
        let supports1: Vec<Vec<Point3<f64>>> = first
            .iter()
            .map(|c| c.atoms.iter().flat_map(|&k| supports[k].clone()).collect())
            .collect();
        let second = hac_cluster(&planes1, &supports1, 0.05);
        assert_eq!(second.len(), planes1.len());
        for (a, b) in planes1.iter().zip(&second) {
            assert!((a.normal() - b.normal()).norm() < 1e-9);
            assert!((a.offset() - b.offset()).abs() < 1e-9);
        }

        for i in 0..supports1.len() {
            for j in i + 1..supports1.len() {
                let union: Vec<Point3<f64>> = [supports1[i].clone(), supports1[j].clone()].concat();
                let plane = crate::fit_plane_ls(&union).unwrap();
                let cost = union.iter().map(|p| plane.distance(p)).sum::<f64>() / union.len() as f64;
                assert!(cost > 0.05);
            }
        }
    }

    #[test]
    fn lower_bound_never_exceeds_exact_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let atoms: Vec<Vec<Point3<f64>>> = (0..12)
            .map(|_| {
                let c = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                (0..20)
                    .map(|_| Point3::from(c + Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.05..0.05))))
                    .collect()
            })
            .collect();
        let members: Vec<Vec<usize>> = (0..12).map(|i| vec![i, (i + 1) % 12]).collect();
        let words = 1;
        let atom_moments: Vec<Moments> = atoms.iter().map(|a| Moments::from_points(a)).collect();
        let nodes = members
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let mut bits = vec![0u64; words];
                let mut moments = Moments::default();
                let mut lo = Vector3::repeat(f64::INFINITY);
                let mut hi = Vector3::repeat(f64::NEG_INFINITY);
                let mut list = m.clone();
                list.sort();
                for &k in &list {
                    bits[0] |= 1 << k;
                    moments = moments.add(&atom_moments[k]);
                    for p in &atoms[k] {
                        lo = lo.inf(&p.coords);
                        hi = hi.sup(&p.coords);
                    }
                }
                Node { atoms: list, bits, members: vec![i], moments, lo, hi, alive: true }
            })
            .collect();
        let cl = Clusterer { atoms: &atoms, atom_moments, nodes };
        for a in 0..12 {
            for b in a + 1..12 {
                let lb = cl.lower_bound(a, b);
                let exact = cl.exact_cost(a, b);
                assert!(lb <= exact + 1e-12, "{a} {b}: {lb} > {exact}");
                let union = Clusterer::merged_atoms(&cl.nodes[a].atoms, &cl.nodes[b].atoms);
                let pts: Vec<_> = union.iter().flat_map(|&k| atoms[k].clone()).collect();
                let plane = crate::fit_plane_ls(&pts).unwrap();
                let direct = pts.iter().map(|p| plane.distance(p)).sum::<f64>() / pts.len() as f64;
                assert!((direct - exact).abs() < 1e-9);
            }
        }
    }
}
