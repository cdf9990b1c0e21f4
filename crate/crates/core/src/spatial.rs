//! Static k-d tree over a 3D point snapshot.
//!
//! Results are ordered by `(squared distance, index)`, so they coincide
//! exactly with a sorted brute-force scan, ties included.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Point3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    pub fn distance(&self) -> f64 {
        self.dist_sq.sqrt()
    }
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
pub fn dist_sq(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Point3<f64>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl SpatialIndex {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        let mut index = SpatialIndex {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        if !index.points.is_empty() {
            index.build(0, index.points.len());
        }
        index
    }

    pub fn from_slice(points: &[Point3<f64>]) -> Self {
        Self::new(points.to_vec())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for d in 0..3 {
                lo[d] = lo[d].min(self.points[i][d]);
                hi[d] = hi[d].max(self.points[i][d]);
            }
        }
        let dim = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[dim] - lo[dim] <= 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][dim].total_cmp(&points[b][dim]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][dim];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points, closest first.
    pub fn knn(&self, query: &Point3<f64>, k: usize) -> Vec<Neighbor> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_recurse(0, query, k, &mut heap);
        heap.into_sorted_vec()
    }

    fn knn_recurse(&self, node: usize, q: &Point3<f64>, k: usize, heap: &mut BinaryHeap<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = Neighbor {
                        index: i,
                        dist_sq: dist_sq(q, &self.points[i]),
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if let Some(worst) = heap.peek() {
                        if cand < *worst {
                            heap.pop();
                            heap.push(cand);
                        }
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_recurse(near, q, k, heap);
                let bound = diff * diff;
                let visit_far = heap.len() < k || heap.peek().is_some_and(|w| bound <= w.dist_sq);
                if visit_far {
                    self.knn_recurse(far, q, k, heap);
                }
            }
        }
    }

    pub fn nearest(&self, query: &Point3<f64>) -> Option<Neighbor> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = Neighbor {
            index: usize::MAX,
            dist_sq: f64::INFINITY,
        };
        self.nearest_recurse(0, query, &mut best);
        Some(best)
    }

    /// Nearest point with distance `<= radius`, if any. Much cheaper than
    /// [`nearest`](Self::nearest) for queries far from the cloud.
    pub fn nearest_within(&self, query: &Point3<f64>, radius: f64) -> Option<Neighbor> {
        if self.points.is_empty() || !(radius >= 0.0) {
            return None;
        }
        // Seed the bound just above r² so points exactly at the radius are
        // still found; the final check applies the exact `<=` test.
        let r_sq = radius * radius;
        let mut best = Neighbor {
            index: usize::MAX,
            dist_sq: r_sq.next_up(),
        };
        self.nearest_recurse(0, query, &mut best);
        (best.index != usize::MAX && best.dist_sq <= r_sq).then_some(best)
    }

    fn nearest_recurse(&self, node: usize, q: &Point3<f64>, best: &mut Neighbor) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = Neighbor {
                        index: i,
                        dist_sq: dist_sq(q, &self.points[i]),
                    };
                    if cand < *best {
                        *best = cand;
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_recurse(near, q, best);
                if diff * diff <= best.dist_sq {
                    self.nearest_recurse(far, q, best);
                }
            }
        }
    }

    /// All points with distance `<= radius`, closest first.
    pub fn within_radius(&self, query: &Point3<f64>, radius: f64) -> Vec<Neighbor> {
        let mut out = Vec::new();
        if self.points.is_empty() || !(radius >= 0.0) {
            return out;
        }
        let r_sq = radius * radius;
        self.radius_recurse(0, query, r_sq, &mut out);
        out.sort();
        out
    }

    fn radius_recurse(&self, node: usize, q: &Point3<f64>, r_sq: f64, out: &mut Vec<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist_sq(q, &self.points[i]);
                    if d <= r_sq {
                        out.push(Neighbor { index: i, dist_sq: d });
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.radius_recurse(near, q, r_sq, out);
                if diff * diff <= r_sq {
                    self.radius_recurse(far, q, r_sq, out);
                }
            }
        }
    }

    /// Up to `k` nearest points that also lie within `radius`.
    pub fn knn_within(&self, query: &Point3<f64>, k: usize, radius: f64) -> Vec<Neighbor> {
        let r_sq = radius * radius;
        let mut v = self.knn(query, k);
        v.retain(|n| n.dist_sq <= r_sq);
        v
    }
}
