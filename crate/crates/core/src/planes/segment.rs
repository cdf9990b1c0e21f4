//! Voxel-seeded region growing into compact, normal-coherent segments.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use nalgebra::Point3;

use crate::dataset::Fragment;
use crate::spatial::{dist_sq, SpatialIndex};

const GRAPH_K: usize = 10;
/// Minimum |n·n_seed| for a point to join a seed (cos 45°).
const NORMAL_COS: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// Sorted indices into the owning fragment.
    pub point_indices: Vec<usize>,
    pub centroid: Point3<f64>,
    /// Sorted ids of neighboring segments.
    pub adjacency: Vec<usize>,
}

type VoxelKey = (i64, i64, i64);

fn voxel_key(p: &Point3<f64>, size: f64) -> VoxelKey {
    (
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Entry {
    cost: u64,
    point: usize,
    seed: usize,
}

/// Splits `fragment` into segments no wider than `2 · seed_resolution`.
///
/// Seeds are the points nearest to the centers of occupied voxels of edge
/// `seed_resolution`. Labels then spread from all seeds at once along a
/// k-NN graph, shortest path first; a point joins a seed only if it lies
/// within `seed_resolution` of the seed and its normal is within 45° of the
/// seed normal. Points left over start new seeds of their own.
pub fn oversegment(fragment: &Fragment, seed_resolution: f64) -> Vec<Segment> {
    let n = fragment.len();
    if n == 0 {
        return Vec::new();
    }
    let positions = fragment.positions();
    let index = SpatialIndex::from_slice(&positions);
    let edge_limit = seed_resolution * 0.5;
    let graph: Vec<Vec<(usize, f64)>> = positions
        .iter()
        .map(|p| {
            index
                .knn_within(p, GRAPH_K + 1, edge_limit)
                .into_iter()
                .map(|nb| (nb.index, nb.dist_sq.sqrt()))
                .collect()
        })
        .collect();

    let mut voxels: BTreeMap<VoxelKey, usize> = BTreeMap::new();
    for (i, p) in positions.iter().enumerate() {
        let key = voxel_key(p, seed_resolution);
        let center = Point3::new(
            (key.0 as f64 + 0.5) * seed_resolution,
            (key.1 as f64 + 0.5) * seed_resolution,
            (key.2 as f64 + 0.5) * seed_resolution,
        );
        voxels
            .entry(key)
            .and_modify(|best| {
                if dist_sq(p, &center) < dist_sq(&positions[*best], &center) {
                    *best = i;
                }
            })
            .or_insert(i);
    }

    let mut label = vec![usize::MAX; n];
    let mut seeds: Vec<usize> = voxels.into_values().collect();
    grow(fragment, &graph, &seeds, 0, seed_resolution, &mut label);
    let mut next = 0;
    loop {
        while next < n && label[next] != usize::MAX {
            next += 1;
        }
        if next == n {
            break;
        }
        let first = seeds.len();
        seeds.push(next);
        grow(fragment, &graph, &seeds, first, seed_resolution, &mut label);
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); seeds.len()];
    for (i, &l) in label.iter().enumerate() {
        members[l].push(i);
    }
    let mut segments: Vec<Segment> = members
        .into_iter()
        .filter(|m| !m.is_empty())
        .map(|point_indices| {
            let sum = point_indices
                .iter()
                .fold(nalgebra::Vector3::zeros(), |acc, &i| acc + positions[i].coords);
            Segment {
                centroid: Point3::from(sum / point_indices.len() as f64),
                point_indices,
                adjacency: Vec::new(),
            }
        })
        .collect();
    link_adjacent(&mut segments, &positions, seed_resolution * 0.5);
    segments
}

/// Multi-source shortest-path growth from `seeds[first..]` over unlabeled
/// points. Costs are quantized to nanometers so ties resolve by index.
fn grow(
    fragment: &Fragment,
    graph: &[Vec<(usize, f64)>],
    seeds: &[usize],
    first: usize,
    radius: f64,
    label: &mut [usize],
) {
    let radius_sq = radius * radius;
    let mut heap = BinaryHeap::new();
    for (s, &p) in seeds.iter().enumerate().skip(first) {
        if label[p] == usize::MAX {
            heap.push(Reverse(Entry { cost: 0, point: p, seed: s }));
        }
    }
    let pts = &fragment.points;
    while let Some(Reverse(e)) = heap.pop() {
        if label[e.point] != usize::MAX {
            continue;
        }
        label[e.point] = e.seed;
        let seed_pt = &pts[seeds[e.seed]];
        for &(q, d) in &graph[e.point] {
            if label[q] != usize::MAX {
                continue;
            }
            if dist_sq(&pts[q].position, &seed_pt.position) > radius_sq
                || pts[q].normal.dot(&seed_pt.normal).abs() < NORMAL_COS
            {
                continue;
            }
            let cost = e.cost + (d * 1e9).round() as u64;
            heap.push(Reverse(Entry { cost, point: q, seed: e.seed }));
        }
    }
}

/// Two segments are adjacent when they occupy the same fine voxel or two
/// face-sharing ones.
fn link_adjacent(segments: &mut [Segment], positions: &[Point3<f64>], voxel: f64) {
    let mut cells: BTreeMap<VoxelKey, BTreeSet<usize>> = BTreeMap::new();
    for (s, seg) in segments.iter().enumerate() {
        for &i in &seg.point_indices {
            cells.entry(voxel_key(&positions[i], voxel)).or_default().insert(s);
        }
    }
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); segments.len()];
    let mut link = |a: &BTreeSet<usize>, b: &BTreeSet<usize>| {
        for &x in a {
            for &y in b {
                if x != y {
                    adj[x].insert(y);
                    adj[y].insert(x);
                }
            }
        }
    };
    for (key, here) in &cells {
        link(here, here);
        for off in [(1, 0, 0), (0, 1, 0), (0, 0, 1)] {
            let other = (key.0 + off.0, key.1 + off.1, key.2 + off.2);
            if let Some(there) = cells.get(&other) {
                link(here, there);
            }
        }
    }
    for (seg, a) in segments.iter_mut().zip(adj) {
        seg.adjacency = a.into_iter().collect();
    }
}
