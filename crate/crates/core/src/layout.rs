//! Scene layout: world-frame dominant planes, the base plane (floor or
//! ceiling), its occupancy grid, and the walls along the grid boundary.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dataset::{Fragment, LayoutPlanes};
use crate::error::{Error, Result};
use crate::geom::{PlaneHypothesis, RigidTransform};
use crate::planes::{cluster_atoms, PlaneLabeling};
use crate::spatial::SpatialIndex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutParams {
    pub merge_threshold: f64,
    pub cell_size: f64,
    /// Points a cell needs to count as occupied.
    pub density_min: usize,
    /// Walls need `|n · n_base|` below this.
    pub perpendicular_tolerance: f64,
    /// Walls need their inliers' mean distance to the grid boundary below this.
    pub boundary_tolerance: f64,
    /// A plane parallel to the base joins the layout when its area is at
    /// least this fraction of the base area.
    pub parallel_area_ratio: f64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self {
            merge_threshold: 0.05,
            cell_size: 0.10,
            density_min: 5,
            perpendicular_tolerance: 0.1,
            boundary_tolerance: 0.3,
            parallel_area_ratio: 0.5,
        }
    }
}

impl LayoutParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0)
            || !(self.merge_threshold > 0.0)
            || !(self.perpendicular_tolerance > 0.0)
            || !(self.boundary_tolerance > 0.0)
        {
            return Err(Error::Config("layout tolerances and cell_size must be positive".into()));
        }
        Ok(())
    }
}

/// A merged world-frame plane with its supporting points.
#[derive(Debug, Clone, PartialEq)]
pub struct DominantPlane {
    pub plane: PlaneHypothesis,
    /// `(fragment index, point index)` per inlier.
    pub inliers: Vec<(usize, usize)>,
    /// World positions, parallel to `inliers`.
    pub points: Vec<Point3<f64>>,
    /// Occupied-cell area in m².
    pub area: f64,
}

impl DominantPlane {
    pub fn from_points(plane: PlaneHypothesis, points: Vec<Point3<f64>>) -> Self {
        Self {
            plane,
            inliers: (0..points.len()).map(|i| (0, i)).collect(),
            points,
            area: 0.0,
        }
    }
}

fn cell_counts(points: impl Iterator<Item = (f64, f64)>, cell: f64) -> BTreeMap<(i64, i64), usize> {
    let mut counts = BTreeMap::new();
    for (x, y) in points {
        let key = ((x / cell).floor() as i64, (y / cell).floor() as i64);
        *counts.entry(key).or_insert(0) += 1;
    }
    counts
}

/// Area of the cells of the plane's 2D frame that hold at least
/// `density_min` projected inliers.
pub fn plane_area(plane: &DominantPlane, cell_size: f64, density_min: usize) -> f64 {
    let (u, v) = plane.plane.basis();
    let counts = cell_counts(
        plane.points.iter().map(|p| (p.coords.dot(&u), p.coords.dot(&v))),
        cell_size,
    );
    let occupied = counts.values().filter(|&&c| c >= density_min).count();
    occupied as f64 * cell_size * cell_size
}

/// Merges per-fragment planes into world-frame dominant planes.
///
/// Each fragment plane's inliers form one group; groups are clustered by
/// mean point distance and every merged plane is refit on its inliers and
/// oriented toward the mean sensor position.
pub fn merge_dominant_planes(
    fragments: &[Fragment],
    labelings: &[PlaneLabeling],
    poses: &[RigidTransform],
    params: &LayoutParams,
) -> Vec<DominantPlane> {
    let mut groups: Vec<Vec<Point3<f64>>> = Vec::new();
    let mut group_ids: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut hypotheses = Vec::new();
    for (k, (frag, labeling)) in fragments.iter().zip(labelings).enumerate() {
        for (l, plane) in labeling.planes.iter().enumerate() {
            let idx = labeling.inliers(l);
            if idx.is_empty() {
                continue;
            }
            groups.push(idx.iter().map(|&i| poses[k].apply(&frag.points[i].position)).collect());
            group_ids.push(idx.iter().map(|&i| (k, i)).collect());
            hypotheses.push(plane.transformed(&poses[k]));
        }
    }
    if groups.is_empty() {
        return Vec::new();
    }
    let viewpoint = fragments
        .iter()
        .zip(poses)
        .fold(Vector3::zeros(), |acc, (f, t)| acc + t.apply(&f.sensor_origin).coords)
        / fragments.len() as f64;
    let viewpoint = Point3::from(viewpoint);

    let members: Vec<Vec<usize>> = (0..groups.len()).map(|g| vec![g]).collect();
    cluster_atoms(&hypotheses, &groups, &members, params.merge_threshold)
        .into_iter()
        .map(|c| {
            let mut inliers = Vec::new();
            let mut points = Vec::new();
            for &g in &c.atoms {
                inliers.extend_from_slice(&group_ids[g]);
                points.extend_from_slice(&groups[g]);
            }
            let mut d = DominantPlane {
                plane: c.plane.oriented_toward(&viewpoint),
                inliers,
                points,
                area: 0.0,
            };
            d.area = plane_area(&d, params.cell_size, params.density_min);
            d
        })
        .collect()
}

/// Index of the largest-area plane; the lower index wins ties.
pub fn select_base_plane(planes: &[DominantPlane]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, p) in planes.iter().enumerate() {
        if best.is_none_or(|b| p.area > planes[b].area) {
            best = Some(i);
        }
    }
    best.ok_or(Error::NoPlanes)
}

/// 2D occupancy on the base plane; cell `(i, j)` covers
/// `origin + [i, i+1)·cell × [j, j+1)·cell` in the `(u, v)` frame.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub origin: (f64, f64),
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major by `j`, then `i`.
    pub occupied: Vec<bool>,
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl OccupancyGrid {
    pub fn project(&self, p: &Point3<f64>) -> (f64, f64) {
        (p.coords.dot(&self.u), p.coords.dot(&self.v))
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let i = ((x - self.origin.0) / self.cell_size).floor();
        let j = ((y - self.origin.1) / self.cell_size).floor();
        (i >= 0.0 && j >= 0.0 && (i as usize) < self.width && (j as usize) < self.height)
            .then_some((i as usize, j as usize))
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.origin.0 + (i as f64 + 0.5) * self.cell_size,
            self.origin.1 + (j as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn is_occupied(&self, i: usize, j: usize) -> bool {
        self.occupied[j * self.width + i]
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    /// Marks empty cells that cannot reach the grid border through empty
    /// cells (4-connectivity) as occupied.
    pub fn fill_holes(&self) -> OccupancyGrid {
        let (w, h) = (self.width, self.height);
        let mut outside = vec![false; w * h];
        let mut queue = VecDeque::new();
        for j in 0..h {
            for i in 0..w {
                let border = i == 0 || j == 0 || i + 1 == w || j + 1 == h;
                if border && !self.occupied[j * w + i] {
                    outside[j * w + i] = true;
                    queue.push_back((i, j));
                }
            }
        }
        while let Some((i, j)) = queue.pop_front() {
            let mut visit = |a: usize, b: usize| {
                let k = b * w + a;
                if !self.occupied[k] && !outside[k] {
                    outside[k] = true;
                    queue.push_back((a, b));
                }
            };
            if i > 0 {
                visit(i - 1, j);
            }
            if i + 1 < w {
                visit(i + 1, j);
            }
            if j > 0 {
                visit(i, j - 1);
            }
            if j + 1 < h {
                visit(i, j + 1);
            }
        }
        OccupancyGrid {
            occupied: outside.iter().map(|&o| !o).collect(),
            ..self.clone()
        }
    }
}

/// Projects `points` onto the base plane and marks cells holding at least
/// `density_min` points. The grid spans the projected bounding box.
pub fn build_occupancy_grid(
    points: &[Point3<f64>],
    base: &PlaneHypothesis,
    cell_size: f64,
    density_min: usize,
) -> OccupancyGrid {
    let (u, v) = base.basis();
    let projected: Vec<(f64, f64)> = points.iter().map(|p| (p.coords.dot(&u), p.coords.dot(&v))).collect();
    if projected.is_empty() {
        return OccupancyGrid {
            origin: (0.0, 0.0),
            cell_size,
            width: 0,
            height: 0,
            occupied: Vec::new(),
            u,
            v,
        };
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &projected {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let width = ((x1 - x0) / cell_size).floor() as usize + 1;
    let height = ((y1 - y0) / cell_size).floor() as usize + 1;
    let mut counts = vec![0usize; width * height];
    for &(x, y) in &projected {
        let i = (((x - x0) / cell_size).floor() as usize).min(width - 1);
        let j = (((y - y0) / cell_size).floor() as usize).min(height - 1);
        counts[j * width + i] += 1;
    }
    OccupancyGrid {
        origin: (x0, y0),
        cell_size,
        width,
        height,
        occupied: counts.iter().map(|&c| c >= density_min).collect(),
        u,
        v,
    }
}

/// Occupied cells with at least one 4-neighbor that is empty or outside
/// the grid, in row-major order.
pub fn boundary_cells(grid: &OccupancyGrid) -> Vec<(usize, usize)> {
    let (w, h) = (grid.width, grid.height);
    let mut out = Vec::new();
    for j in 0..h {
        for i in 0..w {
            if !grid.is_occupied(i, j) {
                continue;
            }
            let edge = i == 0
                || j == 0
                || i + 1 == w
                || j + 1 == h
                || !grid.is_occupied(i - 1, j)
                || !grid.is_occupied(i + 1, j)
                || !grid.is_occupied(i, j - 1)
                || !grid.is_occupied(i, j + 1);
            if edge {
                out.push((i, j));
            }
        }
    }
    out
}

/// Mean distance from the plane's inliers, projected on the grid, to the
/// nearest boundary-cell center. Infinite when there is no boundary.
pub fn boundary_distance(plane: &DominantPlane, grid: &OccupancyGrid, boundary: &[(usize, usize)]) -> f64 {
    if boundary.is_empty() || plane.points.is_empty() {
        return f64::INFINITY;
    }
    let centers: Vec<Point3<f64>> = boundary
        .iter()
        .map(|&(i, j)| {
            let (x, y) = grid.cell_center(i, j);
            Point3::new(x, y, 0.0)
        })
        .collect();
    let index = SpatialIndex::new(centers);
    let sum: f64 = plane
        .points
        .iter()
        .map(|p| {
            let (x, y) = grid.project(p);
            index.nearest(&Point3::new(x, y, 0.0)).map_or(0.0, |n| n.distance())
        })
        .sum();
    sum / plane.points.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub base: DominantPlane,
    /// Other layout planes parallel to the base (the ceiling when the
    /// floor is the base, or vice versa).
    pub parallel: Vec<DominantPlane>,
    pub walls: Vec<DominantPlane>,
    pub boundary_cells: Vec<(usize, usize)>,
}

impl Layout {
    /// Base first, then parallel planes, then walls.
    pub fn planes(&self) -> Vec<PlaneHypothesis> {
        std::iter::once(self.base.plane)
            .chain(self.parallel.iter().map(|p| p.plane))
            .chain(self.walls.iter().map(|p| p.plane))
            .collect()
    }

    pub fn plane_count(&self) -> usize {
        1 + self.parallel.len() + self.walls.len()
    }

    pub fn to_file_planes(&self) -> LayoutPlanes {
        LayoutPlanes {
            base: Some(self.base.plane),
            parallel: self.parallel.iter().map(|p| p.plane).collect(),
            walls: self.walls.iter().map(|p| p.plane).collect(),
        }
    }
}

/// Refits the offset for a fixed normal on the plane's inliers.
fn snapped(plane: &DominantPlane, normal: Vector3<f64>) -> DominantPlane {
    let plane_new = PlaneHypothesis::refit_offset(normal, plane.points.iter())
        .or_else(|| PlaneHypothesis::new(normal, plane.plane.offset()))
        .unwrap_or(plane.plane);
    DominantPlane {
        plane: plane_new,
        ..plane.clone()
    }
}

/// Selects walls (perpendicular to the base and close to the occupancy
/// boundary) and base-parallel planes of comparable area, then snaps them:
/// walls exactly perpendicular to the base, parallel planes exactly
/// parallel, each with its offset refit on its inliers.
pub fn select_layout(
    planes: &[DominantPlane],
    base: usize,
    grid: &OccupancyGrid,
    params: &LayoutParams,
) -> Layout {
    let boundary = boundary_cells(grid);
    let base_plane = &planes[base];
    let nb = *base_plane.plane.normal();
    let mut walls = Vec::new();
    let mut parallel = Vec::new();
    for (i, p) in planes.iter().enumerate() {
        if i == base {
            continue;
        }
        let dot = p.plane.normal().dot(&nb);
        if dot.abs() < params.perpendicular_tolerance {
            if boundary_distance(p, grid, &boundary) < params.boundary_tolerance {
                let n = (p.plane.normal() - nb * dot).normalize();
                walls.push(snapped(p, n));
            }
        } else if dot.abs() > 1.0 - params.perpendicular_tolerance
            && p.area >= params.parallel_area_ratio * base_plane.area
        {
            parallel.push(snapped(p, nb * dot.signum()));
        }
    }
    Layout {
        base: base_plane.clone(),
        parallel,
        walls,
        boundary_cells: boundary,
    }
}

/// Full layout estimate for fragments under `poses`.
pub fn estimate_layout(
    fragments: &[Fragment],
    labelings: &[PlaneLabeling],
    poses: &[RigidTransform],
    params: &LayoutParams,
) -> Result<Layout> {
    let planes = merge_dominant_planes(fragments, labelings, poses, params);
    let base = select_base_plane(&planes).map_err(|_| Error::LayoutNotFound)?;
    let world: Vec<Point3<f64>> = fragments
        .iter()
        .zip(poses)
        .flat_map(|(f, t)| f.points.iter().map(move |p| t.apply(&p.position)))
        .collect();
    let grid = build_occupancy_grid(&world, &planes[base].plane, params.cell_size, params.density_min)
        .fill_holes();
    Ok(select_layout(&planes, base, &grid, params))
}
