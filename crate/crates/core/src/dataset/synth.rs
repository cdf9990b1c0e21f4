//! Synthetic indoor scans with known ground truth.
//!
//! A room is an extruded floor polygon with optional axis-aligned clutter
//! boxes. Surfaces are sampled once in the world frame; each fragment keeps
//! the samples visible from one camera of an outward-facing loop path and
//! perturbs them with its own noise.
//!
//! Random streams (ChaCha8, seeded with `spec.seed`):
//! * [`SURFACE_STREAM`]: surface sampling, surface by surface.
//! * [`DRIFT_STREAM`]: odometry drift. For each step `k → k+1` six standard
//!   normal draws are taken, three rotation components then three
//!   translation components, scaled by the drift sigmas. The measured
//!   odometry is `T_rel ∘ exp([ω; v])`.
//! * `NOISE_STREAM_BASE + k`: point and normal noise of fragment `k`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Point2, Point3, Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{se3_exp, OrientedPoint, PlaneHypothesis, RigidTransform};

use super::{Dataset, Fragment, GroundTruth};

pub const SURFACE_STREAM: u64 = 0;
pub const DRIFT_STREAM: u64 = 1;
pub const NOISE_STREAM_BASE: u64 = 16;

/// Normal perturbation sigma in radians per meter of point noise.
const NORMAL_NOISE_PER_METER: f64 = 1.0 / 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClutterBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticRoomSpec {
    /// Floor outline in meters, either winding.
    pub floor_polygon: Vec<[f64; 2]>,
    pub height: f64,
    #[serde(default)]
    pub clutter: Vec<ClutterBox>,
    pub points_per_m2: f64,
    pub noise_sigma: f64,
    pub fragment_count: usize,
    pub drift_rot_sigma: f64,
    pub drift_trans_sigma: f64,
    pub seed: u64,
    /// Fraction of each camera's yaw sector shared with the next camera.
    #[serde(default = "default_view_overlap")]
    pub view_overlap: f64,
    #[serde(default = "default_path_radius")]
    pub path_radius: f64,
    /// Center of the camera loop; defaults to the polygon centroid.
    #[serde(default)]
    pub path_center: Option<[f64; 2]>,
    #[serde(default = "default_camera_height")]
    pub camera_height: f64,
    /// Largest elevation angle (degrees) above or below the horizon seen by a camera.
    #[serde(default = "default_max_elevation")]
    pub max_elevation_deg: f64,
    #[serde(default)]
    pub max_range: Option<f64>,
}

fn default_view_overlap() -> f64 {
    0.65
}
fn default_path_radius() -> f64 {
    0.3
}
fn default_camera_height() -> f64 {
    1.5
}
fn default_max_elevation() -> f64 {
    70.0
}

impl SyntheticRoomSpec {
    /// Axis-aligned `width × depth × height` room with its corner at the origin.
    pub fn box_room(width: f64, depth: f64, height: f64) -> Self {
        Self {
            floor_polygon: vec![[0.0, 0.0], [width, 0.0], [width, depth], [0.0, depth]],
            height,
            clutter: Vec::new(),
            points_per_m2: 400.0,
            noise_sigma: 0.0,
            fragment_count: 8,
            drift_rot_sigma: 0.0,
            drift_trans_sigma: 0.0,
            seed: 0,
            view_overlap: default_view_overlap(),
            path_radius: default_path_radius(),
            path_center: None,
            camera_height: default_camera_height(),
            max_elevation_deg: default_max_elevation(),
            max_range: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidSpec(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("room spec serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SurfaceKind {
    Floor,
    Ceiling,
    Wall,
    Clutter,
}

impl SurfaceKind {
    /// Floor, ceiling and walls: the room envelope.
    pub fn is_envelope(self) -> bool {
        !matches!(self, SurfaceKind::Clutter)
    }
}

/// A generating surface; `plane` is in the world frame with its normal
/// pointing into free space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surface {
    pub kind: SurfaceKind,
    pub plane: PlaneHypothesis,
}

/// Generator-side truth that has no file representation.
#[derive(Debug, Clone)]
pub struct SceneTruth {
    pub surfaces: Vec<Surface>,
    /// Per fragment, per point: index into `surfaces`.
    pub labels: Vec<Vec<usize>>,
    /// World-frame camera centers.
    pub camera_centers: Vec<Point3<f64>>,
}

impl SceneTruth {
    pub fn walls(&self) -> impl Iterator<Item = &Surface> {
        self.surfaces.iter().filter(|s| s.kind == SurfaceKind::Wall)
    }
}

/// A sampled surface patch: a planar region plus its generator.
struct Patch {
    surface: usize,
    shape: PatchShape,
}

enum PatchShape {
    /// `origin + s·u + t·v` for `s, t ∈ [0, 1]`.
    Rect {
        origin: Point3<f64>,
        u: Vector3<f64>,
        v: Vector3<f64>,
    },
    /// The floor polygon at height `z`.
    Polygon { z: f64 },
}

struct WorldSample {
    point: OrientedPoint,
    surface: usize,
    /// Wall edge index for wall samples, used to skip self-occlusion.
    edge: Option<usize>,
}

pub fn synthesize_room(spec: &SyntheticRoomSpec) -> Result<Dataset> {
    synthesize_scene(spec).map(|(d, _)| d)
}

/// Like [`synthesize_room`], also returning per-point surface labels.
pub fn synthesize_scene(spec: &SyntheticRoomSpec) -> Result<(Dataset, SceneTruth)> {
    let polygon = validate(spec)?;
    let (surfaces, patches) = build_surfaces(spec, &polygon);
    let samples = sample_surfaces(spec, &polygon, &surfaces, &patches);
    let (poses, centers) = camera_path(spec, &polygon)?;

    let mut fragments = Vec::with_capacity(poses.len());
    let mut labels = Vec::with_capacity(poses.len());
    for (k, pose) in poses.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(NOISE_STREAM_BASE + k as u64);
        let inv = pose.inverse();
        let forward = pose.rotate(&Vector3::z());
        let mut points = Vec::new();
        let mut frag_labels = Vec::new();
        for s in &samples {
            if !visible(spec, &polygon, &centers[k], &forward, s) {
                continue;
            }
            let local = s.point.transformed(&inv);
            points.push(perturb(local, spec.noise_sigma, &mut rng));
            frag_labels.push(s.surface);
        }
        if points.is_empty() {
            return Err(Error::InvalidSpec(format!("camera {k} sees no surface")));
        }
        fragments.push(Fragment {
            id: k,
            points,
            sensor_origin: Point3::origin(),
        });
        labels.push(frag_labels);
    }

    let mut drift_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    drift_rng.set_stream(DRIFT_STREAM);
    let odometry = poses
        .windows(2)
        .map(|w| {
            let rel = w[0].inverse().compose(&w[1]);
            let xi = drift_sample(&mut drift_rng, spec.drift_rot_sigma, spec.drift_trans_sigma);
            if xi == Vector6::zeros() {
                rel
            } else {
                rel.compose(&se3_exp(&xi))
            }
        })
        .collect();

    let cloud = samples.iter().map(|s| s.point).collect();
    let dataset = Dataset {
        fragments,
        odometry,
        ground_truth: Some(GroundTruth {
            poses,
            cloud: Some(cloud),
        }),
    };
    let truth = SceneTruth {
        surfaces,
        labels,
        camera_centers: centers,
    };
    Ok((dataset, truth))
}

/// One drift increment `[ω; v]` in the documented draw order.
pub fn drift_sample<R: Rng>(rng: &mut R, rot_sigma: f64, trans_sigma: f64) -> Vector6<f64> {
    let mut xi = Vector6::zeros();
    for i in 0..6 {
        let z: f64 = rng.sample(StandardNormal);
        xi[i] = z * if i < 3 { rot_sigma } else { trans_sigma };
    }
    xi
}

fn perturb(p: OrientedPoint, sigma: f64, rng: &mut ChaCha8Rng) -> OrientedPoint {
    if sigma <= 0.0 {
        return p;
    }
    let limit = 3.0 * sigma;
    let offset = loop {
        let d = gaussian3(rng) * sigma;
        if d.norm() <= limit {
            break d;
        }
    };
    let sigma_n = sigma * NORMAL_NOISE_PER_METER;
    let normal = (p.normal + gaussian3(rng) * sigma_n)
        .try_normalize(0.0)
        .unwrap_or(p.normal);
    OrientedPoint {
        position: p.position + offset,
        normal,
    }
}

fn gaussian3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

fn validate(spec: &SyntheticRoomSpec) -> Result<Vec<Point2<f64>>> {
    let bad = |m: String| Err(Error::InvalidSpec(m));
    if spec.floor_polygon.len() < 3 {
        return bad("floor polygon needs at least 3 vertices".into());
    }
    if !(spec.height > 0.0 && spec.height.is_finite()) {
        return bad(format!("height must be positive, got {}", spec.height));
    }
    if spec.fragment_count < 2 {
        return bad(format!("fragment_count must be at least 2, got {}", spec.fragment_count));
    }
    if !(spec.points_per_m2 > 0.0 && spec.points_per_m2.is_finite()) {
        return bad("points_per_m2 must be positive".into());
    }
    for (name, v) in [
        ("noise_sigma", spec.noise_sigma),
        ("drift_rot_sigma", spec.drift_rot_sigma),
        ("drift_trans_sigma", spec.drift_trans_sigma),
        ("path_radius", spec.path_radius),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return bad(format!("{name} must be finite and non-negative, got {v}"));
        }
    }
    if !(0.0..1.0).contains(&spec.view_overlap) {
        return bad(format!("view_overlap must lie in [0, 1), got {}", spec.view_overlap));
    }
    if !(spec.camera_height > 0.0 && spec.camera_height < spec.height) {
        return bad("camera_height must lie strictly between floor and ceiling".into());
    }
    if !(spec.max_elevation_deg > 0.0 && spec.max_elevation_deg <= 90.0) {
        return bad("max_elevation_deg must lie in (0, 90]".into());
    }
    if spec.max_range.is_some_and(|r| !(r > 0.0)) {
        return bad("max_range must be positive".into());
    }

    let mut poly: Vec<Point2<f64>> = spec.floor_polygon.iter().map(|v| Point2::new(v[0], v[1])).collect();
    if poly.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
        return bad("floor polygon has non-finite vertices".into());
    }
    let area = signed_area(&poly);
    if area.abs() < 1e-9 {
        return bad("floor polygon has zero area".into());
    }
    if area < 0.0 {
        poly.reverse();
    }
    let n = poly.len();
    for i in 0..n {
        if (poly[(i + 1) % n] - poly[i]).norm() < 1e-9 {
            return bad(format!("floor polygon edge {i} has zero length"));
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return bad(format!("floor polygon edges {i} and {j} intersect"));
            }
        }
    }
    for (b, c) in spec.clutter.iter().enumerate() {
        if (0..3).any(|d| !(c.min[d] < c.max[d])) {
            return bad(format!("clutter box {b} has min >= max"));
        }
        if c.min[2] < 0.0 || c.max[2] > spec.height {
            return bad(format!("clutter box {b} exceeds the floor-to-ceiling range"));
        }
        for corner in [
            Point2::new(c.min[0], c.min[1]),
            Point2::new(c.max[0], c.min[1]),
            Point2::new(c.max[0], c.max[1]),
            Point2::new(c.min[0], c.max[1]),
        ] {
            if !point_in_polygon(&poly, &corner) {
                return bad(format!("clutter box {b} is not inside the floor polygon"));
            }
        }
    }
    Ok(poly)
}

pub(crate) fn signed_area(poly: &[Point2<f64>]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        * 0.5
}

fn polygon_centroid(poly: &[Point2<f64>]) -> Point2<f64> {
    let n = poly.len();
    let area = signed_area(poly);
    let mut c = Vector2::zeros();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let cross = a.x * b.y - b.x * a.y;
        c += (a.coords + b.coords) * cross;
    }
    Point2::from(c / (6.0 * area))
}

pub(crate) fn point_in_polygon(poly: &[Point2<f64>], p: &Point2<f64>) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn cross2(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Closed-segment intersection test, including touching and collinear overlap.
fn segments_intersect(p1: Point2<f64>, p2: Point2<f64>, q1: Point2<f64>, q2: Point2<f64>) -> bool {
    let d1 = cross2(q2 - q1, p1 - q1);
    let d2 = cross2(q2 - q1, p2 - q1);
    let d3 = cross2(p2 - p1, q1 - p1);
    let d4 = cross2(p2 - p1, q2 - p1);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |a: Point2<f64>, b: Point2<f64>, p: Point2<f64>, d: f64| {
        d == 0.0 && p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

/// Parameters `(t, s)` where the open segments `a→b` and `c→d` cross.
fn segment_crossing(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>, d: Point2<f64>) -> Option<(f64, f64)> {
    let r = b - a;
    let s = d - c;
    let denom = cross2(r, s);
    if denom.abs() < 1e-15 {
        return None;
    }
    let t = cross2(c - a, s) / denom;
    let u = cross2(c - a, r) / denom;
    const EPS: f64 = 1e-9;
    (t > EPS && t < 1.0 - EPS && u > -EPS && u < 1.0 + EPS).then_some((t, u))
}

fn build_surfaces(spec: &SyntheticRoomSpec, poly: &[Point2<f64>]) -> (Vec<Surface>, Vec<Patch>) {
    let mut surfaces = Vec::new();
    let mut patches = Vec::new();
    let h = spec.height;
    let mut add = |surfaces: &mut Vec<Surface>, kind, plane: Option<PlaneHypothesis>, shape| {
        surfaces.push(Surface {
            kind,
            plane: plane.expect("generator planes are well formed"),
        });
        patches.push(Patch {
            surface: surfaces.len() - 1,
            shape,
        });
    };

    add(
        &mut surfaces,
        SurfaceKind::Floor,
        PlaneHypothesis::new(Vector3::z(), 0.0),
        PatchShape::Polygon { z: 0.0 },
    );
    add(
        &mut surfaces,
        SurfaceKind::Ceiling,
        PlaneHypothesis::new(-Vector3::z(), h),
        PatchShape::Polygon { z: h },
    );
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let e = (b - a).normalize();
        // Counter-clockwise winding: the interior is on the left.
        let inward = Vector3::new(-e.y, e.x, 0.0);
        let origin = Point3::new(a.x, a.y, 0.0);
        add(
            &mut surfaces,
            SurfaceKind::Wall,
            PlaneHypothesis::from_normal_and_point(inward, &origin),
            PatchShape::Rect {
                origin,
                u: Vector3::new(b.x - a.x, b.y - a.y, 0.0),
                v: Vector3::new(0.0, 0.0, h),
            },
        );
    }
    for c in &spec.clutter {
        let lo = Point3::from(c.min);
        let size = Vector3::from(c.max) - lo.coords;
        let (sx, sy, sz) = (Vector3::x() * size.x, Vector3::y() * size.y, Vector3::z() * size.z);
        let mut faces = vec![
            (-Vector3::x(), lo, sy, sz),
            (Vector3::x(), lo + sx, sy, sz),
            (-Vector3::y(), lo, sx, sz),
            (Vector3::y(), lo + sy, sx, sz),
        ];
        if c.max[2] < h {
            faces.push((Vector3::z(), lo + sz, sx, sy));
        }
        if c.min[2] > 0.0 {
            faces.push((-Vector3::z(), lo, sx, sy));
        }
        for (normal, origin, u, v) in faces {
            add(
                &mut surfaces,
                SurfaceKind::Clutter,
                PlaneHypothesis::from_normal_and_point(normal, &origin),
                PatchShape::Rect { origin, u, v },
            );
        }
    }
    (surfaces, patches)
}

fn inside_any_box(spec: &SyntheticRoomSpec, p: &Point3<f64>) -> bool {
    const EPS: f64 = 1e-9;
    spec.clutter
        .iter()
        .any(|c| (0..3).all(|d| p[d] > c.min[d] + EPS && p[d] < c.max[d] - EPS))
}

/// A floor or ceiling sample covered by a box resting against it.
fn under_any_box(spec: &SyntheticRoomSpec, p: &Point3<f64>) -> bool {
    const EPS: f64 = 1e-9;
    spec.clutter.iter().any(|c| {
        let covered = (p.z <= EPS && c.min[2] <= EPS) || (p.z >= spec.height - EPS && c.max[2] >= spec.height - EPS);
        covered && p.x > c.min[0] && p.x < c.max[0] && p.y > c.min[1] && p.y < c.max[1]
    })
}

fn sample_surfaces(
    spec: &SyntheticRoomSpec,
    poly: &[Point2<f64>],
    surfaces: &[Surface],
    patches: &[Patch],
) -> Vec<WorldSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(SURFACE_STREAM);
    let floor_area = signed_area(poly);
    let (mut lo, mut hi) = (poly[0], poly[0]);
    for p in poly {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let wall_offset = 2;
    let mut out = Vec::new();
    for patch in patches {
        let surface = &surfaces[patch.surface];
        let normal = *surface.plane.normal();
        match &patch.shape {
            PatchShape::Rect { origin, u, v } => {
                let area = u.cross(v).norm();
                let count = (area * spec.points_per_m2).round() as usize;
                for _ in 0..count {
                    let s: f64 = rng.random();
                    let t: f64 = rng.random();
                    let p = origin + u * s + v * t;
                    if inside_any_box(spec, &p) {
                        continue;
                    }
                    let edge = (surface.kind == SurfaceKind::Wall).then(|| patch.surface - wall_offset);
                    out.push(WorldSample {
                        point: OrientedPoint { position: p, normal },
                        surface: patch.surface,
                        edge,
                    });
                }
            }
            PatchShape::Polygon { z } => {
                let count = (floor_area * spec.points_per_m2).round() as usize;
                let mut accepted = 0;
                while accepted < count {
                    let x = lo.x + (hi.x - lo.x) * rng.random::<f64>();
                    let y = lo.y + (hi.y - lo.y) * rng.random::<f64>();
                    if !point_in_polygon(poly, &Point2::new(x, y)) {
                        continue;
                    }
                    accepted += 1;
                    let p = Point3::new(x, y, *z);
                    if under_any_box(spec, &p) {
                        continue;
                    }
                    out.push(WorldSample {
                        point: OrientedPoint { position: p, normal },
                        surface: patch.surface,
                        edge: None,
                    });
                }
            }
        }
    }
    out
}

fn camera_path(spec: &SyntheticRoomSpec, poly: &[Point2<f64>]) -> Result<(Vec<RigidTransform>, Vec<Point3<f64>>)> {
    let center = spec
        .path_center
        .map(|c| Point2::new(c[0], c[1]))
        .unwrap_or_else(|| polygon_centroid(poly));
    let n = spec.fragment_count;
    let mut poses = Vec::with_capacity(n);
    let mut centers = Vec::with_capacity(n);
    for k in 0..n {
        let yaw = 2.0 * PI * k as f64 / n as f64;
        let (s, c) = yaw.sin_cos();
        let xy = center + Vector2::new(c, s) * spec.path_radius;
        if !point_in_polygon(poly, &xy) {
            return Err(Error::InvalidSpec(format!("camera {k} lies outside the floor polygon")));
        }
        let position = Point3::new(xy.x, xy.y, spec.camera_height);
        if inside_any_box(spec, &position) {
            return Err(Error::InvalidSpec(format!("camera {k} lies inside a clutter box")));
        }
        // Camera axes in world coordinates: x right, y down, z forward.
        let right = Vector3::new(s, -c, 0.0);
        let down = -Vector3::z();
        let forward = Vector3::new(c, s, 0.0);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        poses.push(RigidTransform::from_parts(rotation, position.coords));
        centers.push(position);
    }
    Ok((poses, centers))
}

fn visible(
    spec: &SyntheticRoomSpec,
    poly: &[Point2<f64>],
    camera: &Point3<f64>,
    forward: &Vector3<f64>,
    s: &WorldSample,
) -> bool {
    let p = &s.point.position;
    let ray = p - camera;
    if s.point.normal.dot(&-ray) <= 0.0 {
        return false;
    }
    let horiz = Vector2::new(ray.x, ray.y);
    let hnorm = horiz.norm();
    if hnorm < 1e-9 {
        return false;
    }
    if let Some(r) = spec.max_range {
        if ray.norm() > r {
            return false;
        }
    }
    let elevation = ray.z.atan2(hnorm);
    if elevation.abs() > spec.max_elevation_deg.to_radians() {
        return false;
    }
    let fwd = Vector2::new(forward.x, forward.y).normalize();
    let bearing = cross2(fwd, horiz).atan2(fwd.dot(&horiz));
    let half_width = PI / spec.fragment_count as f64 / (1.0 - spec.view_overlap);
    if bearing.abs() > half_width.min(PI) {
        return false;
    }
    let a = Point2::new(camera.x, camera.y);
    let b = Point2::new(p.x, p.y);
    let n = poly.len();
    for i in 0..n {
        if Some(i) == s.edge {
            continue;
        }
        if segment_crossing(a, b, poly[i], poly[(i + 1) % n]).is_some() {
            return false;
        }
    }
    !spec.clutter.iter().any(|c| segment_hits_box(camera, p, c))
}

/// Whether the segment `a→b` passes through the box before reaching `b`.
fn segment_hits_box(a: &Point3<f64>, b: &Point3<f64>, c: &ClutterBox) -> bool {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if a[k] < c.min[k] || a[k] > c.max[k] {
                return false;
            }
            continue;
        }
        let inv = 1.0 / d[k];
        let (mut lo, mut hi) = ((c.min[k] - a[k]) * inv, (c.max[k] - a[k]) * inv);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        t0 = t0.max(lo);
        t1 = t1.min(hi);
        if t0 > t1 {
            return false;
        }
    }
    t0 < 1.0 - 1e-7 && t1 > 1e-7
}
