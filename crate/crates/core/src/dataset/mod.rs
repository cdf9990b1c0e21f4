//! Fragments, trajectories and layouts on disk, plus the synthetic room
//! generator.
//!
//! A dataset directory holds:
//! * `fragment_000.ply`, `fragment_001.ply`, … (local frame, with normals)
//! * `odometry.txt`: line `k` is the measured transform from fragment `k+1`
//!   into fragment `k`
//! * optionally `ground_truth.txt` (absolute poses) and `ground_truth.ply`
//!   (world-frame surface samples)

pub mod layout_file;
pub mod ply;
pub mod synth;
pub mod trajectory;

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::geom::{OrientedPoint, RigidTransform};

pub use layout_file::{read_layout, write_layout, LayoutPlanes};
pub use ply::{read_fragment, read_points, write_fragment, write_points, PlyFormat};
pub use synth::{synthesize_room, synthesize_scene, ClutterBox, SceneTruth, Surface, SurfaceKind, SyntheticRoomSpec};
pub use trajectory::{read_trajectory, write_trajectory};

pub const ODOMETRY_FILE: &str = "odometry.txt";
pub const GROUND_TRUTH_POSES_FILE: &str = "ground_truth.txt";
pub const GROUND_TRUTH_CLOUD_FILE: &str = "ground_truth.ply";

/// A rigid partial scan in its own local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub id: usize,
    pub points: Vec<OrientedPoint>,
    pub sensor_origin: Point3<f64>,
}

impl Fragment {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Point3<f64>> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn centroid(&self) -> Point3<f64> {
        let sum = self.points.iter().fold(nalgebra::Vector3::zeros(), |acc, p| acc + p.position.coords);
        Point3::from(sum / self.points.len().max(1) as f64)
    }

    /// Largest distance from the centroid to any point, doubled.
    pub fn diameter(&self) -> f64 {
        let c = self.centroid();
        2.0 * self
            .points
            .iter()
            .map(|p| (p.position - c).norm())
            .fold(0.0, f64::max)
    }

    pub fn transformed(&self, t: &RigidTransform) -> Fragment {
        Fragment {
            id: self.id,
            points: self.points.iter().map(|p| p.transformed(t)).collect(),
            sensor_origin: t.apply(&self.sensor_origin),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub poses: Vec<RigidTransform>,
    pub cloud: Option<Vec<OrientedPoint>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub fragments: Vec<Fragment>,
    /// `odometry[k]` maps fragment `k+1` coordinates into fragment `k`.
    pub odometry: Vec<RigidTransform>,
    pub ground_truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.fragments.is_empty() {
            return Err(Error::DegenerateInput("dataset has no fragments".into()));
        }
        if self.odometry.len() + 1 != self.fragments.len() {
            return Err(Error::DegenerateInput(format!(
                "{} fragments need {} odometry transforms, found {}",
                self.fragments.len(),
                self.fragments.len() - 1,
                self.odometry.len()
            )));
        }
        for (k, f) in self.fragments.iter().enumerate() {
            if f.points.is_empty() {
                return Err(Error::DegenerateInput(format!("fragment {k} is empty")));
            }
        }
        if let Some(gt) = &self.ground_truth {
            if gt.poses.len() != self.fragments.len() {
                return Err(Error::LengthMismatch {
                    estimated: self.fragments.len(),
                    ground_truth: gt.poses.len(),
                });
            }
        }
        Ok(())
    }

    /// Absolute poses from chaining odometry, fragment 0 at the identity.
    pub fn chained_odometry(&self) -> Vec<RigidTransform> {
        chain(&self.odometry)
    }
}

pub fn chain(relative: &[RigidTransform]) -> Vec<RigidTransform> {
    let mut poses = Vec::with_capacity(relative.len() + 1);
    poses.push(RigidTransform::identity());
    for rel in relative {
        let last = *poses.last().expect("non-empty");
        poses.push(last.compose(rel));
    }
    poses
}

pub fn fragment_file_name(k: usize) -> String {
    format!("fragment_{k:03}.ply")
}

pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>, format: PlyFormat) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (k, f) in dataset.fragments.iter().enumerate() {
        write_fragment(f, dir.join(fragment_file_name(k)), format)?;
    }
    write_trajectory(&dataset.odometry, dir.join(ODOMETRY_FILE))?;
    if let Some(gt) = &dataset.ground_truth {
        write_trajectory(&gt.poses, dir.join(GROUND_TRUTH_POSES_FILE))?;
        if let Some(cloud) = &gt.cloud {
            write_points(cloud, &[], dir.join(GROUND_TRUTH_CLOUD_FILE), format)?;
        }
    }
    Ok(())
}

fn fragment_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut indexed = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(k) = name
            .strip_prefix("fragment_")
            .and_then(|s| s.strip_suffix(".ply"))
            .and_then(|s| s.parse::<usize>().ok())
        else {
            continue;
        };
        indexed.push((k, entry.path()));
    }
    indexed.sort();
    for (expected, (k, path)) in indexed.iter().enumerate() {
        if *k != expected {
            return Err(Error::parse(path, 0, format!("fragment files must be numbered from 0 without gaps; expected {expected}")));
        }
    }
    Ok(indexed.into_iter().map(|(_, p)| p).collect())
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let paths = fragment_paths(dir)?;
    let mut fragments = Vec::with_capacity(paths.len());
    for (k, path) in paths.iter().enumerate() {
        let mut f = read_fragment(path)?;
        f.id = k;
        fragments.push(f);
    }
    let odometry = read_trajectory(dir.join(ODOMETRY_FILE))?;
    let gt_path = dir.join(GROUND_TRUTH_POSES_FILE);
    let ground_truth = if gt_path.exists() {
        let poses = read_trajectory(&gt_path)?;
        let cloud_path = dir.join(GROUND_TRUTH_CLOUD_FILE);
        let cloud = if cloud_path.exists() {
            Some(read_points(&cloud_path)?)
        } else {
            None
        };
        Some(GroundTruth { poses, cloud })
    } else {
        None
    };
    let dataset = Dataset {
        fragments,
        odometry,
        ground_truth,
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_directory_round_trip() {
        let mut spec = SyntheticRoomSpec::box_room(3.0, 2.5, 2.4);
        spec.points_per_m2 = 40.0;
        spec.fragment_count = 3;
        spec.noise_sigma = 0.003;
        spec.drift_trans_sigma = 0.01;
        let d = synthesize_room(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for format in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            write_dataset(&d, dir.path(), format).unwrap();
            let back = read_dataset(dir.path()).unwrap();
            assert_eq!(back.odometry, d.odometry);
            assert_eq!(back.ground_truth.as_ref().unwrap().poses, d.ground_truth.as_ref().unwrap().poses);
            for (a, b) in d.fragments.iter().zip(&back.fragments) {
                assert_eq!(a.points.len(), b.points.len());
                for (p, q) in a.points.iter().zip(&b.points) {
                    assert_eq!(p.position, q.position);
                    assert!((p.normal - q.normal).norm() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn missing_directory_is_io_error() {
        let err = read_dataset("/nonexistent/dataset/dir").unwrap_err();
        assert_eq!(err.category(), crate::ErrorCategory::Io);
    }

    #[test]
    fn chain_composes_in_order() {
        let a = RigidTransform::from_translation(nalgebra::Vector3::new(1.0, 0.0, 0.0));
        let r = RigidTransform::rotation_about_z(std::f64::consts::FRAC_PI_2);
        let poses = chain(&[r, a]);
        assert_eq!(poses.len(), 3);
        let p = poses[2].apply(&Point3::origin());
        assert!((p - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }
}
