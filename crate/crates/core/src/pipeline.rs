//! End-to-end reconstruction: odometry refinement, loop closure, pose-graph
//! optimization, then joint layout estimation and global registration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::layout_file::format_layout;
use crate::dataset::trajectory::format_trajectory;
use crate::dataset::{read_dataset, synthesize_room, write_points, Dataset, PlyFormat, SyntheticRoomSpec};
use crate::error::{Error, Result};
use crate::geom::{OrientedPoint, RigidTransform};
use crate::global_reg::{joint_optimize, JointResult, PairConstraint, RegistrationConfig};
use crate::layout::{estimate_layout, Layout, LayoutParams};
use crate::metrics::{alignment_transform, reconstruction_error, trajectory_error, ReconstructionError, TrajectoryAlignment, TrajectoryError};
use crate::planes::{extract_fragment_planes, PlaneLabeling, PlaneParams};
use crate::pose_graph::{
    detect_loop_closures, optimize_pose_graph_traced, prune_loops, refine_odometry, PoseGraph, PoseGraphParams,
};
use crate::registration::{IcpParams, PreparedCloud};

pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const LAYOUT_FILE: &str = "layout.txt";
pub const MERGED_CLOUD_FILE: &str = "merged.ply";
pub const METRICS_FILE: &str = "metrics.txt";
pub const TRACE_FILE: &str = "trace.txt";
pub const LOOPS_FILE: &str = "loops.txt";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stages {
    /// Refine the measured odometry by pairwise ICP.
    pub refine_odometry: bool,
    pub detect_loops: bool,
    /// Run the joint layout/registration stage after the pose graph.
    pub joint_registration: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Self {
            refine_odometry: true,
            detect_loops: true,
            joint_registration: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub alignment: TrajectoryAlignment,
}

/// Pipeline configuration. Exactly one input source: a dataset directory
/// (`dataset`, relative paths resolve against the config file) or an inline
/// synthetic room (`[synth]`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub dataset: Option<PathBuf>,
    pub synth: Option<SyntheticRoomSpec>,
    pub stages: Stages,
    pub icp: IcpParams,
    pub pose_graph: PoseGraphParams,
    pub planes: PlaneParams,
    pub layout: LayoutParams,
    pub registration: RegistrationConfig,
    pub evaluation: EvaluationConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Config = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file; a relative `dataset` path is resolved against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::from_toml(&text)?;
        if let Some(d) = &c.dataset {
            if d.is_relative() {
                c.dataset = Some(path.parent().unwrap_or(Path::new(".")).join(d));
            }
        }
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset, &self.synth) {
            (Some(_), Some(_)) => return Err(Error::Config("give either `dataset` or `[synth]`, not both".into())),
            (None, None) => return Err(Error::Config("no input: set `dataset` or `[synth]`".into())),
            _ => {}
        }
        self.validate_parameters()
    }

    /// Checks the stage parameters, ignoring the input source.
    pub fn validate_parameters(&self) -> Result<()> {
        self.planes.validate()?;
        self.layout.validate()?;
        self.registration.validate()
    }

    /// Loads or generates the input dataset; `seed` overrides the synthetic seed.
    pub fn load_dataset(&self, seed: Option<u64>) -> Result<Dataset> {
        match (&self.dataset, &self.synth) {
            (Some(dir), _) => read_dataset(dir),
            (None, Some(spec)) => {
                let mut spec = spec.clone();
                if let Some(s) = seed {
                    spec.seed = s;
                }
                synthesize_room(&spec)
            }
            (None, None) => Err(Error::Config("no input: set `dataset` or `[synth]`".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopRecord {
    pub i: usize,
    pub j: usize,
    pub overlap: f64,
    pub line_weight: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Chained measured odometry, before refinement.
    pub measured_odometry: TrajectoryError,
    pub odometry: TrajectoryError,
    pub pose_graph: TrajectoryError,
    pub final_trajectory: TrajectoryError,
    pub reconstruction: Option<ReconstructionError>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Chained (refined) odometry.
    pub odometry_poses: Vec<RigidTransform>,
    pub pose_graph_poses: Vec<RigidTransform>,
    /// Objective histories of the pose-graph solve with all loops and after pruning.
    pub pose_graph_objectives: Vec<Vec<f64>>,
    pub loops: Vec<LoopRecord>,
    pub poses: Vec<RigidTransform>,
    pub layout: Option<Layout>,
    pub joint: Option<JointResult>,
    pub metrics: Option<Metrics>,
}

/// Per-fragment planes in local coordinates.
pub fn extract_all_planes(dataset: &Dataset, params: &PlaneParams) -> Result<Vec<PlaneLabeling>> {
    dataset
        .fragments
        .par_iter()
        .map(|f| extract_fragment_planes(f, params))
        .collect()
}

/// Layout of the fragments under fixed `poses`.
pub fn layout_from_poses(dataset: &Dataset, poses: &[RigidTransform], config: &Config) -> Result<Layout> {
    let labelings = extract_all_planes(dataset, &config.planes)?;
    estimate_layout(&dataset.fragments, &labelings, poses, &config.layout)
}

/// World-frame union of all fragments.
pub fn merged_cloud(dataset: &Dataset, poses: &[RigidTransform]) -> Vec<OrientedPoint> {
    dataset
        .fragments
        .iter()
        .zip(poses)
        .flat_map(|(f, t)| f.points.iter().map(move |p| p.transformed(t)))
        .collect()
}

pub fn evaluate(
    dataset: &Dataset,
    odometry: &[RigidTransform],
    pose_graph: &[RigidTransform],
    poses: &[RigidTransform],
    alignment: TrajectoryAlignment,
) -> Result<Option<Metrics>> {
    let Some(gt) = &dataset.ground_truth else {
        return Ok(None);
    };
    let reconstruction = match &gt.cloud {
        Some(cloud) => {
            let a = alignment_transform(poses, &gt.poses, alignment)?;
            let aligned: Vec<RigidTransform> = poses.iter().map(|t| a.compose(t)).collect();
            let est: Vec<Point3<f64>> = merged_cloud(dataset, &aligned)
                .iter()
                .map(|p| p.position)
                .collect();
            let truth: Vec<Point3<f64>> = cloud.iter().map(|p| p.position).collect();
            Some(reconstruction_error(&est, &truth)?)
        }
        None => None,
    };
    Ok(Some(Metrics {
        measured_odometry: trajectory_error(&dataset.chained_odometry(), &gt.poses, alignment)?,
        odometry: trajectory_error(odometry, &gt.poses, alignment)?,
        pose_graph: trajectory_error(pose_graph, &gt.poses, alignment)?,
        final_trajectory: trajectory_error(poses, &gt.poses, alignment)?,
        reconstruction,
    }))
}

pub fn run_pipeline(dataset: &Dataset, config: &Config) -> Result<PipelineOutput> {
    config.validate_parameters()?;
    dataset.validate()?;
    let prepared: Vec<PreparedCloud> = dataset.fragments.par_iter().map(PreparedCloud::new).collect();

    let odometry = if config.stages.refine_odometry {
        refine_odometry(dataset, &prepared, &config.icp)
    } else {
        dataset.odometry.clone()
    };
    let mut graph = PoseGraph::from_odometry(&odometry);
    let odometry_poses = graph.nodes.clone();
    log::info!("odometry: {} fragments", odometry_poses.len());

    let candidates = if config.stages.detect_loops {
        detect_loop_closures(dataset, &odometry_poses, &prepared, &config.pose_graph, &config.icp)
    } else {
        Vec::new()
    };
    log::info!("loop closures: {} candidates", candidates.len());
    graph.add_loops(&candidates);
    let first = optimize_pose_graph_traced(&graph, &config.pose_graph)?;
    let optimized = first.graph;
    let loops: Vec<LoopRecord> = candidates
        .iter()
        .zip(&optimized.loop_edges)
        .map(|(c, e)| LoopRecord {
            i: c.i,
            j: c.j,
            overlap: c.overlap,
            line_weight: e.line_weight,
            kept: e.line_weight >= config.pose_graph.prune_threshold,
        })
        .collect();
    let pruned = prune_loops(&optimized, config.pose_graph.prune_threshold);
    let second = optimize_pose_graph_traced(&pruned, &config.pose_graph)?;
    let pose_graph_objectives = vec![first.objective_history, second.objective_history];
    let pruned = second.graph;
    let pose_graph_poses = pruned.nodes.clone();

    let constraints: Vec<PairConstraint> = pruned
        .odometry_edges
        .iter()
        .map(|e| (e.i, e.j, e.measurement))
        .chain(pruned.loop_edges.iter().map(|e| (e.i, e.j, e.measurement)))
        .map(|(i, j, relative)| PairConstraint { i, j, relative })
        .collect();

    let (poses, layout, joint) = if config.stages.joint_registration {
        let labelings = extract_all_planes(dataset, &config.planes)?;
        let joint = joint_optimize(
            &dataset.fragments,
            &labelings,
            &pose_graph_poses,
            &constraints,
            &config.registration,
            &config.layout,
        )?;
        (joint.poses.clone(), joint.layout.clone(), Some(joint))
    } else {
        let layout = layout_from_poses(dataset, &pose_graph_poses, config).ok();
        (pose_graph_poses.clone(), layout, None)
    };

    let metrics = evaluate(dataset, &odometry_poses, &pose_graph_poses, &poses, config.evaluation.alignment)?;
    Ok(PipelineOutput {
        odometry_poses,
        pose_graph_poses,
        pose_graph_objectives,
        loops,
        poses,
        layout,
        joint,
        metrics,
    })
}

pub fn format_metrics(m: &Metrics) -> String {
    let mut s = String::new();
    for (name, t) in [
        ("measured_odometry", &m.measured_odometry),
        ("odometry", &m.odometry),
        ("pose_graph", &m.pose_graph),
        ("final", &m.final_trajectory),
    ] {
        let _ = writeln!(s, "trajectory_{name}_rmse = {:.9}", t.rmse);
        let _ = writeln!(s, "trajectory_{name}_median = {:.9}", t.median);
    }
    if let Some(r) = &m.reconstruction {
        let _ = writeln!(s, "reconstruction_average = {:.9}", r.average);
        let _ = writeln!(s, "reconstruction_median = {:.9}", r.median);
    }
    s
}

pub fn format_loops(loops: &[LoopRecord]) -> String {
    let mut s = String::from("# i j overlap line_weight kept\n");
    for l in loops {
        let _ = writeln!(s, "{} {} {:.6} {:.9} {}", l.i, l.j, l.overlap, l.line_weight, l.kept as u8);
    }
    s
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

/// Writes every artifact of a run into `dir`. The trace is written only
/// when `trace` is set.
pub fn write_artifacts(dataset: &Dataset, out: &PipelineOutput, dir: impl AsRef<Path>, trace: bool) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(dir, TRAJECTORY_FILE, &format_trajectory(&out.poses))?;
    let layout_text = out
        .layout
        .as_ref()
        .map(|l| format_layout(&l.to_file_planes()))
        .unwrap_or_default();
    write_text(dir, LAYOUT_FILE, &layout_text)?;
    write_points(
        &merged_cloud(dataset, &out.poses),
        &[],
        dir.join(MERGED_CLOUD_FILE),
        PlyFormat::BinaryLittleEndian,
    )?;
    write_text(dir, LOOPS_FILE, &format_loops(&out.loops))?;
    if let Some(m) = &out.metrics {
        write_text(dir, METRICS_FILE, &format_metrics(m))?;
    }
    if trace {
        let text = match &out.joint {
            Some(j) => j.format_trace(),
            None => "# joint registration disabled\n".to_string(),
        };
        write_text(dir, TRACE_FILE, &text)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
