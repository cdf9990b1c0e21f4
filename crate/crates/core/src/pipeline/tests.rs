use super::*;
use crate::dataset::{read_layout, read_trajectory, write_dataset};

fn small_room() -> SyntheticRoomSpec {
    let mut spec = SyntheticRoomSpec::box_room(3.0, 2.5, 2.4);
    spec.points_per_m2 = 150.0;
    spec.noise_sigma = 0.003;
    spec.drift_trans_sigma = 0.01;
    spec.drift_rot_sigma = 0.003;
    spec.seed = 3;
    spec
}

fn synth_config() -> Config {
    Config {
        synth: Some(small_room()),
        ..Default::default()
    }
}

#[test]
fn defaults_round_trip_through_toml() {
    let c = synth_config();
    let back = Config::from_toml(&c.to_toml()).unwrap();
    assert_eq!(back, c);
}

#[test]
fn partial_config_takes_defaults() {
    let c = Config::from_toml(
        r#"
dataset = "data"
[registration]
use_layout = false
inner_iterations = 5
"#,
    )
    .unwrap();
    assert!(!c.registration.use_layout);
    assert_eq!(c.registration.inner_iterations, 5);
    assert_eq!(c.registration.outer_iterations, 20);
    assert_eq!(c.layout, LayoutParams::default());
}

#[test]
fn bad_configs_are_config_errors() {
    for text in [
        "dataset = \"a\"\nbogus = 1\n",
        "",
        "dataset = \"a\"\n[registration]\ninner_iterations = 0\n",
        "dataset = \"a\"\n[layout]\ncell_size = -1.0\n",
        "dataset = 3\n",
    ] {
        let e = Config::from_toml(text).unwrap_err();
        assert_eq!(e.category(), crate::ErrorCategory::Config, "{text:?}: {e}");
    }
    let mut c = synth_config();
    c.dataset = Some("x".into());
    assert!(matches!(c.validate(), Err(Error::Config(_))));
}

#[test]
fn relative_dataset_resolves_against_config_dir() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "dataset = \"data\"\n").unwrap();
    let c = Config::load(&path).unwrap();
    assert_eq!(c.dataset.unwrap(), dir.path().join("data"));
}

#[test]
fn missing_dataset_is_an_io_error() {
    let c = Config {
        dataset: Some("/nonexistent/dataset".into()),
        ..Default::default()
    };
    assert_eq!(c.load_dataset(None).unwrap_err().category(), crate::ErrorCategory::Io);
}

#[test]
fn seed_override_changes_the_synthetic_input() {
    let c = synth_config();
    let a = c.load_dataset(None).unwrap();
    let b = c.load_dataset(Some(99)).unwrap();
    assert_ne!(a.odometry, b.odometry);
}

#[test]
fn run_writes_all_artifacts_deterministically() {
    let c = synth_config();
    let dataset = c.load_dataset(None).unwrap();
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    for dir in [&first, &second] {
        let out = run_pipeline(&dataset, &c).unwrap();
        write_artifacts(&dataset, &out, dir.path(), true).unwrap();
    }
    for name in [TRAJECTORY_FILE, LAYOUT_FILE, MERGED_CLOUD_FILE, METRICS_FILE, TRACE_FILE, LOOPS_FILE] {
        let a = fs::read(first.path().join(name)).unwrap();
        let b = fs::read(second.path().join(name)).unwrap();
        assert!(!a.is_empty(), "{name} is empty");
        assert_eq!(a, b, "{name} differs between runs");
    }
    let poses = read_trajectory(first.path().join(TRAJECTORY_FILE)).unwrap();
    assert_eq!(poses.len(), dataset.fragments.len());
    let layout = read_layout(first.path().join(LAYOUT_FILE)).unwrap();
    assert!(layout.base.is_some() && layout.walls.len() == 4);
    let metrics = fs::read_to_string(first.path().join(METRICS_FILE)).unwrap();
    assert!(metrics.contains("trajectory_final_rmse"));
    assert!(metrics.contains("reconstruction_average"));
}

#[test]
fn pipeline_reduces_drift() {
    let c = synth_config();
    let dataset = c.load_dataset(None).unwrap();
    let out = run_pipeline(&dataset, &c).unwrap();
    let m = out.metrics.unwrap();
    assert!(m.final_trajectory.rmse < 0.5 * m.measured_odometry.rmse, "{m:?}");
    assert!(m.final_trajectory.rmse < 0.01, "{m:?}");
    assert!(out.joint.unwrap().trace.iter().all(|r| r.inner_totals.windows(2).all(|w| w[1] <= w[0])));
}

#[test]
fn stages_can_be_disabled() {
    let mut c = synth_config();
    c.stages = Stages {
        refine_odometry: false,
        detect_loops: false,
        joint_registration: false,
    };
    let dataset = c.load_dataset(None).unwrap();
    let out = run_pipeline(&dataset, &c).unwrap();
    assert!(out.joint.is_none() && out.loops.is_empty());
    let chained = dataset.chained_odometry();
    for (a, b) in out.poses.iter().zip(&chained) {
        assert!((a.translation() - b.translation()).norm() < 1e-12);
    }
}

#[test]
fn dataset_directory_input_matches_inline_synthesis() {
    let inline = synth_config();
    let dataset = inline.load_dataset(None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&dataset, dir.path(), PlyFormat::BinaryLittleEndian).unwrap();
    let from_dir = Config {
        dataset: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let loaded = from_dir.load_dataset(None).unwrap();
    assert_eq!(loaded.odometry, dataset.odometry);
    assert_eq!(loaded.fragments.len(), dataset.fragments.len());
}

#[test]
fn metrics_report_is_keyed_lines() {
    let t = TrajectoryError { rmse: 0.5, median: 0.25 };
    let text = format_metrics(&Metrics {
        measured_odometry: t,
        odometry: t,
        pose_graph: t,
        final_trajectory: t,
        reconstruction: None,
    });
    assert_eq!(text.lines().count(), 8);
    assert!(text.lines().all(|l| l.contains(" = ")));
}
