//! `reconstruct`: synthetic data generation, the full reconstruction
//! pipeline, evaluation and layout estimation from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical
//! failure. Failures print one `error: category=<name> <message>` line on
//! stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use reconstruct_core::dataset::layout_file::format_layout;
use reconstruct_core::dataset::{read_trajectory, synthesize_room, write_dataset, PlyFormat, SyntheticRoomSpec};
use reconstruct_core::metrics::{alignment_transform, reconstruction_error, trajectory_error, TrajectoryAlignment};
use reconstruct_core::pipeline::{
    format_metrics, layout_from_poses, merged_cloud, run_pipeline, write_artifacts, Config, LAYOUT_FILE, METRICS_FILE,
};
use reconstruct_core::{Error, Result, RigidTransform};

#[derive(Parser)]
#[command(name = "reconstruct", version, about = "Indoor reconstruction with scene-layout constrained registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Ascii,
    Binary,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic room dataset.
    Synth {
        /// Room description (TOML).
        #[arg(long, conflicts_with = "config")]
        spec: Option<PathBuf>,
        /// Pipeline config with a `[synth]` table.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "binary")]
        format: Format,
    },
    /// Run the full pipeline and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed of an inline synthetic input.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Drop the layout term from the global registration.
        #[arg(long)]
        no_layout: bool,
        /// Write per-iteration energies to trace.txt.
        #[arg(long)]
        trace: bool,
    },
    /// Compare a trajectory against the dataset's ground truth.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for metrics.txt; printed to stdout only when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the layout for fragments under a given trajectory.
    Layout {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_file(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
}

fn synth(spec: Option<PathBuf>, config: Option<PathBuf>, seed: Option<u64>, out: &Path, format: Format) -> Result<()> {
    let mut room = match (spec, config) {
        (Some(path), _) => {
            let text = fs::read_to_string(&path).map_err(|e| Error::Io { path, source: e })?;
            SyntheticRoomSpec::from_toml(&text)?
        }
        (None, Some(path)) => Config::load(path)?
            .synth
            .ok_or_else(|| Error::Config("config has no [synth] table".into()))?,
        (None, None) => return Err(Error::Config("synth needs --spec or --config".into())),
    };
    if let Some(s) = seed {
        room.seed = s;
    }
    let dataset = synthesize_room(&room)?;
    let format = match format {
        Format::Ascii => PlyFormat::Ascii,
        Format::Binary => PlyFormat::BinaryLittleEndian,
    };
    write_dataset(&dataset, out, format)?;
    println!("wrote {} fragments to {}", dataset.fragments.len(), out.display());
    Ok(())
}

fn run(config: &Path, seed: Option<u64>, out: &Path, no_layout: bool, trace: bool) -> Result<()> {
    let mut config = Config::load(config)?;
    if no_layout {
        config.registration.use_layout = false;
    }
    let dataset = config.load_dataset(seed)?;
    let result = run_pipeline(&dataset, &config)?;
    write_artifacts(&dataset, &result, out, trace)?;
    if let Some(m) = &result.metrics {
        print!("{}", format_metrics(m));
    }
    if result.joint.as_ref().is_some_and(|j| j.layout_not_found) {
        log::warn!("no layout found; the trajectory is the pose-graph solution");
    }
    println!("wrote artifacts to {}", out.display());
    Ok(())
}

fn eval(config: &Path, trajectory: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let config = Config::load(config)?;
    let dataset = config.load_dataset(seed)?;
    let poses = read_trajectory(trajectory)?;
    let gt = dataset
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::Config("dataset has no ground truth".into()))?;
    let alignment = config.evaluation.alignment;
    let t = trajectory_error(&poses, &gt.poses, alignment)?;
    let mut report = format!("trajectory_rmse = {:.9}\ntrajectory_median = {:.9}\n", t.rmse, t.median);
    if let Some(cloud) = &gt.cloud {
        let a = aligned_poses(&poses, &gt.poses, alignment)?;
        let est: Vec<_> = merged_cloud(&dataset, &a).iter().map(|p| p.position).collect();
        let truth: Vec<_> = cloud.iter().map(|p| p.position).collect();
        let r = reconstruction_error(&est, &truth)?;
        report.push_str(&format!(
            "reconstruction_average = {:.9}\nreconstruction_median = {:.9}\n",
            r.average, r.median
        ));
    }
    print!("{report}");
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(dir.join(METRICS_FILE), &report)?;
    }
    Ok(())
}

/// `poses` mapped into the ground-truth frame.
fn aligned_poses(poses: &[RigidTransform], gt: &[RigidTransform], alignment: TrajectoryAlignment) -> Result<Vec<RigidTransform>> {
    let a = alignment_transform(poses, gt, alignment)?;
    Ok(poses.iter().map(|t| a.compose(t)).collect())
}

fn layout(config: &Path, trajectory: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let config = Config::load(config)?;
    let dataset = config.load_dataset(seed)?;
    let poses = read_trajectory(trajectory)?;
    if poses.len() != dataset.fragments.len() {
        return Err(Error::LengthMismatch {
            estimated: poses.len(),
            ground_truth: dataset.fragments.len(),
        });
    }
    let layout = layout_from_poses(&dataset, &poses, &config)?;
    let text = format_layout(&layout.to_file_planes());
    create_dir(out)?;
    write_file(out.join(LAYOUT_FILE), &text)?;
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth {
            spec,
            config,
            seed,
            out,
            format,
        } => synth(spec, config, seed, &out, format),
        Command::Run {
            config,
            seed,
            out,
            no_layout,
            trace,
        } => run(&config, seed, &out, no_layout, trace),
        Command::Eval {
            config,
            trajectory,
            seed,
            out,
        } => eval(&config, &trajectory, seed, out.as_deref()),
        Command::Layout {
            config,
            trajectory,
            seed,
            out,
        } => layout(&config, &trajectory, seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!("error: category={} {e}", category.as_str());
            ExitCode::from(category.exit_code() as u8)
        }
    }
}
