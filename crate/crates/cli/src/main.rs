//! `wlslam`: batch WiFi + LiDAR SLAM over recorded or simulated logs.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use wlslam_core::error::{Error, Result};
use wlslam_core::pipeline::{profile, run_slam, InputPaths, PipelineConfig};

#[derive(Parser)]
#[command(
    name = "wlslam",
    about = "Batch SLAM from wheel odometry, WiFi fingerprints, and 2D laser scans",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic logs (odometry, WiFi, scans, ground truth) from a
    /// scenario file.
    Simulate(SimulateArgs),
    /// Run the full SLAM pipeline over recorded logs.
    Slam(SlamArgs),
    /// Compare a trajectory against ground truth.
    Eval(EvalArgs),
    /// Render an occupancy grid from a trajectory and its scans.
    Map(MapArgs),
    /// Run the pipeline with stage timings and kernel microbenchmarks.
    Profile(SlamArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario description (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Noise seed; one dataset per (scenario, seed).
    #[arg(long)]
    seed: u64,
    /// Output directory for the generated logs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SlamArgs {
    #[arg(long)]
    odometry: PathBuf,
    #[arg(long)]
    wifi: PathBuf,
    #[arg(long)]
    scans: PathBuf,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Output directory for trajectory, map, metrics, and diagnostics.
    #[arg(long)]
    out: PathBuf,
    /// Pipeline parameters (TOML); either top-level tables or a [slam]
    /// section as in scenario files. Flags below override the file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Skip WiFi sequence loop closures.
    #[arg(long)]
    disable_wifi: bool,
    /// Skip close-proximity scan matching.
    #[arg(long)]
    disable_close_scans: bool,
    /// Fraction of candidate poses examined for extra scan loop closures.
    #[arg(long)]
    extra_pose_fraction: Option<f64>,
    /// Sequence window size (samples).
    #[arg(long)]
    window_w: Option<usize>,
    /// Reference fingerprints per position estimate.
    #[arg(long)]
    k_neighbors: Option<usize>,
    /// Similarity gate for loop-closure candidates.
    #[arg(long)]
    min_similarity: Option<f64>,
    /// Use the geometric-mean form of the signal-strength likelihood.
    #[arg(long)]
    geometric_similarity: Option<bool>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
    /// Write metrics JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MapArgs {
    /// Trajectory in TUM format.
    #[arg(long)]
    trajectory: PathBuf,
    /// Laser scan log (JSONL).
    #[arg(long)]
    scans: PathBuf,
    /// Output directory for map.pgm / map.yaml.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    resolution: Option<f64>,
}

impl SlamArgs {
    fn build(&self) -> Result<(PipelineConfig, InputPaths)> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::from_toml_file(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if self.disable_wifi {
            config.enable_wifi = false;
        }
        if self.disable_close_scans {
            config.enable_close_scans = false;
        }
        if let Some(f) = self.extra_pose_fraction {
            config.icp.extra_pose_fraction = f;
        }
        if let Some(w) = self.window_w {
            config.sequence.window_w = w;
        }
        if let Some(k) = self.k_neighbors {
            config.sequence.k_neighbors = k;
        }
        if let Some(s) = self.min_similarity {
            config.similarity.min_similarity = s;
        }
        if let Some(g) = self.geometric_similarity {
            config.similarity.geometric_mean = g;
        }
        let inputs = InputPaths {
            odometry: self.odometry.clone(),
            wifi: self.wifi.clone(),
            scans: self.scans.clone(),
            ground_truth: self.ground_truth.clone(),
        };
        Ok((config, inputs))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => {
            let scenario = wlslam_core::sim::Scenario::load(&args.scenario)?;
            let data = wlslam_core::sim::simulate(&scenario, args.seed)?;
            wlslam_core::sim::write_logs(&data, &args.out)?;
            eprintln!(
                "simulated {} odometry samples, {} fingerprints, {} scans into {}",
                data.odometry.len(),
                data.fingerprints.len(),
                data.scans.len(),
                args.out.display()
            );
            Ok(())
        }
        Command::Slam(args) => {
            let (config, inputs) = args.build()?;
            let outputs = run_slam(&config, &inputs, &args.out)?;
            eprintln!(
                "{} nodes; closures: {} wifi, {} proximity, {} loop; chi2 {:.3e} -> {:.3e}",
                outputs.metrics.nodes,
                outputs.metrics.wifi_closures,
                outputs.metrics.icp_proximity_constraints,
                outputs.metrics.icp_loop_constraints,
                outputs.metrics.first_optimization.initial_chi2,
                outputs.metrics.second_optimization.final_chi2,
            );
            if let Some(rmse) = &outputs.metrics.rmse {
                eprintln!(
                    "aligned position RMSE {:.3} m (odometry {:.3} m)",
                    rmse.position_aligned,
                    outputs
                        .metrics
                        .rmse_odometry
                        .as_ref()
                        .map(|r| r.position_aligned)
                        .unwrap_or(f64::NAN)
                );
            }
            eprintln!("artifacts written to {}", args.out.display());
            Ok(())
        }
        Command::Eval(args) => {
            let est = wlslam_core::io::read_tum(&args.trajectory)?;
            let truth = wlslam_core::io::read_tum(&args.ground_truth)?;
            let eval = wlslam_core::eval::evaluate(&est, &truth, 0.5)?;
            let text = serde_json::to_string_pretty(&eval.rmse)
                .map_err(|e| Error::InvalidInput(format!("json: {e}")))?;
            match &args.out {
                Some(path) => {
                    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?
                }
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::Map(args) => {
            let trajectory = wlslam_core::io::read_tum(&args.trajectory)?;
            let scans = wlslam_core::io::read_scans_jsonl(&args.scans)?;
            let mut params = wlslam_core::gridmap::GridMapParams::default();
            if let Some(r) = args.resolution {
                params.resolution = r;
            }
            // Pair each scan with the nearest trajectory pose within 0.5 s.
            let mut poses = Vec::new();
            let mut used = Vec::new();
            for scan in &scans {
                let pos = trajectory.partition_point(|(t, _)| *t < scan.timestamp);
                let mut best: Option<(usize, f64)> = None;
                for idx in pos.saturating_sub(1)..=pos.min(trajectory.len().saturating_sub(1)) {
                    if idx >= trajectory.len() {
                        break;
                    }
                    let dt = (trajectory[idx].0 - scan.timestamp).abs();
                    if dt <= 0.5 && best.map_or(true, |(_, bd)| dt < bd) {
                        best = Some((idx, dt));
                    }
                }
                if let Some((idx, _)) = best {
                    poses.push(trajectory[idx].1);
                    used.push(scan.clone());
                }
            }
            let grid = wlslam_core::gridmap::render(&poses, &used, &params)?;
            std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
            wlslam_core::gridmap::export_pgm(&grid, &args.out.join("map.pgm"))?;
            eprintln!(
                "rendered {}x{} cells from {} scans into {}",
                grid.width,
                grid.height,
                used.len(),
                args.out.display()
            );
            Ok(())
        }
        Command::Profile(args) => {
            let (config, inputs) = args.build()?;
            let report = profile(&config, &inputs, &args.out)?;
            eprintln!(
                "stages total {:.2} s; one similarity (44 APs) {:.4} ms; one ICP (~600 pts) {:.2} ms",
                report.stages.total_s,
                report.micro.similarity_44ap_ms,
                report.micro.icp_600pt_ms
            );
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
