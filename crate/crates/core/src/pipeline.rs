//! End-to-end batch pipeline: ingest logs, detect WiFi loop closures, run the
//! first pose-graph optimization, add ICP constraints on the optimized
//! trajectory, optimize again, render the map, and write all artifacts.

use crate::error::{Error, Result};
use crate::eval::{evaluate, Evaluation, RmseReport};
use crate::fingerprint::{similarity, Fingerprint, SimilarityParams};
use crate::geom::{normalize_angle, Point2, Pose2D, Transform2D};
use crate::graph::{build_graph, InformationConfig, OptimizeReport, OptimizerConfig};
use crate::gridmap::{export_pgm, render, GridMapParams, OccupancyGrid};
use crate::scanmatch::{
    align_scans_to_nodes, icp, loop_constraints, proximity_constraints, IcpParams, LaserScan,
    ScanMatchDiagnostics,
};
use crate::seqmatch::{
    detect_wifi_loop_closures, LoopClosure, SequenceLoopDiagnostics, SequenceMatchParams,
};
use crate::track::{FingerprintTrack, TrackEntry};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Longest tolerated gap between a fingerprint time and odometry coverage.
const MAX_STREAM_GAP_S: f64 = 5.0;
/// Scan-to-node association window.
const SCAN_ALIGN_DT_S: f64 = 0.5;
/// Trajectory-to-ground-truth association window.
const EVAL_ALIGN_DT_S: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct InputPaths {
    pub odometry: PathBuf,
    pub wifi: PathBuf,
    pub scans: PathBuf,
    pub ground_truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub similarity: SimilarityParams,
    pub sequence: SequenceMatchParams,
    pub optimizer: OptimizerConfig,
    pub icp: IcpParams,
    pub map: GridMapParams,
    pub information: InformationConfig,
    /// Stage toggles; extra loop-closure scan matching is governed by
    /// `icp.extra_pose_fraction` (0 disables the stage).
    pub enable_wifi: bool,
    pub enable_close_scans: bool,
    pub seed: u64,
    /// WiFi records within this window group into one fingerprint.
    pub burst_window: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            similarity: SimilarityParams::default(),
            sequence: SequenceMatchParams::default(),
            optimizer: OptimizerConfig::default(),
            icp: IcpParams::default(),
            map: GridMapParams::default(),
            information: InformationConfig::default(),
            enable_wifi: true,
            enable_close_scans: true,
            seed: 0,
            burst_window: 2.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.similarity.validate()?;
        self.sequence.validate()?;
        self.optimizer.validate()?;
        self.icp.validate()?;
        self.map.validate()?;
        if self.burst_window <= 0.0 {
            return Err(Error::InvalidInput("burst_window must be positive".into()));
        }
        if !self.enable_wifi && !self.enable_close_scans && self.icp.extra_pose_fraction == 0.0 {
            return Err(Error::InsufficientConstraints(
                "every constraint source is disabled (wifi, close scans, extra scans)".into(),
            ));
        }
        Ok(())
    }

    /// Load from a TOML file. The file may either hold the config tables at
    /// the top level or nest them under a `[slam]` table (as scenario files
    /// do); other tables are ignored.
    pub fn from_toml_file(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::parse(path, 1, e.to_string()))?;
        let section = match value.get("slam") {
            Some(toml::Value::Table(t)) => t.clone(),
            _ => value,
        };
        section
            .try_into()
            .map_err(|e: toml::de::Error| Error::parse(path, 1, e.to_string()))
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct StageTimings {
    pub ingest_s: f64,
    pub wifi_closures_s: f64,
    pub first_optimization_s: f64,
    pub proximity_icp_s: f64,
    pub loop_icp_s: f64,
    pub second_optimization_s: f64,
    pub render_s: f64,
    pub write_s: f64,
    /// Sum of the stage entries above.
    pub total_s: f64,
}

impl StageTimings {
    fn finish(&mut self) {
        self.total_s = self.ingest_s
            + self.wifi_closures_s
            + self.first_optimization_s
            + self.proximity_icp_s
            + self.loop_icp_s
            + self.second_optimization_s
            + self.render_s
            + self.write_s;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizationSummary {
    pub initial_chi2: f64,
    pub final_chi2: f64,
    pub accepted_steps: usize,
    pub converged: bool,
}

impl From<&OptimizeReport> for OptimizationSummary {
    fn from(r: &OptimizeReport) -> Self {
        OptimizationSummary {
            initial_chi2: r.initial_chi2(),
            final_chi2: r.final_chi2(),
            accepted_steps: r.accepted_steps,
            converged: r.converged,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    pub schema_version: u32,
    pub nodes: usize,
    pub odometry_edges: usize,
    pub wifi_closures: usize,
    pub icp_proximity_constraints: usize,
    pub icp_loop_constraints: usize,
    pub first_optimization: OptimizationSummary,
    pub second_optimization: OptimizationSummary,
    /// Evaluation of the final trajectory, when ground truth was provided.
    pub rmse: Option<RmseReport>,
    /// Evaluation of the raw odometry over the same node times.
    pub rmse_odometry: Option<RmseReport>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunDiagnostics {
    pub wifi: SequenceLoopDiagnostics,
    pub proximity: ScanMatchDiagnostics,
    pub loops: ScanMatchDiagnostics,
    pub nodes_without_scans: usize,
}

#[derive(Debug)]
pub struct SlamOutputs {
    pub trajectory: Vec<(f64, Pose2D)>,
    pub metrics: RunMetrics,
    pub diagnostics: RunDiagnostics,
    pub timings: StageTimings,
    pub grid: OccupancyGrid,
}

/// Guards exclusive use of an output directory via a lock file.
struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    fn acquire(dir: &Path) -> Result<OutputLock> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(".wlslam.lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::InvalidInput(
                format!("output directory {} is locked by another run", dir.display()),
            )),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Linear interpolation of a time-ordered pose sequence, with shortest-arc
/// blending for the heading. Times up to `MAX_STREAM_GAP_S` outside coverage
/// clamp to the nearest endpoint.
fn interpolate_pose(samples: &[(f64, Pose2D)], t: f64) -> Result<Pose2D> {
    let (first, last) = (samples[0].0, samples[samples.len() - 1].0);
    if t < first - MAX_STREAM_GAP_S || t > last + MAX_STREAM_GAP_S {
        return Err(Error::InvalidInput(format!(
            "timestamp {t:.3} is more than {MAX_STREAM_GAP_S} s outside odometry coverage [{first:.3}, {last:.3}]"
        )));
    }
    if t <= first {
        return Ok(samples[0].1);
    }
    if t >= last {
        return Ok(samples[samples.len() - 1].1);
    }
    let hi = samples.partition_point(|(ts, _)| *ts < t).max(1);
    let (t0, p0) = samples[hi - 1];
    let (t1, p1) = samples[hi];
    if t1 - t0 > MAX_STREAM_GAP_S {
        return Err(Error::InvalidInput(format!(
            "odometry gap of {:.3} s at t={t0:.3} exceeds {MAX_STREAM_GAP_S} s",
            t1 - t0
        )));
    }
    let f = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
    Ok(Pose2D::new(
        p0.x + (p1.x - p0.x) * f,
        p0.y + (p1.y - p0.y) * f,
        p0.theta + normalize_angle(p1.theta - p0.theta) * f,
    ))
}

/// Build the fingerprint track from raw logs: one node per fingerprint with
/// the odometry pose interpolated at its time, and accumulated path length
/// integrated over the full-rate odometry.
pub fn build_track(
    odometry: &[(f64, Pose2D)],
    fingerprints: &[Fingerprint],
) -> Result<FingerprintTrack> {
    if odometry.is_empty() {
        return Err(Error::InvalidInput("odometry log is empty".into()));
    }
    if fingerprints.is_empty() {
        return Err(Error::InvalidInput("wifi log produced no fingerprints".into()));
    }

    let mut cum_odo = Vec::with_capacity(odometry.len());
    let mut acc = 0.0;
    for (k, (_, p)) in odometry.iter().enumerate() {
        if k > 0 {
            acc += (p.position() - odometry[k - 1].1.position()).norm();
        }
        cum_odo.push(acc);
    }
    let cum_at = |t: f64| -> f64 {
        if t <= odometry[0].0 {
            return cum_odo[0];
        }
        if t >= odometry[odometry.len() - 1].0 {
            return cum_odo[cum_odo.len() - 1];
        }
        let hi = odometry.partition_point(|(ts, _)| *ts < t).max(1);
        let (t0, _) = odometry[hi - 1];
        let (t1, _) = odometry[hi];
        let f = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
        cum_odo[hi - 1] + (cum_odo[hi] - cum_odo[hi - 1]) * f
    };

    let mut entries = Vec::with_capacity(fingerprints.len());
    let mut distances = Vec::with_capacity(fingerprints.len());
    let base = cum_at(fingerprints[0].timestamp);
    for fp in fingerprints {
        let pose = interpolate_pose(odometry, fp.timestamp)?;
        entries.push(TrackEntry {
            timestamp: fp.timestamp,
            pose,
            fingerprint: fp.clone(),
        });
        distances.push(cum_at(fp.timestamp) - base);
    }
    FingerprintTrack::with_distances(entries, distances)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidInput(format!("json serialization: {e}")))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Execute the full pipeline and write `trajectory.tum`, `map.pgm`/`.yaml`,
/// `metrics.json`, `diagnostics.json`, `timing.json`, and (with ground truth)
/// `errors.csv` into `out_dir`. Deterministic in config plus inputs, except
/// for `timing.json`.
pub fn run_slam(
    config: &PipelineConfig,
    inputs: &InputPaths,
    out_dir: &Path,
) -> Result<SlamOutputs> {
    config.validate()?;
    let _lock = OutputLock::acquire(out_dir)?;
    let mut timings = StageTimings::default();

    // Ingest.
    let stage = Instant::now();
    let odometry = crate::io::read_odometry_csv(&inputs.odometry)?;
    let fingerprints = crate::io::read_wifi_csv(&inputs.wifi, config.burst_window)?;
    let scans = crate::io::read_scans_jsonl(&inputs.scans)?;
    let ground_truth = match &inputs.ground_truth {
        Some(p) => Some(crate::io::read_tum(p)?),
        None => None,
    };
    let track = build_track(&odometry, &fingerprints)?;
    timings.ingest_s = stage.elapsed().as_secs_f64();

    // WiFi sequence loop closures.
    let stage = Instant::now();
    let mut diagnostics = RunDiagnostics::default();
    let mut wifi_closures: Vec<LoopClosure> = Vec::new();
    if config.enable_wifi {
        let (closures, diag) =
            detect_wifi_loop_closures(&track, &config.sequence, &config.similarity)?;
        wifi_closures = closures;
        diagnostics.wifi = diag;
    }
    timings.wifi_closures_s = stage.elapsed().as_secs_f64();

    // First optimization.
    let stage = Instant::now();
    let mut first_graph = build_graph(&track, &wifi_closures, &config.information)?;
    let first_report = first_graph.optimize(&config.optimizer)?;
    let first_poses: Vec<Pose2D> = first_graph.poses();
    timings.first_optimization_s = stage.elapsed().as_secs_f64();

    // Short-range ICP refinement constraints.
    let stage = Instant::now();
    let mut proximity: Vec<LoopClosure> = Vec::new();
    if config.enable_close_scans {
        let (constraints, diag) = proximity_constraints(&track, &scans, &config.icp)?;
        proximity = constraints;
        diagnostics.proximity = diag;
    }
    timings.proximity_icp_s = stage.elapsed().as_secs_f64();

    // Extra loop closures from scan matching on the optimized trajectory.
    let stage = Instant::now();
    let mut loops: Vec<LoopClosure> = Vec::new();
    if config.icp.extra_pose_fraction > 0.0 {
        let (constraints, diag) = loop_constraints(
            &track,
            &first_poses,
            &scans,
            &config.icp,
            config.sequence.min_loop_distance,
            config.seed,
        )?;
        loops = constraints;
        diagnostics.loops = diag;
    }
    timings.loop_icp_s = stage.elapsed().as_secs_f64();

    // Second optimization over all constraints, initialized from the first
    // pass's trajectory.
    let stage = Instant::now();
    let mut all_closures = wifi_closures.clone();
    all_closures.extend(proximity.iter().cloned());
    all_closures.extend(loops.iter().cloned());
    let mut second_graph = build_graph(&track, &all_closures, &config.information)?;
    second_graph.set_poses(&first_poses)?;
    let second_report = second_graph.optimize(&config.optimizer)?;
    timings.second_optimization_s = stage.elapsed().as_secs_f64();

    let trajectory: Vec<(f64, Pose2D)> = second_graph
        .nodes()
        .iter()
        .map(|n| (n.timestamp, n.pose))
        .collect();

    // Map rendering from nodes that have a scan.
    let stage = Instant::now();
    let scan_of_node = align_scans_to_nodes(&track, &scans, SCAN_ALIGN_DT_S);
    let mut map_poses = Vec::new();
    let mut map_scans = Vec::new();
    for (node, maybe_scan) in scan_of_node.iter().enumerate() {
        match maybe_scan {
            Some(idx) => {
                map_poses.push(trajectory[node].1);
                map_scans.push(scans[*idx].clone());
            }
            None => diagnostics.nodes_without_scans += 1,
        }
    }
    if map_poses.is_empty() {
        return Err(Error::InsufficientConstraints(
            "no scan could be associated with any trajectory node".into(),
        ));
    }
    let grid = render(&map_poses, &map_scans, &config.map)?;
    timings.render_s = stage.elapsed().as_secs_f64();

    // Evaluation and artifact writing.
    let stage = Instant::now();
    let mut evaluation: Option<Evaluation> = None;
    let mut rmse_odometry = None;
    if let Some(truth) = &ground_truth {
        evaluation = Some(evaluate(&trajectory, truth, EVAL_ALIGN_DT_S)?);
        let odo_at_nodes: Vec<(f64, Pose2D)> = track
            .entries()
            .iter()
            .map(|e| (e.timestamp, e.pose))
            .collect();
        rmse_odometry = Some(evaluate(&odo_at_nodes, truth, EVAL_ALIGN_DT_S)?.rmse);
    }

    let metrics = RunMetrics {
        schema_version: 1,
        nodes: track.len(),
        odometry_edges: track.len().saturating_sub(1),
        wifi_closures: wifi_closures.len(),
        icp_proximity_constraints: proximity.len(),
        icp_loop_constraints: loops.len(),
        first_optimization: OptimizationSummary::from(&first_report),
        second_optimization: OptimizationSummary::from(&second_report),
        rmse: evaluation.as_ref().map(|e| e.rmse.clone()),
        rmse_odometry,
    };

    crate::io::write_tum(&out_dir.join("trajectory.tum"), &trajectory)?;
    export_pgm(&grid, &out_dir.join("map.pgm"))?;
    write_json(&out_dir.join("metrics.json"), &metrics)?;
    write_json(&out_dir.join("diagnostics.json"), &diagnostics)?;
    if let Some(eval) = &evaluation {
        let path = out_dir.join("errors.csv");
        let mut w = std::io::BufWriter::new(
            std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?,
        );
        let mut go = || -> std::io::Result<()> {
            writeln!(
                w,
                "# timestamp_s, position_raw_m, position_aligned_m, orientation_raw_rad, orientation_aligned_rad"
            )?;
            for p in &eval.per_pose {
                writeln!(
                    w,
                    "{:.6}, {:.6}, {:.6}, {:.6}, {:.6}",
                    p.timestamp,
                    p.position_raw,
                    p.position_aligned,
                    p.orientation_raw,
                    p.orientation_aligned
                )?;
            }
            Ok(())
        };
        go().map_err(|e| Error::io(&path, e))?;
    }
    timings.write_s = stage.elapsed().as_secs_f64();
    timings.finish();
    write_json(&out_dir.join("timing.json"), &timings)?;

    Ok(SlamOutputs {
        trajectory,
        metrics,
        diagnostics,
        timings,
        grid,
    })
}

// ---------------------------------------------------------------------------
// Profiling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct MicroBench {
    /// One similarity comparison of two 44-AP fingerprints, milliseconds.
    pub similarity_44ap_ms: f64,
    /// One ICP registration of ~600-point scans, milliseconds.
    pub icp_600pt_ms: f64,
}

fn bench_fingerprint(n_aps: usize, offset: f64) -> Fingerprint {
    let mut fp = Fingerprint::new(0.0);
    for k in 0..n_aps {
        fp.insert(
            format!("02:00:00:00:00:{k:02x}"),
            -45.0 - (k % 40) as f64 - offset,
        );
    }
    fp
}

/// Ray-cast scan of a cluttered rectangle with about `n_rays` returns.
fn bench_scan(n_rays: usize, planted: Transform2D) -> LaserScan {
    let walls = [
        (Point2::new(-6.0, -4.5), Point2::new(6.0, -4.5)),
        (Point2::new(6.0, -4.5), Point2::new(6.0, 4.5)),
        (Point2::new(6.0, 4.5), Point2::new(-6.0, 4.5)),
        (Point2::new(-6.0, 4.5), Point2::new(-6.0, -4.5)),
        (Point2::new(2.0, 1.0), Point2::new(3.0, 1.0)),
        (Point2::new(3.0, 1.0), Point2::new(3.0, 2.0)),
        (Point2::new(3.0, 2.0), Point2::new(2.0, 2.0)),
        (Point2::new(2.0, 2.0), Point2::new(2.0, 1.0)),
    ];
    let mut state = 0x5eedu64;
    let mut jitter = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let step = std::f64::consts::TAU / n_rays as f64;
    let mut points = Vec::with_capacity(n_rays);
    for k in 0..n_rays {
        let ang = -std::f64::consts::PI + step * (k as f64 + jitter());
        let (s, c) = ang.sin_cos();
        let mut best = f64::INFINITY;
        for (a, b) in &walls {
            let e = b - a;
            let den = c * (-e.y) - s * (-e.x);
            if den.abs() < 1e-12 {
                continue;
            }
            let t = (a.x * (-e.y) - a.y * (-e.x)) / den;
            let u = (c * a.y - s * a.x) / den;
            if t > 1e-9 && (0.0..=1.0).contains(&u) && t < best {
                best = t;
            }
        }
        if best.is_finite() {
            points.push(planted.apply(Point2::new(best * c, best * s)));
        }
    }
    LaserScan {
        timestamp: 0.0,
        points,
        max_range: 20.0,
        no_return_bearings: Vec::new(),
    }
}

/// Per-call wall-clock microbenchmarks of the two inner kernels.
pub fn micro_benchmarks() -> MicroBench {
    let fa = bench_fingerprint(44, 0.0);
    let fb = bench_fingerprint(44, 3.0);
    let params = SimilarityParams::default();
    // Warm up, then time a batch.
    let mut acc = 0.0;
    for _ in 0..100 {
        acc += similarity(&fa, &fb, &params).unwrap();
    }
    let reps = 2000;
    let start = Instant::now();
    for _ in 0..reps {
        acc += similarity(&fa, &fb, &params).unwrap();
    }
    let similarity_ms = start.elapsed().as_secs_f64() * 1000.0 / reps as f64;
    std::hint::black_box(acc);

    let source = bench_scan(600, Transform2D::identity());
    let target = bench_scan(600, Transform2D::new(0.2, 0.1, 0.05));
    let icp_params = IcpParams::default();
    let _ = icp(&source, &target, Transform2D::identity(), &icp_params).unwrap();
    let runs = 5;
    let start = Instant::now();
    for _ in 0..runs {
        let r = icp(&source, &target, Transform2D::identity(), &icp_params).unwrap();
        std::hint::black_box(r.fitness);
    }
    let icp_ms = start.elapsed().as_secs_f64() * 1000.0 / runs as f64;

    MicroBench {
        similarity_44ap_ms: similarity_ms,
        icp_600pt_ms: icp_ms,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileReport {
    pub stages: StageTimings,
    pub micro: MicroBench,
}

/// Run the pipeline while collecting stage timings and kernel
/// microbenchmarks; writes `profile.json` alongside the run artifacts.
pub fn profile(
    config: &PipelineConfig,
    inputs: &InputPaths,
    out_dir: &Path,
) -> Result<ProfileReport> {
    let outputs = run_slam(config, inputs, out_dir)?;
    let report = ProfileReport {
        stages: outputs.timings.clone(),
        micro: micro_benchmarks(),
    };
    write_json(&out_dir.join("profile.json"), &report)?;
    Ok(report)
}
