//! ICP registration of 2D laser scans: short-range constraints that refine
//! odometry between nearby nodes, and long-range loop closures between
//! non-consecutive poses brought close by the first optimization pass.

use crate::error::{Error, Result};
use crate::geom::{relative, rigid_align_2d, Point2, Pose2D, Transform2D};
use crate::kdtree::KdTree;
use crate::seqmatch::{ClosureSource, LoopClosure};
use crate::track::FingerprintTrack;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct LaserScan {
    pub timestamp: f64,
    /// Finite returns as sensor-frame points.
    pub points: Vec<Point2>,
    pub max_range: f64,
    /// Bearings of rays that saw no return within `max_range`; used by the
    /// grid mapper to clear free space along the full ray.
    pub no_return_bearings: Vec<f64>,
}

impl LaserScan {
    /// Convert a raw range array into points. Non-finite ranges and ranges at
    /// or beyond `max_range` count as no-return rays.
    pub fn from_ranges(
        timestamp: f64,
        angle_min: f64,
        angle_increment: f64,
        max_range: f64,
        ranges: &[f64],
    ) -> Self {
        let mut points = Vec::with_capacity(ranges.len());
        let mut no_return_bearings = Vec::new();
        for (k, &r) in ranges.iter().enumerate() {
            let bearing = angle_min + angle_increment * k as f64;
            if r.is_finite() && r < max_range {
                let (s, c) = bearing.sin_cos();
                points.push(Point2::new(r * c, r * s));
            } else {
                no_return_bearings.push(bearing);
            }
        }
        LaserScan {
            timestamp,
            points,
            max_range,
            no_return_bearings,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Nearest-neighbor pairs farther apart than this are not correspondences.
    pub correspondence_radius: f64,
    /// Stop once the per-iteration transform update is smaller than this.
    pub convergence_epsilon: f64,
    /// Accumulated travel below which close-proximity scan pairs are matched.
    pub proximity_trigger: f64,
    /// Displacement (after the first optimization) below which non-consecutive
    /// pose pairs become loop-closure candidates.
    pub loop_radius: f64,
    /// Fraction of candidate source nodes evaluated for extra loop closures.
    pub extra_pose_fraction: f64,
    /// Voxel edge length for downsampling scans before registration.
    pub voxel_size: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        IcpParams {
            max_iterations: 50,
            correspondence_radius: 1.0,
            convergence_epsilon: 1e-4,
            proximity_trigger: 1.0,
            loop_radius: 5.0,
            extra_pose_fraction: 0.10,
            voxel_size: 0.05,
        }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0
            || self.correspondence_radius <= 0.0
            || self.convergence_epsilon <= 0.0
            || self.proximity_trigger <= 0.0
            || self.loop_radius <= 0.0
            || self.voxel_size < 0.0
        {
            return Err(Error::InvalidInput("icp parameters must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.extra_pose_fraction) {
            return Err(Error::InvalidInput(format!(
                "extra_pose_fraction must be in [0, 1], got {}",
                self.extra_pose_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IcpResult {
    /// Maps source-frame points into the target frame.
    pub transform: Transform2D,
    /// Mean squared correspondence distance at the final pose.
    pub fitness: f64,
    /// Correspondences within `correspondence_radius` at the final pose.
    pub matched_points: usize,
    pub converged: bool,
    /// Mean squared correspondence distance per iteration.
    pub fitness_history: Vec<f64>,
}

/// Replace the points in each voxel by their centroid, emitted in first-seen
/// voxel order. Centroids keep the downsampled sets of two overlapping scans
/// consistent to well below the voxel size, where picking a representative
/// point would quantize them apart. With `voxel <= 0` the input is returned
/// unchanged.
pub fn voxel_downsample(points: &[Point2], voxel: f64) -> Vec<Point2> {
    if voxel <= 0.0 {
        return points.to_vec();
    }
    let mut order: Vec<(i64, i64)> = Vec::new();
    let mut bins: std::collections::BTreeMap<(i64, i64), (Point2, f64)> =
        std::collections::BTreeMap::new();
    for p in points {
        let key = ((p.x / voxel).floor() as i64, (p.y / voxel).floor() as i64);
        match bins.get_mut(&key) {
            Some((sum, count)) => {
                *sum += p;
                *count += 1.0;
            }
            None => {
                bins.insert(key, (*p, 1.0));
                order.push(key);
            }
        }
    }
    order
        .into_iter()
        .map(|key| {
            let (sum, count) = bins[&key];
            sum / count
        })
        .collect()
}

fn correspondences(
    source: &[Point2],
    tree: &KdTree,
    target: &[Point2],
    transform: Transform2D,
    radius: f64,
) -> (Vec<Point2>, Vec<Point2>, f64) {
    let mut moved = Vec::with_capacity(source.len());
    let mut matched = Vec::with_capacity(source.len());
    let mut sq_sum = 0.0;
    for p in source {
        let q = transform.apply(*p);
        if let Some((idx, d_sq)) = tree.nearest_within(q, radius) {
            moved.push(q);
            matched.push(target[idx]);
            sq_sum += d_sq;
        }
    }
    (moved, matched, sq_sum)
}

/// Point-to-point ICP between two scans.
///
/// Correspondences are nearest neighbors within `correspondence_radius`; the
/// per-iteration rigid update comes from centroid subtraction and a 2x2 SVD.
/// Terminates when the update norm (translation plus rotation angle) drops
/// below `convergence_epsilon` or after `max_iterations`.
pub fn icp(
    source: &LaserScan,
    target: &LaserScan,
    initial_guess: Transform2D,
    params: &IcpParams,
) -> Result<IcpResult> {
    params.validate()?;
    if source.points.len() < 10 || target.points.len() < 10 {
        return Err(Error::InvalidInput(format!(
            "scans too small for icp: {} and {} points",
            source.points.len(),
            target.points.len()
        )));
    }

    let tree = KdTree::build(&target.points);
    let mut transform = initial_guess;
    let mut fitness_history = Vec::new();
    let mut converged = false;

    for _ in 0..params.max_iterations {
        let (moved, matched, sq_sum) = correspondences(
            &source.points,
            &tree,
            &target.points,
            transform,
            params.correspondence_radius,
        );
        if moved.len() < 3 {
            return Err(Error::NoMatch(format!(
                "{} correspondences within {} m",
                moved.len(),
                params.correspondence_radius
            )));
        }
        fitness_history.push(sq_sum / moved.len() as f64);

        let delta = rigid_align_2d(&moved, &matched);
        transform = delta.compose(transform);
        let update_norm =
            (delta.dx * delta.dx + delta.dy * delta.dy + delta.dtheta * delta.dtheta).sqrt();
        if update_norm < params.convergence_epsilon {
            converged = true;
            break;
        }
    }

    let (moved, _, sq_sum) = correspondences(
        &source.points,
        &tree,
        &target.points,
        transform,
        params.correspondence_radius,
    );
    if moved.len() < 3 {
        return Err(Error::NoMatch("correspondences lost at final pose".into()));
    }
    let fitness = sq_sum / moved.len() as f64;
    fitness_history.push(fitness);

    Ok(IcpResult {
        transform,
        fitness,
        matched_points: moved.len(),
        converged,
        fitness_history,
    })
}

/// Match acceptance rule: the number of matched points must reach half of the
/// average point count of the two scans, i.e. `(|source| + |target|) / 4`.
pub fn accept_match(result: &IcpResult, source: &LaserScan, target: &LaserScan) -> bool {
    let threshold = (source.points.len() + target.points.len()) as f64 / 4.0;
    result.matched_points as f64 >= threshold
}

/// For each track node, the index of the scan whose timestamp is nearest
/// within `max_dt` seconds.
pub fn align_scans_to_nodes(
    track: &FingerprintTrack,
    scans: &[LaserScan],
    max_dt: f64,
) -> Vec<Option<usize>> {
    track
        .entries()
        .iter()
        .map(|e| {
            // Scans are time-ordered; binary-search the neighborhood.
            let pos = scans.partition_point(|s| s.timestamp < e.timestamp);
            let mut best: Option<(usize, f64)> = None;
            for idx in pos.saturating_sub(1)..=pos.min(scans.len().saturating_sub(1)) {
                if idx >= scans.len() {
                    break;
                }
                let dt = (scans[idx].timestamp - e.timestamp).abs();
                if dt <= max_dt && best.map_or(true, |(_, bd)| dt < bd) {
                    best = Some((idx, dt));
                }
            }
            best.map(|(idx, _)| idx)
        })
        .collect()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScanMatchDiagnostics {
    pub nodes_with_scans: usize,
    pub pairs_evaluated: u64,
    pub icp_failures: u64,
    pub rejected_by_match_gate: u64,
    pub constraints_accepted: u64,
    /// Loop stage only: candidate source nodes and how many were sampled.
    pub candidate_sources: usize,
    pub sources_evaluated: usize,
}

/// Registration with a final pass at a tightened correspondence radius.
/// The wide radius is needed to absorb guess error, but it also admits
/// mismatches along the partial-overlap boundary of range-limited scans,
/// which bias the estimate by centimeters; re-running from the converged
/// transform with a third of the radius sheds them.
fn icp_refined(
    source: &LaserScan,
    target: &LaserScan,
    initial_guess: Transform2D,
    params: &IcpParams,
) -> Result<IcpResult> {
    let first = icp(source, target, initial_guess, params)?;
    let fine = IcpParams {
        correspondence_radius: (0.3 * params.correspondence_radius)
            .max(2.0 * params.voxel_size)
            .max(1e-3),
        ..*params
    };
    icp(source, target, first.transform, &fine)
}

fn downsampled_scans(
    track: &FingerprintTrack,
    scans: &[LaserScan],
    params: &IcpParams,
) -> (Vec<Option<LaserScan>>, usize) {
    let scan_of_node = align_scans_to_nodes(track, scans, 0.5);
    let mut nodes_with_scans = 0;
    let per_node: Vec<Option<LaserScan>> = scan_of_node
        .iter()
        .map(|maybe| {
            maybe.map(|idx| {
                nodes_with_scans += 1;
                let s = &scans[idx];
                LaserScan {
                    timestamp: s.timestamp,
                    points: voxel_downsample(&s.points, params.voxel_size),
                    max_range: s.max_range,
                    no_return_bearings: s.no_return_bearings.clone(),
                }
            })
        })
        .collect();
    (per_node, nodes_with_scans)
}

/// Scan-match every node pair whose accumulated travel stays within
/// `proximity_trigger`, seeding ICP with the odometry relative pose. Accepted
/// matches become short-range constraints that tighten raw odometry.
pub fn proximity_constraints(
    track: &FingerprintTrack,
    scans: &[LaserScan],
    params: &IcpParams,
) -> Result<(Vec<LoopClosure>, ScanMatchDiagnostics)> {
    params.validate()?;
    let (per_node, nodes_with_scans) = downsampled_scans(track, scans, params);
    let mut diag = ScanMatchDiagnostics {
        nodes_with_scans,
        ..Default::default()
    };

    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..track.len() {
        if per_node[i].is_none() {
            continue;
        }
        for j in (i + 1)..track.len() {
            if track.accumulated_distance(i, j) > params.proximity_trigger {
                break;
            }
            if per_node[j].is_some() {
                pairs.push((i, j));
            }
        }
    }

    let results: Vec<std::result::Result<LoopClosure, bool>> = pairs
        .par_iter()
        .map(|&(earlier, later)| {
            let target = per_node[earlier].as_ref().unwrap();
            let source = per_node[later].as_ref().unwrap();
            let guess = relative(track.entry(earlier).pose, track.entry(later).pose);
            match icp_refined(source, target, guess, params) {
                Ok(result) if accept_match(&result, source, target) => Ok(LoopClosure {
                    node_i: later,
                    node_j: earlier,
                    transform: result.transform,
                    residual: result.fitness.sqrt(),
                    source: ClosureSource::IcpProximity,
                }),
                Ok(_) => Err(true),
                Err(_) => Err(false),
            }
        })
        .collect();

    let mut constraints = Vec::new();
    for r in results {
        diag.pairs_evaluated += 1;
        match r {
            Ok(c) => {
                diag.constraints_accepted += 1;
                constraints.push(c);
            }
            Err(true) => diag.rejected_by_match_gate += 1,
            Err(false) => diag.icp_failures += 1,
        }
    }
    constraints.sort_by_key(|c| (c.node_i, c.node_j));
    Ok((constraints, diag))
}

/// Scan-match non-consecutive node pairs whose first-pass optimized poses sit
/// within `loop_radius` of each other while the travel between them exceeds
/// `min_loop_distance`. A seeded uniform subset of `extra_pose_fraction` of
/// the candidate source nodes is evaluated; per source node the closest
/// partners are tried until one match is accepted.
pub fn loop_constraints(
    track: &FingerprintTrack,
    optimized: &[Pose2D],
    scans: &[LaserScan],
    params: &IcpParams,
    min_loop_distance: f64,
    seed: u64,
) -> Result<(Vec<LoopClosure>, ScanMatchDiagnostics)> {
    params.validate()?;
    if optimized.len() != track.len() {
        return Err(Error::InvalidInput(format!(
            "{} optimized poses for {} track nodes",
            optimized.len(),
            track.len()
        )));
    }
    let (per_node, nodes_with_scans) = downsampled_scans(track, scans, params);
    let mut diag = ScanMatchDiagnostics {
        nodes_with_scans,
        ..Default::default()
    };

    // Candidate partners per source node, nearest displacement first.
    let mut candidates: Vec<(usize, Vec<(f64, usize)>)> = Vec::new();
    for i in 0..track.len() {
        if per_node[i].is_none() {
            continue;
        }
        let mut partners = Vec::new();
        for j in 0..i {
            if per_node[j].is_none() || track.accumulated_distance(i, j) < min_loop_distance {
                continue;
            }
            let disp = (optimized[i].position() - optimized[j].position()).norm();
            if disp <= params.loop_radius {
                partners.push((disp, j));
            }
        }
        if !partners.is_empty() {
            partners.sort_by(|a, b| a.partial_cmp(b).unwrap());
            candidates.push((i, partners));
        }
    }
    diag.candidate_sources = candidates.len();

    let n_eval = (params.extra_pose_fraction * candidates.len() as f64).ceil() as usize;
    let n_eval = n_eval.min(candidates.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected = rand::seq::index::sample(&mut rng, candidates.len(), n_eval).into_vec();
    selected.sort_unstable();
    diag.sources_evaluated = selected.len();

    let outcomes: Vec<(Option<LoopClosure>, u64, u64, u64)> = selected
        .par_iter()
        .map(|&slot| {
            let (i, partners) = &candidates[slot];
            let source = per_node[*i].as_ref().unwrap();
            let mut evaluated = 0u64;
            let mut failures = 0u64;
            let mut gate_rejects = 0u64;
            // The initial guess comes from the first-pass trajectory, whose
            // error can exceed the correspondence radius; a coarse pass with
            // the radius widened to the candidate search radius pulls the
            // registration into the fine pass's basin.
            let coarse_params = IcpParams {
                correspondence_radius: params.loop_radius.max(params.correspondence_radius),
                ..*params
            };
            for &(_, j) in partners {
                evaluated += 1;
                let target = per_node[j].as_ref().unwrap();
                let mut guess = relative(optimized[j], optimized[*i]);
                if let Ok(coarse) = icp(source, target, guess, &coarse_params) {
                    guess = coarse.transform;
                }
                match icp_refined(source, target, guess, params) {
                    Ok(result) if accept_match(&result, source, target) => {
                        return (
                            Some(LoopClosure {
                                node_i: *i,
                                node_j: j,
                                transform: result.transform,
                                residual: result.fitness.sqrt(),
                                source: ClosureSource::IcpLoop,
                            }),
                            evaluated,
                            failures,
                            gate_rejects,
                        );
                    }
                    Ok(_) => gate_rejects += 1,
                    Err(_) => failures += 1,
                }
            }
            (None, evaluated, failures, gate_rejects)
        })
        .collect();

    let mut constraints = Vec::new();
    for (closure, evaluated, failures, gate_rejects) in outcomes {
        diag.pairs_evaluated += evaluated;
        diag.icp_failures += failures;
        diag.rejected_by_match_gate += gate_rejects;
        if let Some(c) = closure {
            diag.constraints_accepted += 1;
            constraints.push(c);
        }
    }
    constraints.sort_by_key(|c| (c.node_i, c.node_j));
    Ok((constraints, diag))
}
