//! Trajectory evaluation against ground truth: nearest-timestamp association,
//! rigid alignment without scale, and position/orientation RMSE.

use crate::error::{Error, Result};
use crate::geom::{normalize_angle, rigid_align_2d, Point2, Pose2D, Transform2D};
use serde::{Deserialize, Serialize};

/// Nearest-timestamp association within `max_dt` seconds. Both inputs must be
/// time-ordered.
pub fn associate(
    estimate: &[(f64, Pose2D)],
    truth: &[(f64, Pose2D)],
    max_dt: f64,
) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(estimate.len());
    for (ei, (t, _)) in estimate.iter().enumerate() {
        let pos = truth.partition_point(|(tt, _)| tt < t);
        let mut best: Option<(usize, f64)> = None;
        for ti in pos.saturating_sub(1)..=pos.min(truth.len().saturating_sub(1)) {
            if ti >= truth.len() {
                break;
            }
            let dt = (truth[ti].0 - t).abs();
            if dt <= max_dt && best.map_or(true, |(_, bd)| dt < bd) {
                best = Some((ti, dt));
            }
        }
        if let Some((ti, _)) = best {
            pairs.push((ei, ti));
        }
    }
    pairs
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AlignmentSummary {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmseReport {
    /// Position RMSE of the raw (unaligned) trajectory, meters.
    pub position_raw: f64,
    /// Position RMSE after rigid alignment to ground truth, meters.
    pub position_aligned: f64,
    /// Orientation RMSE (wrapped differences), radians.
    pub orientation_raw: f64,
    pub orientation_aligned: f64,
    /// Rigid transform applied to the estimate for the aligned numbers.
    pub alignment: AlignmentSummary,
    pub pose_pairs: usize,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PoseError {
    pub timestamp: f64,
    pub position_raw: f64,
    pub position_aligned: f64,
    pub orientation_raw: f64,
    pub orientation_aligned: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub rmse: RmseReport,
    pub per_pose: Vec<PoseError>,
}

fn rmse(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v * v;
        n += 1;
    }
    (sum / n.max(1) as f64).sqrt()
}

/// Compare an estimated trajectory with ground truth. The estimate is rigidly
/// aligned (2D, no scale) onto the truth for the aligned columns; raw
/// unaligned errors are reported alongside.
pub fn evaluate(
    estimate: &[(f64, Pose2D)],
    truth: &[(f64, Pose2D)],
    max_dt: f64,
) -> Result<Evaluation> {
    let pairs = associate(estimate, truth, max_dt);
    if pairs.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "only {} associated pose pairs within {max_dt} s",
            pairs.len()
        )));
    }

    let est_pts: Vec<Point2> = pairs
        .iter()
        .map(|&(e, _)| estimate[e].1.position())
        .collect();
    let truth_pts: Vec<Point2> = pairs.iter().map(|&(_, t)| truth[t].1.position()).collect();
    let alignment: Transform2D = rigid_align_2d(&est_pts, &truth_pts);

    let mut per_pose = Vec::with_capacity(pairs.len());
    for (&(e, t), est_p) in pairs.iter().zip(&est_pts) {
        let (ts, est_pose) = estimate[e];
        let truth_pose = truth[t].1;
        let aligned_p = alignment.apply(*est_p);
        per_pose.push(PoseError {
            timestamp: ts,
            position_raw: (est_p - truth_pose.position()).norm(),
            position_aligned: (aligned_p - truth_pose.position()).norm(),
            orientation_raw: normalize_angle(est_pose.theta - truth_pose.theta).abs(),
            orientation_aligned: normalize_angle(
                est_pose.theta + alignment.dtheta - truth_pose.theta,
            )
            .abs(),
        });
    }

    let rmse = RmseReport {
        position_raw: rmse(per_pose.iter().map(|p| p.position_raw)),
        position_aligned: rmse(per_pose.iter().map(|p| p.position_aligned)),
        orientation_raw: rmse(per_pose.iter().map(|p| p.orientation_raw)),
        orientation_aligned: rmse(per_pose.iter().map(|p| p.orientation_aligned)),
        alignment: AlignmentSummary {
            dx: alignment.dx,
            dy: alignment.dy,
            dtheta: alignment.dtheta,
        },
        pose_pairs: per_pose.len(),
    };
    Ok(Evaluation { rmse, per_pose })
}
