//! Loop-closure detection from WiFi fingerprint sequences.
//!
//! Two windows of consecutive (pose, fingerprint) samples are matched by
//! estimating, for every sample of the first window, where it sits inside the
//! second window (similarity-weighted k-nearest neighbors), then solving the
//! rigid transform between the two point sets by SVD. A pair becomes a loop
//! closure when the mean alignment residual stays under a threshold.

use crate::error::{Error, Result};
use crate::fingerprint::{similarity, Fingerprint, SimilarityParams};
use crate::geom::{relative, rigid_align_2d, Point2, Transform2D};
use crate::track::FingerprintTrack;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceMatchParams {
    /// Sliding window size `w` in samples; the window spans `[-w/2, w/2]`.
    pub window_w: usize,
    /// Number of reference fingerprints in the weighted position estimate.
    pub k_neighbors: usize,
    /// Mean alignment residual (meters) above which a pair is rejected.
    pub residual_threshold: f64,
    /// Minimum accumulated path length (meters) between loop-closure nodes.
    pub min_loop_distance: f64,
    /// Search neighbors in `[j-w, j+w]` (clamped to the track) instead of the
    /// default `[j-w/2, j+w/2]`.
    pub wide_candidate_window: bool,
}

impl Default for SequenceMatchParams {
    fn default() -> Self {
        SequenceMatchParams {
            window_w: 80,
            k_neighbors: 2,
            residual_threshold: 3.0,
            min_loop_distance: 50.0,
            wide_candidate_window: false,
        }
    }
}

impl SequenceMatchParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_w < 2 || self.window_w % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "window_w must be even and >= 2, got {}",
                self.window_w
            )));
        }
        if self.k_neighbors < 1 {
            return Err(Error::InvalidInput("k_neighbors must be >= 1".into()));
        }
        if self.residual_threshold <= 0.0 || self.min_loop_distance <= 0.0 {
            return Err(Error::InvalidInput(
                "residual_threshold and min_loop_distance must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn half_window(&self) -> usize {
        self.window_w / 2
    }

    /// Stride used to prune near-duplicate accepted pairs.
    pub fn prune_stride(&self) -> usize {
        (self.window_w / 4).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClosureSource {
    WifiSequence,
    IcpProximity,
    IcpLoop,
}

/// A relative-pose constraint between two non-consecutive track nodes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LoopClosure {
    /// Later node of the pair.
    pub node_i: usize,
    /// Earlier node of the pair.
    pub node_j: usize,
    /// Pose of `node_i` expressed in `node_j`'s frame: it maps coordinates
    /// local to `node_i` into `node_j`'s frame.
    pub transform: Transform2D,
    /// Mean alignment distance in meters (RMS correspondence distance for
    /// scan-match closures).
    pub residual: f64,
    pub source: ClosureSource,
}

/// Weighted-mean position estimate of a query fingerprint inside a window.
#[derive(Debug, Clone, Copy)]
pub struct PositionEstimate {
    /// Estimated position in the window-center node's frame.
    pub position: Point2,
    /// Similarity of the best-matching reference fingerprint.
    pub weight: f64,
}

/// Estimate where `query` lies within the window around node `j`, in `j`'s
/// frame, as the similarity-weighted mean of the k best-matching entries.
pub fn estimate_position_in_sequence(
    track: &FingerprintTrack,
    query: &Fingerprint,
    j: usize,
    params: &SequenceMatchParams,
    sim_params: &SimilarityParams,
) -> Result<PositionEstimate> {
    let half = params.half_window();
    if j < half || j + half >= track.len() {
        return Err(Error::InvalidInput(format!(
            "window [{j}-{half}, {j}+{half}] out of track range (len {})",
            track.len()
        )));
    }
    let (lo, hi) = if params.wide_candidate_window {
        let w = params.window_w;
        (j.saturating_sub(w), (j + w).min(track.len() - 1))
    } else {
        (j - half, j + half)
    };

    // Rank candidates by similarity; ties prefer entries nearer the window
    // center, then the lower index, so results are deterministic.
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(hi - lo + 1);
    for m in lo..=hi {
        let s = similarity(query, &track.entry(m).fingerprint, sim_params)?;
        scored.push((s, m));
    }
    scored.sort_by(|(sa, ma), (sb, mb)| {
        sb.partial_cmp(sa)
            .unwrap()
            .then_with(|| ma.abs_diff(j).cmp(&mb.abs_diff(j)))
            .then_with(|| ma.cmp(mb))
    });

    let k = params.k_neighbors.min(scored.len());
    let center = track.entry(j).pose;
    let mut weight_sum = 0.0;
    let mut position = Point2::zeros();
    for &(s, m) in scored.iter().take(k) {
        let rel = relative(center, track.entry(m).pose);
        position += s * rel.translation();
        weight_sum += s;
    }
    if weight_sum <= 0.0 {
        return Err(Error::NoEstimate);
    }
    Ok(PositionEstimate {
        position: position / weight_sum,
        weight: scored[0].0,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct SequenceAlignment {
    /// Rigid transform mapping window-`i` local positions into window-`j`'s
    /// frame, i.e. the estimated pose of node `i` relative to node `j`.
    pub transform: Transform2D,
    /// Mean Euclidean correspondence distance under the transform.
    pub residual: f64,
    /// Number of correspondences that produced a position estimate.
    pub correspondences: usize,
}

/// Align the fingerprint sequences around nodes `i` and `j` by SVD over the
/// correspondence pairs built with [`estimate_position_in_sequence`].
pub fn align_sequences(
    track: &FingerprintTrack,
    i: usize,
    j: usize,
    params: &SequenceMatchParams,
    sim_params: &SimilarityParams,
) -> Result<SequenceAlignment> {
    let half = params.half_window();
    for &center in &[i, j] {
        if center < half || center + half >= track.len() {
            return Err(Error::InvalidInput(format!(
                "window around {center} out of track range (len {})",
                track.len()
            )));
        }
    }

    let center_i = track.entry(i).pose;
    let mut src = Vec::with_capacity(params.window_w + 1);
    let mut dst = Vec::with_capacity(params.window_w + 1);
    for idx in (i - half)..=(i + half) {
        let query = &track.entry(idx).fingerprint;
        match estimate_position_in_sequence(track, query, j, params, sim_params) {
            Ok(est) => {
                src.push(relative(center_i, track.entry(idx).pose).translation());
                dst.push(est.position);
            }
            Err(Error::NoEstimate) => continue,
            Err(e) => return Err(e),
        }
    }

    if src.len() < 3 {
        return Err(Error::InsufficientCorrespondences {
            got: src.len(),
            need: 3,
        });
    }

    let transform = rigid_align_2d(&src, &dst);
    let residual = src
        .iter()
        .zip(&dst)
        .map(|(a, b)| (transform.apply(*a) - b).norm())
        .sum::<f64>()
        / src.len() as f64;

    Ok(SequenceAlignment {
        transform,
        residual,
        correspondences: src.len(),
    })
}

/// Counters and residual histogram emitted alongside detected closures.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SequenceLoopDiagnostics {
    pub pairs_considered: u64,
    pub pairs_past_distance_gate: u64,
    pub pairs_past_similarity_gate: u64,
    pub pairs_pruned: u64,
    pub alignments_attempted: u64,
    pub alignments_failed: u64,
    pub closures_accepted: u64,
    /// Alignment residuals binned at 0.25 m; the last bin is overflow.
    pub residual_histogram: Vec<u64>,
}

const RESIDUAL_BIN_WIDTH: f64 = 0.25;
const RESIDUAL_BINS: usize = 25;

impl SequenceLoopDiagnostics {
    fn record_residual(&mut self, residual: f64) {
        if self.residual_histogram.is_empty() {
            self.residual_histogram = vec![0; RESIDUAL_BINS];
        }
        let bin = ((residual / RESIDUAL_BIN_WIDTH) as usize).min(RESIDUAL_BINS - 1);
        self.residual_histogram[bin] += 1;
    }
}

/// Scan all ordered node pairs for WiFi loop closures.
///
/// A pair `(i, j)` with `j < i` is aligned when the accumulated path length
/// between the nodes is at least `min_loop_distance` and the center
/// fingerprints' similarity passes `min_similarity`. Accepted closures
/// suppress further pairs within a quarter window in both indices, keeping
/// the constraint set sparse along a revisited stretch. Output is sorted by
/// `(node_i, node_j)` and deterministic for fixed inputs.
pub fn detect_wifi_loop_closures(
    track: &FingerprintTrack,
    params: &SequenceMatchParams,
    sim_params: &SimilarityParams,
) -> Result<(Vec<LoopClosure>, SequenceLoopDiagnostics)> {
    params.validate()?;
    sim_params.validate()?;
    if track.len() <= params.window_w {
        return Err(Error::InvalidInput(format!(
            "track length {} not larger than window {}",
            track.len(),
            params.window_w
        )));
    }

    let half = params.half_window();
    let stride = params.prune_stride();
    let mut diag = SequenceLoopDiagnostics::default();
    let mut closures: Vec<LoopClosure> = Vec::new();

    for i in half..(track.len() - half) {
        for j in half..i {
            if j + half >= track.len() {
                break;
            }
            diag.pairs_considered += 1;
            if track.accumulated_distance(i, j) < params.min_loop_distance {
                continue;
            }
            diag.pairs_past_distance_gate += 1;

            let pruned = closures
                .iter()
                .rev()
                .take_while(|c| i - c.node_i < stride)
                .any(|c| c.node_j.abs_diff(j) < stride);
            if pruned {
                diag.pairs_pruned += 1;
                continue;
            }

            let sim = similarity(
                &track.entry(i).fingerprint,
                &track.entry(j).fingerprint,
                sim_params,
            )?;
            if sim < sim_params.min_similarity {
                continue;
            }
            diag.pairs_past_similarity_gate += 1;

            diag.alignments_attempted += 1;
            let alignment = match align_sequences(track, i, j, params, sim_params) {
                Ok(a) => a,
                Err(Error::InsufficientCorrespondences { .. }) | Err(Error::NoEstimate) => {
                    diag.alignments_failed += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            diag.record_residual(alignment.residual);
            if alignment.residual < params.residual_threshold {
                diag.closures_accepted += 1;
                closures.push(LoopClosure {
                    node_i: i,
                    node_j: j,
                    transform: alignment.transform,
                    residual: alignment.residual,
                    source: ClosureSource::WifiSequence,
                });
            }
        }
    }

    // The scan order already yields (node_i, node_j) ascending; keep the sort
    // as the documented contract.
    closures.sort_by_key(|c| (c.node_i, c.node_j));
    Ok((closures, diag))
}
