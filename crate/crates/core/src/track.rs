//! A time-ordered sequence of (odometry pose, fingerprint) samples, the input
//! to sequence matching and pose-graph construction.

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::geom::Pose2D;

#[derive(Debug, Clone)]
pub struct TrackEntry {
    pub timestamp: f64,
    /// Odometry pose at the fingerprint time.
    pub pose: Pose2D,
    pub fingerprint: Fingerprint,
}

/// Fingerprinted odometry track with per-entry accumulated path length.
#[derive(Debug, Clone)]
pub struct FingerprintTrack {
    entries: Vec<TrackEntry>,
    cumulative: Vec<f64>,
}

impl FingerprintTrack {
    /// Build a track, deriving accumulated distance from straight-line steps
    /// between consecutive entry poses.
    pub fn from_entries(entries: Vec<TrackEntry>) -> Result<Self> {
        let mut cumulative = Vec::with_capacity(entries.len());
        let mut acc = 0.0;
        for (i, e) in entries.iter().enumerate() {
            if i > 0 {
                let prev = &entries[i - 1];
                acc += (e.pose.position() - prev.pose.position()).norm();
            }
            cumulative.push(acc);
        }
        Self::with_distances(entries, cumulative)
    }

    /// Build a track with externally computed accumulated path lengths
    /// (e.g. integrated from full-rate odometry between fingerprint times).
    pub fn with_distances(entries: Vec<TrackEntry>, cumulative: Vec<f64>) -> Result<Self> {
        if entries.len() != cumulative.len() {
            return Err(Error::InvalidInput(format!(
                "track has {} entries but {} distances",
                entries.len(),
                cumulative.len()
            )));
        }
        for pair in entries.windows(2) {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(Error::InvalidInput(format!(
                    "track timestamps not strictly increasing at t={}",
                    pair[1].timestamp
                )));
            }
        }
        if let Some(first) = cumulative.first() {
            if *first != 0.0 {
                return Err(Error::InvalidInput(
                    "accumulated distance must start at 0".into(),
                ));
            }
        }
        for pair in cumulative.windows(2) {
            if pair[1] < pair[0] {
                return Err(Error::InvalidInput(
                    "accumulated distance must be non-decreasing".into(),
                ));
            }
        }
        for e in &entries {
            if e.fingerprint.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "empty fingerprint at t={}",
                    e.timestamp
                )));
            }
        }
        Ok(FingerprintTrack {
            entries,
            cumulative,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, i: usize) -> &TrackEntry {
        &self.entries[i]
    }

    pub fn entries(&self) -> &[TrackEntry] {
        &self.entries
    }

    pub fn poses(&self) -> impl Iterator<Item = Pose2D> + '_ {
        self.entries.iter().map(|e| e.pose)
    }

    /// Accumulated odometric path length between two entries.
    pub fn accumulated_distance(&self, i: usize, j: usize) -> f64 {
        (self.cumulative[i] - self.cumulative[j]).abs()
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }
}
