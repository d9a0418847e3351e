//! WiFi fingerprints and the pairwise similarity score used for loop-closure
//! gating and sequence matching.
//!
//! A fingerprint is one scan burst: the set of access points heard at one
//! place, each with a received signal strength in dBm.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Opaque access-point identifier (MAC-like string).
pub type ApId = String;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub timestamp: f64,
    /// RSS in dBm per access point. Keys are unique by construction.
    pub readings: BTreeMap<ApId, f64>,
}

impl Fingerprint {
    pub fn new(timestamp: f64) -> Self {
        Fingerprint {
            timestamp,
            readings: BTreeMap::new(),
        }
    }

    /// Insert a reading. A later reading for the same AP replaces the earlier
    /// one (latest-wins deduplication within a scan burst).
    pub fn insert(&mut self, ap: ApId, rss: f64) {
        self.readings.insert(ap, rss);
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityParams {
    /// Received signal variance in dBm^2.
    pub sigma_squared: f64,
    /// Gate for accepting a candidate pair, compared with `>=`.
    pub min_similarity: f64,
    /// Replace the printed product-with-1/H signal term by its geometric
    /// mean. The literal form caps multi-AP scores at 1/H, which makes the
    /// 0.3 gate unreachable once more than three APs are shared; the
    /// geometric mean keeps the score scale-free in the AP count.
    pub geometric_mean: bool,
}

impl Default for SimilarityParams {
    fn default() -> Self {
        SimilarityParams {
            sigma_squared: 36.0,
            min_similarity: 0.3,
            geometric_mean: false,
        }
    }
}

impl SimilarityParams {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_squared <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "sigma_squared must be positive, got {}",
                self.sigma_squared
            )));
        }
        if !(0.0..=1.0).contains(&self.min_similarity) {
            return Err(Error::InvalidInput(format!(
                "min_similarity must be in [0, 1], got {}",
                self.min_similarity
            )));
        }
        Ok(())
    }
}

/// Pairwise fingerprint similarity in `[0, 1]`.
///
/// The score is the product of a detection likelihood `H / (L_i + L_j - H)`
/// (Jaccard overlap of the AP sets) and a signal-strength likelihood built
/// from per-AP Gaussian kernels over the RSS differences of the `H` common
/// APs. Pairs with no common AP score exactly 0. Symmetric in its arguments.
pub fn similarity(fi: &Fingerprint, fj: &Fingerprint, params: &SimilarityParams) -> Result<f64> {
    if fi.is_empty() || fj.is_empty() {
        return Err(Error::InvalidInput(
            "similarity of an empty fingerprint".into(),
        ));
    }

    let mut common = 0usize;
    let mut sum_sq_diff = 0.0f64;
    // Sorted-merge intersection over the two BTreeMaps.
    let mut it_i = fi.readings.iter();
    let mut it_j = fj.readings.iter();
    let mut a = it_i.next();
    let mut b = it_j.next();
    while let (Some((ka, va)), Some((kb, vb))) = (a, b) {
        match ka.cmp(kb) {
            std::cmp::Ordering::Less => a = it_i.next(),
            std::cmp::Ordering::Greater => b = it_j.next(),
            std::cmp::Ordering::Equal => {
                common += 1;
                let d = va - vb;
                sum_sq_diff += d * d;
                a = it_i.next();
                b = it_j.next();
            }
        }
    }

    if common == 0 {
        return Ok(0.0);
    }

    let h = common as f64;
    let li = fi.len() as f64;
    let lj = fj.len() as f64;
    let detection = h / (li + lj - h);
    let exponent = sum_sq_diff / (2.0 * params.sigma_squared);
    let signal = if params.geometric_mean {
        (-exponent / h).exp()
    } else {
        (-exponent).exp() / h
    };
    Ok(detection * signal)
}

/// Group time-ordered raw scan records into per-burst fingerprints.
///
/// A burst collects every record within `burst_window` seconds of its first
/// record; the fingerprint timestamp is that first record's. Within a burst
/// the latest reading per AP wins.
pub fn group_bursts(records: &[(f64, ApId, f64)], burst_window: f64) -> Vec<Fingerprint> {
    let mut out: Vec<Fingerprint> = Vec::new();
    for (t, ap, rss) in records {
        match out.last_mut() {
            Some(fp) if *t - fp.timestamp < burst_window => {
                fp.insert(ap.clone(), *rss);
            }
            _ => {
                let mut fp = Fingerprint::new(*t);
                fp.insert(ap.clone(), *rss);
                out.push(fp);
            }
        }
    }
    out
}
