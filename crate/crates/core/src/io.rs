//! Log file formats: odometry CSV, WiFi scan CSV, laser scan JSONL, and TUM
//! trajectories. All readers accept `#` comment lines and report the file and
//! line of the first offending record.

use crate::error::{Error, Result};
use crate::fingerprint::{group_bursts, ApId, Fingerprint};
use crate::geom::Pose2D;
use crate::scanmatch::LaserScan;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

fn open_reader(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create_writer(path: &Path) -> Result<BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// `timestamp_s, x, y, theta` per line.
pub fn read_odometry_csv(path: &Path) -> Result<Vec<(f64, Pose2D)>> {
    let mut out = Vec::new();
    for (line_no, line) in open_reader(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                path,
                line_no + 1,
                format!("expected 4 fields, got {}", fields.len()),
            ));
        }
        let mut vals = [0.0f64; 4];
        for (k, f) in fields.iter().enumerate() {
            vals[k] = f
                .parse()
                .map_err(|e| Error::parse(path, line_no + 1, format!("bad number {f:?}: {e}")))?;
        }
        out.push((vals[0], Pose2D::new(vals[1], vals[2], vals[3])));
    }
    Ok(out)
}

pub fn write_odometry_csv(path: &Path, poses: &[(f64, Pose2D)]) -> Result<()> {
    let mut w = create_writer(path)?;
    let mut go = || -> std::io::Result<()> {
        writeln!(w, "# timestamp_s, x, y, theta")?;
        for (t, p) in poses {
            writeln!(w, "{:.6}, {:.6}, {:.6}, {:.6}", t, p.x, p.y, p.theta)?;
        }
        Ok(())
    };
    go().map_err(|e| Error::io(path, e))
}

/// `timestamp_s, ap_id, rss_dbm` per line; records within `burst_window`
/// seconds of a burst's first record merge into one fingerprint.
pub fn read_wifi_csv(path: &Path, burst_window: f64) -> Result<Vec<Fingerprint>> {
    let mut records: Vec<(f64, ApId, f64)> = Vec::new();
    for (line_no, line) in open_reader(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                line_no + 1,
                format!("expected 3 fields, got {}", fields.len()),
            ));
        }
        let t: f64 = fields[0]
            .parse()
            .map_err(|e| Error::parse(path, line_no + 1, format!("bad timestamp: {e}")))?;
        let rss: f64 = fields[2]
            .parse()
            .map_err(|e| Error::parse(path, line_no + 1, format!("bad rss: {e}")))?;
        if fields[1].is_empty() {
            return Err(Error::parse(path, line_no + 1, "empty ap id"));
        }
        records.push((t, fields[1].to_string(), rss));
    }
    Ok(group_bursts(&records, burst_window))
}

pub fn write_wifi_csv(path: &Path, fingerprints: &[Fingerprint]) -> Result<()> {
    let mut w = create_writer(path)?;
    let mut go = || -> std::io::Result<()> {
        writeln!(w, "# timestamp_s, ap_id, rss_dbm")?;
        for fp in fingerprints {
            for (ap, rss) in &fp.readings {
                writeln!(w, "{:.6}, {}, {:.3}", fp.timestamp, ap, rss)?;
            }
        }
        Ok(())
    };
    go().map_err(|e| Error::io(path, e))
}

/// One laser scan as serialized in the JSONL log. `null` ranges mean no
/// return within `range_max_m`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawScan {
    pub timestamp_s: f64,
    pub angle_min_rad: f64,
    pub angle_increment_rad: f64,
    pub range_max_m: f64,
    pub ranges_m: Vec<Option<f64>>,
}

impl RawScan {
    pub fn to_laser_scan(&self) -> LaserScan {
        let ranges: Vec<f64> = self
            .ranges_m
            .iter()
            .map(|r| r.unwrap_or(f64::INFINITY))
            .collect();
        LaserScan::from_ranges(
            self.timestamp_s,
            self.angle_min_rad,
            self.angle_increment_rad,
            self.range_max_m,
            &ranges,
        )
    }
}

/// One JSON object per line.
pub fn read_scans_jsonl(path: &Path) -> Result<Vec<LaserScan>> {
    let mut out = Vec::new();
    for (line_no, line) in open_reader(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let raw: RawScan = serde_json::from_str(trimmed)
            .map_err(|e| Error::parse(path, line_no + 1, e.to_string()))?;
        out.push(raw.to_laser_scan());
    }
    Ok(out)
}

pub fn write_scans_jsonl(path: &Path, scans: &[RawScan]) -> Result<()> {
    let mut w = create_writer(path)?;
    for scan in scans {
        let line = serde_json::to_string(scan)
            .map_err(|e| Error::InvalidInput(format!("scan serialization: {e}")))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// TUM trajectory: `timestamp x y z qx qy qz qw`, planar quaternion.
pub fn write_tum(path: &Path, trajectory: &[(f64, Pose2D)]) -> Result<()> {
    let mut w = create_writer(path)?;
    let mut go = || -> std::io::Result<()> {
        for (t, p) in trajectory {
            let half = p.theta / 2.0;
            writeln!(
                w,
                "{:.6} {:.6} {:.6} 0.000000 0.000000 0.000000 {:.9} {:.9}",
                t,
                p.x,
                p.y,
                half.sin(),
                half.cos()
            )?;
        }
        Ok(())
    };
    go().map_err(|e| Error::io(path, e))
}

pub fn read_tum(path: &Path) -> Result<Vec<(f64, Pose2D)>> {
    let mut out = Vec::new();
    for (line_no, line) in open_reader(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::parse(
                path,
                line_no + 1,
                format!("expected 8 fields, got {}", fields.len()),
            ));
        }
        let mut vals = [0.0f64; 8];
        for (k, f) in fields.iter().enumerate() {
            vals[k] = f
                .parse()
                .map_err(|e| Error::parse(path, line_no + 1, format!("bad number {f:?}: {e}")))?;
        }
        let (qx, qy, qz, qw) = (vals[4], vals[5], vals[6], vals[7]);
        let yaw = (2.0 * (qw * qz + qx * qy)).atan2(1.0 - 2.0 * (qy * qy + qz * qz));
        out.push((vals[0], Pose2D::new(vals[1], vals[2], yaw)));
    }
    Ok(out)
}
