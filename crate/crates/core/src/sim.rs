//! Synthetic-world simulator: generates ground-truth trajectories, drifting
//! odometry, WiFi fingerprints from a log-distance path-loss model, and
//! ray-cast laser scans, so the whole pipeline can be verified against known
//! ground truth. The SLAM side never sees the generative parameters.

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::geom::{relative, Point2, Pose2D, Transform2D};
use crate::io::RawScan;
use crate::scanmatch::LaserScan;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const LIDAR_FOV_RAD: f64 = 1.5 * std::f64::consts::PI; // 270 degrees
pub const LIDAR_ANGLE_INCREMENT_RAD: f64 = std::f64::consts::PI / 720.0; // 0.25 degrees
pub const LIDAR_MAX_RANGE_M: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Segment {
    pub fn new(ax: f64, ay: f64, bx: f64, by: f64) -> Self {
        Segment {
            a: [ax, ay],
            b: [bx, by],
        }
    }

    pub fn start(&self) -> Point2 {
        Point2::new(self.a[0], self.a[1])
    }

    pub fn end(&self) -> Point2 {
        Point2::new(self.b[0], self.b[1])
    }

    pub fn length(&self) -> f64 {
        (self.end() - self.start()).norm()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldSpec {
    pub walls: Vec<Segment>,
    pub ap_positions: Vec<Point2>,
    /// World size in meters along x and y.
    pub extent: [f64; 2],
}

impl WorldSpec {
    pub fn validate_for_wifi(&self) -> Result<()> {
        if self.extent[0] <= 0.0 || self.extent[1] <= 0.0 {
            return Err(Error::InvalidInput("world extent must be positive".into()));
        }
        if self.ap_positions.is_empty() {
            return Err(Error::InvalidInput(
                "WiFi scenario needs at least one access point".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorNoiseSpec {
    /// Translation noise std-dev as a fraction of step distance.
    pub odom_trans_noise: f64,
    /// Rotation noise std-dev in rad per rad turned.
    pub odom_rot_noise: f64,
    /// Deterministic heading bias in rad per meter traveled.
    pub odom_drift_bias: f64,
    pub rss_noise_sigma: f64,
    pub lidar_range_noise: f64,
    pub path_loss_exponent: f64,
    pub tx_power_at_1m: f64,
    /// RSS below this is not reported at all.
    pub detection_floor: f64,
}

impl Default for SensorNoiseSpec {
    fn default() -> Self {
        SensorNoiseSpec {
            odom_trans_noise: 0.02,
            odom_rot_noise: 0.05,
            odom_drift_bias: 0.002,
            rss_noise_sigma: 6.0,
            lidar_range_noise: 0.01,
            path_loss_exponent: 2.5,
            tx_power_at_1m: -40.0,
            detection_floor: -95.0,
        }
    }
}

impl SensorNoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.odom_trans_noise < 0.0
            || self.odom_rot_noise < 0.0
            || self.rss_noise_sigma < 0.0
            || self.lidar_range_noise < 0.0
        {
            return Err(Error::InvalidInput(
                "noise standard deviations must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).unwrap().sample(rng)
    } else {
        0.0
    }
}

/// Constant-speed piecewise-linear traversal of the waypoints, sampled every
/// `dt` seconds, with headings along the motion direction smoothed by a short
/// circular moving average.
pub fn generate_trajectory(
    spec: &WorldSpec,
    waypoints: &[Point2],
    speed: f64,
    dt: f64,
) -> Result<Vec<Pose2D>> {
    if waypoints.is_empty() {
        return Err(Error::InvalidInput("no waypoints".into()));
    }
    if speed <= 0.0 || dt <= 0.0 {
        return Err(Error::InvalidInput("speed and dt must be positive".into()));
    }
    for (k, w) in waypoints.iter().enumerate() {
        if w.x < 0.0 || w.y < 0.0 || w.x > spec.extent[0] || w.y > spec.extent[1] {
            return Err(Error::InvalidInput(format!(
                "waypoint {k} at ({}, {}) outside extent {}x{}",
                w.x, w.y, spec.extent[0], spec.extent[1]
            )));
        }
    }

    // Arc length per waypoint.
    let mut cumulative = vec![0.0];
    for pair in waypoints.windows(2) {
        cumulative.push(cumulative.last().unwrap() + (pair[1] - pair[0]).norm());
    }
    let total_length = *cumulative.last().unwrap();
    let total_time = total_length / speed;
    let steps = (total_time / dt + 1e-9).floor() as usize;

    let position_at = |s: f64| -> Point2 {
        let s = s.clamp(0.0, total_length);
        let seg = cumulative.partition_point(|&c| c <= s).min(waypoints.len() - 1);
        if seg == 0 {
            return waypoints[0];
        }
        let (a, b) = (waypoints[seg - 1], waypoints[seg]);
        let span = cumulative[seg] - cumulative[seg - 1];
        if span <= 0.0 {
            return a;
        }
        let f = (s - cumulative[seg - 1]) / span;
        a + (b - a) * f
    };

    let positions: Vec<Point2> = (0..=steps)
        .map(|k| position_at(speed * (k as f64) * dt))
        .collect();

    // Motion-direction headings, then a wrap-safe moving average.
    let mut raw_headings = vec![0.0f64; positions.len()];
    let mut last = 0.0;
    for k in 0..positions.len() {
        if k + 1 < positions.len() {
            let d = positions[k + 1] - positions[k];
            if d.norm() > 1e-12 {
                last = d.y.atan2(d.x);
            }
        }
        raw_headings[k] = last;
    }
    let half_window = 2usize;
    let smoothed: Vec<f64> = (0..raw_headings.len())
        .map(|k| {
            let lo = k.saturating_sub(half_window);
            let hi = (k + half_window).min(raw_headings.len() - 1);
            let (mut sx, mut sy) = (0.0, 0.0);
            for h in &raw_headings[lo..=hi] {
                sx += h.cos();
                sy += h.sin();
            }
            sy.atan2(sx)
        })
        .collect();

    Ok(positions
        .into_iter()
        .zip(smoothed)
        .map(|(p, h)| Pose2D::new(p.x, p.y, h))
        .collect())
}

/// Integrate the ground-truth relative motions with seeded Gaussian noise and
/// a deterministic heading bias per meter traveled.
pub fn corrupt_odometry(truth: &[Pose2D], noise: &SensorNoiseSpec, seed: u64) -> Vec<Pose2D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(truth.len());
    if truth.is_empty() {
        return out;
    }
    out.push(truth[0]);
    for k in 1..truth.len() {
        let rel = relative(truth[k - 1], truth[k]);
        let d = rel.translation_norm();
        let noisy = Transform2D::new(
            rel.dx + gaussian(&mut rng, noise.odom_trans_noise * d),
            rel.dy + gaussian(&mut rng, noise.odom_trans_noise * d),
            rel.dtheta
                + gaussian(&mut rng, noise.odom_rot_noise * rel.dtheta.abs())
                + noise.odom_drift_bias * d,
        );
        out.push(out[k - 1].compose(noisy));
    }
    out
}

/// Log-distance path-loss RSS sample for every AP above the detection floor.
pub fn sample_wifi(
    pose: Pose2D,
    world: &WorldSpec,
    noise: &SensorNoiseSpec,
    seed: u64,
    timestamp: f64,
) -> Fingerprint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fp = Fingerprint::new(timestamp);
    for (idx, ap) in world.ap_positions.iter().enumerate() {
        let dist = (pose.position() - ap).norm().max(1.0);
        let rss = noise.tx_power_at_1m - 10.0 * noise.path_loss_exponent * dist.log10()
            + gaussian(&mut rng, noise.rss_noise_sigma);
        if rss >= noise.detection_floor {
            fp.insert(ap_id(idx), rss);
        }
    }
    fp
}

pub fn ap_id(index: usize) -> String {
    format!("02:00:00:00:{:02x}:{:02x}", (index >> 8) & 0xff, index & 0xff)
}

/// Distance along `direction` (unit) from `origin` to the nearest wall.
pub fn raycast(origin: Point2, direction: Point2, walls: &[Segment]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for seg in walls {
        let a = seg.start();
        let e = seg.end() - a;
        // origin + t*direction == a + u*e
        let den = direction.x * (-e.y) - direction.y * (-e.x);
        if den.abs() < 1e-12 {
            continue;
        }
        let rel = a - origin;
        let t = (rel.x * (-e.y) - rel.y * (-e.x)) / den;
        let u = (direction.x * rel.y - direction.y * rel.x) / den;
        if t > 1e-9 && (0.0..=1.0).contains(&u) && best.map_or(true, |b| t < b) {
            best = Some(t);
        }
    }
    best
}

/// Raw ranges of a 270-degree scan; `INFINITY` marks no return.
pub fn sample_lidar_ranges(
    pose: Pose2D,
    world: &WorldSpec,
    noise: &SensorNoiseSpec,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_rays = (LIDAR_FOV_RAD / LIDAR_ANGLE_INCREMENT_RAD).round() as usize + 1;
    let angle_min = -LIDAR_FOV_RAD / 2.0;
    (0..n_rays)
        .map(|k| {
            let bearing = angle_min + LIDAR_ANGLE_INCREMENT_RAD * k as f64;
            let world_angle = pose.theta + bearing;
            let (s, c) = world_angle.sin_cos();
            match raycast(pose.position(), Point2::new(c, s), &world.walls) {
                Some(t) if t <= LIDAR_MAX_RANGE_M => {
                    let r = t + gaussian(&mut rng, noise.lidar_range_noise);
                    if r >= LIDAR_MAX_RANGE_M || r <= 0.0 {
                        f64::INFINITY
                    } else {
                        r
                    }
                }
                _ => f64::INFINITY,
            }
        })
        .collect()
}

pub fn sample_lidar(
    pose: Pose2D,
    world: &WorldSpec,
    noise: &SensorNoiseSpec,
    seed: u64,
    timestamp: f64,
) -> LaserScan {
    let ranges = sample_lidar_ranges(pose, world, noise, seed);
    LaserScan::from_ranges(
        timestamp,
        -LIDAR_FOV_RAD / 2.0,
        LIDAR_ANGLE_INCREMENT_RAD,
        LIDAR_MAX_RANGE_M,
        &ranges,
    )
}

/// Cells touched by any wall segment, in the geometry of an existing grid;
/// the reference raster for map-quality checks.
pub fn wall_cell_mask(
    world: &WorldSpec,
    origin: Point2,
    resolution: f64,
    width: usize,
    height: usize,
) -> Vec<bool> {
    let mut mask = vec![false; width * height];
    let step = resolution / 4.0;
    for seg in &world.walls {
        let len = seg.length();
        let n = (len / step).ceil() as usize + 1;
        for k in 0..=n {
            let p = seg.start() + (seg.end() - seg.start()) * (k as f64 / n as f64);
            let ix = ((p.x - origin.x) / resolution).floor();
            let iy = ((p.y - origin.y) / resolution).floor();
            if ix >= 0.0 && iy >= 0.0 && (ix as usize) < width && (iy as usize) < height {
                mask[(iy as usize) * width + ix as usize] = true;
            }
        }
    }
    mask
}

// ---------------------------------------------------------------------------
// Scenario files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldConfig {
    pub extent: [f64; 2],
    /// Wall segments as `[x1, y1, x2, y2]`.
    pub walls: Vec<[f64; 4]>,
    /// Place an AP every this many meters while walking the wall segments.
    #[serde(default)]
    pub ap_spacing: Option<f64>,
    /// Explicit AP positions appended after spacing-generated ones.
    #[serde(default)]
    pub extra_aps: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathConfig {
    pub waypoints: Vec<[f64; 2]>,
    #[serde(default = "default_speed")]
    pub speed: f64,
}

fn default_speed() -> f64 {
    0.4
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct RatesConfig {
    pub odometry_hz: f64,
    pub wifi_hz: f64,
    pub lidar_hz: f64,
}

impl Default for RatesConfig {
    fn default() -> Self {
        RatesConfig {
            odometry_hz: 10.0,
            wifi_hz: 0.5,
            lidar_hz: 0.5,
        }
    }
}

/// A complete simulated experiment description. Extra tables in the file
/// (e.g. a `[slam]` section with pipeline overrides) are ignored here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub world: WorldConfig,
    pub path: PathConfig,
    #[serde(default)]
    pub rates: RatesConfig,
    #[serde(default)]
    pub noise: SensorNoiseSpec,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path, 1, e.to_string()))
    }

    pub fn build_world(&self) -> WorldSpec {
        let walls: Vec<Segment> = self
            .world
            .walls
            .iter()
            .map(|w| Segment::new(w[0], w[1], w[2], w[3]))
            .collect();
        let mut ap_positions = Vec::new();
        if let Some(spacing) = self.world.ap_spacing {
            if spacing > 0.0 {
                let mut carry = 0.0;
                for seg in &walls {
                    let len = seg.length();
                    let dir = if len > 0.0 {
                        (seg.end() - seg.start()) / len
                    } else {
                        continue;
                    };
                    let mut s = carry;
                    while s < len {
                        ap_positions.push(seg.start() + dir * s);
                        s += spacing;
                    }
                    carry = s - len;
                }
            }
        }
        for ap in &self.world.extra_aps {
            ap_positions.push(Point2::new(ap[0], ap[1]));
        }
        WorldSpec {
            walls,
            ap_positions,
            extent: self.world.extent,
        }
    }

    pub fn waypoints(&self) -> Vec<Point2> {
        self.path
            .waypoints
            .iter()
            .map(|w| Point2::new(w[0], w[1]))
            .collect()
    }
}

/// Everything one simulated run produces, in memory.
#[derive(Debug, Clone)]
pub struct SimData {
    pub truth: Vec<(f64, Pose2D)>,
    pub odometry: Vec<(f64, Pose2D)>,
    pub fingerprints: Vec<Fingerprint>,
    pub scans: Vec<LaserScan>,
    pub raw_scans: Vec<RawScan>,
    pub world: WorldSpec,
}

// Stream-separating salts so each sensor consumes an independent substream.
const SALT_ODOM: u64 = 0x6f646f6d;
const SALT_WIFI: u64 = 0x77696669;
const SALT_LIDAR: u64 = 0x6c696461;

fn mix(seed: u64, salt: u64, index: u64) -> u64 {
    // splitmix64 over (seed, salt, index)
    let mut z = seed
        .wrapping_add(salt.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(index.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Run a scenario: ground truth at the odometry rate, corrupted odometry,
/// WiFi fingerprints and laser scans at their own rates. Deterministic in
/// `(scenario, seed)`.
pub fn simulate(scenario: &Scenario, seed: u64) -> Result<SimData> {
    scenario.noise.validate()?;
    let world = scenario.build_world();
    world.validate_for_wifi()?;

    let dt = 1.0 / scenario.rates.odometry_hz;
    let truth_poses = generate_trajectory(
        &world,
        &scenario.waypoints(),
        scenario.path.speed,
        dt,
    )?;
    let truth: Vec<(f64, Pose2D)> = truth_poses
        .iter()
        .enumerate()
        .map(|(k, p)| (k as f64 * dt, *p))
        .collect();

    let odom_poses = corrupt_odometry(&truth_poses, &scenario.noise, mix(seed, SALT_ODOM, 0));
    let odometry: Vec<(f64, Pose2D)> = odom_poses
        .iter()
        .enumerate()
        .map(|(k, p)| (k as f64 * dt, *p))
        .collect();

    let wifi_stride = (scenario.rates.odometry_hz / scenario.rates.wifi_hz).round() as usize;
    let mut fingerprints = Vec::new();
    for (burst, k) in (0..truth.len()).step_by(wifi_stride.max(1)).enumerate() {
        let (t, pose) = truth[k];
        let fp = sample_wifi(pose, &world, &scenario.noise, mix(seed, SALT_WIFI, burst as u64), t);
        if !fp.is_empty() {
            fingerprints.push(fp);
        }
    }

    let lidar_stride = (scenario.rates.odometry_hz / scenario.rates.lidar_hz).round() as usize;
    let mut scans = Vec::new();
    let mut raw_scans = Vec::new();
    for (n, k) in (0..truth.len()).step_by(lidar_stride.max(1)).enumerate() {
        let (t, pose) = truth[k];
        let ranges =
            sample_lidar_ranges(pose, &world, &scenario.noise, mix(seed, SALT_LIDAR, n as u64));
        let raw = RawScan {
            timestamp_s: t,
            angle_min_rad: -LIDAR_FOV_RAD / 2.0,
            angle_increment_rad: LIDAR_ANGLE_INCREMENT_RAD,
            range_max_m: LIDAR_MAX_RANGE_M,
            ranges_m: ranges
                .iter()
                .map(|r| r.is_finite().then_some(*r))
                .collect(),
        };
        scans.push(raw.to_laser_scan());
        raw_scans.push(raw);
    }

    Ok(SimData {
        truth,
        odometry,
        fingerprints,
        scans,
        raw_scans,
        world,
    })
}

/// Write a simulated dataset in the pipeline's ingestion formats.
pub fn write_logs(data: &SimData, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    crate::io::write_odometry_csv(&out_dir.join("odometry.csv"), &data.odometry)?;
    crate::io::write_wifi_csv(&out_dir.join("wifi.csv"), &data.fingerprints)?;
    crate::io::write_scans_jsonl(&out_dir.join("scans.jsonl"), &data.raw_scans)?;
    crate::io::write_tum(&out_dir.join("ground_truth.tum"), &data.truth)?;
    Ok(())
}
