//! Log-odds occupancy grid rendered from an optimized trajectory annotated
//! with laser scans, plus PGM/YAML map export.

use crate::error::{Error, Result};
use crate::geom::{Point2, Pose2D};
use crate::scanmatch::LaserScan;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridMapParams {
    pub resolution: f64,
    /// Log-odds increment for a cell containing a scan endpoint.
    pub hit_log_odds: f64,
    /// Log-odds increment for cells a ray passed through.
    pub miss_log_odds: f64,
    /// Log-odds magnitude at which cells saturate.
    pub clamp: f64,
    /// Probability above which a cell exports as occupied.
    pub occupied_threshold: f64,
    /// Probability below which a cell exports as free.
    pub free_threshold: f64,
}

impl Default for GridMapParams {
    fn default() -> Self {
        GridMapParams {
            resolution: 0.05,
            hit_log_odds: 0.85,
            miss_log_odds: -0.4,
            clamp: 10.0,
            occupied_threshold: 0.65,
            free_threshold: 0.35,
        }
    }
}

impl GridMapParams {
    pub fn validate(&self) -> Result<()> {
        if self.resolution <= 0.0 || self.clamp <= 0.0 {
            return Err(Error::InvalidInput(
                "grid resolution and clamp must be positive".into(),
            ));
        }
        if self.hit_log_odds <= 0.0 || self.miss_log_odds >= 0.0 {
            return Err(Error::InvalidInput(
                "hit_log_odds must be positive and miss_log_odds negative".into(),
            ));
        }
        if !(0.0 < self.free_threshold && self.free_threshold < self.occupied_threshold
            && self.occupied_threshold < 1.0)
        {
            return Err(Error::InvalidInput(
                "need 0 < free_threshold < occupied_threshold < 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellClass {
    Occupied,
    Free,
    Unknown,
}

#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    pub resolution: f64,
    /// Pose of the lower-left corner of cell (0, 0).
    pub origin: Pose2D,
    pub width: usize,
    pub height: usize,
    /// Log-odds, row-major: index = iy * width + ix.
    pub cells: Vec<f64>,
    occupied_threshold: f64,
    free_threshold: f64,
}

impl OccupancyGrid {
    pub fn new(resolution: f64, origin: Pose2D, width: usize, height: usize, params: &GridMapParams) -> Self {
        OccupancyGrid {
            resolution,
            origin,
            width,
            height,
            cells: vec![0.0; width * height],
            occupied_threshold: params.occupied_threshold,
            free_threshold: params.free_threshold,
        }
    }

    pub fn cell_of(&self, p: Point2) -> Option<(usize, usize)> {
        let ix = ((p.x - self.origin.x) / self.resolution).floor();
        let iy = ((p.y - self.origin.y) / self.resolution).floor();
        if ix < 0.0 || iy < 0.0 || ix >= self.width as f64 || iy >= self.height as f64 {
            None
        } else {
            Some((ix as usize, iy as usize))
        }
    }

    pub fn log_odds(&self, ix: usize, iy: usize) -> f64 {
        self.cells[iy * self.width + ix]
    }

    pub fn probability(&self, ix: usize, iy: usize) -> f64 {
        let l = self.log_odds(ix, iy);
        1.0 - 1.0 / (1.0 + l.exp())
    }

    pub fn class(&self, ix: usize, iy: usize) -> CellClass {
        let l = self.log_odds(ix, iy);
        if l == 0.0 {
            return CellClass::Unknown;
        }
        let p = self.probability(ix, iy);
        if p > self.occupied_threshold {
            CellClass::Occupied
        } else if p < self.free_threshold {
            CellClass::Free
        } else {
            CellClass::Unknown
        }
    }

    fn update(&mut self, ix: usize, iy: usize, delta: f64, clamp: f64) {
        let cell = &mut self.cells[iy * self.width + ix];
        *cell = (*cell + delta).clamp(-clamp, clamp);
    }
}

/// Integer-grid line traversal (incremental DDA). Visits every cell the
/// segment passes through, start and end cells included, each exactly once.
fn traverse_ray(
    grid_origin: Point2,
    resolution: f64,
    from: Point2,
    to: Point2,
    mut visit: impl FnMut(i64, i64),
) {
    let cell_f = |p: Point2| -> (i64, i64) {
        (
            ((p.x - grid_origin.x) / resolution).floor() as i64,
            ((p.y - grid_origin.y) / resolution).floor() as i64,
        )
    };
    let (mut ix, mut iy) = cell_f(from);
    let (end_x, end_y) = cell_f(to);
    visit(ix, iy);
    if (ix, iy) == (end_x, end_y) {
        return;
    }

    let d = to - from;
    let step_x: i64 = if d.x > 0.0 { 1 } else { -1 };
    let step_y: i64 = if d.y > 0.0 { 1 } else { -1 };
    // Parameter t along the segment at which the next x/y cell boundary is
    // crossed, and the t advance per full cell.
    let next_boundary = |i: i64, step: i64, origin: f64, start: f64| -> f64 {
        let edge = origin + (i + if step > 0 { 1 } else { 0 }) as f64 * resolution;
        edge - start
    };
    let mut t_max_x = if d.x != 0.0 {
        next_boundary(ix, step_x, grid_origin.x, from.x) / d.x
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if d.y != 0.0 {
        next_boundary(iy, step_y, grid_origin.y, from.y) / d.y
    } else {
        f64::INFINITY
    };
    let t_delta_x = if d.x != 0.0 {
        (resolution / d.x).abs()
    } else {
        f64::INFINITY
    };
    let t_delta_y = if d.y != 0.0 {
        (resolution / d.y).abs()
    } else {
        f64::INFINITY
    };

    // Bounded by the Manhattan cell distance; protects against degenerate
    // floating-point stalls on boundary-aligned rays.
    let max_steps = (end_x - ix).abs() + (end_y - iy).abs() + 2;
    for _ in 0..max_steps {
        if t_max_x < t_max_y {
            ix += step_x;
            t_max_x += t_delta_x;
        } else {
            iy += step_y;
            t_max_y += t_delta_y;
        }
        visit(ix, iy);
        if (ix, iy) == (end_x, end_y) {
            return;
        }
    }
}

/// Render an occupancy grid from poses and their time-aligned scans.
///
/// Each scan endpoint marks its cell as a hit; cells strictly between the
/// robot cell and the endpoint cell get a miss, as do all cells along
/// max-range rays. The robot's own cell is never updated, and no ray both
/// hits and misses the same cell. The grid is sized to the trajectory
/// bounding box plus the largest scan range.
pub fn render(
    poses: &[Pose2D],
    scans: &[LaserScan],
    params: &GridMapParams,
) -> Result<OccupancyGrid> {
    params.validate()?;
    if poses.is_empty() {
        return Err(Error::InvalidInput("empty trajectory".into()));
    }
    if poses.len() != scans.len() {
        return Err(Error::InvalidInput(format!(
            "{} poses for {} scans",
            poses.len(),
            scans.len()
        )));
    }

    let max_range = scans
        .iter()
        .map(|s| s.max_range)
        .fold(0.0f64, f64::max)
        .max(params.resolution);
    let (mut min_x, mut min_y, mut max_x, mut max_y) =
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in poses {
        min_x = min_x.min(p.x);
        min_y = min_y.min(p.y);
        max_x = max_x.max(p.x);
        max_y = max_y.max(p.y);
    }
    let margin = max_range + 2.0 * params.resolution;
    let origin = Pose2D::new(min_x - margin, min_y - margin, 0.0);
    let width = ((max_x - min_x + 2.0 * margin) / params.resolution).ceil() as usize + 1;
    let height = ((max_y - min_y + 2.0 * margin) / params.resolution).ceil() as usize + 1;
    let mut grid = OccupancyGrid::new(params.resolution, origin, width, height, params);
    let origin_xy = origin.position();

    for (pose, scan) in poses.iter().zip(scans) {
        let from = pose.position();
        for point in &scan.points {
            let to = pose.transform_point(*point);
            apply_ray(&mut grid, origin_xy, params, from, to, true);
        }
        for bearing in &scan.no_return_bearings {
            let world_angle = pose.theta + bearing;
            let (s, c) = world_angle.sin_cos();
            let to = from + Point2::new(c, s) * scan.max_range;
            apply_ray(&mut grid, origin_xy, params, from, to, false);
        }
    }
    Ok(grid)
}

fn apply_ray(
    grid: &mut OccupancyGrid,
    origin_xy: Point2,
    params: &GridMapParams,
    from: Point2,
    to: Point2,
    endpoint_hit: bool,
) {
    let mut cells: Vec<(i64, i64)> = Vec::with_capacity(64);
    traverse_ray(origin_xy, params.resolution, from, to, |ix, iy| {
        cells.push((ix, iy));
    });
    let n = cells.len();
    let (width, height) = (grid.width as i64, grid.height as i64);
    for (k, (ix, iy)) in cells.into_iter().enumerate() {
        if k == 0 {
            continue; // robot's own cell
        }
        if ix < 0 || iy < 0 || ix >= width || iy >= height {
            continue;
        }
        let last = k == n - 1;
        let delta = if last && endpoint_hit {
            params.hit_log_odds
        } else {
            params.miss_log_odds
        };
        grid.update(ix as usize, iy as usize, delta, params.clamp);
    }
}

/// Binary PGM classes: occupied 0, unknown 205, free 254.
fn class_byte(class: CellClass) -> u8 {
    match class {
        CellClass::Occupied => 0,
        CellClass::Free => 254,
        CellClass::Unknown => 205,
    }
}

/// Write `map.pgm` (P5, maxval 255, top row first) plus a YAML sidecar with
/// the resolution and origin. Output bytes are deterministic for a grid.
pub fn export_pgm(grid: &OccupancyGrid, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let write = |w: &mut dyn Write| -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", grid.width, grid.height)?;
        let mut row = Vec::with_capacity(grid.width);
        for iy in (0..grid.height).rev() {
            row.clear();
            for ix in 0..grid.width {
                row.push(class_byte(grid.class(ix, iy)));
            }
            w.write_all(&row)?;
        }
        Ok(())
    };
    write(&mut w).map_err(|e| Error::io(path, e))?;

    let yaml_path = path.with_extension("yaml");
    let image_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "map.pgm".to_string());
    let yaml = format!(
        "image: {}\nresolution: {}\norigin: [{}, {}, {}]\nnegate: 0\noccupied_thresh: {}\nfree_thresh: {}\n",
        image_name,
        grid.resolution,
        grid.origin.x,
        grid.origin.y,
        grid.origin.theta,
        grid.occupied_threshold,
        grid.free_threshold,
    );
    std::fs::write(&yaml_path, yaml).map_err(|e| Error::io(&yaml_path, e))
}

/// Read back a PGM written by [`export_pgm`] as cell classes in grid order
/// (row-major, iy increasing), for round-trip checks and tooling.
pub fn import_pgm_classes(path: &Path) -> Result<(usize, usize, Vec<CellClass>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;

    // Header: magic, width, height, maxval separated by whitespace.
    let mut fields = Vec::new();
    let mut pos = 0usize;
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| {
            Error::parse(path, 1, "non-utf8 header")
        })?);
    }
    if fields.len() != 4 || fields[0] != "P5" {
        return Err(Error::parse(path, 1, "expected binary PGM (P5) header"));
    }
    let width: usize = fields[1]
        .parse()
        .map_err(|e| Error::parse(path, 1, format!("bad width: {e}")))?;
    let height: usize = fields[2]
        .parse()
        .map_err(|e| Error::parse(path, 1, format!("bad height: {e}")))?;
    pos += 1; // single whitespace after maxval
    let payload = &bytes[pos..];
    if payload.len() != width * height {
        return Err(Error::parse(
            path,
            1,
            format!("payload {} bytes, expected {}", payload.len(), width * height),
        ));
    }

    let mut classes = vec![CellClass::Unknown; width * height];
    for (row_from_top, row) in payload.chunks(width).enumerate() {
        let iy = height - 1 - row_from_top;
        for (ix, &b) in row.iter().enumerate() {
            classes[iy * width + ix] = match b {
                0 => CellClass::Occupied,
                254 => CellClass::Free,
                _ => CellClass::Unknown,
            };
        }
    }
    Ok((width, height, classes))
}
