//! Occupancy-grid quality against the simulator's wall raster.

use wlslam_core::geom::Pose2D;
use wlslam_core::gridmap::{render, CellClass, GridMapParams};
use wlslam_core::sim::{
    simulate, wall_cell_mask, PathConfig, RatesConfig, Scenario, SensorNoiseSpec, WorldConfig,
};

/// Render a rectangular room from perfect poses and compare the classified
/// cells against the world's wall raster: occupied cells must lie on (or one
/// cell off) a wall, free cells must not, with at least 98% agreement.
#[test]
fn rendered_map_agrees_with_world_raster() {
    let mut walls = vec![
        [0.0, 0.0, 24.0, 0.0],
        [24.0, 0.0, 24.0, 16.0],
        [24.0, 16.0, 0.0, 16.0],
        [0.0, 16.0, 0.0, 0.0],
    ];
    let h = 0.4;
    for (cx, cy) in [(9.0f64, 8.0f64), (17.0, 6.0)] {
        walls.push([cx - h, cy - h, cx + h, cy - h]);
        walls.push([cx + h, cy - h, cx + h, cy + h]);
        walls.push([cx + h, cy + h, cx - h, cy + h]);
        walls.push([cx - h, cy + h, cx - h, cy - h]);
    }
    let scenario = Scenario {
        world: WorldConfig {
            extent: [24.0, 16.0],
            walls,
            ap_spacing: Some(8.0),
            extra_aps: vec![],
        },
        path: PathConfig {
            waypoints: vec![[4.0, 4.0], [20.0, 4.0], [20.0, 12.0], [4.0, 12.0], [4.0, 4.0]],
            speed: 0.4,
        },
        rates: RatesConfig::default(),
        noise: SensorNoiseSpec {
            odom_trans_noise: 0.0,
            odom_rot_noise: 0.0,
            odom_drift_bias: 0.0,
            rss_noise_sigma: 0.0,
            lidar_range_noise: 0.0,
            ..Default::default()
        },
    };
    let data = simulate(&scenario, 4).unwrap();

    // Perfect poses: ground truth at each scan time.
    let poses: Vec<Pose2D> = data
        .scans
        .iter()
        .map(|s| {
            let idx = data
                .truth
                .partition_point(|(t, _)| *t < s.timestamp - 1e-9);
            data.truth[idx.min(data.truth.len() - 1)].1
        })
        .collect();
    let params = GridMapParams::default();
    let grid = render(&poses, &data.scans, &params).unwrap();

    let wall_mask = wall_cell_mask(
        &data.world,
        grid.origin.position(),
        grid.resolution,
        grid.width,
        grid.height,
    );
    let near_wall = |ix: usize, iy: usize| -> bool {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (nx, ny) = (ix as i64 + dx, iy as i64 + dy);
                if nx >= 0
                    && ny >= 0
                    && (nx as usize) < grid.width
                    && (ny as usize) < grid.height
                    && wall_mask[ny as usize * grid.width + nx as usize]
                {
                    return true;
                }
            }
        }
        false
    };

    let mut classified = 0usize;
    let mut agree = 0usize;
    let mut occupied_cells = 0usize;
    let mut occupied_high_confidence = 0usize;
    for iy in 0..grid.height {
        for ix in 0..grid.width {
            match grid.class(ix, iy) {
                CellClass::Occupied => {
                    classified += 1;
                    occupied_cells += 1;
                    if near_wall(ix, iy) {
                        agree += 1;
                    }
                    if grid.probability(ix, iy) > 0.9 {
                        occupied_high_confidence += 1;
                    }
                }
                CellClass::Free => {
                    classified += 1;
                    if !wall_mask[iy * grid.width + ix] {
                        agree += 1;
                    }
                }
                CellClass::Unknown => {}
            }
        }
    }
    assert!(occupied_cells > 500, "only {occupied_cells} occupied cells");
    let agreement = agree as f64 / classified as f64;
    assert!(
        agreement >= 0.98,
        "agreement {agreement:.4} over {classified} classified cells"
    );
    // Walls accumulate many hits, so nearly all occupied cells saturate.
    assert!(occupied_high_confidence as f64 >= 0.9 * occupied_cells as f64);

    // Interior along the robot path is confidently free.
    let mut path_free = 0usize;
    let mut path_cells = 0usize;
    for pose in poses.iter().step_by(5) {
        if let Some((ix, iy)) = grid.cell_of(pose.position()) {
            path_cells += 1;
            if grid.probability(ix, iy) < 0.2 {
                path_free += 1;
            }
        }
    }
    assert!(
        path_free as f64 >= 0.95 * path_cells as f64,
        "{path_free}/{path_cells} path cells free"
    );
}
