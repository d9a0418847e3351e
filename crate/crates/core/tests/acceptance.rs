//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measured numbers. Run with
//! `cargo test --test acceptance -- --nocapture` to see them.

use std::path::{Path, PathBuf};
use std::time::Instant;
use wlslam_core::fingerprint::{similarity, Fingerprint, SimilarityParams};
use wlslam_core::geom::{normalize_angle, relative, Point2, Pose2D, Transform2D};
use wlslam_core::graph::{edge_jacobians, edge_residual, EdgeKind, GraphEdge, OptimizerConfig, PoseGraph};
use wlslam_core::pipeline::{build_track, micro_benchmarks, run_slam, InputPaths, PipelineConfig};
use wlslam_core::scanmatch::{icp, IcpParams, LaserScan};
use wlslam_core::seqmatch::{align_sequences, detect_wifi_loop_closures, SequenceMatchParams};
use wlslam_core::sim::{simulate, write_logs, Scenario};
use wlslam_core::track::{FingerprintTrack, TrackEntry};

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn uniform(state: &mut u64, lo: f64, hi: f64) -> f64 {
    let u = (splitmix(state) >> 11) as f64 / (1u64 << 53) as f64;
    lo + (hi - lo) * u
}

/// Approximate standard normal from twelve uniforms; all this needs is a
/// symmetric, seeded perturbation with the right scale.
fn gauss(state: &mut u64, sigma: f64) -> f64 {
    let mut s = 0.0;
    for _ in 0..12 {
        s += uniform(state, 0.0, 1.0);
    }
    (s - 6.0) * sigma
}

fn scenario_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.toml")
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

// ---------------------------------------------------------------------------
// Criterion 1: sequence alignment against a grid-search oracle
// ---------------------------------------------------------------------------

/// Track where fingerprint matching is exact by construction and window j's
/// entry positions equal `planted` applied to window i's relative positions,
/// optionally perturbed by Gaussian position noise.
fn planted_sequence_track(
    w: usize,
    planted: Transform2D,
    noise_sigma: f64,
    rng: &mut u64,
) -> (FingerprintTrack, usize, usize, Vec<Point2>, Vec<Point2>) {
    let half = w / 2;
    let j = half;
    let i = w + 2 + half;
    let x_j = Pose2D::new(
        uniform(rng, -30.0, 30.0),
        uniform(rng, -30.0, 30.0),
        uniform(rng, -3.0, 3.0),
    );
    let x_i = Pose2D::new(
        uniform(rng, -30.0, 30.0),
        uniform(rng, -30.0, 30.0),
        uniform(rng, -3.0, 3.0),
    );
    let n = 2 * w + 3;

    let fp1 = |t: f64, ap: String| {
        let mut fp = Fingerprint::new(t);
        fp.insert(ap, -50.0);
        fp
    };

    let shape = |m: isize| -> Point2 {
        Point2::new(
            m as f64 * 0.8,
            0.15 * (m * m) as f64 / w as f64 + 0.3 * (m as f64 * 0.7).sin(),
        )
    };

    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut entries = Vec::with_capacity(n);
    for idx in 0..n {
        let (pose, fp) = if idx <= w {
            let m = idx as isize - j as isize;
            if m == 0 {
                (x_j, fp1(idx as f64, "center".into()))
            } else {
                let mut p = planted.apply(shape(m));
                p.x += gauss(rng, noise_sigma);
                p.y += gauss(rng, noise_sigma);
                (
                    x_j.compose(Transform2D::new(p.x, p.y, 0.0)),
                    fp1(idx as f64, format!("u{m}")),
                )
            }
        } else if idx == w + 1 {
            (Pose2D::new(500.0, 0.0, 0.0), fp1(idx as f64, "gap".into()))
        } else {
            let tau = idx as isize - i as isize;
            (
                x_i.compose(Transform2D::new(shape(tau).x, shape(tau).y, 0.0)),
                fp1(idx as f64, format!("u{tau}")),
            )
        };
        entries.push(TrackEntry {
            timestamp: idx as f64,
            pose,
            fingerprint: fp,
        });
    }
    let track = FingerprintTrack::from_entries(entries).unwrap();
    // Correspondences as the matcher will see them, for the oracle.
    for m in -(half as isize)..=(half as isize) {
        if m == 0 {
            continue;
        }
        src.push(shape(m));
        dst.push(relative(x_j, track.entry((j as isize + m) as usize).pose).translation());
    }
    (track, i, j, src, dst)
}

/// Brute-force oracle: grid search over the rotation with the closed-form
/// optimal translation per angle, refined to 1e-5 rad. Minimizes the same
/// sum of squared correspondence distances as the SVD path but never calls
/// into it.
fn grid_search_alignment(src: &[Point2], dst: &[Point2]) -> Transform2D {
    let n = src.len() as f64;
    let centroid = |pts: &[Point2]| pts.iter().sum::<Point2>() / n;
    let (cs, cd) = (centroid(src), centroid(dst));
    let cost_and_t = |theta: f64| -> (f64, Point2) {
        let (s, c) = theta.sin_cos();
        let rot = nalgebra::Matrix2::new(c, -s, s, c);
        let t = cd - rot * cs;
        let cost: f64 = src
            .iter()
            .zip(dst)
            .map(|(a, b)| (rot * a + t - b).norm_squared())
            .sum();
        (cost, t)
    };
    let mut best_theta = 0.0;
    let mut best_cost = f64::INFINITY;
    let mut step = std::f64::consts::TAU / 720.0;
    let mut lo = -std::f64::consts::PI;
    let mut hi = std::f64::consts::PI;
    for _ in 0..5 {
        let mut theta = lo;
        while theta <= hi {
            let (cost, _) = cost_and_t(theta);
            if cost < best_cost {
                best_cost = cost;
                best_theta = theta;
            }
            theta += step;
        }
        lo = best_theta - 2.0 * step;
        hi = best_theta + 2.0 * step;
        step /= 10.0;
    }
    let (_, t) = cost_and_t(best_theta);
    Transform2D::new(t.x, t.y, best_theta)
}

#[test]
fn criterion_1_sequence_alignment_oracle() {
    let start = Instant::now();
    let params = SequenceMatchParams {
        window_w: 40,
        k_neighbors: 1,
        ..Default::default()
    };
    let sim_params = SimilarityParams::default();

    // Noise-free: exact recovery.
    let mut rng = 0x51eede5eedu64;
    for case in 0..100u64 {
        let mut case_rng = rng.wrapping_add(case);
        let planted = Transform2D::new(
            uniform(&mut case_rng, -20.0, 20.0),
            uniform(&mut case_rng, -20.0, 20.0),
            uniform(&mut case_rng, -std::f64::consts::PI, std::f64::consts::PI),
        );
        let (track, i, j, _, _) = planted_sequence_track(40, planted, 0.0, &mut case_rng);
        let got = align_sequences(&track, i, j, &params, &sim_params).unwrap();
        let pos_err = (got.transform.translation() - planted.translation()).norm();
        let ang_err = normalize_angle(got.transform.dtheta - planted.dtheta).abs();
        assert!(pos_err <= 1e-6, "case {case}: position error {pos_err}");
        assert!(ang_err <= 1e-8, "case {case}: angle error {ang_err}");
    }

    // 0.3 m correspondence noise: bounded median error, matching the oracle.
    rng = 0xabcdef0123u64;
    let mut svd_pos = Vec::new();
    let mut svd_ang = Vec::new();
    let mut oracle_pos = Vec::new();
    let mut oracle_ang = Vec::new();
    for case in 0..100u64 {
        let mut case_rng = rng.wrapping_add(case * 7919);
        let planted = Transform2D::new(
            uniform(&mut case_rng, -20.0, 20.0),
            uniform(&mut case_rng, -20.0, 20.0),
            uniform(&mut case_rng, -std::f64::consts::PI, std::f64::consts::PI),
        );
        let (track, i, j, src, dst) = planted_sequence_track(40, planted, 0.3, &mut case_rng);
        let got = align_sequences(&track, i, j, &params, &sim_params).unwrap();
        svd_pos.push((got.transform.translation() - planted.translation()).norm());
        svd_ang.push(normalize_angle(got.transform.dtheta - planted.dtheta).abs());
        let oracle = grid_search_alignment(&src, &dst);
        oracle_pos.push((oracle.translation() - planted.translation()).norm());
        oracle_ang.push(normalize_angle(oracle.dtheta - planted.dtheta).abs());
    }
    let (mp, ma) = (median(svd_pos), median(svd_ang));
    let (op, oa) = (median(oracle_pos), median(oracle_ang));
    assert!(mp <= 0.5, "median position error {mp}");
    assert!(ma <= 0.05, "median angle error {ma}");
    assert!(
        (mp - op).abs() <= 0.1 * op.max(1e-12),
        "median position error {mp} vs oracle {op}"
    );
    assert!(
        (ma - oa).abs() <= 0.1 * oa.max(1e-12),
        "median angle error {ma} vs oracle {oa}"
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "criterion 1 took {elapsed:.1} s");
    println!(
        "ACCEPTANCE 1 sequence-alignment oracle: PASS (noisy medians {mp:.3} m / {ma:.4} rad vs oracle {op:.3} / {oa:.4}, {elapsed:.1} s)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: pose-graph optimizer
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_pose_graph_optimizer() {
    // Jacobians against central finite differences on 1000 random edges.
    let mut rng = 0x9d2c_u64;
    let h = 1e-6;
    for case in 0..1000 {
        let xi = Pose2D::new(
            uniform(&mut rng, -5.0, 5.0),
            uniform(&mut rng, -5.0, 5.0),
            uniform(&mut rng, -3.0, 3.0),
        );
        let xj = Pose2D::new(
            uniform(&mut rng, -5.0, 5.0),
            uniform(&mut rng, -5.0, 5.0),
            uniform(&mut rng, -3.0, 3.0),
        );
        let edge = GraphEdge {
            from: 0,
            to: 1,
            measurement: Transform2D::new(
                uniform(&mut rng, -2.0, 2.0),
                uniform(&mut rng, -2.0, 2.0),
                uniform(&mut rng, -3.0, 3.0),
            ),
            information: nalgebra::Matrix3::identity(),
            kind: EdgeKind::Odometry,
        };
        let (j_i, j_j) = edge_jacobians(xi, xj);
        for col in 0..3 {
            let perturb = |p: Pose2D, sign: f64| {
                let mut v = [p.x, p.y, p.theta];
                v[col] += sign * h;
                Pose2D {
                    x: v[0],
                    y: v[1],
                    theta: v[2],
                }
            };
            let ni = (edge_residual(&edge, perturb(xi, 1.0), xj)
                - edge_residual(&edge, perturb(xi, -1.0), xj))
                / (2.0 * h);
            let nj = (edge_residual(&edge, xi, perturb(xj, 1.0))
                - edge_residual(&edge, xi, perturb(xj, -1.0)))
                / (2.0 * h);
            for row in 0..3 {
                let err_i = (j_i[(row, col)] - ni[row]).abs() / ni[row].abs().max(1.0);
                let err_j = (j_j[(row, col)] - nj[row]).abs() / nj[row].abs().max(1.0);
                assert!(err_i <= 1e-5, "case {case} J_i ({row},{col}): {err_i}");
                assert!(err_j <= 1e-5, "case {case} J_j ({row},{col}): {err_j}");
            }
        }
    }

    // Drifted square with exact measurements and one exact closure: the
    // unique zero-chi2 configuration is the planted truth.
    let truth = [
        Pose2D::new(0.0, 0.0, 0.0),
        Pose2D::new(10.0, 0.0, std::f64::consts::FRAC_PI_2),
        Pose2D::new(10.0, 10.0, std::f64::consts::PI),
        Pose2D::new(0.0, 10.0, -std::f64::consts::FRAC_PI_2),
    ];
    let mut graph = PoseGraph::new();
    for (t, pose) in truth.iter().enumerate() {
        let drifted = Pose2D::new(
            pose.x + 1.2 * t as f64,
            pose.y - 0.9 * t as f64,
            pose.theta + 0.3 * t as f64,
        );
        graph.add_node(drifted, t as f64);
    }
    for t in 0..3 {
        graph
            .add_edge(
                t,
                t + 1,
                relative(truth[t], truth[t + 1]),
                nalgebra::Matrix3::from_diagonal(&nalgebra::Vector3::new(20.0, 20.0, 100.0)),
                EdgeKind::Odometry,
            )
            .unwrap();
    }
    graph
        .add_edge(
            0,
            3,
            relative(truth[0], truth[3]),
            nalgebra::Matrix3::identity(),
            EdgeKind::WifiLoop,
        )
        .unwrap();
    let report = graph.optimize(&OptimizerConfig::default()).unwrap();
    for (node, want) in graph.nodes().iter().zip(&truth) {
        assert!(
            (node.pose.x - want.x).abs() <= 1e-6
                && (node.pose.y - want.y).abs() <= 1e-6
                && normalize_angle(node.pose.theta - want.theta).abs() <= 1e-6,
            "node {} at {:?}, want {want:?}",
            node.id,
            node.pose
        );
    }
    for w in report.chi2_history.windows(2) {
        assert!(w[1] <= w[0]);
    }

    // Chi-square monotonicity across a batch of randomized graphs.
    let mut rng = 0x717171u64;
    for _ in 0..20 {
        let n = 8;
        let mut truth_poses = vec![Pose2D::origin()];
        for _ in 1..n {
            let step = Transform2D::new(
                uniform(&mut rng, 0.5, 2.0),
                uniform(&mut rng, -0.3, 0.3),
                uniform(&mut rng, -0.5, 0.5),
            );
            truth_poses.push(truth_poses.last().unwrap().compose(step));
        }
        let mut g = PoseGraph::new();
        for (t, pose) in truth_poses.iter().enumerate() {
            g.add_node(
                Pose2D::new(
                    pose.x + gauss(&mut rng, 0.5),
                    pose.y + gauss(&mut rng, 0.5),
                    pose.theta + gauss(&mut rng, 0.2),
                ),
                t as f64,
            );
        }
        for t in 1..n {
            let noisy = relative(truth_poses[t - 1], truth_poses[t]).compose(Transform2D::new(
                gauss(&mut rng, 0.05),
                gauss(&mut rng, 0.05),
                gauss(&mut rng, 0.02),
            ));
            g.add_edge(
                t - 1,
                t,
                noisy,
                nalgebra::Matrix3::from_diagonal(&nalgebra::Vector3::new(20.0, 20.0, 100.0)),
                EdgeKind::Odometry,
            )
            .unwrap();
        }
        g.add_edge(
            0,
            n - 1,
            relative(truth_poses[0], truth_poses[n - 1]),
            nalgebra::Matrix3::identity(),
            EdgeKind::WifiLoop,
        )
        .unwrap();
        let report = g.optimize(&OptimizerConfig::default()).unwrap();
        for w in report.chi2_history.windows(2) {
            assert!(w[1] <= w[0], "chi2 increased: {:?}", report.chi2_history);
        }
    }
    println!("ACCEPTANCE 2 pose-graph optimizer: PASS (1000 jacobian edges, square recovery, chi2 monotone)");
}

// ---------------------------------------------------------------------------
// Criterion 3: ICP oracle
// ---------------------------------------------------------------------------

/// Jittered angular ray-cast of a cluttered room, the synthetic scan used by
/// the planted-transform trials.
fn acceptance_room_scan(rng: &mut u64) -> LaserScan {
    let (hx, hy) = (5.5, 4.0);
    let (px, py, ph) = (2.2, 1.4, 0.45);
    let segs = [
        (Point2::new(-hx, -hy), Point2::new(hx, -hy)),
        (Point2::new(hx, -hy), Point2::new(hx, hy)),
        (Point2::new(hx, hy), Point2::new(-hx, hy)),
        (Point2::new(-hx, hy), Point2::new(-hx, -hy)),
        (Point2::new(px - ph, py - ph), Point2::new(px + ph, py - ph)),
        (Point2::new(px + ph, py - ph), Point2::new(px + ph, py + ph)),
        (Point2::new(px + ph, py + ph), Point2::new(px - ph, py + ph)),
        (Point2::new(px - ph, py + ph), Point2::new(px - ph, py - ph)),
    ];
    let n_rays = 720;
    let step = std::f64::consts::TAU / n_rays as f64;
    let mut points = Vec::with_capacity(n_rays);
    for k in 0..n_rays {
        let ang = -std::f64::consts::PI + step * (k as f64 + uniform(rng, -0.5, 0.5));
        let (s, c) = ang.sin_cos();
        let mut best = f64::INFINITY;
        for (a, b) in &segs {
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
            points.push(Point2::new(best * c, best * s));
        }
    }
    LaserScan {
        timestamp: 0.0,
        points,
        max_range: 20.0,
        no_return_bearings: Vec::new(),
    }
}

#[test]
fn criterion_3_icp_oracle() {
    let params = IcpParams::default();
    let mut rng = 0x1c9_u64;
    for case in 0..100 {
        let source = acceptance_room_scan(&mut rng);
        let planted = Transform2D::new(
            uniform(&mut rng, -0.5, 0.5),
            uniform(&mut rng, -0.5, 0.5),
            uniform(&mut rng, -0.2, 0.2),
        );
        let target = LaserScan {
            timestamp: 0.0,
            points: source.points.iter().map(|p| planted.apply(*p)).collect(),
            max_range: source.max_range,
            no_return_bearings: Vec::new(),
        };
        let result = icp(&source, &target, Transform2D::identity(), &params).unwrap();
        let pos_err = (result.transform.translation() - planted.translation()).norm();
        let ang_err = normalize_angle(result.transform.dtheta - planted.dtheta).abs();
        assert!(
            pos_err <= 1e-3 && ang_err <= 1e-3,
            "case {case}: err ({pos_err:.2e}, {ang_err:.2e}) planted {planted:?}"
        );
        for w in result.fitness_history.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12,
                "case {case}: fitness increased {:?}",
                result.fitness_history
            );
        }
    }
    println!("ACCEPTANCE 3 icp oracle: PASS (100 planted transforms recovered to 1e-3, fitness monotone)");
}

// ---------------------------------------------------------------------------
// Criterion 4: end-to-end trend on the default simulated scenario
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_end_to_end_trend() {
    let start = Instant::now();
    let scenario = Scenario::load(&scenario_path()).unwrap();
    let base = PipelineConfig::from_toml_file(&scenario_path()).unwrap();

    let (mut odo, mut wifi_only, mut close, mut full) = (vec![], vec![], vec![], vec![]);
    for seed in 0..20u64 {
        let data = simulate(&scenario, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_logs(&data, dir.path()).unwrap();
        let inputs = InputPaths {
            odometry: dir.path().join("odometry.csv"),
            wifi: dir.path().join("wifi.csv"),
            scans: dir.path().join("scans.jsonl"),
            ground_truth: Some(dir.path().join("ground_truth.tum")),
        };
        for (label, close_scans, fraction) in
            [("wifi", false, 0.0), ("close", true, 0.0), ("full", true, 0.25)]
        {
            let mut config = base.clone();
            config.enable_wifi = true;
            config.enable_close_scans = close_scans;
            config.icp.extra_pose_fraction = fraction;
            config.seed = seed;
            let out = run_slam(&config, &inputs, &dir.path().join(label)).unwrap();
            let aligned = out.metrics.rmse.as_ref().unwrap().position_aligned;
            match label {
                "wifi" => {
                    wifi_only.push(aligned);
                    odo.push(out.metrics.rmse_odometry.as_ref().unwrap().position_aligned);
                }
                "close" => close.push(aligned),
                _ => full.push(aligned),
            }
        }
    }

    let (m_odo, m_wifi, m_close, m_full) = (
        median(odo),
        median(wifi_only),
        median(close),
        median(full),
    );
    assert!(
        m_odo > m_wifi,
        "odometry {m_odo:.3} not worse than wifi-only {m_wifi:.3}"
    );
    assert!(
        m_wifi > m_close,
        "wifi-only {m_wifi:.3} not worse than wifi+close {m_close:.3}"
    );
    assert!(
        m_close >= m_full,
        "wifi+close {m_close:.3} better than full {m_full:.3}"
    );
    assert!(
        m_full <= 0.25 * m_odo,
        "full {m_full:.3} above 25% of odometry {m_odo:.3}"
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed <= 900.0, "criterion 4 took {elapsed:.0} s");
    println!(
        "ACCEPTANCE 4 end-to-end trend: PASS (medians odo {m_odo:.2} > wifi {m_wifi:.2} > close {m_close:.2} >= full {m_full:.2} m, {elapsed:.0} s)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: parameter-sweep trends
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_parameter_sweeps() {
    let scenario = Scenario::load(&scenario_path()).unwrap();
    let base = PipelineConfig::from_toml_file(&scenario_path()).unwrap();
    let data = simulate(&scenario, 7).unwrap();
    let track = build_track(&data.odometry, &data.fingerprints).unwrap();
    let truth_at = |t: f64| -> Pose2D {
        let idx = data.truth.partition_point(|(tt, _)| *tt < t - 1e-9);
        data.truth[idx.min(data.truth.len() - 1)].1
    };

    let run = |w: usize, k: usize| -> (usize, f64) {
        let seq = SequenceMatchParams {
            window_w: w,
            k_neighbors: k,
            ..base.sequence
        };
        let (closures, _) = detect_wifi_loop_closures(&track, &seq, &base.similarity).unwrap();
        assert!(!closures.is_empty(), "no closures at w={w}, k={k}");
        let mean_pos_err = closures
            .iter()
            .map(|c| {
                let want = relative(
                    truth_at(track.entry(c.node_j).timestamp),
                    truth_at(track.entry(c.node_i).timestamp),
                );
                (c.transform.translation() - want.translation()).norm()
            })
            .sum::<f64>()
            / closures.len() as f64;
        (closures.len(), mean_pos_err)
    };

    let (n20, e20) = run(20, 2);
    let (n40, e40) = run(40, 2);
    let (n80, e80) = run(80, 2);
    assert!(n20 > n40 && n40 > n80, "closures not decreasing: {n20}, {n40}, {n80}");
    assert!(e20 > e40 && e40 > e80, "errors not decreasing: {e20:.3}, {e40:.3}, {e80:.3}");

    let (_, ek2) = run(80, 2);
    let (_, ek8) = run(80, 8);
    assert!(ek8 >= ek2, "k=8 ({ek8:.3}) beat k=2 ({ek2:.3})");
    println!(
        "ACCEPTANCE 5 parameter sweeps: PASS (closures {n20}>{n40}>{n80}; errors {e20:.2}>{e40:.2}>{e80:.2} m; k=8 {ek8:.2} >= k=2 {ek2:.2})"
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: microbenchmarks
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_microbenchmarks() {
    let bench = micro_benchmarks();
    assert!(
        bench.similarity_44ap_ms <= 0.3,
        "similarity of 44-AP fingerprints took {} ms",
        bench.similarity_44ap_ms
    );
    assert!(
        bench.icp_600pt_ms <= 130.0,
        "600-point ICP took {} ms",
        bench.icp_600pt_ms
    );
    println!(
        "ACCEPTANCE 6 microbenchmarks: PASS (similarity {:.4} ms <= 0.3, icp {:.2} ms <= 130)",
        bench.similarity_44ap_ms, bench.icp_600pt_ms
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: end-to-end determinism
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_determinism() {
    let scenario = Scenario::load(&scenario_path()).unwrap();
    let mut config = PipelineConfig::from_toml_file(&scenario_path()).unwrap();
    config.seed = 3;
    let data = simulate(&scenario, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_logs(&data, dir.path()).unwrap();
    let inputs = InputPaths {
        odometry: dir.path().join("odometry.csv"),
        wifi: dir.path().join("wifi.csv"),
        scans: dir.path().join("scans.jsonl"),
        ground_truth: Some(dir.path().join("ground_truth.tum")),
    };
    run_slam(&config, &inputs, &dir.path().join("a")).unwrap();
    run_slam(&config, &inputs, &dir.path().join("b")).unwrap();
    for file in ["trajectory.tum", "metrics.json"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert!(a == b, "{file} differs between identical runs");
    }
    println!("ACCEPTANCE 7 determinism: PASS (trajectory.tum and metrics.json byte-identical)");
}

// ---------------------------------------------------------------------------
// Criterion 8: similarity unit suite
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_similarity_suite() {
    let params = SimilarityParams::default();
    let fp = |readings: &[(&str, f64)]| {
        let mut f = Fingerprint::new(0.0);
        for (ap, rss) in readings {
            f.insert(ap.to_string(), *rss);
        }
        f
    };

    // Symmetry, exactly.
    let a = fp(&[("x", -50.0), ("y", -61.5), ("z", -77.2)]);
    let b = fp(&[("x", -48.3), ("z", -80.0), ("w", -55.0)]);
    assert_eq!(
        similarity(&a, &b, &params).unwrap(),
        similarity(&b, &a, &params).unwrap()
    );

    // Range [0, 1] over a grid of constructed pairs.
    let mut rng = 0xc8u64;
    for _ in 0..500 {
        let n1 = 1 + (splitmix(&mut rng) % 6) as usize;
        let n2 = 1 + (splitmix(&mut rng) % 6) as usize;
        let mut f1 = Fingerprint::new(0.0);
        let mut f2 = Fingerprint::new(0.0);
        for k in 0..n1 {
            f1.insert(format!("ap{}", splitmix(&mut rng) % 8), -30.0 - (k as f64) - uniform(&mut rng, 0.0, 60.0));
        }
        for k in 0..n2 {
            f2.insert(format!("ap{}", splitmix(&mut rng) % 8), -30.0 - (k as f64) - uniform(&mut rng, 0.0, 60.0));
        }
        let s = similarity(&f1, &f2, &params).unwrap();
        assert!((0.0..=1.0).contains(&s), "similarity {s} out of range");
    }

    // Disjoint AP sets score exactly zero.
    assert_eq!(
        similarity(&fp(&[("a", -40.0)]), &fp(&[("b", -40.0)]), &params).unwrap(),
        0.0
    );

    // The literal product form caps identical two-AP fingerprints at 1/2.
    let two = fp(&[("a", -50.0), ("b", -60.0)]);
    assert_eq!(similarity(&two, &two, &params).unwrap(), 0.5);

    println!("ACCEPTANCE 8 similarity suite: PASS (symmetry, range, zero overlap, literal 0.5)");
}
