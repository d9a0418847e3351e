//! SE(2) pose graph and its sparse Levenberg-Marquardt optimizer.
//!
//! Nodes are robot poses at fingerprint times; edges are relative-pose
//! constraints weighted by information matrices. Optimization minimizes the
//! total weighted squared residual over all edges with node 0 anchored to fix
//! the gauge freedom. The damped normal equations are solved with a sparse
//! LDL^T factorization (reverse Cuthill-McKee ordering), which exploits the
//! chain-plus-loops sparsity of the problem.

use crate::error::{Error, Result};
use crate::geom::{normalize_angle, relative, Pose2D, Transform2D};
use crate::seqmatch::{ClosureSource, LoopClosure};
use crate::track::FingerprintTrack;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    Odometry,
    WifiLoop,
    IcpProximity,
    IcpLoop,
}

impl From<ClosureSource> for EdgeKind {
    fn from(source: ClosureSource) -> Self {
        match source {
            ClosureSource::WifiSequence => EdgeKind::WifiLoop,
            ClosureSource::IcpProximity => EdgeKind::IcpProximity,
            ClosureSource::IcpLoop => EdgeKind::IcpLoop,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GraphNode {
    pub id: usize,
    pub pose: Pose2D,
    pub timestamp: f64,
}

#[derive(Debug, Clone)]
pub struct GraphEdge {
    pub from: usize,
    pub to: usize,
    /// Measured pose of `to` in `from`'s frame.
    pub measurement: Transform2D,
    /// Inverse covariance of the measurement; symmetric positive definite.
    pub information: Matrix3<f64>,
    pub kind: EdgeKind,
}

/// Diagonal information matrices applied per edge kind when building a graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InformationConfig {
    pub odometry: [f64; 3],
    pub wifi_loop: [f64; 3],
    pub icp_proximity: [f64; 3],
    pub icp_loop: [f64; 3],
}

impl Default for InformationConfig {
    fn default() -> Self {
        InformationConfig {
            odometry: [20.0, 20.0, 100.0],
            wifi_loop: [1.0, 1.0, 1.0],
            icp_proximity: [50.0, 50.0, 200.0],
            icp_loop: [50.0, 50.0, 200.0],
        }
    }
}

impl InformationConfig {
    pub fn matrix_for(&self, kind: EdgeKind) -> Matrix3<f64> {
        let d = match kind {
            EdgeKind::Odometry => self.odometry,
            EdgeKind::WifiLoop => self.wifi_loop,
            EdgeKind::IcpProximity => self.icp_proximity,
            EdgeKind::IcpLoop => self.icp_loop,
        };
        Matrix3::from_diagonal(&Vector3::new(d[0], d[1], d[2]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Relative chi-square change below which an accepted step converges.
    pub convergence_delta: f64,
    pub initial_lambda: f64,
    pub lambda_factor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iterations: 100,
            convergence_delta: 1e-6,
            initial_lambda: 1e-4,
            lambda_factor: 10.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0
            || self.convergence_delta <= 0.0
            || self.initial_lambda <= 0.0
            || self.lambda_factor <= 1.0
        {
            return Err(Error::InvalidInput(
                "optimizer config values must be positive (lambda_factor > 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeReport {
    /// Chi-square after each accepted step, starting with the initial value.
    pub chi2_history: Vec<f64>,
    pub solve_attempts: usize,
    pub accepted_steps: usize,
    pub converged: bool,
}

impl OptimizeReport {
    pub fn initial_chi2(&self) -> f64 {
        *self.chi2_history.first().unwrap_or(&0.0)
    }

    pub fn final_chi2(&self) -> f64 {
        *self.chi2_history.last().unwrap_or(&0.0)
    }
}

/// Residual of an edge at the given endpoint poses: measurement minus
/// predicted relative pose, with the angle wrapped to `(-pi, pi]`.
pub fn edge_residual(edge: &GraphEdge, xi: Pose2D, xj: Pose2D) -> Vector3<f64> {
    let predicted = relative(xi, xj);
    Vector3::new(
        edge.measurement.dx - predicted.dx,
        edge.measurement.dy - predicted.dy,
        normalize_angle(edge.measurement.dtheta - predicted.dtheta),
    )
}

/// Analytic Jacobians of [`edge_residual`] with respect to the two poses.
pub fn edge_jacobians(xi: Pose2D, xj: Pose2D) -> (Matrix3<f64>, Matrix3<f64>) {
    let (s, c) = xi.theta.sin_cos();
    let dx = xj.x - xi.x;
    let dy = xj.y - xi.y;
    #[rustfmt::skip]
    let j_i = Matrix3::new(
        c,   s,  s * dx - c * dy,
        -s,  c,  c * dx + s * dy,
        0.0, 0.0, 1.0,
    );
    #[rustfmt::skip]
    let j_j = Matrix3::new(
        -c,  -s,  0.0,
        s,   -c,  0.0,
        0.0, 0.0, -1.0,
    );
    (j_i, j_j)
}

#[derive(Debug, Clone, Default)]
pub struct PoseGraph {
    nodes: Vec<GraphNode>,
    edges: Vec<GraphEdge>,
    edge_keys: BTreeSet<(usize, usize, EdgeKind)>,
}

impl PoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, pose: Pose2D, timestamp: f64) -> usize {
        let id = self.nodes.len();
        self.nodes.push(GraphNode {
            id,
            pose,
            timestamp,
        });
        id
    }

    pub fn add_edge(
        &mut self,
        from: usize,
        to: usize,
        measurement: Transform2D,
        information: Matrix3<f64>,
        kind: EdgeKind,
    ) -> Result<()> {
        if from == to {
            return Err(Error::InvalidInput(format!("self edge on node {from}")));
        }
        if from >= self.nodes.len() || to >= self.nodes.len() {
            return Err(Error::InvalidInput(format!(
                "edge ({from}, {to}) references unknown node (graph has {})",
                self.nodes.len()
            )));
        }
        let asym = (information - information.transpose()).abs().max();
        if asym > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "information matrix not symmetric (max asymmetry {asym:e})"
            )));
        }
        if information.cholesky().is_none() {
            return Err(Error::InvalidInput(
                "information matrix not positive definite".into(),
            ));
        }
        if !self.edge_keys.insert((from, to, kind)) {
            return Err(Error::InvalidInput(format!(
                "duplicate {kind:?} edge ({from}, {to})"
            )));
        }
        self.edges.push(GraphEdge {
            from,
            to,
            measurement,
            information,
            kind,
        });
        Ok(())
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn poses(&self) -> Vec<Pose2D> {
        self.nodes.iter().map(|n| n.pose).collect()
    }

    pub fn set_poses(&mut self, poses: &[Pose2D]) -> Result<()> {
        if poses.len() != self.nodes.len() {
            return Err(Error::InvalidInput(format!(
                "{} poses for {} nodes",
                poses.len(),
                self.nodes.len()
            )));
        }
        for (node, pose) in self.nodes.iter_mut().zip(poses) {
            node.pose = *pose;
        }
        Ok(())
    }

    /// Total weighted squared error over all edges.
    pub fn chi2(&self) -> f64 {
        self.chi2_at(&self.nodes.iter().map(|n| n.pose).collect::<Vec<_>>())
    }

    fn chi2_at(&self, poses: &[Pose2D]) -> f64 {
        let mut total = 0.0;
        for e in &self.edges {
            let r = edge_residual(e, poses[e.from], poses[e.to]);
            total += (r.transpose() * e.information * r)[(0, 0)];
        }
        total
    }

    fn check_connected(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidInput("empty graph".into()));
        }
        let mut adjacency = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adjacency[e.from].push(e.to);
            adjacency[e.to].push(e.from);
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(n) = stack.pop() {
            for &m in &adjacency[n] {
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        let unreachable: Vec<usize> = seen
            .iter()
            .enumerate()
            .filter_map(|(i, s)| (!s).then_some(i))
            .collect();
        if unreachable.is_empty() {
            Ok(())
        } else {
            Err(Error::Disconnected(unreachable))
        }
    }

    /// Assemble the normal equations at `poses` with node 0 fixed.
    /// Returns full-symmetric triplets of `H = J^T O J`, the gradient
    /// `g = J^T O e`, and the diagonal of `H` for Marquardt damping.
    fn assemble(&self, poses: &[Pose2D]) -> (Vec<(usize, usize, f64)>, Vec<f64>, Vec<f64>) {
        let n_vars = (self.nodes.len() - 1) * 3;
        let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(self.edges.len() * 36);
        let mut gradient = vec![0.0; n_vars];
        let mut h_diag = vec![0.0; n_vars];

        let var_of = |node: usize| -> Option<usize> { (node > 0).then(|| (node - 1) * 3) };

        // Full 3x3 blocks keep the sparsity pattern exactly symmetric, which
        // the fill-reducing ordering requires.
        let mut add_block = |row: Option<usize>, col: Option<usize>, block: Matrix3<f64>| {
            if let (Some(r), Some(c)) = (row, col) {
                for a in 0..3 {
                    for b in 0..3 {
                        triplets.push((r + a, c + b, block[(a, b)]));
                    }
                }
            }
        };

        for e in &self.edges {
            let xi = poses[e.from];
            let xj = poses[e.to];
            let r = edge_residual(e, xi, xj);
            let (j_i, j_j) = edge_jacobians(xi, xj);
            let vi = var_of(e.from);
            let vj = var_of(e.to);

            let wi = e.information * j_i;
            let wj = e.information * j_j;

            add_block(vi, vi, j_i.transpose() * wi);
            add_block(vj, vj, j_j.transpose() * wj);
            add_block(vi, vj, j_i.transpose() * wj);
            add_block(vj, vi, j_j.transpose() * wi);

            if let Some(v) = vi {
                let gi = j_i.transpose() * e.information * r;
                for a in 0..3 {
                    gradient[v + a] += gi[a];
                }
            }
            if let Some(v) = vj {
                let gj = j_j.transpose() * e.information * r;
                for a in 0..3 {
                    gradient[v + a] += gj[a];
                }
            }
        }

        for &(r, c, v) in &triplets {
            if r == c {
                h_diag[r] += v;
            }
        }

        (triplets, gradient, h_diag)
    }

    fn solve_damped(
        triplets: &[(usize, usize, f64)],
        h_diag: &[f64],
        gradient: &[f64],
        lambda: f64,
    ) -> Option<Vec<f64>> {
        let n = gradient.len();
        let mut tri = sprs::TriMat::with_capacity((n, n), triplets.len() + n);
        for &(r, c, v) in triplets {
            tri.add_triplet(r, c, v);
        }
        for (k, d) in h_diag.iter().enumerate() {
            tri.add_triplet(k, k, lambda * d.max(1e-12));
        }
        let mat: sprs::CsMat<f64> = tri.to_csc();

        let ldl = sprs_ldl::Ldl::new()
            .check_symmetry(sprs::SymmetryCheck::DontCheckSymmetry)
            .fill_in_reduction(sprs::FillInReduction::ReverseCuthillMcKee);
        let system = ldl.numeric(mat.view()).ok()?;
        let rhs: Vec<f64> = gradient.iter().map(|g| -g).collect();
        let solution = system.solve(&rhs);
        solution.iter().all(|v| v.is_finite()).then_some(solution)
    }

    /// Minimize the total chi-square by Levenberg-Marquardt. Node 0 stays
    /// fixed. Chi-square is non-increasing across accepted steps; rejected
    /// trial steps only raise the damping.
    pub fn optimize(&mut self, config: &OptimizerConfig) -> Result<OptimizeReport> {
        config.validate()?;
        self.check_connected()?;
        if self.nodes.len() == 1 {
            return Ok(OptimizeReport {
                chi2_history: vec![0.0],
                solve_attempts: 0,
                accepted_steps: 0,
                converged: true,
            });
        }

        let mut poses: Vec<Pose2D> = self.nodes.iter().map(|n| n.pose).collect();
        let mut chi2 = self.chi2_at(&poses);
        let mut history = vec![chi2];
        let mut lambda = config.initial_lambda;
        let mut converged = false;
        let mut accepted = 0usize;
        let mut attempts = 0usize;

        while attempts < config.max_iterations {
            attempts += 1;
            let (triplets, gradient, h_diag) = self.assemble(&poses);

            let delta = match Self::solve_damped(&triplets, &h_diag, &gradient, lambda) {
                Some(d) => d,
                None => {
                    lambda *= config.lambda_factor;
                    if lambda > 1e16 {
                        break;
                    }
                    continue;
                }
            };

            let mut trial = poses.clone();
            for (t, pose) in trial.iter_mut().enumerate().skip(1) {
                let v = (t - 1) * 3;
                *pose = Pose2D::new(
                    pose.x + delta[v],
                    pose.y + delta[v + 1],
                    pose.theta + delta[v + 2],
                );
            }
            let trial_chi2 = self.chi2_at(&trial);

            if trial_chi2 <= chi2 {
                let rel_change = (chi2 - trial_chi2) / chi2.max(1e-300);
                poses = trial;
                chi2 = trial_chi2;
                history.push(chi2);
                accepted += 1;
                lambda = (lambda / config.lambda_factor).max(1e-12);
                if rel_change < config.convergence_delta {
                    converged = true;
                    break;
                }
            } else {
                lambda *= config.lambda_factor;
                if lambda > 1e16 {
                    break;
                }
            }
        }

        for (node, pose) in self.nodes.iter_mut().zip(&poses) {
            node.pose = *pose;
        }
        Ok(OptimizeReport {
            chi2_history: history,
            solve_attempts: attempts,
            accepted_steps: accepted,
            converged,
        })
    }

    /// Write the graph in the line-based `VERTEX_SE2` / `EDGE_SE2` format.
    pub fn save_g2o(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            for n in &self.nodes {
                writeln!(w, "VERTEX_SE2 {} {} {} {}", n.id, n.pose.x, n.pose.y, n.pose.theta)?;
            }
            for e in &self.edges {
                let m = &e.measurement;
                let i = &e.information;
                writeln!(
                    w,
                    "EDGE_SE2 {} {} {} {} {} {} {} {} {} {} {}",
                    e.from,
                    e.to,
                    m.dx,
                    m.dy,
                    m.dtheta,
                    i[(0, 0)],
                    i[(0, 1)],
                    i[(0, 2)],
                    i[(1, 1)],
                    i[(1, 2)],
                    i[(2, 2)]
                )?;
            }
            Ok(())
        };
        write().map_err(|e| Error::io(path, e))
    }

    /// Load a graph saved by [`save_g2o`]. Edge kinds are not part of the
    /// format; consecutive-node edges load as odometry, the rest as WiFi
    /// loops (the information matrices carry the actual weighting).
    pub fn load_g2o(path: &Path) -> Result<PoseGraph> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let mut vertices: Vec<(usize, Pose2D)> = Vec::new();
        let mut edges: Vec<(usize, usize, Transform2D, Matrix3<f64>)> = Vec::new();

        for (line_no, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tok = line.split_whitespace();
            let head = tok.next().unwrap();
            let mut next_f64 = |what: &str| -> Result<f64> {
                tok.next()
                    .ok_or_else(|| Error::parse(path, line_no + 1, format!("missing {what}")))?
                    .parse::<f64>()
                    .map_err(|e| Error::parse(path, line_no + 1, format!("bad {what}: {e}")))
            };
            match head {
                "VERTEX_SE2" => {
                    let id = next_f64("id")? as usize;
                    let x = next_f64("x")?;
                    let y = next_f64("y")?;
                    let theta = next_f64("theta")?;
                    vertices.push((id, Pose2D::new(x, y, theta)));
                }
                "EDGE_SE2" => {
                    let from = next_f64("from")? as usize;
                    let to = next_f64("to")? as usize;
                    let m = Transform2D::new(next_f64("dx")?, next_f64("dy")?, next_f64("dtheta")?);
                    let (i11, i12, i13) = (next_f64("i11")?, next_f64("i12")?, next_f64("i13")?);
                    let (i22, i23, i33) = (next_f64("i22")?, next_f64("i23")?, next_f64("i33")?);
                    let info = Matrix3::new(i11, i12, i13, i12, i22, i23, i13, i23, i33);
                    edges.push((from, to, m, info));
                }
                other => {
                    return Err(Error::parse(
                        path,
                        line_no + 1,
                        format!("unknown record {other}"),
                    ));
                }
            }
        }

        vertices.sort_by_key(|(id, _)| *id);
        let mut graph = PoseGraph::new();
        for (expect, (id, pose)) in vertices.iter().enumerate() {
            if *id != expect {
                return Err(Error::InvalidInput(format!(
                    "vertex ids not dense: expected {expect}, found {id}"
                )));
            }
            graph.add_node(*pose, expect as f64);
        }
        for (from, to, m, info) in edges {
            let kind = if from.abs_diff(to) == 1 {
                EdgeKind::Odometry
            } else {
                EdgeKind::WifiLoop
            };
            graph.add_edge(from, to, m, info, kind)?;
        }
        Ok(graph)
    }
}

/// Build the pose graph for a track: one node per fingerprint sample,
/// odometry edges between consecutive nodes, one edge per loop closure.
pub fn build_graph(
    track: &FingerprintTrack,
    closures: &[LoopClosure],
    info: &InformationConfig,
) -> Result<PoseGraph> {
    let mut graph = PoseGraph::new();
    for e in track.entries() {
        graph.add_node(e.pose, e.timestamp);
    }
    for t in 1..track.len() {
        let measurement = relative(track.entry(t - 1).pose, track.entry(t).pose);
        graph.add_edge(
            t - 1,
            t,
            measurement,
            info.matrix_for(EdgeKind::Odometry),
            EdgeKind::Odometry,
        )?;
    }
    for c in closures {
        if c.node_i == c.node_j {
            return Err(Error::InvalidInput(format!(
                "loop closure with identical endpoints {}",
                c.node_i
            )));
        }
        let kind = EdgeKind::from(c.source);
        // The closure transform maps node_i coordinates into node_j's frame,
        // i.e. it measures node_i relative to node_j.
        graph.add_edge(c.node_j, c.node_i, c.transform, info.matrix_for(kind), kind)?;
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprint::Fingerprint;
    use crate::track::TrackEntry;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn info_identity() -> Matrix3<f64> {
        Matrix3::identity()
    }

    fn edge(from: usize, to: usize, t: Transform2D) -> GraphEdge {
        GraphEdge {
            from,
            to,
            measurement: t,
            information: info_identity(),
            kind: EdgeKind::Odometry,
        }
    }

    #[test]
    fn residual_of_satisfied_edge_is_zero() {
        let e = edge(0, 1, Transform2D::new(1.0, 0.0, 0.0));
        let r = edge_residual(&e, Pose2D::origin(), Pose2D::new(1.0, 0.0, 0.0));
        assert_relative_eq!(r.norm(), 0.0);
    }

    #[test]
    fn residual_in_from_frame() {
        let e = edge(0, 1, Transform2D::new(2.0, 0.0, 0.0));
        let r = edge_residual(&e, Pose2D::origin(), Pose2D::new(1.0, 0.0, 0.0));
        assert_relative_eq!(r[0], 1.0);
        assert_relative_eq!(r[1], 0.0);
        assert_relative_eq!(r[2], 0.0);
    }

    #[test]
    fn residual_angle_wraps() {
        // Measurement angle 3.0 against an actual relative angle of -3.0:
        // the wrapped difference is -(2*pi - 6.0), not 6.0.
        let e = edge(0, 1, Transform2D::new(0.0, 0.0, 3.0));
        let r = edge_residual(&e, Pose2D::origin(), Pose2D::new(0.0, 0.0, -3.0));
        assert_relative_eq!(r[2], -(2.0 * PI - 6.0), epsilon = 1e-12);
        assert!(r[2] < 0.0 && r[2].abs() < 0.3);
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let mut rng_state = 42u64;
        let mut next = move || {
            // xorshift; plenty for test data
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state as f64 / u64::MAX as f64) * 8.0 - 4.0
        };
        for _ in 0..200 {
            let xi = Pose2D::new(next(), next(), next());
            let xj = Pose2D::new(next(), next(), next());
            let e = edge(0, 1, Transform2D::new(next(), next(), next()));
            let (j_i, j_j) = edge_jacobians(xi, xj);
            let h = 1e-6;
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
                let num_i =
                    (edge_residual(&e, perturb(xi, 1.0), xj) - edge_residual(&e, perturb(xi, -1.0), xj))
                        / (2.0 * h);
                let num_j =
                    (edge_residual(&e, xi, perturb(xj, 1.0)) - edge_residual(&e, xi, perturb(xj, -1.0)))
                        / (2.0 * h);
                for row in 0..3 {
                    let scale_i = num_i[row].abs().max(1.0);
                    let scale_j = num_j[row].abs().max(1.0);
                    assert!(
                        (j_i[(row, col)] - num_i[row]).abs() / scale_i < 1e-5,
                        "J_i mismatch at ({row},{col}): {} vs {}",
                        j_i[(row, col)],
                        num_i[row]
                    );
                    assert!(
                        (j_j[(row, col)] - num_j[row]).abs() / scale_j < 1e-5,
                        "J_j mismatch at ({row},{col}): {} vs {}",
                        j_j[(row, col)],
                        num_j[row]
                    );
                }
            }
        }
    }

    fn square_truth() -> Vec<Pose2D> {
        vec![
            Pose2D::new(0.0, 0.0, 0.0),
            Pose2D::new(10.0, 0.0, FRAC_PI_2),
            Pose2D::new(10.0, 10.0, PI),
            Pose2D::new(0.0, 10.0, -FRAC_PI_2),
        ]
    }

    /// Exact odometry and closure measurements on a square, drifted initial
    /// estimates: the unique zero-residual configuration is the ground truth,
    /// and the optimizer must reach it from far away.
    #[test]
    fn square_with_exact_closure_recovers_truth() {
        let truth = square_truth();
        let mut graph = PoseGraph::new();
        // Drifted initialization: the square opened up by a heading error
        // that compounds along the chain.
        let mut drifted = truth.clone();
        let mut err = Transform2D::identity();
        for (idx, pose) in drifted.iter_mut().enumerate().skip(1) {
            err = err.compose(Transform2D::new(0.6, -0.4, 0.25));
            let moved = Pose2D::new(pose.x + err.dx * idx as f64 / 2.0, pose.y + err.dy, pose.theta + 0.25 * idx as f64);
            *pose = moved;
        }
        for (t, pose) in drifted.iter().enumerate() {
            graph.add_node(*pose, t as f64);
        }
        for t in 0..3 {
            graph
                .add_edge(
                    t,
                    t + 1,
                    relative(truth[t], truth[t + 1]),
                    Matrix3::from_diagonal(&Vector3::new(20.0, 20.0, 100.0)),
                    EdgeKind::Odometry,
                )
                .unwrap();
        }
        graph
            .add_edge(
                0,
                3,
                relative(truth[0], truth[3]),
                info_identity(),
                EdgeKind::WifiLoop,
            )
            .unwrap();

        // Brute-force check that the truth really is the zero of the
        // objective before asking the optimizer to find it.
        let mut check = graph.clone();
        check.set_poses(&truth).unwrap();
        assert!(check.chi2() < 1e-20);
        for d in [-0.05, 0.05] {
            for node in 1..4 {
                for coord in 0..3 {
                    let mut poses = truth.clone();
                    let mut v = [poses[node].x, poses[node].y, poses[node].theta];
                    v[coord] += d;
                    poses[node] = Pose2D {
                        x: v[0],
                        y: v[1],
                        theta: v[2],
                    };
                    check.set_poses(&poses).unwrap();
                    assert!(check.chi2() > 1e-6, "perturbed chi2 not positive");
                }
            }
        }

        let report = graph.optimize(&OptimizerConfig::default()).unwrap();
        assert!(report.converged);
        assert!(report.final_chi2() < 1e-12, "chi2 {}", report.final_chi2());
        for (node, want) in graph.nodes().iter().zip(&truth) {
            assert!(
                (node.pose.x - want.x).abs() < 1e-6
                    && (node.pose.y - want.y).abs() < 1e-6
                    && normalize_angle(node.pose.theta - want.theta).abs() < 1e-6,
                "node {} at {:?}, want {:?}",
                node.id,
                node.pose,
                want
            );
        }
    }

    #[test]
    fn chi2_history_non_increasing() {
        let truth = square_truth();
        let mut graph = PoseGraph::new();
        for (t, pose) in truth.iter().enumerate() {
            let noisy = Pose2D::new(
                pose.x + 0.8 * (t as f64).sin(),
                pose.y - 0.5 * (t as f64),
                pose.theta + 0.3 * (t as f64),
            );
            graph.add_node(noisy, t as f64);
        }
        for t in 0..3 {
            graph
                .add_edge(
                    t,
                    t + 1,
                    relative(truth[t], truth[t + 1]),
                    Matrix3::from_diagonal(&Vector3::new(20.0, 20.0, 100.0)),
                    EdgeKind::Odometry,
                )
                .unwrap();
        }
        let report = graph.optimize(&OptimizerConfig::default()).unwrap();
        for w in report.chi2_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "chi2 increased: {w:?}");
        }
    }

    #[test]
    fn consistent_graph_converges_immediately() {
        let mut graph = PoseGraph::new();
        graph.add_node(Pose2D::origin(), 0.0);
        graph.add_node(Pose2D::new(1.0, 0.0, 0.0), 1.0);
        graph
            .add_edge(
                0,
                1,
                Transform2D::new(1.0, 0.0, 0.0),
                info_identity(),
                EdgeKind::Odometry,
            )
            .unwrap();
        let report = graph.optimize(&OptimizerConfig::default()).unwrap();
        assert!(report.converged);
        assert_eq!(report.final_chi2(), 0.0);
        assert_relative_eq!(graph.nodes()[1].pose.x, 1.0);
    }

    #[test]
    fn gauge_invariance_of_final_chi2() {
        let truth = square_truth();
        let build = |shift: Option<Pose2D>| {
            let mut graph = PoseGraph::new();
            for (t, pose) in truth.iter().enumerate() {
                let mut noisy = Pose2D::new(
                    pose.x + 0.3 * ((t * 7) as f64).sin(),
                    pose.y + 0.2 * ((t * 3) as f64).cos(),
                    pose.theta + 0.1 * (t as f64),
                );
                if let Some(g) = shift {
                    noisy = g.compose(relative(Pose2D::origin(), noisy));
                }
                graph.add_node(noisy, t as f64);
            }
            for t in 0..3 {
                graph
                    .add_edge(
                        t,
                        t + 1,
                        relative(truth[t], truth[t + 1]).compose(Transform2D::new(
                            0.05,
                            -0.02,
                            0.01,
                        )),
                        Matrix3::from_diagonal(&Vector3::new(20.0, 20.0, 100.0)),
                        EdgeKind::Odometry,
                    )
                    .unwrap();
            }
            graph
                .add_edge(
                    0,
                    3,
                    relative(truth[0], truth[3]),
                    info_identity(),
                    EdgeKind::WifiLoop,
                )
                .unwrap();
            graph
        };

        let mut plain = build(None);
        let mut moved = build(Some(Pose2D::new(42.0, -17.0, 1.3)));
        let a = plain.optimize(&OptimizerConfig::default()).unwrap();
        let b = moved.optimize(&OptimizerConfig::default()).unwrap();
        assert_relative_eq!(a.final_chi2(), b.final_chi2(), epsilon = 1e-9);
    }

    #[test]
    fn doubling_information_doubles_chi2_keeps_argmin() {
        let truth = square_truth();
        let build = |scale: f64| {
            let mut graph = PoseGraph::new();
            for (t, pose) in truth.iter().enumerate() {
                graph.add_node(
                    Pose2D::new(pose.x + 0.4 * t as f64, pose.y - 0.1, pose.theta + 0.05),
                    t as f64,
                );
            }
            for t in 0..3 {
                graph
                    .add_edge(
                        t,
                        t + 1,
                        relative(truth[t], truth[t + 1]).compose(Transform2D::new(0.1, 0.0, 0.02)),
                        scale * Matrix3::from_diagonal(&Vector3::new(20.0, 20.0, 100.0)),
                        EdgeKind::Odometry,
                    )
                    .unwrap();
            }
            graph
                .add_edge(
                    0,
                    3,
                    relative(truth[0], truth[3]),
                    scale * info_identity(),
                    EdgeKind::WifiLoop,
                )
                .unwrap();
            graph
        };

        let mut single = build(1.0);
        let mut double = build(2.0);
        assert_relative_eq!(double.chi2(), 2.0 * single.chi2(), epsilon = 1e-9);
        single.optimize(&OptimizerConfig::default()).unwrap();
        double.optimize(&OptimizerConfig::default()).unwrap();
        for (a, b) in single.nodes().iter().zip(double.nodes()) {
            assert!((a.pose.x - b.pose.x).abs() < 1e-9);
            assert!((a.pose.y - b.pose.y).abs() < 1e-9);
            assert!(normalize_angle(a.pose.theta - b.pose.theta).abs() < 1e-9);
        }
    }

    #[test]
    fn optimize_is_deterministic() {
        let truth = square_truth();
        let build = || {
            let mut graph = PoseGraph::new();
            for (t, pose) in truth.iter().enumerate() {
                graph.add_node(
                    Pose2D::new(pose.x + 0.7 * t as f64, pose.y, pose.theta - 0.1 * t as f64),
                    t as f64,
                );
            }
            for t in 0..3 {
                graph
                    .add_edge(
                        t,
                        t + 1,
                        relative(truth[t], truth[t + 1]),
                        Matrix3::from_diagonal(&Vector3::new(20.0, 20.0, 100.0)),
                        EdgeKind::Odometry,
                    )
                    .unwrap();
            }
            graph
        };
        let mut a = build();
        let mut b = build();
        a.optimize(&OptimizerConfig::default()).unwrap();
        b.optimize(&OptimizerConfig::default()).unwrap();
        for (na, nb) in a.nodes().iter().zip(b.nodes()) {
            assert_eq!(na.pose.x.to_bits(), nb.pose.x.to_bits());
            assert_eq!(na.pose.y.to_bits(), nb.pose.y.to_bits());
            assert_eq!(na.pose.theta.to_bits(), nb.pose.theta.to_bits());
        }
    }

    #[test]
    fn disconnected_graph_names_unreachable_nodes() {
        let mut graph = PoseGraph::new();
        for t in 0..4 {
            graph.add_node(Pose2D::new(t as f64, 0.0, 0.0), t as f64);
        }
        graph
            .add_edge(
                0,
                1,
                Transform2D::new(1.0, 0.0, 0.0),
                info_identity(),
                EdgeKind::Odometry,
            )
            .unwrap();
        graph
            .add_edge(
                2,
                3,
                Transform2D::new(1.0, 0.0, 0.0),
                info_identity(),
                EdgeKind::Odometry,
            )
            .unwrap();
        match graph.optimize(&OptimizerConfig::default()) {
            Err(Error::Disconnected(nodes)) => assert_eq!(nodes, vec![2, 3]),
            other => panic!("expected Disconnected, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_edge_rejected() {
        let mut graph = PoseGraph::new();
        graph.add_node(Pose2D::origin(), 0.0);
        graph.add_node(Pose2D::new(1.0, 0.0, 0.0), 1.0);
        let t = Transform2D::new(1.0, 0.0, 0.0);
        graph
            .add_edge(0, 1, t, info_identity(), EdgeKind::Odometry)
            .unwrap();
        assert!(graph
            .add_edge(0, 1, t, info_identity(), EdgeKind::Odometry)
            .is_err());
        // Same pair under a different kind is a distinct constraint.
        assert!(graph
            .add_edge(0, 1, t, info_identity(), EdgeKind::IcpProximity)
            .is_ok());
    }

    #[test]
    fn non_positive_definite_information_rejected_at_build() {
        let mut graph = PoseGraph::new();
        graph.add_node(Pose2D::origin(), 0.0);
        graph.add_node(Pose2D::new(1.0, 0.0, 0.0), 1.0);
        let bad = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0));
        assert!(graph
            .add_edge(0, 1, Transform2D::identity(), bad, EdgeKind::Odometry)
            .is_err());
    }

    #[test]
    fn build_graph_counts() {
        let mut entries = Vec::new();
        for t in 0..3 {
            let mut fp = Fingerprint::new(t as f64);
            fp.insert("ap".into(), -50.0);
            entries.push(TrackEntry {
                timestamp: t as f64,
                pose: Pose2D::new(t as f64, 0.0, 0.0),
                fingerprint: fp,
            });
        }
        let track = FingerprintTrack::from_entries(entries).unwrap();
        let graph = build_graph(&track, &[], &InformationConfig::default()).unwrap();
        assert_eq!(graph.nodes().len(), 3);
        assert_eq!(graph.edges().len(), 2);

        let closure = LoopClosure {
            node_i: 2,
            node_j: 0,
            transform: Transform2D::new(2.0, 0.0, 0.0),
            residual: 0.1,
            source: ClosureSource::WifiSequence,
        };
        let graph = build_graph(&track, &[closure], &InformationConfig::default()).unwrap();
        assert_eq!(graph.edges().len(), 3);
        assert_eq!(graph.edges()[2].kind, EdgeKind::WifiLoop);
        assert_eq!(graph.edges()[2].from, 0);
        assert_eq!(graph.edges()[2].to, 2);
    }

    #[test]
    fn g2o_round_trip() {
        let truth = square_truth();
        let mut graph = PoseGraph::new();
        for (t, pose) in truth.iter().enumerate() {
            graph.add_node(*pose, t as f64);
        }
        for t in 0..3 {
            graph
                .add_edge(
                    t,
                    t + 1,
                    relative(truth[t], truth[t + 1]),
                    Matrix3::from_diagonal(&Vector3::new(20.0, 20.0, 100.0)),
                    EdgeKind::Odometry,
                )
                .unwrap();
        }
        graph
            .add_edge(
                0,
                3,
                relative(truth[0], truth[3]),
                info_identity(),
                EdgeKind::WifiLoop,
            )
            .unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("graph.g2o");
        graph.save_g2o(&path).unwrap();
        let loaded = PoseGraph::load_g2o(&path).unwrap();
        assert_eq!(loaded.nodes().len(), graph.nodes().len());
        assert_eq!(loaded.edges().len(), graph.edges().len());
        for (a, b) in graph.nodes().iter().zip(loaded.nodes()) {
            assert_eq!(a.pose.x.to_bits(), b.pose.x.to_bits());
            assert_eq!(a.pose.theta.to_bits(), b.pose.theta.to_bits());
        }
        for (a, b) in graph.edges().iter().zip(loaded.edges()) {
            assert_eq!(a.from, b.from);
            assert_eq!(a.to, b.to);
            assert_eq!(a.kind, b.kind);
            assert_eq!(a.measurement.dx.to_bits(), b.measurement.dx.to_bits());
            assert_eq!(a.information, b.information);
        }
    }
}
