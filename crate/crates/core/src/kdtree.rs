//! Minimal 2D k-d tree for nearest-neighbor correspondence lookup.

use crate::geom::Point2;

#[derive(Debug, Clone, Copy)]
struct Node {
    point: u32,
    left: i32,
    right: i32,
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point2>,
    nodes: Vec<Node>,
    root: i32,
}

impl KdTree {
    pub fn build(points: &[Point2]) -> Self {
        let mut indices: Vec<u32> = (0..points.len() as u32).collect();
        let mut tree = KdTree {
            points: points.to_vec(),
            nodes: Vec::with_capacity(points.len()),
            root: -1,
        };
        let root = tree.build_recursive(&mut indices, 0);
        tree.root = root;
        tree
    }

    fn build_recursive(&mut self, indices: &mut [u32], depth: usize) -> i32 {
        if indices.is_empty() {
            return -1;
        }
        let axis = depth % 2;
        let median = indices.len() / 2;
        indices.select_nth_unstable_by(median, |&a, &b| {
            self.points[a as usize][axis]
                .partial_cmp(&self.points[b as usize][axis])
                .unwrap()
        });
        let point = indices[median];
        let node_id = self.nodes.len() as i32;
        self.nodes.push(Node {
            point,
            left: -1,
            right: -1,
        });
        let (lo, rest) = indices.split_at_mut(median);
        let hi = &mut rest[1..];
        let left = self.build_recursive(lo, depth + 1);
        let right = self.build_recursive(hi, depth + 1);
        self.nodes[node_id as usize].left = left;
        self.nodes[node_id as usize].right = right;
        node_id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the nearest stored point within
    /// `radius` of `query`, or `None` when no point is that close.
    pub fn nearest_within(&self, query: Point2, radius: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut bound_sq = radius * radius;
        self.search(self.root, query, 0, &mut best, &mut bound_sq);
        best
    }

    fn search(
        &self,
        node_id: i32,
        query: Point2,
        depth: usize,
        best: &mut Option<(usize, f64)>,
        bound_sq: &mut f64,
    ) {
        if node_id < 0 {
            return;
        }
        let node = self.nodes[node_id as usize];
        let p = self.points[node.point as usize];
        let d_sq = (p - query).norm_squared();
        let better = match *best {
            None => d_sq <= *bound_sq,
            Some((bi, bd)) => d_sq < bd || (d_sq == bd && (node.point as usize) < bi),
        };
        if better && d_sq <= *bound_sq {
            *best = Some((node.point as usize, d_sq));
            *bound_sq = d_sq;
        }

        let axis = depth % 2;
        let diff = query[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(near, query, depth + 1, best, bound_sq);
        if diff * diff <= *bound_sq {
            self.search(far, query, depth + 1, best, bound_sq);
        }
    }
}
