//! SE(2) pose algebra shared by every other module.
//!
//! World frame is x-east, y-north, headings counterclockwise from the x-axis.
//! All angles are radians and are eagerly normalized to `(-pi, pi]` so that
//! residuals involving angle differences never see the wrap discontinuity.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

pub type Point2 = Vector2<f64>;

/// Wrap an angle to `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut a = theta % TAU;
    if a <= -PI {
        a += TAU;
    } else if a > PI {
        a -= TAU;
    }
    a
}

/// A robot pose in the plane: position plus heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// A rigid-body motion expressed in some pose's local frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform2D {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2D {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn origin() -> Self {
        Pose2D::new(0.0, 0.0, 0.0)
    }

    pub fn position(&self) -> Point2 {
        Vector2::new(self.x, self.y)
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        let (s, c) = self.theta.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    /// `self (+) t`: apply the local motion `t` to this pose.
    pub fn compose(&self, t: Transform2D) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(
            self.x + c * t.dx - s * t.dy,
            self.y + s * t.dx + c * t.dy,
            self.theta + t.dtheta,
        )
    }

    /// Transform a point from this pose's local frame into the world frame.
    pub fn transform_point(&self, p: Point2) -> Point2 {
        self.rotation() * p + self.position()
    }
}

/// Relative pose of `b` with respect to `a`, i.e. `a^-1 b`.
///
/// Satisfies `a.compose(relative(a, b)) == b` up to floating-point error.
pub fn relative(a: Pose2D, b: Pose2D) -> Transform2D {
    let (s, c) = a.theta.sin_cos();
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    Transform2D::new(c * dx + s * dy, -s * dx + c * dy, b.theta - a.theta)
}

impl Transform2D {
    pub fn new(dx: f64, dy: f64, dtheta: f64) -> Self {
        Transform2D {
            dx,
            dy,
            dtheta: normalize_angle(dtheta),
        }
    }

    pub fn identity() -> Self {
        Transform2D::new(0.0, 0.0, 0.0)
    }

    pub fn translation(&self) -> Point2 {
        Vector2::new(self.dx, self.dy)
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        let (s, c) = self.dtheta.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    /// Rotate `p` by `dtheta`, then translate by `(dx, dy)`.
    pub fn apply(&self, p: Point2) -> Point2 {
        self.rotation() * p + self.translation()
    }

    /// Group composition: `(self * other).apply(p) == self.apply(other.apply(p))`.
    pub fn compose(&self, other: Transform2D) -> Transform2D {
        let t = self.apply(other.translation());
        Transform2D::new(t.x, t.y, self.dtheta + other.dtheta)
    }

    pub fn inverse(&self) -> Transform2D {
        let (s, c) = self.dtheta.sin_cos();
        Transform2D::new(
            -(c * self.dx + s * self.dy),
            -(-s * self.dx + c * self.dy),
            -self.dtheta,
        )
    }

    /// Euclidean norm of the translation part.
    pub fn translation_norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }
}

/// Least-squares rigid alignment of two 2D point sets (Kabsch, no scale).
///
/// Returns the transform `T` minimizing `sum_i ||T(src[i]) - dst[i]||^2`.
/// The rotation is determinant-corrected so it is always proper.
/// Requires `src.len() == dst.len() >= 1`; with a single pair the rotation is
/// identity and only the translation is recovered.
pub fn rigid_align_2d(src: &[Point2], dst: &[Point2]) -> Transform2D {
    assert_eq!(src.len(), dst.len());
    assert!(!src.is_empty());
    let n = src.len() as f64;

    let mut src_c = Vector2::zeros();
    let mut dst_c = Vector2::zeros();
    for (s, d) in src.iter().zip(dst) {
        src_c += s;
        dst_c += d;
    }
    src_c /= n;
    dst_c /= n;

    // Cross-covariance of the centered sets.
    let mut h = Matrix2::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (d - dst_c) * (s - src_c).transpose();
    }

    let svd = h.svd(true, true);
    let u = svd.u.expect("2x2 svd");
    let v_t = svd.v_t.expect("2x2 svd");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        // Reflection case: flip the singular direction with the smaller value.
        let mut u2 = u;
        u2.column_mut(1).neg_mut();
        r = u2 * v_t;
    }

    let t = dst_c - r * src_c;
    Transform2D::new(t.x, t.y, r[(1, 0)].atan2(r[(0, 0)]))
}
