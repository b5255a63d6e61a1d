//! Planar vectors, segments and axis-aligned rectangles.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// A point or displacement in the walking plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vector2 {
    pub x: f64,
    pub y: f64,
}

impl Vector2 {
    pub const ZERO: Vector2 = Vector2 { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dot(self, other: Vector2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    #[inline]
    pub fn cross(self, other: Vector2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn distance(self, other: Vector2) -> f64 {
        (other - self).norm()
    }

    #[inline]
    pub fn distance_sq(self, other: Vector2) -> f64 {
        (other - self).norm_sq()
    }

    /// Unit vector in the same direction, or zero for the zero vector.
    #[inline]
    pub fn normalized_or_zero(self) -> Vector2 {
        let n = self.norm();
        if n > 0.0 {
            self / n
        } else {
            Vector2::ZERO
        }
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Rescales to at most `max_norm`, keeping the direction.
    #[inline]
    pub fn clamp_norm(self, max_norm: f64) -> Vector2 {
        let n = self.norm();
        if n > max_norm {
            self * (max_norm / n)
        } else {
            self
        }
    }

    /// Componentwise clip into `[-bound, bound]^2`.
    #[inline]
    pub fn clamp_box(self, bound: f64) -> Vector2 {
        Vector2::new(self.x.clamp(-bound, bound), self.y.clamp(-bound, bound))
    }

    #[inline]
    pub fn component(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            _ => self.y,
        }
    }

    #[inline]
    pub fn component_mut(&mut self, axis: usize) -> &mut f64 {
        match axis {
            0 => &mut self.x,
            _ => &mut self.y,
        }
    }

    /// Left-hand perpendicular.
    #[inline]
    pub fn perp(self) -> Vector2 {
        Vector2::new(-self.y, self.x)
    }
}

impl Add for Vector2 {
    type Output = Vector2;
    #[inline]
    fn add(self, rhs: Vector2) -> Vector2 {
        Vector2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vector2 {
    type Output = Vector2;
    #[inline]
    fn sub(self, rhs: Vector2) -> Vector2 {
        Vector2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vector2 {
    type Output = Vector2;
    #[inline]
    fn mul(self, rhs: f64) -> Vector2 {
        Vector2::new(self.x * rhs, self.y * rhs)
    }
}

impl Mul<Vector2> for f64 {
    type Output = Vector2;
    #[inline]
    fn mul(self, rhs: Vector2) -> Vector2 {
        rhs * self
    }
}

impl Div<f64> for Vector2 {
    type Output = Vector2;
    #[inline]
    fn div(self, rhs: f64) -> Vector2 {
        Vector2::new(self.x / rhs, self.y / rhs)
    }
}

impl Neg for Vector2 {
    type Output = Vector2;
    #[inline]
    fn neg(self) -> Vector2 {
        Vector2::new(-self.x, -self.y)
    }
}

impl AddAssign for Vector2 {
    #[inline]
    fn add_assign(&mut self, rhs: Vector2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl SubAssign for Vector2 {
    #[inline]
    fn sub_assign(&mut self, rhs: Vector2) {
        self.x -= rhs.x;
        self.y -= rhs.y;
    }
}

impl From<[f64; 2]> for Vector2 {
    fn from(v: [f64; 2]) -> Self {
        Vector2::new(v[0], v[1])
    }
}

/// Closed axis-aligned rectangle `[min.x, max.x] x [min.y, max.y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Vector2,
    pub max: Vector2,
}

impl Rect {
    pub fn new(min: Vector2, max: Vector2) -> Self {
        Self { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn center(&self) -> Vector2 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: Vector2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn is_valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && self.min.x <= self.max.x && self.min.y <= self.max.y
    }
}

/// Parameter `t` in `[0, 1]` along `p0 -> p1` where it meets segment `a -> b`,
/// or `None` if the two closed segments do not intersect (parallel segments
/// never count as crossing).
pub fn segment_intersection(p0: Vector2, p1: Vector2, a: Vector2, b: Vector2) -> Option<f64> {
    let d = p1 - p0;
    let e = b - a;
    let denom = d.cross(e);
    if denom == 0.0 {
        return None;
    }
    let w = a - p0;
    let t = w.cross(e) / denom;
    let s = w.cross(d) / denom;
    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&s) {
        Some(t)
    } else {
        None
    }
}

/// Squared distance from `q` to the closed segment `p0 -> p1`.
pub fn segment_point_distance_sq(p0: Vector2, p1: Vector2, q: Vector2) -> f64 {
    let d = p1 - p0;
    let len_sq = d.norm_sq();
    let t = if len_sq == 0.0 { 0.0 } else { ((q - p0).dot(d) / len_sq).clamp(0.0, 1.0) };
    (p0 + d * t).distance_sq(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_point_distance() {
        let (a, b) = (Vector2::new(0.0, 0.0), Vector2::new(2.0, 0.0));
        assert_eq!(segment_point_distance_sq(a, b, Vector2::new(1.0, 0.5)), 0.25);
        assert_eq!(segment_point_distance_sq(a, b, Vector2::new(3.0, 0.0)), 1.0);
        assert_eq!(segment_point_distance_sq(a, a, Vector2::new(0.0, 2.0)), 4.0);
    }

    #[test]
    fn normalize_zero_is_zero() {
        assert_eq!(Vector2::ZERO.normalized_or_zero(), Vector2::ZERO);
        let u = Vector2::new(3.0, 4.0).normalized_or_zero();
        assert!((u.x - 0.6).abs() < 1e-15 && (u.y - 0.8).abs() < 1e-15);
    }

    #[test]
    fn clamp_box_clips_each_component() {
        assert_eq!(Vector2::new(2.0, -0.5).clamp_box(1.0), Vector2::new(1.0, -0.5));
    }

    #[test]
    fn crossing_segments() {
        let t = segment_intersection(
            Vector2::new(0.0, 0.0),
            Vector2::new(2.0, 0.0),
            Vector2::new(1.0, -1.0),
            Vector2::new(1.0, 1.0),
        );
        assert_eq!(t, Some(0.5));
        let none = segment_intersection(
            Vector2::new(0.0, 0.0),
            Vector2::new(0.5, 0.0),
            Vector2::new(1.0, -1.0),
            Vector2::new(1.0, 1.0),
        );
        assert_eq!(none, None);
        let parallel = segment_intersection(
            Vector2::new(0.0, 0.0),
            Vector2::new(0.0, 1.0),
            Vector2::new(1.0, -1.0),
            Vector2::new(1.0, 1.0),
        );
        assert_eq!(parallel, None);
    }
}
