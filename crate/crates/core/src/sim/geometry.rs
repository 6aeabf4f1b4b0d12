//! Planar geometry in the world frame.
//!
//! The world frame is screen-like: `+y` points to the right of `+x`, so a
//! heading increases when the vehicle turns right. `dir(h) = (cos h, sin h)`
//! and the right-hand normal is `(-sin h, cos h)`.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector along `heading`.
    pub fn from_heading(heading: f64) -> Self {
        Self::new(heading.cos(), heading.sin())
    }

    /// Unit vector pointing to the right of `heading`.
    pub fn right_of(heading: f64) -> Self {
        Self::new(-heading.sin(), heading.cos())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// Positive when `o` lies to the right of `self`.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub position: Vec2,
    pub heading: f64,
}

impl Pose2D {
    pub fn new(position: Vec2, heading: f64) -> Self {
        Self {
            position,
            heading: wrap_angle(heading),
        }
    }

    /// Expresses a world point in this pose's frame as `(forward, right)`.
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        let d = p - self.position;
        Vec2::new(
            d.dot(Vec2::from_heading(self.heading)),
            d.dot(Vec2::right_of(self.heading)),
        )
    }

    pub fn to_world(&self, forward: f64, right: f64) -> Vec2 {
        self.position
            + Vec2::from_heading(self.heading) * forward
            + Vec2::right_of(self.heading) * right
    }
}

/// Oriented rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: Vec2,
    pub heading: f64,
    /// Half length along the heading, half width across it.
    pub half: Vec2,
}

impl Obb {
    pub fn corners(&self) -> [Vec2; 4] {
        let f = Vec2::from_heading(self.heading) * self.half.x;
        let r = Vec2::right_of(self.heading) * self.half.y;
        [
            self.center + f + r,
            self.center + f - r,
            self.center - f - r,
            self.center - f + r,
        ]
    }

    /// Euclidean distance from `p` to the rectangle (0 inside).
    pub fn distance_to(&self, p: Vec2) -> f64 {
        let pose = Pose2D {
            position: self.center,
            heading: self.heading,
        };
        let l = pose.to_local(p);
        let dx = (l.x.abs() - self.half.x).max(0.0);
        let dy = (l.y.abs() - self.half.y).max(0.0);
        dx.hypot(dy)
    }

    /// Separating-axis test against an axis-aligned box.
    pub fn intersects_aabb(&self, min: Vec2, max: Vec2) -> bool {
        let corners = self.corners();
        let project = |axis: Vec2, pts: &[Vec2]| {
            pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                let d = p.dot(axis);
                (lo.min(d), hi.max(d))
            })
        };
        let aabb = [
            min,
            Vec2::new(max.x, min.y),
            max,
            Vec2::new(min.x, max.y),
        ];
        let axes = [
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::from_heading(self.heading),
            Vec2::right_of(self.heading),
        ];
        axes.iter().all(|&axis| {
            let (a0, a1) = project(axis, &corners);
            let (b0, b1) = project(axis, &aabb);
            a1 >= b0 && b1 >= a0
        })
    }
}

/// Closest point on segment `ab` to `p`, with the segment parameter in [0, 1].
pub fn project_on_segment(p: Vec2, a: Vec2, b: Vec2) -> (Vec2, f64) {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 <= f64::EPSILON {
        return (a, 0.0);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    (a + ab * t, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_stays_in_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.1 + 4.0 * PI) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn right_normal_is_clockwise() {
        let r = Vec2::right_of(0.0);
        assert_eq!(r, Vec2::new(-0.0, 1.0));
        assert!(Vec2::new(1.0, 0.0).cross(Vec2::new(0.0, 1.0)) > 0.0);
    }

    #[test]
    fn obb_distance_and_overlap() {
        let b = Obb {
            center: Vec2::ZERO,
            heading: 0.0,
            half: Vec2::new(2.0, 1.0),
        };
        assert_eq!(b.distance_to(Vec2::new(1.0, 0.5)), 0.0);
        assert!((b.distance_to(Vec2::new(5.0, 0.0)) - 3.0).abs() < 1e-12);
        assert!(b.intersects_aabb(Vec2::new(1.5, -5.0), Vec2::new(10.0, 5.0)));
        assert!(!b.intersects_aabb(Vec2::new(2.5, -5.0), Vec2::new(10.0, 5.0)));
        let rotated = Obb {
            heading: PI / 4.0,
            ..b
        };
        // Corner reaches (2.12, 2.12) along the diagonal.
        assert!(rotated.intersects_aabb(Vec2::new(1.0, 1.0), Vec2::new(3.0, 3.0)));
    }
}
