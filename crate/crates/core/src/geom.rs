use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

pub const TAU: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn dist(self, other: Point) -> f64 {
        (self - other).norm()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point::new(-self.x, -self.y)
    }
}

/// Row-major 2x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Mat2 {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2 { a, b, c, d }
    }

    pub fn identity() -> Self {
        Mat2::new(1.0, 0.0, 0.0, 1.0)
    }

    pub fn det(self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(self) -> f64 {
        self.a + self.d
    }

    pub fn mul_vec(self, p: Point) -> Point {
        Point::new(self.a * p.x + self.b * p.y, self.c * p.x + self.d * p.y)
    }

    pub fn max_abs(self) -> f64 {
        self.a.abs().max(self.b.abs()).max(self.c.abs()).max(self.d.abs())
    }

    /// a*I + b*M
    pub fn affine_combination(scalar: f64, coeff: f64, m: Mat2) -> Mat2 {
        Mat2::new(
            scalar + coeff * m.a,
            coeff * m.b,
            coeff * m.c,
            scalar + coeff * m.d,
        )
    }

    /// Solve M x = rhs by Cramer's rule; None when the determinant underflows.
    pub fn solve(self, rhs: Point) -> Option<Point> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        Some(Point::new(
            (rhs.x * self.d - rhs.y * self.b) / det,
            (rhs.y * self.a - rhs.x * self.c) / det,
        ))
    }
}

/// Wrap an angle into [0, 2π).
pub fn wrap_angle(phi: f64) -> f64 {
    let mut w = phi % TAU;
    if w < 0.0 {
        w += TAU;
    }
    // rem can return exactly TAU after the correction when phi is a tiny negative
    if w >= TAU {
        w -= TAU;
    }
    w
}

/// Distance between two angles on the circle.
pub fn circle_dist(a: f64, b: f64) -> f64 {
    let d = (wrap_angle(a) - wrap_angle(b)).abs();
    d.min(TAU - d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_negative() {
        assert!((wrap_angle(-0.5) - (TAU - 0.5)).abs() < 1e-15);
        assert_eq!(wrap_angle(0.0), 0.0);
        assert!(wrap_angle(TAU) < 1e-15);
    }

    #[test]
    fn circle_dist_wraps() {
        assert!((circle_dist(0.1, TAU - 0.1) - 0.2).abs() < 1e-12);
        assert!((circle_dist(3.0, 1.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn solve_2x2() {
        let m = Mat2::new(2.0, 1.0, 1.0, 3.0);
        let x = m.solve(Point::new(5.0, 10.0)).unwrap();
        assert!((m.mul_vec(x) - Point::new(5.0, 10.0)).norm() < 1e-12);
    }
}
