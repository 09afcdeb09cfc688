//! Planar affine vector fields, their singularities, and quadratic first
//! integrals of the divergence-free ones.

use crate::error::{Error, Result};
use crate::geom::{Mat2, Point};
use serde::{Deserialize, Serialize};

/// Inputs within this distance of divergence zero are snapped onto it exactly,
/// so that the first-integral construction applies without residue.
const DIV_SNAP_TOL: f64 = 1e-12;
const ZERO_TOL: f64 = 1e-12;

/// F(x,y) = (e0 + e1 x + e2 y, f0 + f1 x + f2 y)
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineField {
    pub e0: f64,
    pub e1: f64,
    pub e2: f64,
    pub f0: f64,
    pub f1: f64,
    pub f2: f64,
}

impl AffineField {
    /// Builds the field, snapping f2 := -e1 when the divergence is within
    /// `1e-12` of zero so that divergence-free inputs stay exactly so.
    pub fn new(e0: f64, e1: f64, e2: f64, f0: f64, f1: f64, f2: f64) -> Self {
        for c in [e0, e1, e2, f0, f1, f2] {
            assert!(c.is_finite(), "field coefficients must be finite, got {c}");
        }
        let f2 = if (e1 + f2).abs() <= DIV_SNAP_TOL { -e1 } else { f2 };
        AffineField { e0, e1, e2, f0, f1, f2 }
    }

    pub fn constant(vx: f64, vy: f64) -> Self {
        AffineField::new(vx, 0.0, 0.0, vy, 0.0, 0.0)
    }

    pub fn eval(&self, p: Point) -> Point {
        Point::new(
            self.e0 + self.e1 * p.x + self.e2 * p.y,
            self.f0 + self.f1 * p.x + self.f2 * p.y,
        )
    }

    pub fn divergence(&self) -> f64 {
        self.e1 + self.f2
    }

    pub fn linear_part(&self) -> Mat2 {
        Mat2::new(self.e1, self.e2, self.f1, self.f2)
    }

    pub fn constant_part(&self) -> Point {
        Point::new(self.e0, self.f0)
    }

    /// Largest coefficient magnitude; reference scale for tolerances.
    pub fn scale(&self) -> f64 {
        [self.e0, self.e1, self.e2, self.f0, self.f1, self.f2]
            .iter()
            .fold(0.0f64, |m, c| m.max(c.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.scale() == 0.0
    }

    /// True when the linear part vanishes (relative to the field scale) but
    /// the field itself does not.
    pub fn is_constant(&self) -> bool {
        let tol = ZERO_TOL * (1.0 + self.scale());
        self.linear_part().max_abs() <= tol && !self.is_zero()
    }

    /// Time reversal.
    pub fn negated(&self) -> Self {
        AffineField {
            e0: -self.e0,
            e1: -self.e1,
            e2: -self.e2,
            f0: -self.f0,
            f1: -self.f1,
            f2: -self.f2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SingularityKind {
    NoSingularity,
    Center,
    Saddle,
    /// Invertible linear part with det > 0 and nonzero trace (never
    /// divergence-free); reported for totality of the public API.
    Spiral,
    DegenerateLine,
    DegeneratePlane,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SingularityReport {
    pub kind: SingularityKind,
    pub location: Option<Point>,
}

pub fn classify_singularity(field: &AffineField) -> SingularityReport {
    let scale = 1.0 + field.scale();
    let a = field.linear_part();
    let b = field.constant_part();
    let lin_tol = ZERO_TOL * scale;

    if a.max_abs() <= lin_tol {
        if b.norm() <= lin_tol {
            return SingularityReport { kind: SingularityKind::DegeneratePlane, location: None };
        }
        return SingularityReport { kind: SingularityKind::NoSingularity, location: None };
    }

    let det = a.det();
    let tr = a.trace();
    if det.abs() <= ZERO_TOL * scale * scale {
        // rank-one linear part: a line of zeros when -b lies in the range
        let location = degenerate_line_point(field);
        return SingularityReport { kind: SingularityKind::DegenerateLine, location };
    }

    let location = a.solve(-b).expect("invertible linear part");
    let kind = if det < 0.0 {
        SingularityKind::Saddle
    } else if tr.abs() <= lin_tol {
        SingularityKind::Center
    } else {
        SingularityKind::Spiral
    };
    SingularityReport { kind, location: Some(location) }
}

/// Min-norm solution of the dominant row when zeros exist on a line.
fn degenerate_line_point(field: &AffineField) -> Option<Point> {
    let a = field.linear_part();
    let b = field.constant_part();
    let row1 = Point::new(a.a, a.b);
    let row2 = Point::new(a.c, a.d);
    let (row, rhs) = if row1.norm_sq() >= row2.norm_sq() {
        (row1, -b.x)
    } else {
        (row2, -b.y)
    };
    if row.norm_sq() == 0.0 {
        return None;
    }
    let p = row * (rhs / row.norm_sq());
    let tol = 1e-10 * (1.0 + field.scale()) * (1.0 + p.norm());
    if field.eval(p).norm() <= tol {
        Some(p)
    } else {
        None
    }
}

/// H(x,y) = c10 x + c01 y + c11 xy + c20 x^2 + c02 y^2, constant term fixed
/// to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticIntegral {
    pub c10: f64,
    pub c01: f64,
    pub c11: f64,
    pub c20: f64,
    pub c02: f64,
}

impl QuadraticIntegral {
    pub fn eval(&self, p: Point) -> f64 {
        self.c10 * p.x
            + self.c01 * p.y
            + self.c11 * p.x * p.y
            + self.c20 * p.x * p.x
            + self.c02 * p.y * p.y
    }

    pub fn grad(&self, p: Point) -> Point {
        Point::new(
            self.c10 + self.c11 * p.y + 2.0 * self.c20 * p.x,
            self.c01 + self.c11 * p.x + 2.0 * self.c02 * p.y,
        )
    }

    pub fn scale(&self) -> f64 {
        [self.c10, self.c01, self.c11, self.c20, self.c02]
            .iter()
            .fold(0.0f64, |m, c| m.max(c.abs()))
    }
}

/// Conserved quantity of a divergence-free affine field: the field is the
/// Hamiltonian rotation of H, F = (∂H/∂y, -∂H/∂x).
pub fn first_integral(field: &AffineField) -> Result<QuadraticIntegral> {
    let div = field.divergence();
    if div != 0.0 {
        return Err(Error::NotDivergenceFree { div });
    }
    Ok(QuadraticIntegral {
        c10: -field.f0,
        c01: field.e0,
        c11: field.e1,
        c20: -field.f1 / 2.0,
        c02: field.e2 / 2.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divergence_of_divfree_is_exact_zero() {
        let f = AffineField::new(1.0, 0.5, 2.0, 3.0, -1.0, -0.5);
        assert_eq!(f.divergence(), 0.0);
        let g = AffineField::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert_eq!(g.divergence(), 2.0);
    }

    #[test]
    fn center_and_saddle() {
        // rotation-like linear field
        let center = AffineField::new(0.0, 0.0, 2.0, 0.0, -6.0, 0.0);
        let rep = classify_singularity(&center);
        assert_eq!(rep.kind, SingularityKind::Center);
        assert!(rep.location.unwrap().norm() < 1e-12);

        let saddle = AffineField::new(-1.0, 1.0, -4.0, 4.0, -4.0, -1.0);
        let rep = classify_singularity(&saddle);
        assert_eq!(rep.kind, SingularityKind::Saddle);
        let loc = rep.location.unwrap();
        assert!(loc.dist(Point::new(1.0, 0.0)) < 1e-12);
        assert!(saddle.eval(loc).norm() < 1e-12);
    }

    #[test]
    fn constant_field_has_no_singularity() {
        let f = AffineField::constant(2.0, -1.0);
        assert_eq!(classify_singularity(&f).kind, SingularityKind::NoSingularity);
        assert_eq!(
            classify_singularity(&AffineField::constant(0.0, 0.0)).kind,
            SingularityKind::DegeneratePlane
        );
    }

    #[test]
    fn shear_reports_degenerate_line() {
        let f = AffineField::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0); // (y, 0)
        let rep = classify_singularity(&f);
        assert_eq!(rep.kind, SingularityKind::DegenerateLine);
        let loc = rep.location.unwrap();
        assert!(f.eval(loc).norm() < 1e-12);
    }

    #[test]
    fn spiral_for_nonzero_trace() {
        let f = AffineField::new(0.0, 1.0, -1.0, 0.0, 1.0, 1.0);
        assert_eq!(classify_singularity(&f).kind, SingularityKind::Spiral);
    }

    #[test]
    fn integral_formula_matches_hand_examples() {
        // constant horizontal flow conserves height
        let h = first_integral(&AffineField::constant(1.0, 0.0)).unwrap();
        assert_eq!((h.c10, h.c01, h.c11, h.c20, h.c02), (0.0, 1.0, 0.0, 0.0, 0.0));

        let f = AffineField::new(2.0, -1.0, 2.0, -1.0, -4.0, 1.0);
        let h = first_integral(&f).unwrap();
        // x + 2y + 2x^2 - xy + y^2
        assert_eq!((h.c10, h.c01, h.c11, h.c20, h.c02), (1.0, 2.0, -1.0, 2.0, 1.0));
        assert!((h.eval(Point::new(1.0, 0.0)) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn integral_is_conserved_symbolically() {
        let f = AffineField::new(0.3, 1.7, -0.4, -2.2, 5.0, -1.7);
        let h = first_integral(&f).unwrap();
        for i in 0..25 {
            let p = Point::new((i as f64 * 0.37).sin() * 3.0, (i as f64 * 0.71).cos() * 3.0);
            let r = h.grad(p).dot(f.eval(p));
            assert!(r.abs() < 1e-12 * (1.0 + h.scale()) * (1.0 + p.norm_sq()));
        }
    }

    #[test]
    fn non_divergence_free_is_rejected() {
        let f = AffineField::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(first_integral(&f), Err(Error::NotDivergenceFree { .. })));
    }
}
