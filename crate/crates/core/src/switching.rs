//! The switching conic h = inv_u2 x^2 + inv_v2 y^2 - level, Lie derivatives of
//! h along the pieces, region classification, tangency orders, and the
//! Filippov sliding field.

use crate::error::{Error, Result};
use crate::fields::AffineField;
use crate::geom::{wrap_angle, Point};
use crate::poly::{Quad, TrigPoly};
use crate::system::PiecewiseSystem;
use serde::{Deserialize, Serialize};

/// Relative half-width of the band treated as "Lie derivative zero".
pub const TANG_TOL: f64 = 1e-9;
/// Sampling density for the tangency sweep.
const SWEEP_NODES: usize = 720;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchingConic {
    pub inv_u2: f64,
    pub inv_v2: f64,
    pub level: f64,
}

impl SwitchingConic {
    pub fn new(inv_u2: f64, inv_v2: f64, level: f64) -> Result<Self> {
        if !(inv_u2 > 0.0 && inv_v2 > 0.0 && level > 0.0)
            || !(inv_u2.is_finite() && inv_v2.is_finite() && level.is_finite())
        {
            return Err(Error::InvalidConic { inv_u2, inv_v2, level });
        }
        Ok(SwitchingConic { inv_u2, inv_v2, level })
    }

    pub fn unit_circle() -> Self {
        SwitchingConic { inv_u2: 1.0, inv_v2: 1.0, level: 1.0 }
    }

    pub fn is_unit_circle(&self) -> bool {
        self.inv_u2 == 1.0 && self.inv_v2 == 1.0 && self.level == 1.0
    }

    pub fn h(&self, p: Point) -> f64 {
        self.inv_u2 * p.x * p.x + self.inv_v2 * p.y * p.y - self.level
    }

    pub fn grad_h(&self, p: Point) -> Point {
        Point::new(2.0 * self.inv_u2 * p.x, 2.0 * self.inv_v2 * p.y)
    }

    /// (a, b) with the curve parametrized as (a cos φ, b sin φ).
    pub fn semi_axes(&self) -> (f64, f64) {
        ((self.level / self.inv_u2).sqrt(), (self.level / self.inv_v2).sqrt())
    }

    pub fn angle_point(&self, phi: f64) -> Point {
        let (a, b) = self.semi_axes();
        Point::new(a * phi.cos(), b * phi.sin())
    }

    /// Parameter angle of a point at or near the curve.
    pub fn angle_of(&self, p: Point) -> f64 {
        let (a, b) = self.semi_axes();
        wrap_angle((p.y / b).atan2(p.x / a))
    }

    /// Tangent vector d/dφ of angle_point.
    pub fn tangent(&self, phi: f64) -> Point {
        let (a, b) = self.semi_axes();
        Point::new(-a * phi.sin(), b * phi.cos())
    }

    pub fn as_quad(&self) -> Quad {
        Quad { c00: -self.level, c20: self.inv_u2, c02: self.inv_v2, ..Quad::default() }
    }
}

/// k-th Lie derivative of h along F as a bivariate polynomial (k >= 1).
/// Exact coefficient arithmetic; each application keeps the degree at two.
pub fn lie_poly(field: &AffineField, conic: &SwitchingConic, order: u32) -> Quad {
    assert!((1..=3).contains(&order), "supported orders are 1..=3");
    let mut q = conic.as_quad().lie_along(field);
    for _ in 1..order {
        q = q.lie_along(field);
    }
    q
}

/// ⟨F, ∇(F^{k-1}h)⟩ at p.
pub fn lie_derivative(field: &AffineField, conic: &SwitchingConic, p: Point, order: u32) -> f64 {
    lie_poly(field, conic, order).eval(p)
}

/// Lie derivative of h restricted to the conic angle parametrization.
pub fn lie_on_conic(field: &AffineField, conic: &SwitchingConic) -> TrigPoly {
    let (a, b) = conic.semi_axes();
    TrigPoly::restrict(&lie_poly(field, conic, 1), a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SigmaKind {
    Crossing,
    Sliding,
    Escape,
    TangencyInner,
    TangencyOuter,
    TangencyBoth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaClassification {
    pub kind: SigmaKind,
    pub lie_inner: f64,
    pub lie_outer: f64,
}

/// Sign table on the switching curve with the inner piece on {h <= 0}:
/// crossing when the normal components agree, sliding when the inner one
/// points inward and the outer one outward, escape in the opposite case.
pub fn classify_on_sigma(sys: &PiecewiseSystem, phi: f64) -> SigmaClassification {
    let p = sys.conic.angle_point(phi);
    let li = lie_derivative(&sys.inner, &sys.conic, p, 1);
    let lo = lie_derivative(&sys.outer, &sys.conic, p, 1);
    let tol_i = TANG_TOL * (1.0 + sys.inner.scale());
    let tol_o = TANG_TOL * (1.0 + sys.outer.scale());
    let kind = match (li.abs() <= tol_i, lo.abs() <= tol_o) {
        (true, true) => SigmaKind::TangencyBoth,
        (true, false) => SigmaKind::TangencyInner,
        (false, true) => SigmaKind::TangencyOuter,
        (false, false) => {
            if li * lo > 0.0 {
                SigmaKind::Crossing
            } else if li < 0.0 {
                SigmaKind::Sliding
            } else {
                SigmaKind::Escape
            }
        }
    };
    SigmaClassification { kind, lie_inner: li, lie_outer: lo }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TangencyKind {
    Fold,
    Cusp,
    Higher,
}

/// Contact order of a field with the curve at a tangency point, together with
/// the first three Lie derivative values there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TangencyOrder {
    pub kind: TangencyKind,
    pub values: (f64, f64, f64),
}

pub fn tangency_order(field: &AffineField, conic: &SwitchingConic, p: Point) -> TangencyOrder {
    let l1 = lie_derivative(field, conic, p, 1);
    let l2 = lie_derivative(field, conic, p, 2);
    let l3 = lie_derivative(field, conic, p, 3);
    let sc = 1.0 + field.scale();
    let kind = if l2.abs() > TANG_TOL * sc * sc {
        TangencyKind::Fold
    } else if l3.abs() > TANG_TOL * sc * sc * sc {
        TangencyKind::Cusp
    } else {
        TangencyKind::Higher
    };
    TangencyOrder { kind, values: (l1, l2, l3) }
}

/// All angles where F is tangent to the conic, with contact orders. The
/// restricted Lie derivative has trigonometric degree two, so more than four
/// roots can only mean it is numerically degenerate.
pub fn tangency_points(
    field: &AffineField,
    conic: &SwitchingConic,
) -> Result<Vec<(f64, TangencyOrder)>> {
    if field.is_zero() {
        return Err(Error::DegenerateField);
    }
    let g = lie_on_conic(field, conic);
    let conic_scale = {
        let (a, b) = conic.semi_axes();
        2.0 * (conic.inv_u2 * a).max(conic.inv_v2 * b).max(1.0)
    };
    if g.scale() <= 1e-14 * (1.0 + field.scale()) * conic_scale {
        return Err(Error::TooManyRoots { found: SWEEP_NODES });
    }
    let roots = g.roots(SWEEP_NODES);
    if roots.len() > 4 {
        return Err(Error::TooManyRoots { found: roots.len() });
    }
    Ok(roots
        .into_iter()
        .map(|phi| (phi, tangency_order(field, conic, conic.angle_point(phi))))
        .collect())
}

/// Filippov convex combination (lo·X - li·Y)/(lo - li) at a sliding or escape
/// angle; tangent to the conic by construction.
pub fn sliding_field(sys: &PiecewiseSystem, phi: f64) -> Result<Point> {
    let class = classify_on_sigma(sys, phi);
    if !matches!(class.kind, SigmaKind::Sliding | SigmaKind::Escape) {
        return Err(Error::NotSlidingPoint { angle: phi });
    }
    let (li, lo) = (class.lie_inner, class.lie_outer);
    let denom = lo - li;
    if denom.abs() < 1e-14 * (1.0 + li.abs() + lo.abs()) {
        return Err(Error::DivisionDegenerate { angle: phi, denom });
    }
    let p = sys.conic.angle_point(phi);
    let xi = sys.inner.eval(p);
    let yo = sys.outer.eval(p);
    Ok((xi * lo - yo * li) * (1.0 / denom))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::TAU;

    const PI_2: f64 = std::f64::consts::FRAC_PI_2;

    #[test]
    fn lie_derivative_of_constant_field() {
        // F = (2,-1) against the unit circle: 2(2x) + (-1)(2y) = 4x - 2y
        let f = AffineField::constant(2.0, -1.0);
        let c = SwitchingConic::unit_circle();
        let s5 = 5f64.sqrt();
        let p = Point::new(-2.0 / s5, 1.0 / s5);
        assert!((lie_derivative(&f, &c, p, 1) + 2.0 * s5).abs() < 1e-12);
    }

    #[test]
    fn second_order_against_nested_first_order() {
        let f = AffineField::new(2.0, -1.0, 2.0, -1.0, -4.0, 1.0);
        let c = SwitchingConic::unit_circle();
        let l1 = lie_poly(&f, &c, 1);
        let p = Point::new(0.3, -0.8);
        // FD of L1 along the flow direction
        let h = 1e-6;
        let v = f.eval(p);
        let fd = (l1.eval(p + v * h) - l1.eval(p - v * h)) / (2.0 * h);
        assert!((lie_derivative(&f, &c, p, 2) - fd).abs() < 1e-5);
    }

    #[test]
    fn tangencies_of_horizontal_field() {
        let f = AffineField::constant(1.0, 0.0);
        let c = SwitchingConic::unit_circle();
        let t = tangency_points(&f, &c).unwrap();
        assert_eq!(t.len(), 2);
        assert!((t[0].0 - PI_2).abs() < 1e-10);
        assert!((t[1].0 - 3.0 * PI_2).abs() < 1e-10);
        assert!(matches!(t[0].1.kind, TangencyKind::Fold));
    }

    #[test]
    fn rotational_field_is_degenerate_on_circle() {
        let f = AffineField::new(0.0, 0.0, -1.0, 0.0, 1.0, 0.0); // (-y, x)
        let c = SwitchingConic::unit_circle();
        assert!(matches!(tangency_points(&f, &c), Err(Error::TooManyRoots { .. })));
    }

    #[test]
    fn constant_diag_field_fold_angles() {
        // folds of (2,-1) on the unit circle solve 4cos = 2sin
        let f = AffineField::constant(2.0, -1.0);
        let c = SwitchingConic::unit_circle();
        let t = tangency_points(&f, &c).unwrap();
        let expect = wrap_angle(2f64.atan2(1.0));
        assert_eq!(t.len(), 2);
        assert!((t[0].0 - expect).abs() < 1e-10);
        assert!((t[1].0 - (expect + std::f64::consts::PI)).abs() < 1e-10);
    }

    #[test]
    fn ellipse_angle_point_on_curve() {
        let c = SwitchingConic::new(0.25, 1.0, 1.0).unwrap();
        for i in 0..64 {
            let phi = TAU * i as f64 / 64.0;
            let p = c.angle_point(phi);
            assert!(c.h(p).abs() < 1e-14);
            assert!((c.angle_of(p) - phi).abs() < 1e-12 || (c.angle_of(p) - phi).abs() > TAU - 1e-12);
        }
    }
}
