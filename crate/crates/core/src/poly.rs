//! Bivariate quadratic polynomials and their restriction to a conic, which is
//! a trigonometric polynomial of degree two; root finding for the latter.

use crate::fields::AffineField;
use crate::geom::{circle_dist, wrap_angle, Point, TAU};

/// q(x,y) = c00 + c10 x + c01 y + c20 x^2 + c11 xy + c02 y^2
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Quad {
    pub c00: f64,
    pub c10: f64,
    pub c01: f64,
    pub c20: f64,
    pub c11: f64,
    pub c02: f64,
}

impl Quad {
    pub fn eval(&self, p: Point) -> f64 {
        self.c00
            + self.c10 * p.x
            + self.c01 * p.y
            + self.c20 * p.x * p.x
            + self.c11 * p.x * p.y
            + self.c02 * p.y * p.y
    }

    pub fn grad(&self, p: Point) -> Point {
        Point::new(
            self.c10 + 2.0 * self.c20 * p.x + self.c11 * p.y,
            self.c01 + self.c11 * p.x + 2.0 * self.c02 * p.y,
        )
    }

    /// Directional derivative (∇q)·F re-expanded as a quadratic. Exact:
    /// ∂q/∂x and ∂q/∂y are affine, so their products with the affine
    /// components of F stay quadratic.
    pub fn lie_along(&self, f: &AffineField) -> Quad {
        // ∂q/∂x = (c10) + (2 c20) x + (c11) y
        let px = (self.c10, 2.0 * self.c20, self.c11);
        // ∂q/∂y = (c01) + (c11) x + (2 c02) y
        let py = (self.c01, self.c11, 2.0 * self.c02);
        let fx = (f.e0, f.e1, f.e2);
        let fy = (f.f0, f.f1, f.f2);
        add_quads(affine_product(px, fx), affine_product(py, fy))
    }

    pub fn scale(&self) -> f64 {
        [self.c00, self.c10, self.c01, self.c20, self.c11, self.c02]
            .iter()
            .fold(0.0f64, |m, c| m.max(c.abs()))
    }
}

/// (p0 + p1 x + p2 y)(q0 + q1 x + q2 y) as a Quad.
fn affine_product(p: (f64, f64, f64), q: (f64, f64, f64)) -> Quad {
    Quad {
        c00: p.0 * q.0,
        c10: p.0 * q.1 + p.1 * q.0,
        c01: p.0 * q.2 + p.2 * q.0,
        c20: p.1 * q.1,
        c11: p.1 * q.2 + p.2 * q.1,
        c02: p.2 * q.2,
    }
}

fn add_quads(a: Quad, b: Quad) -> Quad {
    Quad {
        c00: a.c00 + b.c00,
        c10: a.c10 + b.c10,
        c01: a.c01 + b.c01,
        c20: a.c20 + b.c20,
        c11: a.c11 + b.c11,
        c02: a.c02 + b.c02,
    }
}

/// g(φ) = k0 + kc cos φ + ks sin φ + kc2 cos 2φ + ks2 sin 2φ
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrigPoly {
    pub k0: f64,
    pub kc: f64,
    pub ks: f64,
    pub kc2: f64,
    pub ks2: f64,
}

impl TrigPoly {
    /// Restriction of a Quad to the parametrized conic x = a cos φ, y = b sin φ,
    /// using cos² = (1+cos2φ)/2 and friends.
    pub fn restrict(q: &Quad, a: f64, b: f64) -> TrigPoly {
        TrigPoly {
            k0: q.c00 + (q.c20 * a * a + q.c02 * b * b) / 2.0,
            kc: q.c10 * a,
            ks: q.c01 * b,
            kc2: (q.c20 * a * a - q.c02 * b * b) / 2.0,
            ks2: q.c11 * a * b / 2.0,
        }
    }

    pub fn eval(&self, phi: f64) -> f64 {
        let (s, c) = phi.sin_cos();
        let (s2, c2) = (2.0 * phi).sin_cos();
        self.k0 + self.kc * c + self.ks * s + self.kc2 * c2 + self.ks2 * s2
    }

    pub fn deriv(&self) -> TrigPoly {
        TrigPoly {
            k0: 0.0,
            kc: self.ks,
            ks: -self.kc,
            kc2: 2.0 * self.ks2,
            ks2: -2.0 * self.kc2,
        }
    }

    pub fn scale(&self) -> f64 {
        [self.k0, self.kc, self.ks, self.kc2, self.ks2]
            .iter()
            .fold(0.0f64, |m, c| m.max(c.abs()))
    }

    /// g - c
    pub fn shifted(&self, c: f64) -> TrigPoly {
        TrigPoly { k0: self.k0 - c, ..*self }
    }

    /// All roots in [0, 2π), including double roots where the curve touches
    /// zero without a sign change. Dense sampling (`nodes` points) brackets the
    /// sign changes; local minima of |g| below a convergence threshold catch
    /// the tangent ones. Roots are refined to ~1e-12 and deduplicated.
    pub fn roots(&self, nodes: usize) -> Vec<f64> {
        let n = nodes.max(16);
        let scale = 1.0 + self.scale();
        let deriv = self.deriv();
        let vals: Vec<f64> = (0..n).map(|i| self.eval(TAU * i as f64 / n as f64)).collect();
        let mut found: Vec<f64> = Vec::new();

        for i in 0..n {
            let j = (i + 1) % n;
            let (a, b) = (vals[i], vals[j]);
            let t0 = TAU * i as f64 / n as f64;
            let t1 = TAU * (i + 1) as f64 / n as f64;
            if a == 0.0 {
                found.push(t0);
            } else if a * b < 0.0 {
                found.push(self.bracketed_root(t0, t1));
            }
        }

        // touching roots: |g| dips to ~0 at a sampled local minimum
        for i in 0..n {
            let prev = vals[(i + n - 1) % n].abs();
            let here = vals[i].abs();
            let next = vals[(i + 1) % n].abs();
            if here < prev && here < next && here < 1e-2 * scale {
                let t0 = TAU * i as f64 / n as f64;
                if let Some(r) = self.polish_touching(t0, &deriv, scale) {
                    found.push(r);
                }
            }
        }

        found = found.into_iter().map(wrap_angle).collect();
        found.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut out: Vec<f64> = Vec::new();
        for r in found {
            if out.iter().all(|o| circle_dist(*o, r) > 1e-7) {
                out.push(r);
            }
        }
        out
    }

    /// Bisection to a tight interval, then Newton.
    fn bracketed_root(&self, mut lo: f64, mut hi: f64) -> f64 {
        let mut flo = self.eval(lo);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let fm = self.eval(mid);
            if fm == 0.0 {
                return mid;
            }
            if flo * fm < 0.0 {
                hi = mid;
            } else {
                lo = mid;
                flo = fm;
            }
            if hi - lo < 1e-13 {
                break;
            }
        }
        let deriv = self.deriv();
        let mut x = 0.5 * (lo + hi);
        for _ in 0..4 {
            let d = deriv.eval(x);
            if d.abs() < 1e-300 {
                break;
            }
            let step = self.eval(x) / d;
            if !step.is_finite() {
                break;
            }
            x -= step;
        }
        x
    }

    /// Newton on g' locates the critical point; accepted as a root when |g|
    /// vanishes there within a scale-relative band.
    fn polish_touching(&self, start: f64, deriv: &TrigPoly, scale: f64) -> Option<f64> {
        let dd = deriv.deriv();
        let mut x = start;
        for _ in 0..40 {
            let d1 = deriv.eval(x);
            let d2 = dd.eval(x);
            if d2.abs() < 1e-300 {
                return None;
            }
            let step = d1 / d2;
            if !step.is_finite() {
                return None;
            }
            x -= step;
            if step.abs() < 1e-14 {
                break;
            }
        }
        if self.eval(x).abs() <= 1e-9 * scale {
            Some(x)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restriction_matches_direct_evaluation() {
        let q = Quad { c00: 0.3, c10: -1.2, c01: 0.7, c20: 2.0, c11: -0.5, c02: 1.1 };
        let (a, b) = (2.0, 0.7);
        let g = TrigPoly::restrict(&q, a, b);
        for i in 0..50 {
            let phi = TAU * i as f64 / 50.0;
            let p = Point::new(a * phi.cos(), b * phi.sin());
            assert!((g.eval(phi) - q.eval(p)).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let g = TrigPoly { k0: 0.1, kc: -2.0, ks: 0.5, kc2: 1.3, ks2: -0.8 };
        let d = g.deriv();
        let h = 1e-6;
        for i in 0..20 {
            let phi = TAU * i as f64 / 20.0;
            let fd = (g.eval(phi + h) - g.eval(phi - h)) / (2.0 * h);
            assert!((d.eval(phi) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn simple_roots_of_pure_cosine() {
        let g = TrigPoly { k0: 0.0, kc: 2.0, ks: 0.0, kc2: 0.0, ks2: 0.0 };
        let roots = g.roots(720);
        assert_eq!(roots.len(), 2);
        assert!((roots[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((roots[1] - 3.0 * std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn touching_root_is_found() {
        // (1 - cos φ) has a double root at 0
        let g = TrigPoly { k0: 1.0, kc: -1.0, ks: 0.0, kc2: 0.0, ks2: 0.0 };
        let roots = g.roots(720);
        assert_eq!(roots.len(), 1);
        assert!(roots[0].min(TAU - roots[0]) < 1e-6);
    }

    #[test]
    fn lie_along_matches_finite_differences() {
        let q = Quad { c00: 1.0, c10: -0.4, c01: 0.9, c20: 0.6, c11: 1.5, c02: -2.0 };
        let f = AffineField::new(0.5, 1.2, -0.3, -1.0, 0.8, -1.2);
        let lq = q.lie_along(&f);
        let h = 1e-6;
        for i in 0..20 {
            let p = Point::new((i as f64).sin() * 2.0, (i as f64).cos() * 2.0);
            let v = f.eval(p);
            let fd = (q.eval(p + v * h) - q.eval(p - v * h)) / (2.0 * h);
            // fd picks up O(h^2) curvature along the straightened ray only
            assert!((lq.eval(p) - fd).abs() < 1e-5);
        }
    }
}
