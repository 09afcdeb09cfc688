//! Closing equations on the torus of intersection angles, their solution by
//! grid-seeded Newton, solution-set classification (empty / finite /
//! continuum), crossing certification, return-map stability, and homoclinic
//! connections.

use crate::error::{Error, Result};
use crate::fields::{classify_singularity, SingularityKind};
use crate::geom::{circle_dist, wrap_angle, Point, TAU};
use crate::poly::TrigPoly;
use crate::switching::{classify_on_sigma, SigmaKind, TANG_TOL};
use crate::system::{ClassTag, PiecewiseSystem};
use serde::Serialize;

const NEWTON_MAX_ITER: usize = 60;
const CONTINUATION_STEPS: usize = 20;
const CONTINUATION_STEP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Grid resolution per angle for seeding (the scan covers grid^2 cells).
    pub grid: usize,
    /// Absolute residual norm accepted as a solution.
    pub newton_tol: f64,
    /// Minimum angular separation between distinct solutions, and from the
    /// diagonal.
    pub min_sep: f64,
    /// Rank-deficiency threshold relative to the Jacobian norm.
    pub rank_tol: f64,
    /// Half-width of the neutral band around |P'| = 1.
    pub stab_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            grid: 720,
            newton_tol: 1e-11,
            min_sep: 1e-7,
            rank_tol: 1e-8,
            stab_tol: 1e-9,
        }
    }
}

/// Difference of each piece's integral between the two candidate points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosingResidual {
    pub d1: f64,
    pub d2: f64,
}

pub fn closing_residual(sys: &PiecewiseSystem, alpha: f64, theta: f64) -> ClosingResidual {
    let (h1, h2) = sys.integrals();
    let pa = sys.conic.angle_point(alpha);
    let pb = sys.conic.angle_point(theta);
    ClosingResidual { d1: h1.eval(pa) - h1.eval(pb), d2: h2.eval(pa) - h2.eval(pb) }
}

/// Rows are the two residual components, columns the derivatives in (α, θ).
pub fn residual_jacobian(sys: &PiecewiseSystem, alpha: f64, theta: f64) -> [[f64; 2]; 2] {
    let (g1, g2) = sys.boundary_integrals();
    let (d1, d2) = (g1.deriv(), g2.deriv());
    [[d1.eval(alpha), -d1.eval(theta)], [d2.eval(alpha), -d2.eval(theta)]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stability {
    Stable,
    Unstable,
    Neutral,
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossingCycle {
    pub alpha: f64,
    pub theta: f64,
    pub point_a: Point,
    pub point_b: Point,
    pub crossing_ok: bool,
    pub stability: Stability,
    /// Derivative of the full return map at the entry angle; NaN when a fold
    /// sits on the cycle (stability Undetermined).
    pub poincare_derivative: f64,
    pub is_homoclinic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ExclusionReason {
    /// A half-map derivative vanishes at a solution angle.
    Tangential,
    /// At least one point fails the crossing sign test.
    NotCrossing,
    /// Both points enter the same piece: the two arcs cannot concatenate.
    SameSide,
}

/// A solution of the closing equations that is not a certified cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExcludedSolution {
    pub alpha: f64,
    pub theta: f64,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ReportKind {
    Empty,
    Finite,
    Continuum,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionSetReport {
    pub kind: ReportKind,
    pub cycles: Vec<CrossingCycle>,
    /// Sample points (α, θ) along the solution curve when kind = Continuum.
    pub continuum_witness: Option<Vec<(f64, f64)>>,
    pub excluded: Vec<ExcludedSolution>,
}

/// Full pipeline: seed on an N×N torus grid, polish by damped Newton,
/// deduplicate, drop diagonal and tangential solutions, probe for a solution
/// continuum, certify crossing, enforce the class bound, then attach
/// stability and homoclinic flags.
pub fn find_cycles(sys: &PiecewiseSystem, config: &SolverConfig) -> Result<SolutionSetReport> {
    let (g1, g2) = sys.boundary_integrals();
    let (dg1, dg2) = (g1.deriv(), g2.deriv());
    let n = config.grid.max(8);

    let (v1, v2): (Vec<f64>, Vec<f64>) = {
        let mut v1 = Vec::with_capacity(n);
        let mut v2 = Vec::with_capacity(n);
        for i in 0..n {
            let phi = TAU * i as f64 / n as f64;
            v1.push(g1.eval(phi));
            v2.push(g2.eval(phi));
        }
        (v1, v2)
    };
    let res_scale = (1.0 + g1.scale().max(g2.scale())).powi(2);

    // A cell seeds a Newton run when both residual components change sign
    // among its corners, or when the squared norm has a small local minimum
    // (catching tangential double solutions that never change sign).
    let mut seeds: Vec<(f64, f64)> = Vec::new();
    let cell = TAU / n as f64;
    let norm_floor = 1e-4 * res_scale;
    for i in 0..n {
        let i1 = (i + 1) % n;
        for j in 0..n {
            let j1 = (j + 1) % n;
            let d1 = [v1[i] - v1[j], v1[i1] - v1[j], v1[i] - v1[j1], v1[i1] - v1[j1]];
            let d2 = [v2[i] - v2[j], v2[i1] - v2[j], v2[i] - v2[j1], v2[i1] - v2[j1]];
            let sign_change = |d: &[f64; 4]| {
                let (mut neg, mut pos) = (false, false);
                for v in d {
                    neg |= *v <= 0.0;
                    pos |= *v >= 0.0;
                }
                neg && pos
            };
            if sign_change(&d1) && sign_change(&d2) {
                seeds.push((cell * (i as f64 + 0.5), cell * (j as f64 + 0.5)));
            } else if d1[0] * d1[0] + d2[0] * d2[0] < norm_floor {
                let here = d1[0] * d1[0] + d2[0] * d2[0];
                let mut is_min = true;
                for (di, dj) in [(n - 1, 0), (1, 0), (0, n - 1), (0, 1)] {
                    let (ii, jj) = ((i + di) % n, (j + dj) % n);
                    let w1 = v1[ii] - v1[jj];
                    let w2 = v2[ii] - v2[jj];
                    if w1 * w1 + w2 * w2 < here {
                        is_min = false;
                        break;
                    }
                }
                if is_min {
                    seeds.push((cell * i as f64, cell * j as f64));
                }
            }
        }
    }

    // polish and collect
    let mut sols: Vec<(f64, f64)> = Vec::new();
    for (a0, t0) in seeds {
        if let Some((a, t)) = newton_polish(sys, a0, t0, config) {
            let (mut a, mut t) = (wrap_angle(a), wrap_angle(t));
            if a > t {
                std::mem::swap(&mut a, &mut t);
            }
            if circle_dist(a, t) < config.min_sep {
                continue; // the trivial diagonal family
            }
            let dup = sols.iter().any(|&(sa, st)| {
                (circle_dist(sa, a) < config.min_sep && circle_dist(st, t) < config.min_sep)
                    || (circle_dist(sa, t) < config.min_sep && circle_dist(st, a) < config.min_sep)
            });
            if !dup {
                sols.push((a, t));
            }
        }
    }
    sols.sort_by(|x, y| x.partial_cmp(y).unwrap());

    // tangential solutions are excluded from counting and certification
    let tang_tol_1 = TANG_TOL * (1.0 + g1.scale());
    let tang_tol_2 = TANG_TOL * (1.0 + g2.scale());
    let mut excluded: Vec<ExcludedSolution> = Vec::new();
    let mut candidates: Vec<(f64, f64)> = Vec::new();
    for (a, t) in sols {
        let tangential = dg1.eval(a).abs() < tang_tol_1
            || dg1.eval(t).abs() < tang_tol_1
            || dg2.eval(a).abs() < tang_tol_2
            || dg2.eval(t).abs() < tang_tol_2;
        if tangential {
            excluded.push(ExcludedSolution { alpha: a, theta: t, reason: ExclusionReason::Tangential });
        } else {
            candidates.push((a, t));
        }
    }

    // a one-parameter family reveals itself at any of its members
    for &(a, t) in candidates.iter().take(8) {
        if let Some(witness) = continuum_probe(sys, a, t, config) {
            return Ok(SolutionSetReport {
                kind: ReportKind::Continuum,
                cycles: Vec::new(),
                continuum_witness: Some(witness),
                excluded,
            });
        }
    }

    // crossing certification: both points must be in the crossing region and
    // the inner normal components must oppose, otherwise no closed curve can
    // be concatenated from the two arcs
    let mut cycles: Vec<CrossingCycle> = Vec::new();
    for (a, t) in candidates {
        let ca = classify_on_sigma(sys, a);
        let cb = classify_on_sigma(sys, t);
        let crossing = ca.kind == SigmaKind::Crossing && cb.kind == SigmaKind::Crossing;
        if !crossing {
            excluded.push(ExcludedSolution { alpha: a, theta: t, reason: ExclusionReason::NotCrossing });
            continue;
        }
        if ca.lie_inner * cb.lie_inner > 0.0 {
            excluded.push(ExcludedSolution { alpha: a, theta: t, reason: ExclusionReason::SameSide });
            continue;
        }
        cycles.push(CrossingCycle {
            alpha: a,
            theta: t,
            point_a: sys.conic.angle_point(a),
            point_b: sys.conic.angle_point(t),
            crossing_ok: true,
            stability: Stability::Undetermined,
            poincare_derivative: f64::NAN,
            is_homoclinic: false,
        });
    }

    if let Some(bound) = sys.class_bound() {
        if cycles.len() > bound {
            return Err(Error::BoundViolation { count: cycles.len(), bound });
        }
    }

    for cyc in cycles.iter_mut() {
        match poincare_derivative(sys, cyc) {
            Ok(p) => {
                cyc.poincare_derivative = p;
                cyc.stability = if p.abs() > 1.0 + config.stab_tol {
                    Stability::Unstable
                } else if p.abs() < 1.0 - config.stab_tol {
                    Stability::Stable
                } else {
                    Stability::Neutral
                };
            }
            Err(Error::FoldOnCycle { .. }) => {
                cyc.poincare_derivative = f64::NAN;
                cyc.stability = Stability::Undetermined;
            }
            Err(e) => return Err(e),
        }
    }

    let connections = detect_homoclinic(sys, config);
    for cyc in cycles.iter_mut() {
        cyc.is_homoclinic = connections.iter().any(|c| {
            (circle_dist(c.alpha, cyc.alpha) < 1e-6 && circle_dist(c.theta, cyc.theta) < 1e-6)
                || (circle_dist(c.alpha, cyc.theta) < 1e-6 && circle_dist(c.theta, cyc.alpha) < 1e-6)
        });
    }

    let kind = if cycles.is_empty() { ReportKind::Empty } else { ReportKind::Finite };
    Ok(SolutionSetReport { kind, cycles, continuum_witness: None, excluded })
}

/// Damped Newton on the closing residual; None when it fails to converge to
/// the configured absolute tolerance.
fn newton_polish(
    sys: &PiecewiseSystem,
    mut a: f64,
    mut t: f64,
    config: &SolverConfig,
) -> Option<(f64, f64)> {
    let mut r = closing_residual(sys, a, t);
    let mut rnorm = r.d1.hypot(r.d2);
    for _ in 0..NEWTON_MAX_ITER {
        if rnorm < config.newton_tol {
            return Some((a, t));
        }
        let j = residual_jacobian(sys, a, t);
        let (da, dt) = solve_step(&j, r.d1, r.d2)?;
        // backtracking line search; near a regular root the full step wins
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..10 {
            let (na, nt) = (a - lambda * da, t - lambda * dt);
            let nr = closing_residual(sys, na, nt);
            let nn = nr.d1.hypot(nr.d2);
            if nn < rnorm {
                a = na;
                t = nt;
                r = nr;
                rnorm = nn;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    if rnorm < config.newton_tol {
        Some((a, t))
    } else {
        None
    }
}

/// Newton step from a 2x2 solve, switching to a regularized least-squares
/// step when the Jacobian is near singular.
fn solve_step(j: &[[f64; 2]; 2], r1: f64, r2: f64) -> Option<(f64, f64)> {
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let jnorm2 = j[0][0] * j[0][0] + j[0][1] * j[0][1] + j[1][0] * j[1][0] + j[1][1] * j[1][1];
    if det.abs() > 1e-10 * jnorm2 {
        return Some((
            (r1 * j[1][1] - r2 * j[0][1]) / det,
            (r2 * j[0][0] - r1 * j[1][0]) / det,
        ));
    }
    // (JᵀJ + λI) δ = Jᵀ r
    let lam = 1e-8 * jnorm2.max(1e-300);
    let a11 = j[0][0] * j[0][0] + j[1][0] * j[1][0] + lam;
    let a12 = j[0][0] * j[0][1] + j[1][0] * j[1][1];
    let a22 = j[0][1] * j[0][1] + j[1][1] * j[1][1] + lam;
    let b1 = j[0][0] * r1 + j[1][0] * r2;
    let b2 = j[0][1] * r1 + j[1][1] * r2;
    let det2 = a11 * a22 - a12 * a12;
    if det2 == 0.0 || !det2.is_finite() {
        return None;
    }
    Some(((b1 * a22 - b2 * a12) / det2, (b2 * a11 - b1 * a12) / det2))
}

/// Smallest/largest singular values of a 2x2 matrix.
fn singular_values(j: &[[f64; 2]; 2]) -> (f64, f64) {
    // eigenvalues of JᵀJ
    let a = j[0][0] * j[0][0] + j[1][0] * j[1][0];
    let b = j[0][0] * j[0][1] + j[1][0] * j[1][1];
    let d = j[0][1] * j[0][1] + j[1][1] * j[1][1];
    let tr = a + d;
    let disc = ((a - d) * (a - d) + 4.0 * b * b).sqrt();
    let l1 = 0.5 * (tr + disc);
    let l2 = 0.5 * (tr - disc).max(0.0);
    (l2.sqrt(), l1.sqrt())
}

/// True when the solution sits on a one-parameter family: the Jacobian is
/// rank deficient at the point AND a predictor-corrector walk along the null
/// direction stays on the solution set. Returns the walked samples.
pub fn continuum_test(sys: &PiecewiseSystem, alpha: f64, theta: f64, config: &SolverConfig) -> bool {
    continuum_probe(sys, alpha, theta, config).is_some()
}

fn continuum_probe(
    sys: &PiecewiseSystem,
    alpha: f64,
    theta: f64,
    config: &SolverConfig,
) -> Option<Vec<(f64, f64)>> {
    let j = residual_jacobian(sys, alpha, theta);
    let (smin, smax) = singular_values(&j);
    if smin >= config.rank_tol * smax.max(1e-300) {
        return None;
    }
    let mut samples = vec![(alpha, theta)];
    let (mut a, mut t) = (alpha, theta);
    let mut dir = null_direction(&residual_jacobian(sys, a, t))?;
    for _ in 0..CONTINUATION_STEPS {
        // predictor
        let (mut pa, mut pt) = (a + CONTINUATION_STEP * dir.0, t + CONTINUATION_STEP * dir.1);
        // corrector: a few Newton steps pull the predictor back to the set
        for _ in 0..5 {
            let r = closing_residual(sys, pa, pt);
            if r.d1.hypot(r.d2) < config.newton_tol {
                break;
            }
            let j = residual_jacobian(sys, pa, pt);
            let (da, dt) = solve_step(&j, r.d1, r.d2)?;
            pa -= da;
            pt -= dt;
        }
        let r = closing_residual(sys, pa, pt);
        if r.d1.hypot(r.d2) >= 10.0 * config.newton_tol {
            return None;
        }
        // keep walking the same way
        let nd = null_direction(&residual_jacobian(sys, pa, pt))?;
        dir = if nd.0 * dir.0 + nd.1 * dir.1 >= 0.0 { nd } else { (-nd.0, -nd.1) };
        a = pa;
        t = pt;
        samples.push((wrap_angle(a), wrap_angle(t)));
    }
    Some(samples)
}

/// Unit right-singular vector for the smallest singular value.
fn null_direction(j: &[[f64; 2]; 2]) -> Option<(f64, f64)> {
    let a = j[0][0] * j[0][0] + j[1][0] * j[1][0];
    let b = j[0][0] * j[0][1] + j[1][0] * j[1][1];
    let d = j[0][1] * j[0][1] + j[1][1] * j[1][1];
    let tr = a + d;
    let disc = ((a - d) * (a - d) + 4.0 * b * b).sqrt();
    let lmin = 0.5 * (tr - disc);
    // (JᵀJ - λmin I) v = 0
    let (vx, vy) = if (a - lmin).abs() > b.abs() {
        (-b, a - lmin)
    } else if b.abs() > 0.0 {
        (d - lmin, -b)
    } else if a <= d {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let n = vx.hypot(vy);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some((vx / n, vy / n))
}

/// Derivative of the full return map at the cycle's entry angle (where the
/// inner normal component is negative): the product of the two half-map
/// derivatives obtained by implicit differentiation of g(ψ) = g(φ).
pub fn poincare_derivative(sys: &PiecewiseSystem, cycle: &CrossingCycle) -> Result<f64> {
    let (g1, g2) = sys.boundary_integrals();
    let (dg1, dg2) = (g1.deriv(), g2.deriv());
    let li_a = classify_on_sigma(sys, cycle.alpha).lie_inner;
    let (entry, exit) = if li_a < 0.0 {
        (cycle.alpha, cycle.theta)
    } else {
        (cycle.theta, cycle.alpha)
    };
    let vals = [
        (entry, dg1.eval(entry), 1.0 + g1.scale()),
        (exit, dg1.eval(exit), 1.0 + g1.scale()),
        (entry, dg2.eval(entry), 1.0 + g2.scale()),
        (exit, dg2.eval(exit), 1.0 + g2.scale()),
    ];
    for (angle, v, scale) in vals {
        if v.abs() < TANG_TOL * scale {
            return Err(Error::FoldOnCycle { angle, value: v });
        }
    }
    Ok((dg1.eval(entry) / dg1.eval(exit)) * (dg2.eval(exit) / dg2.eval(entry)))
}

/// One half-return: the other root of g(ψ) = g(φ) near `guess`.
pub fn half_map(g: &TrigPoly, from: f64, guess: f64) -> Option<f64> {
    let target = g.eval(from);
    let dg = g.deriv();
    let mut x = guess;
    for _ in 0..80 {
        let d = dg.eval(x);
        if d.abs() < 1e-300 {
            return None;
        }
        let step = (g.eval(x) - target) / d;
        if !step.is_finite() {
            return None;
        }
        x -= step;
        if step.abs() < 1e-14 {
            return Some(x);
        }
    }
    None
}

/// A saddle separatrix loop closed through a crossing arc of the other piece.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HomoclinicConnection {
    pub saddle: Point,
    pub level: f64,
    pub alpha: f64,
    pub theta: f64,
    pub point_a: Point,
    pub point_b: Point,
    /// Set when the saddle lies outside the closure of its own piece's
    /// domain; the connection is reported but its separatrices need not
    /// organize the visible dynamics.
    pub advisory_outside_domain: bool,
}

/// For each piece with a saddle: intersect the saddle's own level curve with
/// the switching conic and keep angle pairs whose closing residual in the
/// other piece vanishes and which certify as crossing points.
pub fn detect_homoclinic(sys: &PiecewiseSystem, config: &SolverConfig) -> Vec<HomoclinicConnection> {
    let (g1, g2) = sys.boundary_integrals();
    let mut out = Vec::new();
    for (own_field, own_g, other_g, inner_side) in
        [(&sys.inner, &g1, &g2, true), (&sys.outer, &g2, &g1, false)]
    {
        let rep = classify_singularity(own_field);
        if rep.kind != SingularityKind::Saddle {
            continue;
        }
        let saddle = rep.location.expect("saddle has a location");
        let h_at_saddle = sys.conic.h(saddle);
        let domain_tol = 1e-9 * (1.0 + sys.conic.level);
        let outside = if inner_side {
            h_at_saddle > domain_tol
        } else {
            h_at_saddle < -domain_tol
        };
        let h_own = if inner_side { sys.integrals().0 } else { sys.integrals().1 };
        let level = h_own.eval(saddle);
        let roots = own_g.shifted(level).roots(2048);
        // the saddle itself may sit on the conic; its angle is not a
        // crossing point (the field vanishes there)
        let field_scale = 1.0 + own_field.scale();
        let angles: Vec<f64> = roots
            .into_iter()
            .filter(|&phi| own_field.eval(sys.conic.angle_point(phi)).norm() > 1e-8 * field_scale)
            .collect();
        for i in 0..angles.len() {
            for j in (i + 1)..angles.len() {
                let (a, t) = (angles[i], angles[j]);
                let res = other_g.eval(a) - other_g.eval(t);
                if res.abs() >= config.newton_tol {
                    continue;
                }
                let ca = classify_on_sigma(sys, a);
                let cb = classify_on_sigma(sys, t);
                if ca.kind != SigmaKind::Crossing || cb.kind != SigmaKind::Crossing {
                    continue;
                }
                out.push(HomoclinicConnection {
                    saddle,
                    level,
                    alpha: a,
                    theta: t,
                    point_a: sys.conic.angle_point(a),
                    point_b: sys.conic.angle_point(t),
                    advisory_outside_domain: outside,
                });
            }
        }
    }
    out
}

/// Unique crossing-cycle candidate of a system whose inner piece is constant,
/// evaluated from the closed-form solution of the closing equations. Returns
/// None when the shared radicand is negative (no real solution).
pub fn constant_class_closed_form(sys: &PiecewiseSystem) -> Result<Option<(Point, Point)>> {
    if !matches!(sys.class_tag, ClassTag::ConstantCenter | ClassTag::ConstantSaddle) {
        return Err(Error::GenericityViolation {
            condition: "inner piece must be constant and the outer piece a center or saddle".into(),
        });
    }
    if !sys.conic.is_unit_circle() {
        return Err(Error::GenericityViolation {
            condition: "closed form is stated on the unit circle".into(),
        });
    }
    // inner = (eta, zeta) constant; outer = (delta + l x + k y, eps + m x - l y)
    let eta = sys.inner.e0;
    let zeta = sys.inner.f0;
    let delta = sys.outer.e0;
    let l = sys.outer.e1;
    let k = sys.outer.e2;
    let eps = sys.outer.f0;
    let m = sys.outer.f1;

    if zeta.abs() <= 1e-12 {
        return Err(Error::GenericityViolation {
            condition: "inner y-component is zero (ζ = 0)".into(),
        });
    }
    if (eta - zeta).abs() <= 1e-12 || (eta + zeta).abs() <= 1e-12 {
        return Err(Error::GenericityViolation {
            condition: "inner components are equal up to sign (η = ±ζ)".into(),
        });
    }
    if (l - (k + m) * zeta * eta / (zeta * zeta - eta * eta)).abs() <= 1e-12 {
        return Err(Error::GenericityViolation {
            condition: "outer shear coefficient hits the degenerate ratio l = (k+m)ζη/(ζ²−η²)".into(),
        });
    }

    let z = zeta;
    let e = eta;
    let s2 = z * z + e * e;
    let g = z * e * (k + m) + l * (e * e - z * z);
    let big_r = -delta * delta * z * z * s2
        + 2.0 * delta * z * e * eps * s2
        + e * e * (z * z * k * k + 2.0 * z * z * k * m + z * z * m * m - eps * eps * s2)
        - 2.0 * z * e * l * (z * z - e * e) * (k + m)
        + l * l * (z * z - e * e) * (z * z - e * e);
    let w = z * z * s2 * g * g * big_r;
    if w < 0.0 {
        return Ok(None);
    }
    let sw = w.sqrt();

    let z2 = z * z;
    let z3 = z2 * z;
    let z4 = z2 * z2;
    let z5 = z4 * z;
    let z6 = z4 * z2;
    let z7 = z6 * z;
    let e2 = e * e;
    let e3 = e2 * e;
    let e4 = e2 * e2;
    let e5 = e4 * e;
    let e6 = e4 * e2;

    let num_p = delta * z6 * e * k + delta * z4 * e3 * k - z5 * e2 * k * eps - z3 * e4 * k * eps
        - delta * z7 * l
        + delta * z3 * e4 * l
        + z6 * e * l * eps
        - z2 * e5 * l * eps
        + delta * z6 * e * m
        + delta * z4 * e3 * m
        - z5 * e2 * m * eps
        - z3 * e4 * m * eps;
    let num_q = -delta * z4 * e2 * k - delta * z2 * e4 * k
        + z3 * e3 * k * eps
        + z * e5 * k * eps
        + delta * z5 * e * l
        - delta * z * e5 * l
        - z4 * e2 * l * eps
        + e6 * l * eps
        - delta * z4 * e2 * m
        - delta * z2 * e4 * m
        + z3 * e3 * m * eps
        + z * e5 * m * eps;

    let d1 = z * s2 * g * g;
    let d2 = s2 * g * g;
    let p = (num_p + e * sw) / d1;
    let q = (num_q + sw) / d2;
    let r = (num_p - e * sw) / d1;
    let s = -(-num_q + sw) / d2;
    Ok(Some((Point::new(p, q), Point::new(r, s))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::AffineField;

    fn system(i: [f64; 6], o: [f64; 6]) -> PiecewiseSystem {
        PiecewiseSystem::on_unit_circle(
            AffineField::new(i[0], i[1], i[2], i[3], i[4], i[5]),
            AffineField::new(o[0], o[1], o[2], o[3], o[4], o[5]),
        )
        .unwrap()
    }

    #[test]
    fn residual_is_antisymmetric() {
        let sys = system([2., 0., 0., -1., 0., 0.], [2., -1., 2., -1., -4., 1.]);
        let r = closing_residual(&sys, 0.8, 2.3);
        let s = closing_residual(&sys, 2.3, 0.8);
        assert_eq!(r.d1, -s.d1);
        assert_eq!(r.d2, -s.d2);
        let z = closing_residual(&sys, 1.1, 1.1);
        assert_eq!((z.d1, z.d2), (0.0, 0.0));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let sys = system([2., 0., 0., -1., 0., 0.], [2., -1., 2., -1., -4., 1.]);
        let (a, t) = (0.7, 2.9);
        let j = residual_jacobian(&sys, a, t);
        let h = 1e-6;
        let fd = |f: &dyn Fn(f64, f64) -> f64, da: f64, dt: f64| {
            (f(a + h * da, t + h * dt) - f(a - h * da, t - h * dt)) / (2.0 * h)
        };
        let r1 = |a: f64, t: f64| closing_residual(&sys, a, t).d1;
        let r2 = |a: f64, t: f64| closing_residual(&sys, a, t).d2;
        assert!((j[0][0] - fd(&r1, 1.0, 0.0)).abs() < 1e-6);
        assert!((j[0][1] - fd(&r1, 0.0, 1.0)).abs() < 1e-6);
        assert!((j[1][0] - fd(&r2, 1.0, 0.0)).abs() < 1e-6);
        assert!((j[1][1] - fd(&r2, 0.0, 1.0)).abs() < 1e-6);
    }

    #[test]
    fn one_cycle_system_is_found_and_unstable() {
        let sys = system([2., 0., 0., -1., 0., 0.], [2., -1., 2., -1., -4., 1.]);
        let report = find_cycles(&sys, &SolverConfig::default()).unwrap();
        assert_eq!(report.kind, ReportKind::Finite);
        assert_eq!(report.cycles.len(), 1);
        let c = &report.cycles[0];
        let s5 = 5f64.sqrt();
        assert!(c.point_a.dist(Point::new(-2.0 / s5, 1.0 / s5)) < 1e-9);
        assert!(c.point_b.dist(Point::new(2.0 / s5, -1.0 / s5)) < 1e-9);
        assert_eq!(c.stability, Stability::Unstable);
        assert!(c.poincare_derivative > 1.0);
    }

    #[test]
    fn continuum_family_is_detected() {
        let sys = system([1., 0., 0., 0., 0., 0.], [0., 0., 2., 0., -6., 0.]);
        let report = find_cycles(&sys, &SolverConfig::default()).unwrap();
        assert_eq!(report.kind, ReportKind::Continuum);
        assert!(report.continuum_witness.is_some());
    }

    #[test]
    fn no_cycle_system_reports_empty() {
        let sys = system([0., 0., 0., -1., 0., 0.], [1., 0., 10., -1., -2., 0.]);
        let report = find_cycles(&sys, &SolverConfig::default()).unwrap();
        assert_eq!(report.kind, ReportKind::Empty);
        assert!(report.cycles.is_empty());
    }

    #[test]
    fn closed_form_matches_solver() {
        let sys = system([2., 0., 0., -1., 0., 0.], [2., -1., 2., -1., -4., 1.]);
        let (pa, pb) = constant_class_closed_form(&sys).unwrap().unwrap();
        let report = find_cycles(&sys, &SolverConfig::default()).unwrap();
        let c = &report.cycles[0];
        assert!(pa.dist(c.point_a).min(pa.dist(c.point_b)) < 1e-8);
        assert!(pb.dist(c.point_a).min(pb.dist(c.point_b)) < 1e-8);
    }

    #[test]
    fn closed_form_genericity_gates() {
        let sys = system([2., 0., 0., 0., 0., 0.], [2., -1., 2., -1., -4., 1.]);
        assert!(matches!(
            constant_class_closed_form(&sys),
            Err(Error::GenericityViolation { .. })
        ));
    }

    #[test]
    fn homoclinic_connection_of_reference_system() {
        let sys = system([-1., 1., -4., 4., -4., -1.], [-1., -1., -4., 4., 4., 1.]);
        let conns = detect_homoclinic(&sys, &SolverConfig::default());
        assert_eq!(conns.len(), 1);
        let c = &conns[0];
        assert!(c.saddle.dist(Point::new(1.0, 0.0)) < 1e-12);
        assert!((c.level + 2.0).abs() < 1e-12);
        let s17 = 17f64.sqrt();
        assert!(c.point_a.dist(Point::new(-1.0 / s17, 4.0 / s17)) < 1e-9);
        assert!(c.point_b.dist(Point::new(1.0 / s17, -4.0 / s17)) < 1e-9);
        assert!(!c.advisory_outside_domain);
    }
}
