//! Exact flows of the affine pieces, switching-event detection on the conic,
//! and Filippov concatenation with sliding arcs.

use crate::error::{Error, Result};
use crate::fields::AffineField;
use crate::geom::{Mat2, Point, TAU};
use crate::switching::{
    classify_on_sigma, lie_derivative, sliding_field, SigmaClassification, SigmaKind,
    SwitchingConic, TANG_TOL,
};
use crate::system::PiecewiseSystem;
use serde::Serialize;

const EVENT_TOL: f64 = 1e-12;
const MAX_EVENTS: usize = 10_000;
const SLIDE_STEP_RAD: f64 = 1e-3;
const STATIONARY_TOL: f64 = 1e-12;
/// Samples per characteristic period when hunting for the next event.
const EVENT_SAMPLES: f64 = 256.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FlowKind {
    Constant,
    Rotation,
    Hyperbolic,
    Shear,
    General,
}

/// Closed-form flow of an affine field, precomputed by spectral case.
#[derive(Debug, Clone, Copy)]
pub struct AffineFlow {
    pub field: AffineField,
    pub kind: FlowKind,
    /// Rotation frequency or hyperbolic rate (zero for Constant/Shear).
    pub freq: f64,
}

impl AffineFlow {
    pub fn new(field: AffineField) -> Self {
        let a = field.linear_part();
        let scale = 1.0 + field.scale();
        let tol = 1e-14 * scale;
        if a.max_abs() <= tol {
            return AffineFlow { field, kind: FlowKind::Constant, freq: 0.0 };
        }
        if a.trace().abs() <= tol {
            let det = a.det();
            let det_tol = 1e-14 * scale * scale;
            let (kind, freq) = if det > det_tol {
                (FlowKind::Rotation, det.sqrt())
            } else if det < -det_tol {
                (FlowKind::Hyperbolic, (-det).sqrt())
            } else {
                (FlowKind::Shear, 0.0)
            };
            return AffineFlow { field, kind, freq };
        }
        AffineFlow { field, kind: FlowKind::General, freq: 0.0 }
    }

    /// Φ_t(p): exact solution of x' = A x + b.
    ///
    /// For trace-free A the exponential is c(t) I + s(t) A and the drift
    /// integral ∫ e^{As} ds is C(t) I + S(t) A with (c, s, C, S) given per
    /// spectral case; the general case shifts by the trace.
    pub fn at(&self, t: f64, p: Point) -> Point {
        let a = self.field.linear_part();
        let b = self.field.constant_part();
        match self.kind {
            FlowKind::Constant => p + b * t,
            FlowKind::Rotation => {
                let w = self.freq;
                let (sin, cos) = (w * t).sin_cos();
                let e = Mat2::affine_combination(cos, sin / w, a);
                let phi = Mat2::affine_combination(sin / w, (1.0 - cos) / (w * w), a);
                e.mul_vec(p) + phi.mul_vec(b)
            }
            FlowKind::Hyperbolic => {
                let m = self.freq;
                let (ch, sh) = ((m * t).cosh(), (m * t).sinh());
                let e = Mat2::affine_combination(ch, sh / m, a);
                let phi = Mat2::affine_combination(sh / m, (ch - 1.0) / (m * m), a);
                e.mul_vec(p) + phi.mul_vec(b)
            }
            FlowKind::Shear => {
                // A² = 0: e^{At} = I + tA, ∫ = tI + t²/2 A
                let e = Mat2::affine_combination(1.0, t, a);
                let phi = Mat2::affine_combination(t, 0.5 * t * t, a);
                e.mul_vec(p) + phi.mul_vec(b)
            }
            FlowKind::General => self.general_at(t, p),
        }
    }

    fn general_at(&self, t: f64, p: Point) -> Point {
        let a = self.field.linear_part();
        let b = self.field.constant_part();
        let tr = a.trace();
        let half = 0.5 * tr;
        // B = A - (tr/2) I is trace-free
        let bb = Mat2::new(a.a - half, a.b, a.c, a.d - half);
        let det_b = bb.det();
        let scale = 1.0 + self.field.scale();
        let (c, s) = if det_b > 1e-14 * scale * scale {
            let w = det_b.sqrt();
            ((w * t).cos(), (w * t).sin() / w)
        } else if det_b < -1e-14 * scale * scale {
            let m = (-det_b).sqrt();
            ((m * t).cosh(), (m * t).sinh() / m)
        } else {
            (1.0, t)
        };
        let growth = (half * t).exp();
        let e_at = Mat2::new(
            growth * (c + s * bb.a),
            growth * s * bb.b,
            growth * s * bb.c,
            growth * (c + s * bb.d),
        );
        let det_a = a.det();
        if det_a.abs() > 1e-14 * scale * scale {
            // Φ(t) = A⁻¹ (e^{At} - I)
            let inv = Mat2::new(a.d / det_a, -a.b / det_a, -a.c / det_a, a.a / det_a);
            let em1 = Mat2::new(e_at.a - 1.0, e_at.b, e_at.c, e_at.d - 1.0);
            let phi = Mat2::new(
                inv.a * em1.a + inv.b * em1.c,
                inv.a * em1.b + inv.b * em1.d,
                inv.c * em1.a + inv.d * em1.c,
                inv.c * em1.b + inv.d * em1.d,
            );
            e_at.mul_vec(p) + phi.mul_vec(b)
        } else {
            // det A = 0, tr ≠ 0: A² = tr·A, e^{At} = I + (e^{tr t}-1)/tr · A
            let g = ((tr * t).exp() - 1.0) / tr;
            let phi = Mat2::affine_combination(t, (g - t) / tr, a);
            let e = Mat2::affine_combination(1.0, g, a);
            e.mul_vec(p) + phi.mul_vec(b)
        }
    }

    /// Characteristic time over which the orbit geometry changes by O(1),
    /// used to pace event sampling.
    fn time_scale(&self, p: Point, window: f64) -> f64 {
        let speed = self.field.eval(p).norm();
        let geo = match self.kind {
            FlowKind::Rotation => TAU / self.freq,
            FlowKind::Hyperbolic => 1.0 / self.freq,
            _ => f64::INFINITY,
        };
        let travel = if speed > 1e-12 { 4.0 / speed } else { f64::INFINITY };
        geo.min(travel).min(window)
    }
}

/// Earliest t in (0, t_max] with h(Φ_t(p)) = 0: adaptive sampling brackets the
/// sign change (with a dip check for grazing contacts), then bisection and a
/// Newton polish. None when the orbit stays off the curve.
pub fn next_switching_event(
    flow: &AffineFlow,
    conic: &SwitchingConic,
    p: Point,
    t_max: f64,
) -> Result<Option<(f64, f64)>> {
    if t_max <= 0.0 {
        return Ok(None);
    }
    let h_scale = 1.0 + conic.level;
    let h0 = conic.h(p);
    let on_sigma = h0.abs() <= 1e-9 * h_scale;
    if on_sigma {
        let l1 = lie_derivative(&flow.field, conic, p, 1);
        let l2 = lie_derivative(&flow.field, conic, p, 2);
        let sc = 1.0 + flow.field.scale();
        if l1.abs() <= TANG_TOL * sc && l2.abs() <= TANG_TOL * sc * sc {
            return Err(Error::StallOnSigma { angle: conic.angle_of(p) });
        }
    }

    let dt = flow.time_scale(p, t_max) / EVENT_SAMPLES;
    let dt = dt.min(t_max / 8.0).max(t_max * 1e-9);
    let hval = |t: f64| conic.h(flow.at(t, p));

    // Starting on the curve, arm the detector only after the orbit has
    // actually lifted off, so the departure root at t = 0 is not re-found.
    let mut armed = !on_sigma;
    let lift = 1e-8 * h_scale;

    let mut t_prev = 0.0;
    let mut h_prev = h0;
    let mut steps = 0usize;
    let max_steps = ((t_max / dt).ceil() as usize).saturating_add(2);
    while t_prev < t_max && steps <= max_steps + 8 {
        steps += 1;
        let t_next = (t_prev + dt).min(t_max);
        let h_next = hval(t_next);
        if !armed {
            if h_next.abs() > lift {
                armed = true;
                // the sign on lift-off defines the side being left
                h_prev = h_next;
                t_prev = t_next;
                continue;
            }
            if t_next >= t_max {
                break;
            }
            t_prev = t_next;
            continue;
        }
        if h_prev * h_next < 0.0 {
            let t_star = refine_crossing(flow, conic, p, t_prev, t_next);
            return Ok(Some((t_star, conic.angle_of(flow.at(t_star, p)))));
        }
        // grazing: |h| dips toward zero inside the cell without a sign change
        if h_next * h_prev > 0.0 && h_next.abs() < 0.05 * h_scale {
            let t_mid = 0.5 * (t_prev + t_next);
            let h_mid = hval(t_mid);
            if h_mid.abs() < h_prev.abs() && h_mid.abs() < h_next.abs() {
                if let Some(t_star) = refine_grazing(flow, conic, p, t_prev, t_next, h_scale) {
                    return Ok(Some((t_star, conic.angle_of(flow.at(t_star, p)))));
                }
            }
        }
        t_prev = t_next;
        h_prev = h_next;
    }
    Ok(None)
}

fn refine_crossing(
    flow: &AffineFlow,
    conic: &SwitchingConic,
    p: Point,
    mut lo: f64,
    mut hi: f64,
) -> f64 {
    let hval = |t: f64| conic.h(flow.at(t, p));
    let mut h_lo = hval(lo);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let h_mid = hval(mid);
        if h_mid == 0.0 {
            return mid;
        }
        if h_lo * h_mid < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            h_lo = h_mid;
        }
        if hi - lo < 1e-15 * (1.0 + hi.abs()) {
            break;
        }
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..4 {
        let x = flow.at(t, p);
        let h = conic.h(x);
        if h.abs() <= EVENT_TOL {
            break;
        }
        let dh = lie_derivative(&flow.field, conic, x, 1);
        if dh.abs() < 1e-300 {
            break;
        }
        let step = h / dh;
        if !step.is_finite() {
            break;
        }
        t -= step;
        t = t.clamp(lo - (hi - lo), hi + (hi - lo));
    }
    t
}

/// Minimize |h| over a suspicious cell; a grazing contact counts as an event
/// only when the minimum actually reaches the curve.
fn refine_grazing(
    flow: &AffineFlow,
    conic: &SwitchingConic,
    p: Point,
    mut lo: f64,
    mut hi: f64,
    h_scale: f64,
) -> Option<f64> {
    let hval = |t: f64| conic.h(flow.at(t, p));
    // golden-section on h² (unimodal near the graze)
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - gr * (hi - lo);
    let mut d = lo + gr * (hi - lo);
    let mut fc = hval(c).powi(2);
    let mut fd = hval(d).powi(2);
    for _ in 0..90 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - gr * (hi - lo);
            fc = hval(c).powi(2);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + gr * (hi - lo);
            fd = hval(d).powi(2);
        }
    }
    let t = 0.5 * (lo + hi);
    let h_min = hval(t);
    if h_min.abs() <= 1e-10 * h_scale {
        Some(t)
    } else {
        // the dip crossed zero twice: take the earlier crossing
        if h_min * hval(lo - (hi - lo).max(1e-18)) < 0.0 {
            Some(refine_crossing(flow, conic, p, lo - (hi - lo).max(1e-18), t))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ArcPiece {
    Inner,
    Outer,
    Sliding,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryArc {
    pub piece: ArcPiece,
    pub t0: f64,
    pub t1: f64,
    pub start: Point,
    pub end: Point,
    pub samples: Vec<Point>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryEvent {
    pub time: f64,
    pub angle: f64,
    pub classification: SigmaClassification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilippovTrajectory {
    pub arcs: Vec<TrajectoryArc>,
    pub events: Vec<TrajectoryEvent>,
    pub mode: Mode,
    pub reached_equilibrium: bool,
    /// Second forward continuation when the start lies in a region of Σ from
    /// which both pieces point away (non-unique orbit).
    pub alternative: Option<Box<FilippovTrajectory>>,
}

impl FilippovTrajectory {
    pub fn end_point(&self) -> Option<Point> {
        self.arcs.last().map(|a| a.end)
    }

    pub fn total_time(&self) -> f64 {
        self.arcs.last().map(|a| a.t1).unwrap_or(0.0)
    }
}

/// Filippov orbit through p0: exact arcs concatenated at crossing events,
/// sliding arcs where both pieces push onto the curve, release at folds.
/// Backward mode integrates the time-reversed fields (Inner/Outer labels keep
/// naming the regions).
pub fn integrate_filippov(
    sys: &PiecewiseSystem,
    p0: Point,
    t_max: f64,
    mode: Mode,
    samples_per_arc: usize,
) -> Result<FilippovTrajectory> {
    let work = match mode {
        Mode::Forward => *sys,
        Mode::Backward => sys.time_reversed(),
    };
    let mut traj = FilippovTrajectory {
        arcs: Vec::new(),
        events: Vec::new(),
        mode,
        reached_equilibrium: false,
        alternative: None,
    };
    let h_scale = 1.0 + work.conic.level;
    let on_tol = 1e-9 * h_scale;

    let h0 = work.conic.h(p0);
    if h0.abs() <= on_tol {
        let phi = work.conic.angle_of(p0);
        let class = classify_on_sigma(&work, phi);
        if class.kind == SigmaKind::Sliding {
            // both pieces leave the curve here: the forward orbit is not
            // unique; produce the inner continuation and attach the outer one
            let mut primary = integrate_from_region(&work, p0, t_max, ArcPiece::Inner, samples_per_arc, mode)?;
            let alt = integrate_from_region(&work, p0, t_max, ArcPiece::Outer, samples_per_arc, mode)?;
            primary.alternative = Some(Box::new(alt));
            return Ok(primary);
        }
    }
    run_filippov(&work, p0, t_max, samples_per_arc, &mut traj)?;
    Ok(traj)
}

fn integrate_from_region(
    work: &PiecewiseSystem,
    p0: Point,
    t_max: f64,
    piece: ArcPiece,
    samples_per_arc: usize,
    mode: Mode,
) -> Result<FilippovTrajectory> {
    let mut traj = FilippovTrajectory {
        arcs: Vec::new(),
        events: Vec::new(),
        mode,
        reached_equilibrium: false,
        alternative: None,
    };
    let mut state = State { t: 0.0, p: p0, region: Some(piece) };
    advance_until_done(work, &mut state, t_max, samples_per_arc, &mut traj)?;
    Ok(traj)
}

struct State {
    t: f64,
    p: Point,
    /// Forced region for the next smooth arc (used on Σ); None decides from h.
    region: Option<ArcPiece>,
}

fn run_filippov(
    work: &PiecewiseSystem,
    p0: Point,
    t_max: f64,
    samples_per_arc: usize,
    traj: &mut FilippovTrajectory,
) -> Result<()> {
    let mut state = State { t: 0.0, p: p0, region: None };
    advance_until_done(work, &mut state, t_max, samples_per_arc, traj)
}

fn advance_until_done(
    work: &PiecewiseSystem,
    state: &mut State,
    t_max: f64,
    samples_per_arc: usize,
    traj: &mut FilippovTrajectory,
) -> Result<()> {
    let h_scale = 1.0 + work.conic.level;
    let on_tol = 1e-9 * h_scale;
    while state.t < t_max {
        if traj.events.len() > MAX_EVENTS {
            return Err(Error::EventLoopGuard { max: MAX_EVENTS });
        }
        let h = work.conic.h(state.p);
        let region = state.region.take().unwrap_or(if h < -on_tol {
            ArcPiece::Inner
        } else if h > on_tol {
            ArcPiece::Outer
        } else {
            // on the curve: decide from the classification
            let phi = work.conic.angle_of(state.p);
            let class = classify_on_sigma(work, phi);
            match class.kind {
                SigmaKind::Crossing => {
                    if class.lie_inner > 0.0 {
                        ArcPiece::Outer
                    } else {
                        ArcPiece::Inner
                    }
                }
                SigmaKind::Escape => {
                    // both pieces push onto the curve: slide
                    slide(work, state, t_max, samples_per_arc, traj)?;
                    continue;
                }
                SigmaKind::Sliding => {
                    // reached only as an initial condition; default inner
                    ArcPiece::Inner
                }
                SigmaKind::TangencyInner => {
                    let p = work.conic.angle_point(phi);
                    let l2 = lie_derivative(&work.inner, &work.conic, p, 2);
                    if l2 > 0.0 {
                        if class.lie_outer > 0.0 {
                            ArcPiece::Outer
                        } else {
                            slide(work, state, t_max, samples_per_arc, traj)?;
                            continue;
                        }
                    } else {
                        ArcPiece::Inner
                    }
                }
                SigmaKind::TangencyOuter => {
                    let p = work.conic.angle_point(phi);
                    let l2 = lie_derivative(&work.outer, &work.conic, p, 2);
                    if l2 < 0.0 {
                        if class.lie_inner < 0.0 {
                            ArcPiece::Inner
                        } else {
                            slide(work, state, t_max, samples_per_arc, traj)?;
                            continue;
                        }
                    } else {
                        ArcPiece::Outer
                    }
                }
                SigmaKind::TangencyBoth => {
                    return Err(Error::StallOnSigma { angle: phi });
                }
            }
        });

        let field = match region {
            ArcPiece::Inner => work.inner,
            ArcPiece::Outer => work.outer,
            ArcPiece::Sliding => unreachable!("sliding handled separately"),
        };
        if field.eval(state.p).norm() < STATIONARY_TOL * (1.0 + field.scale()) {
            traj.reached_equilibrium = true;
            return Ok(());
        }
        let flow = AffineFlow::new(field);
        let remaining = t_max - state.t;
        match next_switching_event(&flow, &work.conic, state.p, remaining)? {
            None => {
                push_smooth_arc(&flow, region, state, remaining, samples_per_arc, traj);
                return Ok(());
            }
            Some((dt, angle)) => {
                push_smooth_arc(&flow, region, state, dt, samples_per_arc, traj);
                let class = classify_on_sigma(work, angle);
                traj.events.push(TrajectoryEvent { time: state.t, angle, classification: class });
                state.p = work.conic.angle_point(angle);
                match class.kind {
                    SigmaKind::Crossing => {
                        state.region = Some(match region {
                            ArcPiece::Inner => ArcPiece::Outer,
                            _ => ArcPiece::Inner,
                        });
                    }
                    SigmaKind::Escape => {
                        // attracting contact: slide
                        slide(work, state, t_max, samples_per_arc, traj)?;
                    }
                    SigmaKind::Sliding => {
                        // repelling contact cannot be reached forward in
                        // time from off the curve; treat as crossing back
                        state.region = Some(match region {
                            ArcPiece::Inner => ArcPiece::Outer,
                            _ => ArcPiece::Inner,
                        });
                    }
                    SigmaKind::TangencyInner | SigmaKind::TangencyOuter => {
                        let grazing_inner = class.kind == SigmaKind::TangencyInner;
                        let own_grazing = (grazing_inner && region == ArcPiece::Inner)
                            || (!grazing_inner && region == ArcPiece::Outer);
                        if own_grazing {
                            // own fold: the orbit touches the curve and stays
                            // in its region unless the contact pushes across
                            let p = state.p;
                            let own = if grazing_inner { &work.inner } else { &work.outer };
                            let l2 = lie_derivative(own, &work.conic, p, 2);
                            let pokes_out = (grazing_inner && l2 > 0.0) || (!grazing_inner && l2 < 0.0);
                            if pokes_out {
                                let other_lie = if grazing_inner { class.lie_outer } else { class.lie_inner };
                                let other_carries = (grazing_inner && other_lie > 0.0)
                                    || (!grazing_inner && other_lie < 0.0);
                                if other_carries {
                                    state.region = Some(match region {
                                        ArcPiece::Inner => ArcPiece::Outer,
                                        _ => ArcPiece::Inner,
                                    });
                                } else {
                                    slide(work, state, t_max, samples_per_arc, traj)?;
                                }
                            } else {
                                state.region = Some(region);
                            }
                        } else {
                            // the other piece grazes; this orbit crosses iff
                            // its own normal component carries it through
                            state.region = Some(match region {
                                ArcPiece::Inner => ArcPiece::Outer,
                                _ => ArcPiece::Inner,
                            });
                        }
                    }
                    SigmaKind::TangencyBoth => {
                        return Err(Error::StallOnSigma { angle });
                    }
                }
            }
        }
    }
    Ok(())
}

fn push_smooth_arc(
    flow: &AffineFlow,
    piece: ArcPiece,
    state: &mut State,
    dt: f64,
    samples_per_arc: usize,
    traj: &mut FilippovTrajectory,
) {
    let n = samples_per_arc.max(2);
    let samples: Vec<Point> =
        (0..n).map(|i| flow.at(dt * i as f64 / (n - 1) as f64, state.p)).collect();
    let end = samples[n - 1];
    traj.arcs.push(TrajectoryArc {
        piece,
        t0: state.t,
        t1: state.t + dt,
        start: state.p,
        end,
        samples,
    });
    state.t += dt;
    state.p = end;
}

/// Slide along the conic under the Filippov field until a fold of either
/// piece releases the orbit, a pseudo-equilibrium stalls it, or time runs
/// out. Fourth-order stepping of the scalar angle dynamics with the step
/// sized to sweep ~1e-3 rad.
fn slide(
    work: &PiecewiseSystem,
    state: &mut State,
    t_max: f64,
    samples_per_arc: usize,
    traj: &mut FilippovTrajectory,
) -> Result<()> {
    let mut phi = work.conic.angle_of(state.p);
    let t_start = state.t;
    let start_point = work.conic.angle_point(phi);
    let mut trace: Vec<(f64, f64)> = vec![(state.t, phi)];

    let phi_dot = |phi: f64| -> Result<f64> {
        let zs = sliding_field(work, phi)?;
        let tangent = work.conic.tangent(phi);
        Ok(zs.dot(tangent) / tangent.norm_sq())
    };

    let scale_i = 1.0 + work.inner.scale();
    let scale_o = 1.0 + work.outer.scale();
    let mut released: Option<ArcPiece> = None;
    let mut stalled = false;

    while state.t < t_max {
        if trace.len() > 4 * MAX_EVENTS {
            return Err(Error::EventLoopGuard { max: MAX_EVENTS });
        }
        let p = work.conic.angle_point(phi);
        let li = lie_derivative(&work.inner, &work.conic, p, 1);
        let lo = lie_derivative(&work.outer, &work.conic, p, 1);
        // the sliding segment requires the inner piece pushing outward and
        // the outer piece pushing inward; a fold boundary releases the orbit
        // into the piece whose normal component vanished
        if li <= TANG_TOL * scale_i {
            released = Some(ArcPiece::Inner);
            break;
        }
        if lo >= -TANG_TOL * scale_o {
            released = Some(ArcPiece::Outer);
            break;
        }
        let zs = sliding_field(work, phi);
        let zs = match zs {
            Ok(v) => v,
            Err(Error::NotSlidingPoint { .. }) => {
                // tolerance-band exit; release by the smaller margin
                released = Some(if li.abs() < lo.abs() { ArcPiece::Inner } else { ArcPiece::Outer });
                break;
            }
            Err(e) => return Err(e),
        };
        if zs.norm() < STATIONARY_TOL * (scale_i + scale_o) {
            stalled = true;
            break;
        }
        let w = match phi_dot(phi) {
            Ok(w) => w,
            Err(_) => {
                released = Some(if li.abs() < lo.abs() { ArcPiece::Inner } else { ArcPiece::Outer });
                break;
            }
        };
        if w.abs() < 1e-14 {
            stalled = true;
            break;
        }
        let dt = (SLIDE_STEP_RAD / w.abs()).min(t_max - state.t);
        // classical RK4 on dφ/dt
        let k1 = w;
        let k2 = phi_dot(phi + 0.5 * dt * k1).unwrap_or(k1);
        let k3 = phi_dot(phi + 0.5 * dt * k2).unwrap_or(k2);
        let k4 = phi_dot(phi + dt * k3).unwrap_or(k3);
        phi += dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
        state.t += dt;
        trace.push((state.t, phi));
    }

    // resample the trace uniformly in t for the dense output
    let n = samples_per_arc.max(2);
    let t_end = state.t;
    let samples: Vec<Point> = if trace.len() == 1 || t_end <= t_start {
        vec![start_point; 2]
    } else {
        (0..n)
            .map(|i| {
                let tt = t_start + (t_end - t_start) * i as f64 / (n - 1) as f64;
                let idx = trace.partition_point(|(t, _)| *t <= tt).min(trace.len() - 1);
                let (t1, p1) = trace[idx.saturating_sub(1)];
                let (t2, p2) = trace[idx];
                let lam = if t2 > t1 { (tt - t1) / (t2 - t1) } else { 0.0 };
                work.conic.angle_point(p1 + (p2 - p1) * lam.clamp(0.0, 1.0))
            })
            .collect()
    };
    let end_point = work.conic.angle_point(phi);
    traj.arcs.push(TrajectoryArc {
        piece: ArcPiece::Sliding,
        t0: t_start,
        t1: t_end,
        start: start_point,
        end: end_point,
        samples,
    });
    state.p = end_point;

    if stalled {
        traj.reached_equilibrium = true;
        state.t = t_max; // pseudo-equilibrium: nothing more happens
        return Ok(());
    }
    if let Some(piece) = released {
        let class = classify_on_sigma(work, phi);
        traj.events.push(TrajectoryEvent { time: state.t, angle: phi, classification: class });
        state.region = Some(piece);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::AffineField;

    #[test]
    fn constant_flow_is_a_line() {
        let f = AffineFlow::new(AffineField::constant(1.0, 0.0));
        assert_eq!(f.kind, FlowKind::Constant);
        let p = f.at(2.0, Point::new(0.0, 0.0));
        assert!(p.dist(Point::new(2.0, 0.0)) < 1e-15);
    }

    #[test]
    fn rotation_flow_quarter_turn() {
        let f = AffineFlow::new(AffineField::new(0.0, 0.0, -1.0, 0.0, 1.0, 0.0));
        assert_eq!(f.kind, FlowKind::Rotation);
        let p = f.at(std::f64::consts::FRAC_PI_2, Point::new(1.0, 0.0));
        assert!(p.dist(Point::new(0.0, 1.0)) < 1e-12);
    }

    #[test]
    fn flow_identity_and_derivative_at_zero() {
        let fields = [
            AffineField::new(0.3, 1.2, 0.7, -0.4, 2.0, -1.2),
            AffineField::new(1.0, 0.0, 2.0, -2.0, -6.0, 0.0),
            AffineField::new(0.5, 2.0, 1.0, 1.5, 3.0, -2.0),
            AffineField::new(0.1, 1.0, 2.0, 0.2, 0.5, 1.0), // nonzero trace
            AffineField::new(0.1, 2.0, -1.0, 0.2, 4.0, -2.0), // singular, nonzero trace
        ];
        for f in fields {
            let flow = AffineFlow::new(f);
            let p = Point::new(0.3, -0.7);
            assert!(flow.at(0.0, p).dist(p) < 1e-14);
            let h = 1e-7;
            let num = (flow.at(h, p) - flow.at(-h, p)) * (0.5 / h);
            assert!(num.dist(f.eval(p)) < 1e-6);
        }
    }

    #[test]
    fn conservation_along_divergence_free_flow() {
        let f = AffineField::new(1.0, 0.0, 2.0, -2.0, -6.0, 0.0);
        let h = crate::fields::first_integral(&f).unwrap();
        let flow = AffineFlow::new(f);
        let p = Point::new(0.4, 0.9);
        let h0 = h.eval(p);
        for i in 1..=40 {
            let t = i as f64 * 0.25;
            let d = (h.eval(flow.at(t, p)) - h0).abs();
            assert!(d < 1e-9 * (1.0 + h0.abs()), "drift {d} at t={t}");
        }
    }

    #[test]
    fn event_on_line_circle_intersection() {
        let flow = AffineFlow::new(AffineField::constant(1.0, 0.0));
        let conic = SwitchingConic::unit_circle();
        let (t, angle) = next_switching_event(&flow, &conic, Point::new(-2.0, 0.0), 10.0)
            .unwrap()
            .unwrap();
        assert!((t - 1.0).abs() < 1e-10);
        assert!((angle - std::f64::consts::PI).abs() < 1e-10);
    }

    #[test]
    fn no_event_for_interior_center_orbit() {
        // center at origin, small orbit stays inside
        let flow = AffineFlow::new(AffineField::new(0.0, 0.0, 2.0, 0.0, -6.0, 0.0));
        let conic = SwitchingConic::unit_circle();
        let ev = next_switching_event(&flow, &conic, Point::new(0.1, 0.0), 50.0).unwrap();
        assert!(ev.is_none());
    }

    #[test]
    fn departure_from_sigma_is_not_an_event() {
        let flow = AffineFlow::new(AffineField::constant(1.0, 0.0));
        let conic = SwitchingConic::unit_circle();
        // leaving the circle outward from (− cos ε-ish) the next hit is the far side
        let p = Point::new(-1.0, 0.0);
        let (t, _) = next_switching_event(&flow, &conic, p, 10.0).unwrap().unwrap();
        assert!((t - 2.0).abs() < 1e-9);
    }

    #[test]
    fn crossing_trajectory_alternates_pieces() {
        // inner flows right, outer also pushes through: orbit passes the disk
        let sys = PiecewiseSystem::on_unit_circle(
            AffineField::constant(1.0, 0.0),
            AffineField::constant(1.0, 0.0),
        )
        .unwrap();
        let traj =
            integrate_filippov(&sys, Point::new(-3.0, 0.1), 6.0, Mode::Forward, 32).unwrap();
        assert_eq!(traj.arcs.len(), 3);
        assert_eq!(traj.events.len(), 2);
        assert!(traj.arcs.windows(2).all(|w| w[0].end.dist(w[1].start) < 1e-9));
        assert!(matches!(traj.arcs[0].piece, ArcPiece::Outer));
        assert!(matches!(traj.arcs[1].piece, ArcPiece::Inner));
    }

    #[test]
    fn backward_returns_to_start() {
        let sys = PiecewiseSystem::on_unit_circle(
            AffineField::constant(2.0, -1.0),
            AffineField::new(2.0, -1.0, 2.0, -1.0, -4.0, 1.0),
        )
        .unwrap();
        let p0 = Point::new(-1.5, 0.5);
        let fwd = integrate_filippov(&sys, p0, 3.0, Mode::Forward, 64).unwrap();
        let end = fwd.end_point().unwrap();
        let back = integrate_filippov(&sys, end, fwd.total_time(), Mode::Backward, 64).unwrap();
        assert!(back.end_point().unwrap().dist(p0) < 1e-7);
    }
}
