//! Arc piecing for active control, speed and rear-end constraints.
//!
//! Starting from the unconstrained solution, the first violated constraint
//! is replaced by an arc of the matching kind with unknown junction times;
//! the stacked continuity/tangency/junction conditions are solved by damped
//! Newton iteration, and the detect-insert-solve cycle repeats until the
//! trajectory is feasible or the insertion cap is reached.
//!
//! Junction conditions by arc kind (with U the unconstrained side):
//! position and speed are continuous at every junction; at a free junction
//! the unconstrained control additionally meets the limit (u = uMax/uMin),
//! vanishes (speed-limit arcs), or matches the predecessor's control
//! (rear-end arcs). At fixed interior points control continuity is kept
//! unless a speed-limit arc abuts the point. A speed-limit arc strictly
//! inside one interval also equates the control slopes of its neighbors,
//! reflecting an unjumped position costate across it. Topologies outside
//! these rules (e.g. a rear-end arc touching a fixed interior point) are
//! detected by a squareness check and reported, not silently resolved.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, InfeasibleReport, Result};
use crate::scenario::VehicleLimits;

use std::sync::Arc as SharedArc;

use super::{
    apply_tracking_margin, solve_unconstrained, Arc, ArcKind, BoundaryData, InteriorMultiplier,
    TrajectoryArcs,
};

const NEWTON_TOL: f64 = 1e-9;
const NEWTON_MAX_ITER: usize = 50;
const MAX_INSERTIONS: usize = 8;
/// Constraint violations smaller than this are treated as solver noise.
const VIOLATION_TOL: f64 = 1e-6;
/// Sampling step for the rear-end gap scan.
const DETECTION_STEP: f64 = 1e-3;
/// Sub-arcs shorter than this are collapsed out of the structure.
const MIN_ARC_DURATION: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
enum Boundary {
    Start,
    Interior(usize),
    End,
    /// Free junction time; the payload is the initial guess, the current
    /// value lives in the unknown vector.
    Free(f64),
    /// Free time at which the rear-end gap touches the safety distance
    /// tangentially without a finite boundary interval.
    FreeTouch(f64),
}

impl Boundary {
    fn is_free(&self) -> bool {
        matches!(self, Boundary::Free(_) | Boundary::FreeTouch(_))
    }
}

/// Ordered arc-kind sequence with its boundaries; `bounds.len() == kinds.len() + 1`.
#[derive(Debug, Clone)]
struct Structure {
    kinds: Vec<ArcKind>,
    bounds: Vec<Boundary>,
}

struct Problem<'a> {
    b: &'a BoundaryData,
    limits: &'a VehicleLimits,
    predecessor: Option<SharedArc<TrajectoryArcs>>,
    gap: f64,
    /// Lazily computed discretized solution, shared by the rear-end
    /// span refinements across insertion rounds.
    qp: std::cell::OnceCell<Option<TrajectoryArcs>>,
}

fn coeff_count(kind: ArcKind) -> usize {
    match kind {
        ArcKind::Unconstrained => 4,
        ArcKind::UMax | ArcKind::UMin => 2,
        ArcKind::VMax | ArcKind::VMin => 1,
        ArcKind::RearEndFollow => 0,
    }
}

fn is_vlim(kind: ArcKind) -> bool {
    matches!(kind, ArcKind::VMax | ArcKind::VMin)
}

fn is_ulim(kind: ArcKind) -> bool {
    matches!(kind, ArcKind::UMax | ArcKind::UMin)
}

impl Structure {
    fn initial(b: &BoundaryData) -> Structure {
        let m = b.interior.len() + 1;
        let mut bounds = Vec::with_capacity(m + 1);
        bounds.push(Boundary::Start);
        bounds.extend((0..b.interior.len()).map(Boundary::Interior));
        bounds.push(Boundary::End);
        Structure {
            kinds: vec![ArcKind::Unconstrained; m],
            bounds,
        }
    }

    fn coeff_offsets(&self) -> (Vec<usize>, usize) {
        let mut offsets = Vec::with_capacity(self.kinds.len());
        let mut total = 0;
        for &k in &self.kinds {
            offsets.push(total);
            total += coeff_count(k);
        }
        (offsets, total)
    }

    /// Free-unknown slot per boundary, in order.
    fn free_slots(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        self.bounds
            .iter()
            .map(|b| {
                if b.is_free() {
                    let s = next;
                    next += 1;
                    Some(s)
                } else {
                    None
                }
            })
            .collect()
    }

    fn free_count(&self) -> usize {
        self.bounds.iter().filter(|b| b.is_free()).count()
    }

    /// Merges same-kind sub-arcs separated by a free boundary; such junctions
    /// carry no information and would make the Jacobian singular.
    fn merge_duplicates(&mut self) {
        let mut i = 0;
        while i + 1 < self.kinds.len() {
            if self.kinds[i] == self.kinds[i + 1]
                && matches!(self.bounds[i + 1], Boundary::Free(_))
            {
                self.kinds.remove(i + 1);
                self.bounds.remove(i + 1);
            } else {
                i += 1;
            }
        }
    }

    /// Removes sub-arc `i`, extending a neighbor across whichever of its
    /// boundaries was free.
    fn remove_sub(&mut self, i: usize) {
        let left_free = self.bounds[i].is_free();
        if left_free {
            self.kinds.remove(i);
            self.bounds.remove(i);
        } else {
            self.kinds.remove(i);
            self.bounds.remove(i + 1);
        }
        self.merge_duplicates();
    }

    /// Downgrades the rear-end follow arc at `i` to a touch junction if
    /// both of its ends are free; used when no finite boundary interval
    /// exists.
    fn follow_to_touch_at(&mut self, i: usize) -> bool {
        if self.kinds[i] != ArcKind::RearEndFollow {
            return false;
        }
        if let (Boundary::Free(t1), Boundary::Free(t2)) = (self.bounds[i], self.bounds[i + 1]) {
            self.kinds.remove(i);
            self.bounds.remove(i + 1);
            self.bounds[i] = Boundary::FreeTouch(0.5 * (t1 + t2));
            return true;
        }
        false
    }

    /// Downgrades the first rear-end follow arc with free ends to a touch
    /// junction.
    fn follow_to_touch(&mut self) -> bool {
        (0..self.kinds.len()).any(|i| self.follow_to_touch_at(i))
    }
}

/// Evaluation context binding a structure to the problem data.
struct Eval<'a> {
    st: &'a Structure,
    pr: &'a Problem<'a>,
    offsets: Vec<usize>,
    n_coeff: usize,
    free_slots: Vec<Option<usize>>,
}

impl<'a> Eval<'a> {
    fn new(st: &'a Structure, pr: &'a Problem<'a>) -> Eval<'a> {
        let (offsets, n_coeff) = st.coeff_offsets();
        Eval {
            st,
            pr,
            offsets,
            n_coeff,
            free_slots: st.free_slots(),
        }
    }

    fn n_unknowns(&self) -> usize {
        self.n_coeff + self.st.free_count()
    }

    /// Junction times strictly increasing along the structure.
    fn times_ordered(&self, x: &[f64]) -> bool {
        let mut prev = self.bound_time(x, 0);
        for bi in 1..self.st.bounds.len() {
            let t = self.bound_time(x, bi);
            if t < prev - 1e-9 {
                return false;
            }
            prev = t;
        }
        true
    }

    fn bound_time(&self, x: &[f64], bi: usize) -> f64 {
        match self.st.bounds[bi] {
            Boundary::Start => self.pr.b.t0,
            Boundary::End => self.pr.b.tf,
            Boundary::Interior(j) => self.pr.b.interior[j].0,
            Boundary::Free(_) | Boundary::FreeTouch(_) => {
                x[self.n_coeff + self.free_slots[bi].unwrap()]
            }
        }
    }

    /// (p, v, u) of sub-arc `i` at global time `t`.
    fn state(&self, x: &[f64], i: usize, t: f64) -> (f64, f64, f64) {
        let tau = t - self.bound_time(x, i);
        let o = self.offsets[i];
        match self.st.kinds[i] {
            ArcKind::Unconstrained => {
                let (a, b, c, d) = (x[o], x[o + 1], x[o + 2], x[o + 3]);
                (
                    a / 6.0 * tau.powi(3) + b / 2.0 * tau * tau + c * tau + d,
                    a / 2.0 * tau * tau + b * tau + c,
                    a * tau + b,
                )
            }
            ArcKind::UMax | ArcKind::UMin => {
                let u = if self.st.kinds[i] == ArcKind::UMax {
                    self.pr.limits.u_max
                } else {
                    self.pr.limits.u_min
                };
                let (c, d) = (x[o], x[o + 1]);
                (u / 2.0 * tau * tau + c * tau + d, u * tau + c, u)
            }
            ArcKind::VMax | ArcKind::VMin => {
                let v = if self.st.kinds[i] == ArcKind::VMax {
                    self.pr.limits.v_max
                } else {
                    self.pr.limits.v_min
                };
                let d = x[o];
                (v * tau + d, v, 0.0)
            }
            ArcKind::RearEndFollow => {
                let pred = self.pr.predecessor.as_ref().unwrap();
                let s = pred.evaluate_extrapolated(t);
                (s.p - self.pr.gap, s.v, s.u)
            }
        }
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let st = self.st;
        let b = self.pr.b;
        let mut r = Vec::with_capacity(self.n_unknowns());

        // Entry state on the first sub-arc.
        let (p, v, _) = self.state(x, 0, b.t0);
        r.push(p - b.p0);
        r.push(v - b.v0);

        for i in 0..st.kinds.len() - 1 {
            let (kl, kr) = (st.kinds[i], st.kinds[i + 1]);
            let t = self.bound_time(x, i + 1);
            let (pl, vl, ul) = self.state(x, i, t);
            let (prt, vr, ur) = self.state(x, i + 1, t);
            match st.bounds[i + 1] {
                Boundary::Interior(j) => {
                    let c = b.interior[j].1;
                    r.push(pl - c);
                    r.push(prt - c);
                    if !(is_vlim(kl) && is_vlim(kr)) {
                        r.push(vl - vr);
                    }
                    let both_u_family = !is_vlim(kl)
                        && !is_vlim(kr)
                        && kl != ArcKind::RearEndFollow
                        && kr != ArcKind::RearEndFollow;
                    let one_unconstrained = kl == ArcKind::Unconstrained
                        || kr == ArcKind::Unconstrained;
                    if both_u_family && one_unconstrained {
                        r.push(ul - ur);
                    }
                }
                Boundary::Free(_) => {
                    r.push(pl - prt);
                    r.push(vl - vr);
                    // Optimality condition pinning the junction time.
                    let (u_free, other) = if kl == ArcKind::Unconstrained {
                        (ul, kr)
                    } else {
                        (ur, kl)
                    };
                    if kl == ArcKind::Unconstrained || kr == ArcKind::Unconstrained {
                        let target = match other {
                            ArcKind::UMax => self.pr.limits.u_max,
                            ArcKind::UMin => self.pr.limits.u_min,
                            ArcKind::VMax | ArcKind::VMin => 0.0,
                            ArcKind::RearEndFollow => {
                                self.pr.predecessor.as_ref().unwrap().evaluate_extrapolated(t).u
                            }
                            ArcKind::Unconstrained => 0.0,
                        };
                        if other == ArcKind::Unconstrained {
                            r.push(ul - ur);
                        } else {
                            r.push(u_free - target);
                        }
                    } else {
                        r.push(ul - ur);
                    }
                }
                Boundary::FreeTouch(_) => {
                    let pred = self.pr.predecessor.as_ref().unwrap();
                    let s = pred.evaluate_extrapolated(t);
                    r.push(pl - prt);
                    r.push(vl - vr);
                    r.push(ul - ur);
                    r.push(pl - (s.p - self.pr.gap));
                    r.push(vl - s.v);
                }
                _ => unreachable!("internal junction cannot be a horizon end"),
            }
        }

        // Terminal conditions on the last sub-arc.
        let last = st.kinds.len() - 1;
        let (p, _, u) = self.state(x, last, b.tf);
        r.push(p - b.pf);
        if st.kinds[last] == ArcKind::Unconstrained {
            r.push(u);
        }

        // A speed-limit arc strictly inside one interval leaves the position
        // costate unjumped: its unconstrained neighbors share a control slope.
        for i in 0..st.kinds.len() {
            if is_vlim(st.kinds[i])
                && st.bounds[i].is_free()
                && st.bounds[i + 1].is_free()
                && i > 0
                && i + 1 < st.kinds.len()
                && st.kinds[i - 1] == ArcKind::Unconstrained
                && st.kinds[i + 1] == ArcKind::Unconstrained
            {
                r.push(x[self.offsets[i - 1]] - x[self.offsets[i + 1]]);
            }
        }

        // A control-limit arc pair riding across one fixed interior point:
        // the speed costate is continuous over the pair while the position
        // costate jumps only at the point, tying the neighbors' control
        // slopes weighted by the sub-durations on each side.
        for i in 1..st.kinds.len() {
            if i + 2 < st.bounds.len()
                && is_ulim(st.kinds[i])
                && st.kinds[i + 1] == st.kinds[i]
                && matches!(st.bounds[i + 1], Boundary::Interior(_))
                && st.bounds[i].is_free()
                && st.bounds[i + 2].is_free()
                && st.kinds[i - 1] == ArcKind::Unconstrained
                && i + 2 < st.kinds.len()
                && st.kinds[i + 2] == ArcKind::Unconstrained
            {
                let w1 = self.bound_time(x, i);
                let ti = self.bound_time(x, i + 1);
                let w2 = self.bound_time(x, i + 2);
                let a_left = x[self.offsets[i - 1]];
                let a_right = x[self.offsets[i + 2]];
                r.push(a_left * (ti - w1) + a_right * (w2 - ti));
            }
        }

        r
    }
}

fn infeasible(reason: impl Into<String>, residual: f64, iterations: usize) -> Error {
    Error::ConstrainedSolve(InfeasibleReport {
        reason: reason.into(),
        residual,
        iterations,
    })
}

fn norm_inf(r: &[f64]) -> f64 {
    r.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn norm_2(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Solves the structure by variable projection: for fixed junction times the
/// stacked residual is linear in the arc coefficients, so those are solved
/// by least squares, and a damped Gauss-Newton iteration adjusts only the
/// junction times to drive the remaining residual to zero.
fn solve_structure(ev: &Eval) -> Result<Vec<f64>> {
    let n = ev.n_unknowns();
    let n_free = ev.st.free_count();
    let mut times: Vec<f64> = ev
        .st
        .bounds
        .iter()
        .filter_map(|b| match b {
            Boundary::Free(t) | Boundary::FreeTouch(t) => Some(*t),
            _ => None,
        })
        .collect();

    // Residual with the coefficients projected out at the given times.
    let project = |times: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let assemble = |coeffs: &[f64]| {
            let mut x = coeffs.to_vec();
            x.extend_from_slice(times);
            ev.residual(&x)
        };
        let zero = vec![0.0; ev.n_coeff];
        let r0 = assemble(&zero);
        if r0.len() != n {
            return Err(infeasible(
                format!(
                    "degenerate arc structure: {} equations for {} unknowns",
                    r0.len(),
                    n
                ),
                norm_inf(&r0),
                0,
            ));
        }
        let rows = r0.len();
        let mut a = DMatrix::zeros(rows, ev.n_coeff);
        for j in 0..ev.n_coeff {
            let mut e = zero.clone();
            e[j] = 1.0;
            let rj = assemble(&e);
            for i in 0..rows {
                a[(i, j)] = rj[i] - r0[i];
            }
        }
        let rhs = DVector::from_iterator(rows, r0.iter().map(|v| -v));
        let coeffs = a
            .svd(true, true)
            .solve(&rhs, 1e-11)
            .map_err(|e| infeasible(format!("coefficient projection failed: {e}"), norm_inf(&r0), 0))?;
        let coeffs: Vec<f64> = coeffs.iter().copied().collect();
        let residual = assemble(&coeffs);
        Ok((coeffs, residual))
    };

    let ordered = |times: &[f64]| -> bool {
        let mut x = vec![0.0; ev.n_coeff];
        x.extend_from_slice(times);
        ev.times_ordered(&x)
    };

    let (mut coeffs, mut r) = project(&times)?;
    for iter in 0..NEWTON_MAX_ITER {
        let rn = norm_inf(&r);
        let r2 = norm_2(&r);
        if rn < NEWTON_TOL {
            let mut x = coeffs;
            x.extend_from_slice(&times);
            return Ok(x);
        }
        if n_free == 0 {
            return Err(infeasible("inconsistent fixed-boundary structure", rn, iter));
        }
        let rows = r.len();
        let mut jac = DMatrix::zeros(rows, n_free);
        for k in 0..n_free {
            let h = 1e-6 * times[k].abs().max(1.0);
            let mut tp = times.clone();
            tp[k] += h;
            let (_, rp) = project(&tp)?;
            for i in 0..rows {
                jac[(i, k)] = (rp[i] - r[i]) / h;
            }
        }
        let jt = jac.transpose();
        let rhs_v = DVector::from_iterator(rows, r.iter().map(|v| -v));
        let dt = (&jt * &jac)
            .lu()
            .solve(&(&jt * rhs_v))
            .ok_or_else(|| infeasible("singular junction-time system", rn, iter))?;
        let mut alpha = 1.0f64;
        let mut accepted = false;
        for _ in 0..40 {
            let tt: Vec<f64> = times
                .iter()
                .zip(dt.iter())
                .map(|(t, d)| t + alpha * d)
                .collect();
            // Steps that cross junction times jump to spurious roots.
            if ordered(&tt) {
                if let Ok((ct, rt)) = project(&tt) {
                    if norm_2(&rt) < (1.0 - 1e-4 * alpha) * r2 || norm_inf(&rt) < NEWTON_TOL {
                        times = tt;
                        coeffs = ct;
                        r = rt;
                        accepted = true;
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            if std::env::var_os("CORRIDOR_OCP_DEBUG").is_some() {
                eprintln!("stall at iter {iter}: |r|={rn:.3e} times={times:?}");
                eprintln!("residual {r:?}");
            }
            return Err(infeasible("junction-time iteration stalled", rn, iter));
        }
    }
    let rn = norm_inf(&r);
    if rn < NEWTON_TOL {
        let mut x = coeffs;
        x.extend_from_slice(&times);
        Ok(x)
    } else {
        Err(infeasible(
            "junction-time iteration did not converge",
            rn,
            NEWTON_MAX_ITER,
        ))
    }
}

/// Builds the solved trajectory from a converged structure.
fn to_trajectory(ev: &Eval, x: &[f64]) -> TrajectoryArcs {
    let st = ev.st;
    let mut arcs = Vec::with_capacity(st.kinds.len());
    for i in 0..st.kinds.len() {
        let t_start = ev.bound_time(x, i);
        let t_end = ev.bound_time(x, i + 1);
        let o = ev.offsets[i];
        let (a, b, c, d) = match st.kinds[i] {
            ArcKind::Unconstrained => (x[o], x[o + 1], x[o + 2], x[o + 3]),
            ArcKind::UMax => (0.0, ev.pr.limits.u_max, x[o], x[o + 1]),
            ArcKind::UMin => (0.0, ev.pr.limits.u_min, x[o], x[o + 1]),
            ArcKind::VMax => (0.0, 0.0, ev.pr.limits.v_max, x[o]),
            ArcKind::VMin => (0.0, 0.0, ev.pr.limits.v_min, x[o]),
            ArcKind::RearEndFollow => (0.0, 0.0, 0.0, 0.0),
        };
        arcs.push(Arc {
            kind: st.kinds[i],
            t_start,
            t_end,
            a,
            b,
            c,
            d,
        });
    }
    // Costate jumps at fixed interior points flanked by unconstrained arcs.
    let mut multipliers = Vec::new();
    for (bi, bound) in st.bounds.iter().enumerate() {
        if let Boundary::Interior(j) = bound {
            let (il, ir) = (bi - 1, bi);
            if st.kinds[il] == ArcKind::Unconstrained && st.kinds[ir] == ArcKind::Unconstrained {
                let pi1 = arcs[il].a - arcs[ir].a;
                let v = arcs[ir].c;
                multipliers.push(InteriorMultiplier {
                    time: ev.pr.b.interior[*j].0,
                    pi1,
                    pi2: -pi1 * v,
                });
            }
        }
    }
    TrajectoryArcs {
        arcs,
        multipliers,
        predecessor: ev.pr.predecessor.clone(),
        follow_gap: ev.pr.gap,
    }
}

#[derive(Debug, Clone, Copy)]
struct Violation {
    kind: ArcKind,
    start: f64,
    end: f64,
}

/// Earliest constraint violation along the trajectory, if any.
///
/// Control and speed are polynomial per arc, so endpoint plus speed-vertex
/// samples detect those exactly up to a fine sweep; the rear-end gap against
/// the predecessor is scanned on a fixed grid.
fn first_violation(traj: &TrajectoryArcs, pr: &Problem) -> Option<Violation> {
    let l = pr.limits;
    let mut spans: Vec<Violation> = Vec::new();
    let mut consider = |v: Violation| spans.push(v);

    for arc in &traj.arcs {
        if arc.kind == ArcKind::RearEndFollow {
            continue;
        }
        let h = arc.t_end - arc.t_start;
        if h <= 0.0 {
            continue;
        }
        // Sample times: dense sweep plus the quadratic-speed vertex.
        let n = 128;
        let mut taus: Vec<f64> = (0..=n).map(|k| h * k as f64 / n as f64).collect();
        if arc.a.abs() > 1e-12 {
            let vertex = -arc.b / arc.a;
            if vertex > 0.0 && vertex < h {
                taus.push(vertex);
                taus.sort_by(|a, b| a.partial_cmp(b).unwrap());
            }
        }
        let (ca, cb, cc) = (arc.a, arc.b, arc.c);
        let margin = |kind: ArcKind, tau: f64| -> f64 {
            match kind {
                ArcKind::UMax => ca * tau + cb - l.u_max,
                ArcKind::UMin => l.u_min - (ca * tau + cb),
                ArcKind::VMax => ca / 2.0 * tau * tau + cb * tau + cc - l.v_max,
                ArcKind::VMin => l.v_min - (ca / 2.0 * tau * tau + cb * tau + cc),
                _ => f64::NEG_INFINITY,
            }
        };
        for kind in [ArcKind::UMax, ArcKind::UMin, ArcKind::VMax, ArcKind::VMin] {
            if kind == arc.kind
                || (is_vlim(kind) && is_vlim(arc.kind))
                || (is_ulim(kind) && is_ulim(arc.kind))
            {
                continue;
            }
            if let Some(first) = taus.iter().position(|&tau| margin(kind, tau) > VIOLATION_TOL) {
                let mut lo = first;
                while lo > 0 && margin(kind, taus[lo - 1]) > 0.0 {
                    lo -= 1;
                }
                let mut hi = first;
                while hi + 1 < taus.len() && margin(kind, taus[hi + 1]) > 0.0 {
                    hi += 1;
                }
                consider(Violation {
                    kind,
                    start: arc.t_start + taus[lo],
                    end: arc.t_start + taus[hi],
                });
            }
        }
    }

    if let Some(pred) = &pr.predecessor {
        let (t0, tf) = (traj.start_time(), traj.end_time());
        let g = |t: f64| pred.evaluate_extrapolated(t).p - traj.evaluate_extrapolated(t).p - pr.gap;
        let steps = ((tf - t0) / DETECTION_STEP).ceil() as usize;
        let mut first = None;
        for k in 0..=steps {
            let t = (t0 + k as f64 * DETECTION_STEP).min(tf);
            if g(t) < -VIOLATION_TOL {
                first = Some(t);
                break;
            }
        }
        if let Some(tv) = first {
            let mut lo = tv;
            while lo - DETECTION_STEP >= t0 && g(lo - DETECTION_STEP) < 0.0 {
                lo -= DETECTION_STEP;
            }
            let mut hi = tv;
            while hi + DETECTION_STEP <= tf && g(hi + DETECTION_STEP) < 0.0 {
                hi += DETECTION_STEP;
            }
            consider(Violation {
                kind: ArcKind::RearEndFollow,
                start: lo,
                end: hi,
            });
        }
    }

    // A single violation can straddle an arc junction (for control limits
    // even a fixed interior point, where only the position costate jumps);
    // stitch same-kind spans that meet at a boundary back together.
    spans.sort_by(|a, b| a.start.partial_cmp(&b.start).unwrap());
    let mut merged: Vec<Violation> = Vec::new();
    for v in spans {
        match merged.iter_mut().rev().find(|m| m.kind == v.kind) {
            Some(last) if v.start <= last.end + 1e-6 => last.end = last.end.max(v.end),
            _ => merged.push(v),
        }
    }
    merged
        .into_iter()
        .min_by(|a, b| a.start.partial_cmp(&b.start).unwrap())
}

/// Inserts an arc of `viol.kind` into the structure at the violation span.
fn insert_violation(st: &mut Structure, ev_times: &[f64], viol: Violation) -> Result<()> {
    // Containing sub-arc: the one whose [left, right) covers the span start.
    let mut sub = None;
    for i in 0..st.kinds.len() {
        if viol.start >= ev_times[i] - 1e-9 && viol.start < ev_times[i + 1] - 1e-9 {
            sub = Some(i);
            break;
        }
    }
    let s = sub.ok_or_else(|| infeasible("violation outside trajectory horizon", 0.0, 0))?;
    if st.kinds[s] != ArcKind::Unconstrained {
        return Err(infeasible(
            format!(
                "{:?} violation inside a {:?} arc: unsupported topology",
                viol.kind, st.kinds[s]
            ),
            0.0,
            0,
        ));
    }
    let (tl, tr) = (ev_times[s], ev_times[s + 1]);
    let edge = ((tr - tl) * 1e-3).max(1e-4);

    // A control-limit span may ride across a fixed interior point; split it
    // there and insert matching arcs on both sides. The point only jumps the
    // position costate, so the control stays pinned straight through it.
    if viol.end > tr + edge
        && is_ulim(viol.kind)
        && s + 1 < st.kinds.len()
        && matches!(st.bounds[s + 1], Boundary::Interior(_))
        && st.kinds[s + 1] == ArcKind::Unconstrained
    {
        let right = Violation { start: tr, ..viol };
        let left = Violation { end: tr, ..viol };
        insert_violation(st, ev_times, right)?;
        insert_violation(st, ev_times, left)?;
        return Ok(());
    }

    let w1 = viol.start.max(tl);
    let w2 = viol.end.min(tr);
    let attach_left = w1 <= tl + edge;
    let attach_right = w2 >= tr - edge;

    if viol.kind == ArcKind::RearEndFollow {
        // A follow arc pinned to a fixed interior point (or the horizon ends)
        // over-determines the junction system.
        let touches_fixed = (attach_left && !st.bounds[s].is_free())
            || (attach_right && !st.bounds[s + 1].is_free());
        if touches_fixed {
            return Err(infeasible(
                "rear-end arc would touch a fixed boundary: unsupported topology",
                0.0,
                0,
            ));
        }
    }

    match (attach_left, attach_right) {
        (true, true) => {
            st.kinds[s] = viol.kind;
        }
        (true, false) => {
            st.kinds.insert(s, viol.kind);
            st.bounds.insert(s + 1, Boundary::Free(w2));
        }
        (false, true) => {
            st.kinds.insert(s + 1, viol.kind);
            st.bounds.insert(s + 1, Boundary::Free(w1));
        }
        (false, false) => {
            st.kinds.insert(s + 1, viol.kind);
            st.kinds.insert(s + 2, ArcKind::Unconstrained);
            st.bounds.insert(s + 1, Boundary::Free(w1));
            st.bounds.insert(s + 2, Boundary::Free(w2));
        }
    }
    st.merge_duplicates();
    Ok(())
}

/// Contiguous active runs of the rear-end constraint in the discretized
/// solution, with the grid step. The junction system has spurious roots
/// (feasible follow intervals with the wrong multiplier sign), and Newton
/// lands on the root nearest its guess; the discretized program is convex,
/// so its active runs bracket the true contacts with the gap bound.
fn follow_active_runs(pr: &Problem) -> Option<(Vec<(f64, f64)>, f64)> {
    let qp = pr.qp.get_or_init(|| {
        super::solve_discretized_unpadded(pr.b, pr.limits, pr.predecessor.as_ref()).ok()
    });
    let qp = qp.as_ref()?;
    let pred = pr.predecessor.as_ref().unwrap();
    let dt = qp.arcs[0].t_end - qp.arcs[0].t_start;
    let tol = pr.gap + 1e-4;
    let mut runs: Vec<(f64, f64)> = Vec::new();
    let mut active = false;
    for arc in &qp.arcs {
        let t = arc.t_end;
        let g = pred.evaluate_extrapolated(t).p - qp.evaluate_extrapolated(t).p;
        if g <= tol {
            if active {
                runs.last_mut().unwrap().1 = t;
            } else {
                runs.push((t, t));
                active = true;
            }
        } else {
            active = false;
        }
    }
    (!runs.is_empty()).then_some((runs, dt))
}

/// Replaces a detected rear-end violation span by the matching active run
/// of the discretized solution, one run per contact with the gap bound.
fn refine_follow_span(pr: &Problem, viol: Violation) -> Violation {
    let Some((runs, _)) = follow_active_runs(pr) else {
        return viol;
    };
    let best = runs
        .iter()
        .max_by(|a, b| {
            let overlap = |r: &(f64, f64)| (r.1.min(viol.end) - r.0.max(viol.start)).max(0.0);
            let dist = |r: &(f64, f64)| (r.0 - viol.start).abs().min((r.1 - viol.start).abs());
            (overlap(a), -dist(a))
                .partial_cmp(&(overlap(b), -dist(b)))
                .unwrap()
        })
        .copied();
    match best {
        Some((lo, hi)) => Violation {
            kind: viol.kind,
            start: lo,
            end: hi,
        },
        None => viol,
    }
}

/// Inserts every contact of the rear-end bound into the structure at once:
/// a follow interval per wide run, a tangential touch per narrow one.
/// Solving all contacts jointly keeps Newton from drifting each junction
/// toward a spurious root of an incomplete structure.
fn insert_follow_runs(
    st: &mut Structure,
    ev_times: &[f64],
    runs: &[(f64, f64)],
    dt: f64,
) -> Result<()> {
    let mut placed: Vec<(usize, f64, f64)> = Vec::new();
    for &(ta, tb) in runs {
        let mut sub = None;
        for i in 0..st.kinds.len() {
            if ta >= ev_times[i] - 1e-9 && ta < ev_times[i + 1] - 1e-9 {
                sub = Some(i);
                break;
            }
        }
        let s = sub.ok_or_else(|| infeasible("rear-end contact outside trajectory horizon", 0.0, 0))?;
        if st.kinds[s] != ArcKind::Unconstrained {
            return Err(infeasible(
                "rear-end contact inside a constrained arc: unsupported topology",
                0.0,
                0,
            ));
        }
        let (tl, tr) = (ev_times[s], ev_times[s + 1]);
        let edge = ((tr - tl) * 1e-3).max(1e-4);
        if ta <= tl + edge || tb >= tr - edge {
            return Err(infeasible(
                "rear-end arc would touch a fixed boundary: unsupported topology",
                0.0,
                0,
            ));
        }
        placed.push((s, ta, tb));
    }
    for &(s, ta, tb) in placed.iter().rev() {
        if tb - ta < 3.0 * dt {
            st.kinds.insert(s + 1, ArcKind::Unconstrained);
            st.bounds.insert(s + 1, Boundary::FreeTouch(0.5 * (ta + tb)));
        } else {
            st.kinds.insert(s + 1, ArcKind::RearEndFollow);
            st.kinds.insert(s + 2, ArcKind::Unconstrained);
            st.bounds.insert(s + 1, Boundary::Free(ta));
            st.bounds.insert(s + 2, Boundary::Free(tb));
        }
    }
    Ok(())
}

/// A converged finite follow interval can be a spurious root of the
/// junction conditions when the true optimum only grazes the gap bound.
/// Solve the tangential-touch topology as well and keep the cheaper
/// feasible candidate.
fn prefer_touch(st: &Structure, pr: &Problem, traj: TrajectoryArcs) -> TrajectoryArcs {
    let mut best_st = st.clone();
    let mut best = traj;
    loop {
        let mut improved = false;
        for i in 0..best_st.kinds.len() {
            let mut alt = best_st.clone();
            if !alt.follow_to_touch_at(i) {
                continue;
            }
            let ev = Eval::new(&alt, pr);
            let Ok(x) = solve_structure(&ev) else {
                continue;
            };
            if !ev.times_ordered(&x) {
                continue;
            }
            let touch = to_trajectory(&ev, &x);
            if first_violation(&touch, pr).is_none() && touch.control_cost() < best.control_cost()
            {
                drop(ev);
                best_st = alt;
                best = touch;
                improved = true;
                break;
            }
        }
        if !improved {
            return best;
        }
    }
}

/// Solves the boundary problem honoring control, speed and (optionally)
/// rear-end constraints against a committed predecessor trajectory.
pub fn solve_constrained(
    b: &BoundaryData,
    limits: &VehicleLimits,
    predecessor: Option<&SharedArc<TrajectoryArcs>>,
) -> Result<TrajectoryArcs> {
    limits.validate()?;
    b.validate()?;
    let pr = Problem {
        b,
        limits,
        predecessor: predecessor.cloned(),
        gap: apply_tracking_margin(limits),
        qp: std::cell::OnceCell::new(),
    };

    let mut traj = solve_unconstrained(b)?;
    // Even the unconstrained solution must carry the predecessor so follow
    // checks and downstream consumers can evaluate the gap.
    traj.predecessor = pr.predecessor.clone();
    traj.follow_gap = pr.gap;

    let mut st = Structure::initial(b);
    let mut runs_inserted = false;
    for _ in 0..MAX_INSERTIONS {
        let viol = match first_violation(&traj, &pr) {
            None => return Ok(prefer_touch(&st, &pr, traj)),
            Some(v) => v,
        };
        let times: Vec<f64> = traj
            .arcs
            .iter()
            .map(|a| a.t_start)
            .chain(std::iter::once(traj.end_time()))
            .collect();
        if viol.kind == ArcKind::RearEndFollow && !runs_inserted {
            runs_inserted = true;
            match follow_active_runs(&pr) {
                Some((runs, dt)) => insert_follow_runs(&mut st, &times, &runs, dt)?,
                None => insert_violation(&mut st, &times, viol)?,
            }
        } else {
            let viol = if viol.kind == ArcKind::RearEndFollow {
                refine_follow_span(&pr, viol)
            } else {
                viol
            };
            insert_violation(&mut st, &times, viol)?;
        }

        // Solve, collapsing any sub-arc that shrinks to zero length.
        let mut rounds = 0;
        loop {
            let ev = Eval::new(&st, &pr);
            let x = match solve_structure(&ev) {
                Ok(x) => x,
                Err(e) => {
                    drop(ev);
                    // A follow interval that pinches has no room for the
                    // leader's control kink; retry as a tangential touch.
                    if st.follow_to_touch() {
                        continue;
                    }
                    return Err(e);
                }
            };
            let resolved: Vec<f64> = (0..=st.kinds.len()).map(|i| ev.bound_time(&x, i)).collect();
            for w in resolved.windows(2) {
                if w[1] < w[0] - 1e-9 {
                    if std::env::var_os("CORRIDOR_OCP_DEBUG").is_some() {
                        eprintln!("structure {:?} resolved {:?}", st, resolved);
                    }
                    return Err(infeasible("junction times out of order", 0.0, 0));
                }
            }
            let collapsed = (0..st.kinds.len())
                .find(|&i| resolved[i + 1] - resolved[i] < MIN_ARC_DURATION);
            match collapsed {
                Some(i) if rounds < 3 && st.kinds[i] != ArcKind::Unconstrained => {
                    st.remove_sub(i);
                    rounds += 1;
                    if st.kinds.iter().all(|&k| k == ArcKind::Unconstrained)
                        && st.free_count() == 0
                    {
                        // Everything collapsed back to the unconstrained case.
                        break;
                    }
                    continue;
                }
                Some(i) if rounds < 3 => {
                    st.remove_sub(i);
                    rounds += 1;
                    continue;
                }
                Some(_) => {
                    return Err(infeasible("degenerate zero-length arc persists", 0.0, rounds))
                }
                None => {
                    traj = to_trajectory(&ev, &x);
                    break;
                }
            }
        }
    }

    match first_violation(&traj, &pr) {
        None => Ok(traj),
        Some(v) => Err(infeasible(
            format!("insertion cap reached with {:?} still violated", v.kind),
            0.0,
            MAX_INSERTIONS,
        )),
    }
}
