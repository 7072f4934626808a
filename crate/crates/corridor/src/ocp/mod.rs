//! Low-level trajectory planning: closed-form minimum-control-effort
//! trajectories through fixed interior points, with constrained arcs pieced
//! in when control, speed or rear-end limits activate.
//!
//! States follow double-integrator dynamics: position integrates speed,
//! speed integrates the control input u. Minimizing half the integral of u^2
//! makes u piecewise linear in time, with slope jumps only at the fixed
//! interior points; each arc stores its cubic position polynomial in local
//! time to keep the linear systems well conditioned.

mod constrained;
mod discretized;
mod unconstrained;

pub use constrained::solve_constrained;
pub use discretized::solve_discretized;
pub(crate) use discretized::solve_discretized_unpadded;
pub use unconstrained::{dump_linear_system, solve_unconstrained};

use std::sync::Arc as SharedArc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{PathSpec, VehicleLimits};
use crate::scheduler::SchedulePlan;

/// Boundary conditions of one vehicle's trajectory problem: entry state,
/// exit position, and the fixed interior (time, position) points at every
/// zone entry and exit short of the final one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryData {
    pub t0: f64,
    pub p0: f64,
    pub v0: f64,
    pub tf: f64,
    pub pf: f64,
    /// (t_j, C_j) pairs, strictly increasing in both coordinates.
    pub interior: Vec<(f64, f64)>,
}

impl BoundaryData {
    pub fn validate(&self) -> Result<()> {
        if !(self.tf > self.t0) {
            return Err(Error::DegenerateBoundary(format!(
                "exit time {} not after entry time {}",
                self.tf, self.t0
            )));
        }
        if !(self.pf > self.p0) {
            return Err(Error::DegenerateBoundary(
                "exit position must exceed entry position".into(),
            ));
        }
        if self.v0 <= 0.0 {
            return Err(Error::DegenerateBoundary("entry speed must be positive".into()));
        }
        let mut t_prev = self.t0;
        let mut p_prev = self.p0;
        for &(t, p) in &self.interior {
            if !(t > t_prev && t < self.tf) {
                return Err(Error::DegenerateBoundary(format!(
                    "interior time {t} not strictly inside ({t_prev}, {})",
                    self.tf
                )));
            }
            if !(p > p_prev && p < self.pf) {
                return Err(Error::DegenerateBoundary(format!(
                    "interior position {p} not strictly inside ({p_prev}, {})",
                    self.pf
                )));
            }
            t_prev = t;
            p_prev = p;
        }
        Ok(())
    }

    /// Builds boundary data from a committed schedule: one interior point per
    /// zone entry and exit, the final zone exit becoming the terminal
    /// condition.
    pub fn from_schedule(
        plan: &SchedulePlan,
        path: &PathSpec,
        t0: f64,
        v0: f64,
    ) -> Result<BoundaryData> {
        let s = plan.zone_occupancy * plan.v_avg;
        let mut interior = Vec::with_capacity(2 * plan.arrivals.len() - 1);
        for (i, &(_, t)) in plan.arrivals.iter().enumerate() {
            let offset = path.zone_entry_offsets[i];
            interior.push((t, offset));
            if i + 1 < plan.arrivals.len() {
                interior.push((t + plan.zone_occupancy, offset + s));
            }
        }
        let b = BoundaryData {
            t0,
            p0: 0.0,
            v0,
            tf: plan.exit_time,
            pf: path.path_length,
            interior,
        };
        b.validate()?;
        Ok(b)
    }
}

/// Arc type: which constraint (if any) is active on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArcKind {
    Unconstrained,
    UMax,
    UMin,
    VMax,
    VMin,
    RearEndFollow,
}

/// One trajectory arc with polynomial coefficients in local time
/// `tau = t - t_start`: u = a*tau + b, v = a/2 tau^2 + b tau + c,
/// p = a/6 tau^3 + b/2 tau^2 + c tau + d.
///
/// Constrained arcs encode their active constraint in the same coefficients
/// (e.g. a = 0, b = uMax on a control-limit arc); rear-end arcs delegate to
/// the predecessor trajectory and leave the coefficients unused.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Arc {
    pub kind: ArcKind,
    pub t_start: f64,
    pub t_end: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

/// Instantaneous kinematic state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub p: f64,
    pub v: f64,
    pub u: f64,
}

/// Interior-point multiplier pair: the costate jump pi1 at a fixed interior
/// point and the associated Hamiltonian jump pi2.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InteriorMultiplier {
    pub time: f64,
    pub pi1: f64,
    pub pi2: f64,
}

/// Complete solved trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryArcs {
    pub arcs: Vec<Arc>,
    pub multipliers: Vec<InteriorMultiplier>,
    /// Predecessor trajectory referenced by rear-end-follow arcs.
    pub predecessor: Option<SharedArc<TrajectoryArcs>>,
    /// Effective gap held behind the predecessor on follow arcs.
    pub follow_gap: f64,
}

impl TrajectoryArcs {
    pub fn start_time(&self) -> f64 {
        self.arcs.first().map(|a| a.t_start).unwrap_or(0.0)
    }

    pub fn end_time(&self) -> f64 {
        self.arcs.last().map(|a| a.t_end).unwrap_or(0.0)
    }

    fn arc_index_at(&self, t: f64) -> usize {
        // Right-open arcs; the final arc owns its end point.
        match self
            .arcs
            .binary_search_by(|a| a.t_start.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        }
    }

    /// Closed-form state at `t` inside the planning horizon.
    pub fn evaluate(&self, t: f64) -> Result<State> {
        let (t0, tf) = (self.start_time(), self.end_time());
        if t < t0 - 1e-9 || t > tf + 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "time {t} outside trajectory horizon [{t0}, {tf}]"
            )));
        }
        Ok(self.evaluate_extrapolated(t))
    }

    /// State at `t`, extended by constant-speed cruise before entry and
    /// after exit. Used for leaders whose followers outlive them.
    pub fn evaluate_extrapolated(&self, t: f64) -> State {
        let t0 = self.start_time();
        let tf = self.end_time();
        if t < t0 {
            let s = self.arc_state(0, 0.0);
            return State {
                p: s.p + s.v * (t - t0),
                v: s.v,
                u: 0.0,
            };
        }
        if t > tf {
            let last = self.arcs.len() - 1;
            let s = self.arc_state(last, self.arcs[last].t_end - self.arcs[last].t_start);
            return State {
                p: s.p + s.v * (t - tf),
                v: s.v,
                u: 0.0,
            };
        }
        let i = self.arc_index_at(t);
        self.arc_state(i, t - self.arcs[i].t_start)
    }

    fn arc_state(&self, index: usize, tau: f64) -> State {
        let arc = &self.arcs[index];
        match arc.kind {
            ArcKind::RearEndFollow => {
                let pred = self
                    .predecessor
                    .as_ref()
                    .expect("rear-end arc without predecessor");
                let s = pred.evaluate_extrapolated(arc.t_start + tau);
                State {
                    p: s.p - self.follow_gap,
                    v: s.v,
                    u: s.u,
                }
            }
            _ => State {
                p: arc.a / 6.0 * tau.powi(3) + arc.b / 2.0 * tau * tau + arc.c * tau + arc.d,
                v: arc.a / 2.0 * tau * tau + arc.b * tau + arc.c,
                u: arc.a * tau + arc.b,
            },
        }
    }

    /// Control effort `1/2 * integral of u^2` over the whole trajectory.
    pub fn control_cost(&self) -> f64 {
        self.control_effort_between(self.start_time(), self.end_time())
    }

    /// Control effort over `[ta, tb]`, clipped to the horizon; rear-end arcs
    /// integrate the predecessor's control.
    pub fn control_effort_between(&self, ta: f64, tb: f64) -> f64 {
        let mut total = 0.0;
        for (i, arc) in self.arcs.iter().enumerate() {
            let lo = arc.t_start.max(ta);
            let hi = arc.t_end.min(tb);
            if hi <= lo {
                continue;
            }
            match arc.kind {
                ArcKind::RearEndFollow => {
                    let pred = self.predecessor.as_ref().unwrap();
                    total += pred.control_effort_between(lo, hi);
                }
                _ => {
                    let (a, b) = (self.arcs[i].a, self.arcs[i].b);
                    let (x0, x1) = (lo - arc.t_start, hi - arc.t_start);
                    total += 0.5
                        * (a * a * (x1.powi(3) - x0.powi(3)) / 3.0
                            + a * b * (x1 * x1 - x0 * x0)
                            + b * b * (x1 - x0));
                }
            }
        }
        total
    }

    /// First time the position reaches `target`, clamped to the horizon end
    /// if it is never reached.
    pub fn first_time_at_position(&self, target: f64) -> f64 {
        let t0 = self.start_time();
        let tf = self.end_time();
        if self.evaluate_extrapolated(t0).p >= target {
            return t0;
        }
        let step = ((tf - t0) / 4096.0).min(0.01).max(1e-6);
        let mut t_prev = t0;
        let mut t = t0 + step;
        while t < tf + step {
            let tc = t.min(tf);
            if self.evaluate_extrapolated(tc).p >= target {
                // Bisect the bracketing interval.
                let (mut lo, mut hi) = (t_prev, tc);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if self.evaluate_extrapolated(mid).p >= target {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return hi;
            }
            t_prev = tc;
            t += step;
        }
        tf
    }
}

/// Effective rear-end distance with the position-tracking margin folded in:
/// both vehicles may deviate by up to epsilon.
pub fn apply_tracking_margin(limits: &VehicleLimits) -> f64 {
    limits.safe_distance + 2.0 * limits.tracking_error
}

#[cfg(test)]
mod tests {
    use super::*;

    fn limits() -> VehicleLimits {
        VehicleLimits {
            u_min: -6.0,
            u_max: 3.0,
            v_min: 0.0,
            v_max: 15.0,
            safe_distance: 10.0,
            tracking_error: 0.0,
        }
    }

    #[test]
    fn tracking_margin_examples() {
        let mut l = limits();
        l.safe_distance = 5.0;
        l.tracking_error = 0.5;
        assert_eq!(apply_tracking_margin(&l), 6.0);
        l.tracking_error = 0.0;
        assert_eq!(apply_tracking_margin(&l), 5.0);
        l.safe_distance = 10.0;
        l.tracking_error = 1.0;
        assert_eq!(apply_tracking_margin(&l), 12.0);
    }

    #[test]
    fn boundary_validation() {
        let good = BoundaryData {
            t0: 0.0,
            p0: 0.0,
            v0: 12.5,
            tf: 13.2,
            pf: 165.0,
            interior: vec![(12.0, 150.0)],
        };
        assert!(good.validate().is_ok());

        let mut bad = good.clone();
        bad.tf = -1.0;
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.interior = vec![(14.0, 150.0)];
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.interior = vec![(12.0, 200.0)];
        assert!(bad.validate().is_err());

        let mut bad = good;
        bad.v0 = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn cruise_evaluation_and_cost() {
        let traj = TrajectoryArcs {
            arcs: vec![Arc {
                kind: ArcKind::Unconstrained,
                t_start: 0.0,
                t_end: 10.0,
                a: 0.0,
                b: 0.0,
                c: 12.5,
                d: 0.0,
            }],
            multipliers: vec![],
            predecessor: None,
            follow_gap: 0.0,
        };
        let s = traj.evaluate(4.0).unwrap();
        assert_eq!(s, State { p: 50.0, v: 12.5, u: 0.0 });
        assert_eq!(traj.control_cost(), 0.0);
        assert!(traj.evaluate(11.0).is_err());
        // Extrapolation continues the cruise.
        let s = traj.evaluate_extrapolated(12.0);
        assert!((s.p - 150.0).abs() < 1e-12);
        let s = traj.evaluate_extrapolated(-2.0);
        assert!((s.p + 25.0).abs() < 1e-12);
        // Crossing time of an intermediate position.
        assert!((traj.first_time_at_position(30.0) - 2.4).abs() < 1e-6);
    }

    #[test]
    fn effort_integral_matches_quadrature() {
        let traj = TrajectoryArcs {
            arcs: vec![Arc {
                kind: ArcKind::Unconstrained,
                t_start: 0.0,
                t_end: 5.0,
                a: 0.4,
                b: -1.0,
                c: 12.0,
                d: 0.0,
            }],
            multipliers: vec![],
            predecessor: None,
            follow_gap: 0.0,
        };
        let n = 200_000;
        let h = 5.0 / n as f64;
        let mut sum = 0.0;
        for k in 0..n {
            let t = (k as f64 + 0.5) * h;
            let u = 0.4 * t - 1.0;
            sum += 0.5 * u * u * h;
        }
        assert!((traj.control_cost() - sum).abs() < 1e-6);
    }

    #[test]
    fn follow_arc_mirrors_predecessor() {
        let leader = SharedArc::new(TrajectoryArcs {
            arcs: vec![Arc {
                kind: ArcKind::Unconstrained,
                t_start: 0.0,
                t_end: 10.0,
                a: 0.2,
                b: -0.5,
                c: 12.0,
                d: 100.0,
            }],
            multipliers: vec![],
            predecessor: None,
            follow_gap: 0.0,
        });
        let follower = TrajectoryArcs {
            arcs: vec![Arc {
                kind: ArcKind::RearEndFollow,
                t_start: 2.0,
                t_end: 6.0,
                a: 0.0,
                b: 0.0,
                c: 0.0,
                d: 0.0,
            }],
            multipliers: vec![],
            predecessor: Some(leader.clone()),
            follow_gap: 10.0,
        };
        let t = 3.7;
        let sl = leader.evaluate(t).unwrap();
        let sf = follower.evaluate(t).unwrap();
        assert!((sl.p - sf.p - 10.0).abs() < 1e-12);
        assert_eq!(sl.v, sf.v);
        assert_eq!(sl.u, sf.u);
        // Effort delegates to the leader over the follow span.
        assert!(
            (follower.control_cost() - leader.control_effort_between(2.0, 6.0)).abs() < 1e-12
        );
    }
}
