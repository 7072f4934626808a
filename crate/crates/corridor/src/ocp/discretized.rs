//! Discretized fallback for trajectory instances whose constrained-arc
//! topology the closed-form solver rejects or fails to converge on, which
//! happens in deeply queued stop-and-go situations.
//!
//! The same minimum-effort program is posed as a sparse convex QP over
//! piecewise-constant controls and solved with an interior-point method.
//! The result is returned as a dense chain of exact constant-control arcs,
//! so every downstream consumer (followers, playback, metrics) treats it
//! like any closed-form trajectory. Effort is within the discretization
//! error of the true optimum instead of exactly optimal.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT,
    ZeroConeT,
};

use std::sync::Arc as SharedArc;

use crate::error::{Error, InfeasibleReport, Result};
use crate::scenario::VehicleLimits;

use super::{apply_tracking_margin, Arc, ArcKind, BoundaryData, TrajectoryArcs};

/// Grid resolution of the fallback, s.
const DT_TARGET: f64 = 0.1;

/// Margin added to the rear-end gap at the grid points. Positions between
/// samples are quadratic with curvature bounded by the control limits, so a
/// pad of `|u|_max * dt^2 / 4` dominates the inter-sample bulge of both
/// vehicles.
fn intersample_pad(limits: &VehicleLimits, dt: f64) -> f64 {
    limits.u_max.max(-limits.u_min) * dt * dt / 4.0
}

struct Triplets {
    rows: usize,
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    b: Vec<f64>,
}

impl Triplets {
    fn new() -> Self {
        Triplets {
            rows: 0,
            i: Vec::new(),
            j: Vec::new(),
            v: Vec::new(),
            b: Vec::new(),
        }
    }

    fn push_row(&mut self, entries: &[(usize, f64)], rhs: f64) {
        for &(col, val) in entries {
            self.i.push(self.rows);
            self.j.push(col);
            self.v.push(val);
        }
        self.b.push(rhs);
        self.rows += 1;
    }

    fn into_csc(self, cols: usize) -> (CscMatrix<f64>, Vec<f64>) {
        (
            CscMatrix::new_from_triplets(self.rows, cols, self.i, self.j, self.v),
            self.b,
        )
    }
}

/// Solves the boundary problem on a uniform control grid and returns the
/// trajectory as one constant-control arc per step.
pub fn solve_discretized(
    bd: &BoundaryData,
    limits: &VehicleLimits,
    predecessor: Option<&SharedArc<TrajectoryArcs>>,
) -> Result<TrajectoryArcs> {
    solve_discretized_inner(bd, limits, predecessor, true)
}

/// Grid solve without the inter-sample pad on the rear-end gap. The result
/// is safe only at the grid points; it exists for active-set detection, not
/// for committing.
pub(crate) fn solve_discretized_unpadded(
    bd: &BoundaryData,
    limits: &VehicleLimits,
    predecessor: Option<&SharedArc<TrajectoryArcs>>,
) -> Result<TrajectoryArcs> {
    solve_discretized_inner(bd, limits, predecessor, false)
}

fn solve_discretized_inner(
    bd: &BoundaryData,
    limits: &VehicleLimits,
    predecessor: Option<&SharedArc<TrajectoryArcs>>,
    padded: bool,
) -> Result<TrajectoryArcs> {
    bd.validate()?;
    limits.validate()?;
    let n = (((bd.tf - bd.t0) / DT_TARGET).ceil() as usize).clamp(8, 200);
    let dt = (bd.tf - bd.t0) / n as f64;
    let gap = apply_tracking_margin(limits)
        + if padded {
            intersample_pad(limits, dt)
        } else {
            0.0
        };

    // Variables: u_0..u_{n-1}, v_1..v_n, p_1..p_n.
    let iu = |k: usize| k;
    let iv = |k: usize| n + (k - 1);
    let ip = |k: usize| 2 * n + (k - 1);
    let n_var = 3 * n;

    let mut eq = Triplets::new();
    // Exact constant-control dynamics per step.
    for k in 0..n {
        if k == 0 {
            eq.push_row(&[(iv(1), 1.0), (iu(0), -dt)], bd.v0);
            eq.push_row(&[(ip(1), 1.0), (iu(0), -dt * dt / 2.0)], bd.p0 + bd.v0 * dt);
        } else {
            eq.push_row(&[(iv(k + 1), 1.0), (iv(k), -1.0), (iu(k), -dt)], 0.0);
            eq.push_row(
                &[
                    (ip(k + 1), 1.0),
                    (ip(k), -1.0),
                    (iv(k), -dt),
                    (iu(k), -dt * dt / 2.0),
                ],
                0.0,
            );
        }
    }
    // Interior position targets, interpolated between bracketing samples.
    for &(tj, cj) in &bd.interior {
        let s = (tj - bd.t0) / dt;
        let k = (s.floor() as usize).min(n - 1);
        let theta = s - k as f64;
        if k == 0 {
            eq.push_row(&[(ip(1), theta)], cj - (1.0 - theta) * bd.p0);
        } else {
            eq.push_row(&[(ip(k), 1.0 - theta), (ip(k + 1), theta)], cj);
        }
    }
    eq.push_row(&[(ip(n), 1.0)], bd.pf);
    let n_eq = eq.rows;

    let mut all = eq;
    for k in 0..n {
        all.push_row(&[(iu(k), 1.0)], limits.u_max);
        all.push_row(&[(iu(k), -1.0)], -limits.u_min);
    }
    for k in 1..=n {
        all.push_row(&[(iv(k), 1.0)], limits.v_max);
        all.push_row(&[(iv(k), -1.0)], -limits.v_min);
    }
    if let Some(leader) = predecessor {
        for k in 1..=n {
            let t = bd.t0 + k as f64 * dt;
            let lead_p = leader.evaluate_extrapolated(t).p;
            all.push_row(&[(ip(k), 1.0)], lead_p - gap);
        }
    }
    let n_ineq = all.rows - n_eq;
    let (a, b) = all.into_csc(n_var);

    let p = CscMatrix::new(
        n_var,
        n_var,
        (0..=n_var).map(|c| c.min(n)).collect(),
        (0..n).collect(),
        vec![dt; n],
    );
    let q = vec![0.0; n_var];
    let cones: Vec<SupportedConeT<f64>> = vec![ZeroConeT(n_eq), NonnegativeConeT(n_ineq)];
    let settings = DefaultSettings {
        verbose: false,
        tol_gap_abs: 1e-7,
        tol_gap_rel: 1e-7,
        tol_feas: 1e-8,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings);
    solver.solve();
    match solver.solution.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {}
        s => {
            return Err(Error::ConstrainedSolve(InfeasibleReport {
                reason: format!("discretized fallback not solved: {s:?}"),
                residual: f64::NAN,
                iterations: solver.solution.iterations as usize,
            }))
        }
    }

    // Rebuild states by exact propagation of the solved controls, keeping
    // the arc chain internally consistent to machine precision.
    let x = &solver.solution.x;
    let mut arcs = Vec::with_capacity(n);
    let (mut pk, mut vk) = (bd.p0, bd.v0);
    for k in 0..n {
        let u = x[iu(k)];
        arcs.push(Arc {
            kind: ArcKind::Unconstrained,
            t_start: bd.t0 + k as f64 * dt,
            t_end: bd.t0 + (k + 1) as f64 * dt,
            a: 0.0,
            b: u,
            c: vk,
            d: pk,
        });
        pk += vk * dt + 0.5 * u * dt * dt;
        vk += u * dt;
    }
    Ok(TrajectoryArcs {
        arcs,
        multipliers: vec![],
        predecessor: None,
        follow_gap: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::solve_unconstrained;

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
    fn fallback_matches_closed_form_when_unconstrained() {
        let bd = BoundaryData {
            t0: 0.0,
            p0: 0.0,
            v0: 12.5,
            tf: 13.2,
            pf: 165.0,
            interior: vec![(12.0, 150.0)],
        };
        let exact = solve_unconstrained(&bd).unwrap();
        let qp = solve_discretized(&bd, &limits(), None).unwrap();
        assert!((qp.control_cost() - exact.control_cost()).abs() < 2e-3);
        // End state honors the boundary conditions.
        let s = qp.evaluate_extrapolated(bd.tf);
        assert!((s.p - bd.pf).abs() < 1e-4);
        for t in [0.0, 3.3, 7.7, 12.0, 13.2] {
            let a = exact.evaluate_extrapolated(t);
            let b = qp.evaluate_extrapolated(t);
            assert!((a.p - b.p).abs() < 2e-2, "p mismatch at {t}");
            assert!((a.v - b.v).abs() < 2e-2, "v mismatch at {t}");
        }
    }

    #[test]
    fn fallback_respects_rear_end_gap() {
        let lb = BoundaryData {
            t0: 0.0,
            p0: 10.0,
            v0: 12.0,
            tf: 12.0,
            pf: 130.0,
            interior: vec![(8.0, 70.0)],
        };
        let leader = SharedArc::new(solve_unconstrained(&lb).unwrap());
        let mut l = limits();
        l.u_max = 4.0;
        l.safe_distance = 8.0;
        l.tracking_error = 0.1;
        let fb = BoundaryData {
            t0: 0.0,
            p0: 0.0,
            v0: 13.0,
            tf: 13.2,
            pf: 130.0,
            interior: vec![],
        };
        let traj = solve_discretized(&fb, &l, Some(&leader)).unwrap();
        let delta_eff = apply_tracking_margin(&l);
        let mut t = 0.0;
        while t <= 13.2 {
            let g = leader.evaluate_extrapolated(t).p - traj.evaluate_extrapolated(t).p;
            assert!(g >= delta_eff - 1e-6, "gap {g} at {t}");
            t += 0.01;
        }
    }

    #[test]
    fn fallback_reports_impossible_schedules() {
        let mut l = limits();
        l.v_max = 13.0;
        let bd = BoundaryData {
            t0: 0.0,
            p0: 0.0,
            v0: 12.5,
            tf: 5.0,
            pf: 165.0,
            interior: vec![],
        };
        assert!(matches!(
            solve_discretized(&bd, &l, None),
            Err(Error::ConstrainedSolve(_))
        ));
    }
}
