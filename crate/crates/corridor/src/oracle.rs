//! Independent reference implementations used to cross-check the fast
//! planning paths.
//!
//! The trajectory solver is checked against a discretized quadratic
//! program over sampled controls, speeds and positions; the arrival-time
//! scheduler against an exhaustive candidate search and a fine time-grid
//! sweep. These are orders of magnitude slower than the closed-form
//! solvers and exist only for validation.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT,
    ZeroConeT,
};

use rand::Rng;

use crate::error::{Error, Result};
use crate::ocp::{BoundaryData, TrajectoryArcs};
use crate::scenario::{zone_occupancy_duration, LaneId, VehicleLimits};
use crate::scheduler::{rear_end_headway, unconstrained_arrival, ScheduleContext, SchedulePlan};

/// Sampled solution of the discretized trajectory program.
#[derive(Debug, Clone)]
pub struct DiscretizedSolution {
    /// Control effort `1/2 * sum u_k^2 * dt`.
    pub effort: f64,
    pub times: Vec<f64>,
    pub controls: Vec<f64>,
    pub speeds: Vec<f64>,
    pub positions: Vec<f64>,
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

/// Minimum-effort trajectory through the boundary data as a sparse QP on a
/// uniform grid of `n_steps` piecewise-constant controls.
///
/// Control and speed limits are enforced when `limits` is given; the
/// rear-end constraint `p_lead(t) - p(t) >= gap` when `predecessor` is.
/// Interior position targets between grid points are met by linear
/// interpolation.
pub fn discretized_effort(
    bd: &BoundaryData,
    limits: Option<&VehicleLimits>,
    predecessor: Option<(&TrajectoryArcs, f64)>,
    n_steps: usize,
) -> Result<DiscretizedSolution> {
    bd.validate()?;
    let n = n_steps;
    if n < 2 {
        return Err(Error::InvalidArgument(
            "discretization needs at least two steps".into(),
        ));
    }
    let dt = (bd.tf - bd.t0) / n as f64;
    // Variables: u_0..u_{n-1}, v_1..v_n, p_1..p_n.
    let iu = |k: usize| k;
    let iv = |k: usize| n + (k - 1);
    let ip = |k: usize| 2 * n + (k - 1);
    let n_var = 3 * n;

    let mut eq = Triplets::new();
    // Dynamics: v_{k+1} = v_k + u_k dt, p_{k+1} = p_k + v_k dt + u_k dt^2/2.
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

    // Inequalities appended below the equalities, in Ax <= b form.
    let mut all = eq;
    if let Some(l) = limits {
        l.validate()?;
        for k in 0..n {
            all.push_row(&[(iu(k), 1.0)], l.u_max);
            all.push_row(&[(iu(k), -1.0)], -l.u_min);
        }
        for k in 1..=n {
            all.push_row(&[(iv(k), 1.0)], l.v_max);
            all.push_row(&[(iv(k), -1.0)], -l.v_min);
        }
    }
    if let Some((leader, gap)) = predecessor {
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
        tol_gap_abs: 1e-10,
        tol_gap_rel: 1e-10,
        tol_feas: 1e-10,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings);
    solver.solve();
    match solver.solution.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {}
        s => {
            return Err(Error::InvalidArgument(format!(
                "discretized program not solved: {s:?}"
            )))
        }
    }
    let x = &solver.solution.x;
    let controls: Vec<f64> = (0..n).map(|k| x[iu(k)]).collect();
    let effort = 0.5 * dt * controls.iter().map(|u| u * u).sum::<f64>();
    Ok(DiscretizedSolution {
        effort,
        times: (0..=n).map(|k| bd.t0 + k as f64 * dt).collect(),
        controls,
        speeds: std::iter::once(bd.v0)
            .chain((1..=n).map(|k| x[iv(k)]))
            .collect(),
        positions: std::iter::once(bd.p0)
            .chain((1..=n).map(|k| x[ip(k)]))
            .collect(),
    })
}

fn window_feasible(t: f64, occupancy: f64, idle: f64, windows: &[(f64, f64)]) -> bool {
    windows
        .iter()
        .all(|&(tj, dtj)| tj + dtj + idle <= t || t + occupancy + idle <= tj)
}

/// Earliest time `>= bound` whose occupancy interval avoids every window,
/// found by checking the full candidate set: the bound itself and every
/// window end.
pub fn earliest_feasible(bound: f64, occupancy: f64, idle: f64, windows: &[(f64, f64)]) -> f64 {
    let mut best = f64::INFINITY;
    for cand in std::iter::once(bound).chain(windows.iter().map(|&(tj, dtj)| tj + dtj + idle)) {
        if cand >= bound && cand < best && window_feasible(cand, occupancy, idle, windows) {
            best = cand;
        }
    }
    best
}

/// Grid variant of [`earliest_feasible`]: sweeps from the bound in `step`
/// increments until an admissible slot appears. The result overshoots the
/// exact optimum by less than one step.
pub fn grid_first_feasible(
    bound: f64,
    occupancy: f64,
    idle: f64,
    windows: &[(f64, f64)],
    step: f64,
) -> f64 {
    let horizon = windows
        .iter()
        .map(|&(tj, dtj)| tj + dtj + idle)
        .fold(bound, f64::max);
    let mut t = bound;
    while t < horizon && !window_feasible(t, occupancy, idle, windows) {
        t += step;
    }
    t
}

/// Exhaustive counterpart of the scheduler's window scan: the same zone
/// recursion and safety floors, but the lateral separation is found by
/// minimizing over the full candidate set instead of a single sorted pass.
pub fn exhaustive_plan(ctx: &ScheduleContext, lane: LaneId, idle: f64) -> Result<SchedulePlan> {
    let dt_i = zone_occupancy_duration(ctx.entry_speed, ctx.zone_length)?;
    let predecessor = ctx
        .sets
        .predecessor(lane)
        .and_then(|k| ctx.coordinator.committed(k));

    let mut arrivals = Vec::with_capacity(ctx.path.zones.len());
    let mut nominal = true;
    let mut prev: Option<f64> = None;
    for (idx, &z) in ctx.path.zones.iter().enumerate() {
        let t_bar = unconstrained_arrival(
            ctx.path,
            ctx.entry_time,
            ctx.entry_speed,
            ctx.zone_length,
            idx,
            prev,
        )?;
        let mut bound = t_bar;
        if idx == 0 {
            if let Some(floor) = ctx.min_first_arrival {
                bound = bound.max(floor);
            }
        }
        if let Some(k) = predecessor {
            if let Some(t_k) = k.plan.arrival(z) {
                let rho = rear_end_headway(ctx.safe_distance, k.plan.v_avg)?;
                bound = bound
                    .max(t_k + rho + idle)
                    .max(t_k + k.plan.zone_occupancy - dt_i + rho + idle);
            }
        }
        let windows = ctx.coordinator.lateral_arrival_windows(ctx.sets, z);
        let t_star = earliest_feasible(bound, dt_i, idle, &windows);
        if !t_star.is_finite() {
            return Err(Error::InvalidArgument(
                "no feasible arrival among candidates".into(),
            ));
        }
        if t_star > t_bar {
            nominal = false;
        }
        arrivals.push((z, t_star));
        prev = Some(t_star);
    }
    let exit_time = arrivals.last().map(|&(_, t)| t).unwrap_or(ctx.entry_time) + dt_i;
    Ok(SchedulePlan {
        lane,
        arrivals,
        zone_occupancy: dt_i,
        exit_time,
        v_avg: ctx.entry_speed,
        nominal,
    })
}

/// Result of the solver-exactness sweep: structural residuals of randomized
/// closed-form solutions.
#[derive(Debug, Clone, Copy)]
pub struct ExactnessOutcome {
    pub total: usize,
    pub failures: usize,
    pub max_residual: f64,
}

/// Result of the analytic-vs-discretized cost comparison.
#[derive(Debug, Clone, Copy)]
pub struct QpOutcome {
    pub total: usize,
    pub vmax_active: usize,
    pub rear_end_active: usize,
    pub failures: usize,
    pub max_rel_gap: f64,
}

/// Result of the scheduler-vs-brute-force sweep.
#[derive(Debug, Clone, Copy)]
pub struct SchedulerOutcome {
    pub total: usize,
    pub failures: usize,
    pub idle_zero_mismatches: usize,
}

/// All embedded verification suites at their release-gate sizes.
#[derive(Debug, Clone, Copy)]
pub struct SuiteSummary {
    pub exactness: ExactnessOutcome,
    pub qp: QpOutcome,
    pub scheduler: SchedulerOutcome,
}

pub fn verify_suites() -> SuiteSummary {
    SuiteSummary {
        exactness: exactness_suite(120, 11),
        qp: qp_equivalence_suite(20, 1e-3, 12),
        scheduler: scheduler_suite(1000, 13),
    }
}

/// Randomized feasible boundary data shaped like a scheduled corridor
/// crossing: per zone one entry and one exit target, the final exit being
/// the terminal condition, so `n` zones give `2n - 1` interior points.
pub fn random_boundary<R: rand::Rng>(rng: &mut R) -> BoundaryData {
    let zones = rng.gen_range(1..=3usize);
    let v0 = rng.gen_range(8.0..13.0);
    let mut t = 0.0;
    let mut p = 0.0;
    let mut interior = Vec::new();
    for _ in 0..zones {
        let seg = rng.gen_range(60.0..160.0);
        let v_seg = rng.gen_range(7.0..14.0);
        t += seg / v_seg;
        p += seg;
        interior.push((t, p));
        let v_zone = rng.gen_range(8.0..13.0);
        t += 15.0 / v_zone;
        p += 15.0;
        interior.push((t, p));
    }
    let (tf, pf) = interior.pop().unwrap();
    BoundaryData {
        t0: 0.0,
        p0: 0.0,
        v0,
        tf,
        pf,
        interior,
    }
}

fn arc_state(arc: &crate::ocp::Arc, tau: f64) -> (f64, f64, f64) {
    let p = arc.d + arc.c * tau + arc.b * tau * tau / 2.0 + arc.a * tau * tau * tau / 6.0;
    let v = arc.c + arc.b * tau + arc.a * tau * tau / 2.0;
    let u = arc.b + arc.a * tau;
    (p, v, u)
}

/// Largest structural residual of one solution: boundary and interior
/// conditions, junction continuity, terminal control, and the
/// Hamiltonian-jump identity `pi2 = -pi1 v(t_j)` recomputed from the arc
/// polynomials on both sides of each interior point.
pub fn exactness_residual(bd: &BoundaryData, traj: &TrajectoryArcs) -> f64 {
    let mut r: f64 = 0.0;
    let first = &traj.arcs[0];
    let last = traj.arcs.last().unwrap();
    let (p0, v0, _) = arc_state(first, 0.0);
    r = r.max((p0 - bd.p0).abs()).max((v0 - bd.v0).abs());
    let (pf, _, uf) = arc_state(last, last.t_end - last.t_start);
    r = r.max((pf - bd.pf).abs()).max(uf.abs());
    for (j, &(tj, cj)) in bd.interior.iter().enumerate() {
        let left = &traj.arcs[j];
        let right = &traj.arcs[j + 1];
        let (pl, vl, ul) = arc_state(left, left.t_end - left.t_start);
        let (pr, vr, ur) = arc_state(right, 0.0);
        r = r.max((pl - cj).abs());
        r = r.max((pl - pr).abs()).max((vl - vr).abs()).max((ul - ur).abs());
        let m = &traj.multipliers[j];
        debug_assert!((m.time - tj).abs() < 1e-9);
        let h_left = -0.5 * ul * ul + left.a * vl;
        let h_right = -0.5 * ur * ur + right.a * vr;
        r = r.max((h_left - h_right + m.pi2).abs());
    }
    r
}

pub fn exactness_suite(count: usize, seed: u64) -> ExactnessOutcome {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut max_residual: f64 = 0.0;
    for _ in 0..count {
        let bd = random_boundary(&mut rng);
        match crate::ocp::solve_unconstrained(&bd) {
            Ok(traj) => {
                let r = exactness_residual(&bd, &traj);
                max_residual = max_residual.max(r);
                if r > 1e-8 {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    ExactnessOutcome {
        total: count,
        failures,
        max_residual,
    }
}

fn loose_limits() -> VehicleLimits {
    VehicleLimits {
        u_min: -6.0,
        u_max: 3.0,
        v_min: 0.0,
        v_max: 40.0,
        safe_distance: 10.0,
        tracking_error: 0.0,
    }
}

/// Compares analytic and discretized control costs on a mixed instance
/// pool: unconstrained crossings, speed-limited crossings with an active
/// `vMax` arc, and rear-end-limited followers with an active follow arc.
/// `step_s` is the oracle grid resolution.
pub fn qp_equivalence_suite(count: usize, step_s: f64, seed: u64) -> QpOutcome {
    use crate::ocp::ArcKind;
    use rand::SeedableRng;
    use std::sync::Arc as SharedArc;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = QpOutcome {
        total: 0,
        vmax_active: 0,
        rear_end_active: 0,
        failures: 0,
        max_rel_gap: 0.0,
    };
    let record = |out: &mut QpOutcome, exact: f64, qp: f64| {
        let gap = (exact - qp).abs() / exact.abs().max(1.0);
        out.max_rel_gap = out.max_rel_gap.max(gap);
        out.total += 1;
        if gap > 1e-3 {
            out.failures += 1;
        }
    };

    // Speed-limited instances: the cap sits below the unconstrained peak.
    while out.vmax_active < 3 {
        let bd = random_boundary(&mut rng);
        let Ok(free) = crate::ocp::solve_unconstrained(&bd) else {
            continue;
        };
        let mut peak: f64 = 0.0;
        let mut t = bd.t0;
        while t <= bd.tf {
            peak = peak.max(free.evaluate_extrapolated(t).v);
            t += 0.05;
        }
        let mut limits = loose_limits();
        limits.v_max = (0.97 * peak).max(bd.v0 + 0.1);
        let Ok(traj) = crate::ocp::solve_constrained(&bd, &limits, None) else {
            continue;
        };
        if !traj.arcs.iter().any(|a| a.kind == ArcKind::VMax) {
            continue;
        }
        let n = ((bd.tf - bd.t0) / step_s).ceil() as usize;
        match discretized_effort(&bd, Some(&limits), None, n) {
            Ok(qp) => {
                record(&mut out, traj.control_cost(), qp.effort);
                out.vmax_active += 1;
            }
            Err(_) => out.failures += 1,
        }
    }

    // Rear-end instances: a faster follower against a committed leader.
    while out.rear_end_active < 3 {
        let lb = random_boundary(&mut rng);
        let Ok(leader) = crate::ocp::solve_unconstrained(&lb) else {
            continue;
        };
        let leader = SharedArc::new(leader);
        let mut limits = loose_limits();
        limits.u_max = 4.0;
        limits.safe_distance = rng.gen_range(6.0..10.0);
        let head = lb.p0 + rng.gen_range(8.0..14.0);
        let fb = BoundaryData {
            t0: lb.t0,
            p0: lb.p0 + limits.safe_distance - head,
            v0: lb.v0 + rng.gen_range(0.5..2.0),
            tf: lb.tf + rng.gen_range(0.5..1.5),
            pf: lb.pf,
            interior: vec![],
        };
        let Ok(traj) = crate::ocp::solve_constrained(&fb, &limits, Some(&leader)) else {
            continue;
        };
        if !traj
            .arcs
            .iter()
            .any(|a| a.kind == ArcKind::RearEndFollow)
        {
            continue;
        }
        let n = ((fb.tf - fb.t0) / step_s).ceil() as usize;
        match discretized_effort(&fb, Some(&limits), Some((&leader, limits.safe_distance)), n) {
            Ok(qp) => {
                record(&mut out, traj.control_cost(), qp.effort);
                out.rear_end_active += 1;
            }
            Err(_) => out.failures += 1,
        }
    }

    // Unconstrained instances fill the remainder of the pool.
    while out.total < count {
        let bd = random_boundary(&mut rng);
        let Ok(traj) = crate::ocp::solve_unconstrained(&bd) else {
            continue;
        };
        let n = ((bd.tf - bd.t0) / step_s).ceil() as usize;
        match discretized_effort(&bd, None, None, n) {
            Ok(qp) => record(&mut out, traj.control_cost(), qp.effort),
            Err(_) => out.failures += 1,
        }
    }
    out
}

/// Randomized conflict configurations: up to four committed cruises, then
/// one subject vehicle scheduled by the fast recursion and audited against
/// the exhaustive candidate search, the disjointness and rear-end bounds,
/// and the zero-idle degeneration.
pub fn scheduler_suite(count: usize, seed: u64) -> SchedulerOutcome {
    use crate::coordinator::{Coordinator, EntryRequest};
    use crate::scenario::{Corridor, CorridorConfig};
    use crate::scheduler::{arrival_times, arrival_times_with_idle};
    use rand::SeedableRng;

    let corridor = Corridor::build(&CorridorConfig {
        approach_length_m: 150.0,
        spacing_m: vec![75.0, 75.0],
        lane_width_m: 3.75,
        merging_zone_m: None,
        lane_change_zone_m: 30.0,
        lanes_per_road: 2,
    })
    .unwrap();
    let approaches = corridor.approaches();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut idle_zero_mismatches = 0;

    for _ in 0..count {
        let mut coord = Coordinator::new();
        let committed = rng.gen_range(0..=4usize);
        for _ in 0..committed {
            let approach = approaches[rng.gen_range(0..approaches.len())];
            let lane = rng.gen_range(1..=corridor.lanes_per_road);
            let path = corridor.path(approach, lane);
            let t0 = rng.gen_range(-5.0..8.0);
            let v0 = rng.gen_range(8.0..13.0);
            let id = coord.register(
                &corridor,
                EntryRequest {
                    path: path.clone(),
                    entry_time: t0,
                    entry_speed: v0,
                },
            );
            let plan =
                SchedulePlan::nominal_cruise(&path, t0, v0, corridor.merging_zone_length, lane);
            let bd = BoundaryData::from_schedule(&plan, &path, t0, v0).unwrap();
            let traj = crate::ocp::solve_unconstrained(&bd).unwrap();
            coord
                .commit(id, plan, traj, corridor.lane_change_zone_length)
                .unwrap();
        }

        let approach = approaches[rng.gen_range(0..approaches.len())];
        let lane = rng.gen_range(1..=corridor.lanes_per_road);
        let path = corridor.path(approach, lane);
        let entry_time = rng.gen_range(-2.0..8.0);
        let entry_speed = rng.gen_range(8.0..13.0);
        let id = coord.register(
            &corridor,
            EntryRequest {
                path: path.clone(),
                entry_time,
                entry_speed,
            },
        );
        let sets = coord.conflict_sets(id).unwrap().clone();
        let ctx = ScheduleContext {
            coordinator: &coord,
            sets: &sets,
            path: &path,
            entry_time,
            entry_speed,
            zone_length: corridor.merging_zone_length,
            safe_distance: 10.0,
            min_first_arrival: None,
        };
        let idle = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.05..0.5) };

        let fast = arrival_times_with_idle(&ctx, lane, idle);
        let brute = exhaustive_plan(&ctx, lane, idle);
        let ok = match (&fast, &brute) {
            (Ok(a), Ok(b)) => {
                let mut ok = a == b;
                let dt_i = a.zone_occupancy;
                for &(z, t) in &a.arrivals {
                    let windows = coord.lateral_arrival_windows(&sets, z);
                    ok &= window_feasible(t, dt_i, idle, &windows);
                    if let Some(k) = sets.predecessor(lane).and_then(|k| coord.committed(k)) {
                        if let Some(t_k) = k.plan.arrival(z) {
                            let rho = rear_end_headway(ctx.safe_distance, k.plan.v_avg).unwrap();
                            ok &= t >= t_k + rho + idle - 1e-12;
                        }
                    }
                }
                ok
            }
            (Err(_), Err(_)) => true,
            _ => false,
        };
        if !ok {
            failures += 1;
        }

        let degenerate_ok = match (arrival_times_with_idle(&ctx, lane, 0.0), arrival_times(&ctx, lane)) {
            (Ok(a), Ok(b)) => {
                a.arrivals.len() == b.arrivals.len()
                    && a.arrivals
                        .iter()
                        .zip(&b.arrivals)
                        .all(|(x, y)| x.0 == y.0 && x.1.to_bits() == y.1.to_bits())
            }
            (Err(_), Err(_)) => true,
            _ => false,
        };
        if !degenerate_ok {
            idle_zero_mismatches += 1;
        }
    }
    SchedulerOutcome {
        total: count,
        failures,
        idle_zero_mismatches,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::{solve_constrained, solve_unconstrained};
    use std::sync::Arc;

    #[test]
    fn discretized_matches_unconstrained_effort() {
        let bd = BoundaryData {
            t0: 0.0,
            p0: 0.0,
            v0: 12.5,
            tf: 13.2,
            pf: 165.0,
            interior: vec![(12.0, 150.0)],
        };
        let traj = solve_unconstrained(&bd).unwrap();
        let qp = discretized_effort(&bd, None, None, 1200).unwrap();
        let exact = traj.control_cost();
        assert!(
            (qp.effort - exact).abs() <= 1e-3 * exact.max(1.0),
            "qp {} vs exact {}",
            qp.effort,
            exact
        );
        // Sampled states agree with the closed form along the grid.
        for (i, &t) in qp.times.iter().enumerate().step_by(100) {
            let s = traj.evaluate_extrapolated(t);
            assert!((qp.positions[i] - s.p).abs() < 1e-2);
            assert!((qp.speeds[i] - s.v).abs() < 1e-2);
        }
    }

    #[test]
    fn discretized_matches_speed_limited_effort() {
        let l = VehicleLimits {
            u_min: -6.0,
            u_max: 3.0,
            v_min: 0.0,
            v_max: 13.0,
            safe_distance: 10.0,
            tracking_error: 0.0,
        };
        let bd = BoundaryData {
            t0: 0.0,
            p0: 0.0,
            v0: 11.0,
            tf: 13.0,
            pf: 165.0,
            interior: vec![(11.8, 150.0)],
        };
        let traj = solve_constrained(&bd, &l, None).unwrap();
        let qp = discretized_effort(&bd, Some(&l), None, 1300).unwrap();
        let exact = traj.control_cost();
        assert!(
            (qp.effort - exact).abs() <= 1e-3 * exact.max(1.0),
            "qp {} vs exact {}",
            qp.effort,
            exact
        );
    }

    #[test]
    fn discretized_matches_rear_end_effort() {
        let lb = BoundaryData {
            t0: 0.0,
            p0: 10.0,
            v0: 12.0,
            tf: 12.0,
            pf: 130.0,
            interior: vec![(8.0, 70.0)],
        };
        let leader = Arc::new(solve_unconstrained(&lb).unwrap());
        let l = VehicleLimits {
            u_min: -6.0,
            u_max: 4.0,
            v_min: 0.1,
            v_max: 35.0,
            safe_distance: 8.0,
            tracking_error: 0.1,
        };
        let gap = l.safe_distance + 2.0 * l.tracking_error;
        let fb = BoundaryData {
            t0: 0.0,
            p0: 0.0,
            v0: 13.0,
            tf: 13.2,
            pf: 130.0,
            interior: vec![],
        };
        let traj = solve_constrained(&fb, &l, Some(&leader)).unwrap();
        let qp = discretized_effort(&fb, Some(&l), Some((&leader, gap)), 1320).unwrap();
        let exact = traj.control_cost();
        assert!(
            (qp.effort - exact).abs() <= 1e-3 * exact.max(1.0),
            "qp {} vs exact {}",
            qp.effort,
            exact
        );
    }

    #[test]
    fn candidate_search_and_grid_agree() {
        let windows = [(10.0, 1.2), (11.5, 1.2), (16.0, 0.8)];
        for bound in [8.0, 10.3, 12.9, 20.0] {
            let exact = earliest_feasible(bound, 1.2, 0.0, &windows);
            let grid = grid_first_feasible(bound, 1.2, 0.0, &windows, 1e-3);
            assert!(grid >= exact - 1e-12 && grid - exact <= 1e-3, "bound {bound}");
        }
        // Occupancy fitting inside the gap before a window keeps the bound.
        assert_eq!(earliest_feasible(8.0, 1.2, 0.0, &windows), 8.0);
        // Overlapping the first two windows chains to the second window end.
        assert_eq!(earliest_feasible(10.3, 1.2, 0.0, &windows), 12.7);
    }
}
