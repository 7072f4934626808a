//! Constrained trajectories: a speed-capped crossing and a rear-end
//! follower, both solved by arc composition, plus the discretized fallback
//! on the same instance for comparison.

use std::sync::Arc as SharedArc;

use corridor::ocp::{solve_constrained, solve_discretized, solve_unconstrained, BoundaryData};
use corridor::scenario::VehicleLimits;

fn limits() -> VehicleLimits {
    VehicleLimits {
        u_min: -6.0,
        u_max: 3.0,
        v_min: 0.0,
        v_max: 13.0,
        safe_distance: 10.0,
        tracking_error: 0.0,
    }
}

fn kinds(traj: &corridor::ocp::TrajectoryArcs) -> String {
    traj.arcs
        .iter()
        .map(|a| format!("{:?}", a.kind))
        .collect::<Vec<_>>()
        .join(" -> ")
}

fn main() {
    // Tight schedule forces a cruise at the 13 m/s cap in the middle.
    let bd = BoundaryData {
        t0: 0.0,
        p0: 0.0,
        v0: 11.0,
        tf: 13.0,
        pf: 165.0,
        interior: vec![(11.8, 150.0)],
    };
    let l = limits();
    let capped = solve_constrained(&bd, &l, None).unwrap();
    println!("speed-capped:  {}", kinds(&capped));
    println!("  effort {:.5}", capped.control_cost());

    // A follower entering faster than its leader picks up a follow arc
    // that rides the rear-end constraint.
    let leader_bd = BoundaryData {
        t0: 0.0,
        p0: 0.0,
        v0: 11.0,
        tf: 13.0,
        pf: 140.0,
        interior: vec![(7.0, 72.0)],
    };
    let leader = SharedArc::new(solve_unconstrained(&leader_bd).unwrap());
    let mut lf = limits();
    lf.u_max = 4.0;
    lf.safe_distance = 8.0;
    let follower_bd = BoundaryData {
        t0: 0.0,
        p0: -4.0,
        v0: 12.5,
        tf: 14.0,
        pf: 140.0,
        interior: vec![],
    };
    let follow = solve_constrained(&follower_bd, &lf, Some(&leader)).unwrap();
    println!("rear-end:      {}", kinds(&follow));
    let mut min_gap = f64::INFINITY;
    let mut t = 0.0;
    while t <= 13.0 {
        let g = leader.evaluate_extrapolated(t).p - follow.evaluate_extrapolated(t).p;
        min_gap = min_gap.min(g);
        t += 0.01;
    }
    println!("  min gap to leader {min_gap:.4} m (bound {})", lf.safe_distance);

    // The QP fallback solves the same capped instance on a uniform grid.
    let qp = solve_discretized(&bd, &l, None).unwrap();
    println!(
        "fallback:      {} constant-control steps, effort {:.5} (closed form {:.5})",
        qp.arcs.len(),
        qp.control_cost(),
        capped.control_cost()
    );
}
