//! Closed-form minimum-effort trajectory for one vehicle crossing three
//! intersections at scheduled arrival times.

use corridor::ocp::{solve_unconstrained, BoundaryData};

fn main() {
    // Entry at 12 m/s, 150 m approach, two 75 m links, 15 m merging zones.
    // Interior points fix the entry of each zone and the exit of the first
    // two; the final zone exit is the terminal condition.
    let bd = BoundaryData {
        t0: 0.0,
        p0: 0.0,
        v0: 12.0,
        tf: 28.4,
        pf: 345.0,
        interior: vec![
            (12.4, 150.0),
            (13.6, 165.0),
            (19.8, 240.0),
            (21.0, 255.0),
            (27.2, 330.0),
        ],
    };

    let traj = solve_unconstrained(&bd).expect("feasible boundary data");

    println!("arc    t in [start, end]      u(t) = a t + b (local t)");
    for (i, arc) in traj.arcs.iter().enumerate() {
        println!(
            "{i:>3}    [{:>6.2}, {:>6.2}]       u = {:+.4} t {:+.4}",
            arc.t_start, arc.t_end, arc.a, arc.b
        );
    }
    println!();
    println!("junction multipliers (position, speed):");
    for m in &traj.multipliers {
        println!("  t = {:>6.2}  pi1 = {:+.5}  pi2 = {:+.5}", m.time, m.pi1, m.pi2);
    }
    println!();
    println!("control effort 1/2 int u^2 dt = {:.5}", traj.control_cost());
    for t in [0.0, 6.0, 12.4, 20.0, 28.4] {
        let s = traj.evaluate_extrapolated(t);
        println!("t = {t:>5.1}  p = {:>7.2} m  v = {:>6.3} m/s  u = {:+.4} m/s^2", s.p, s.v, s.u);
    }
}
