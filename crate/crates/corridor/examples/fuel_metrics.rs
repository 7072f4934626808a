//! Fuel metamodel and per-vehicle metrics: consumption rates over the
//! speed range, totals for a cruise versus a stop-and-go profile.

use corridor::metrics::{time_delay, FuelModel, VehicleMetrics};
use corridor::ocp::{solve_unconstrained, BoundaryData};

fn main() {
    let model = FuelModel::bundled();

    println!("steady-state rate, ml/s:");
    for v in [0.0, 5.0, 10.0, 15.0] {
        println!("  v = {v:>4.1} m/s  cruise {:.4}  accel 1 m/s^2 {:.4}", model.rate(v, 0.0), model.rate(v, 1.0));
    }

    // Constant cruise over 345 m.
    let cruise = solve_unconstrained(&BoundaryData {
        t0: 0.0,
        p0: 0.0,
        v0: 12.0,
        tf: 345.0 / 12.0,
        pf: 345.0,
        interior: vec![],
    })
    .unwrap();

    // Same distance with a slow mid-corridor phase.
    let stop_go = solve_unconstrained(&BoundaryData {
        t0: 0.0,
        p0: 0.0,
        v0: 12.0,
        tf: 40.0,
        pf: 345.0,
        interior: vec![(25.0, 150.0)],
    })
    .unwrap();

    println!();
    for (name, traj) in [("cruise", &cruise), ("stop-and-go", &stop_go)] {
        let travel = traj.end_time() - traj.start_time();
        let m = VehicleMetrics {
            travel_time: travel,
            delay: time_delay(travel, 345.0, 12.0).unwrap(),
            fuel_ml: model.consumed(traj, 0.01),
        };
        println!(
            "{name:>12}: travel {:>6.2} s, delay {:>6.2} s, fuel {:>7.3} ml",
            m.travel_time, m.delay, m.fuel_ml
        );
    }
}
