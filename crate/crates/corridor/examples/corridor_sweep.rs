//! Full corridor simulation across traffic volumes: admits Poisson
//! arrivals on all approaches, plans every vehicle, and replays the run
//! through the independent safety monitor.

use corridor::metrics::run_means;
use corridor::scenario::{Corridor, CorridorConfig, VehicleLimits};
use corridor::sim::{simulate, FlowSpec};

fn main() {
    let corridor = Corridor::build(&CorridorConfig {
        approach_length_m: 150.0,
        spacing_m: vec![75.0, 75.0],
        lane_width_m: 3.75,
        merging_zone_m: None,
        lane_change_zone_m: 30.0,
        lanes_per_road: 2,
    })
    .unwrap();
    let limits = VehicleLimits {
        u_min: -6.0,
        u_max: 3.0,
        v_min: 0.0,
        v_max: 15.0,
        safe_distance: 10.0,
        tracking_error: 0.0,
    };

    println!("volume  vehicles  travel_s  delay_s  fuel_ml  solve_ms  violations");
    for volume in [600.0, 1000.0, 1400.0] {
        let flow = FlowSpec {
            volume_veh_per_h: volume,
            entry_speed_mps: (11.0, 13.0),
            horizon_s: 120.0,
        };
        let run = simulate(&corridor, &limits, &flow, 0).unwrap();
        let m = run_means(&run.per_vehicle_metrics());
        println!(
            "{volume:>6.0}  {:>8}  {:>8.2}  {:>7.2}  {:>7.3}  {:>8.3}  {:>10}",
            run.outcomes.len(),
            m.travel_time,
            m.delay,
            m.fuel_ml,
            run.mean_plan_solve_ms(),
            run.violations.len()
        );
    }
}
