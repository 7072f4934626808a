//! Signalized car-following baseline versus coordinated operation on the
//! same corridor and demand.

use corridor::baseline::{run_baseline, CarFollowingParams, SignalPlan};
use corridor::metrics::{compare_volume, comparison_csv, run_means};
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
    let flow = FlowSpec {
        volume_veh_per_h: 600.0,
        entry_speed_mps: (11.0, 13.0),
        horizon_s: 120.0,
    };
    let signal = SignalPlan::default();
    let cf = CarFollowingParams::default();

    let mut rows = Vec::new();
    for seed in 0..3u64 {
        // Same seed, hence identical arrival streams on both sides.
        let optimal = simulate(&corridor, &limits, &flow, seed).unwrap();
        let baseline = run_baseline(&corridor, &flow, &signal, &cf, seed).unwrap();
        assert!(optimal.violations.is_empty() && baseline.violations.is_empty());
        rows.push((
            run_means(&optimal.per_vehicle_metrics()),
            run_means(&baseline.per_vehicle_metrics()),
        ));
    }
    let (opt, base): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let row = compare_volume(flow.volume_veh_per_h, &opt, &base).unwrap();
    print!("{}", comparison_csv(&[row]));
}
