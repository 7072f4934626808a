//! Arrival-time scheduling against a coordinator snapshot: commit a few
//! crossing vehicles, then schedule a newcomer with lane selection.

use corridor::coordinator::{Coordinator, EntryRequest};
use corridor::ocp::{solve_unconstrained, BoundaryData};
use corridor::scenario::{Approach, Corridor, CorridorConfig};
use corridor::scheduler::{choose_lane, ScheduleContext, SchedulePlan};

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
    let mut coord = Coordinator::new();

    // Cross traffic commits nominal cruises through the shared zones.
    let committed = [
        (Approach::CrossSouthbound(0), 1, 0.0, 11.0),
        (Approach::CrossNorthbound(1), 1, 1.0, 12.0),
        (Approach::MainEast, 1, 0.5, 12.5),
    ];
    for &(approach, lane, t0, v0) in &committed {
        let path = corridor.path(approach, lane);
        let id = coord.register(
            &corridor,
            EntryRequest {
                path: path.clone(),
                entry_time: t0,
                entry_speed: v0,
            },
        );
        let plan = SchedulePlan::nominal_cruise(&path, t0, v0, corridor.merging_zone_length, lane);
        let bd = BoundaryData::from_schedule(&plan, &path, t0, v0).unwrap();
        let traj = solve_unconstrained(&bd).unwrap();
        coord.commit(id, plan, traj, corridor.lane_change_zone_length).unwrap();
        println!("committed {approach:?} lane {lane}, entry t = {t0}");
    }

    // The newcomer shares zone 1 with the southbound vehicle and every
    // zone with the committed eastbound vehicle on its own road.
    let path = corridor.path(Approach::MainEast, 1);
    let (entry_time, entry_speed) = (1.2, 12.0);
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
    let plan = choose_lane(&ctx, corridor.lanes_per_road, 0.0).unwrap();

    println!();
    println!("newcomer scheduled on lane {}:", plan.lane);
    for &(z, t) in &plan.arrivals {
        let windows = coord.lateral_arrival_windows(&sets, z);
        println!("  zone {z}: arrival t = {t:.3} s, blocked windows {windows:?}");
    }
    println!("  exit t = {:.3} s, occupancy {:.3} s per zone", plan.exit_time, plan.zone_occupancy);
}
