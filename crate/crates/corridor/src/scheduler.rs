//! Upper-level planning: recursive arrival times at merging zones, lane
//! choice, and the idle-time-buffered variant for imperfect tracking.

use crate::coordinator::{ConflictSets, Coordinator};
use crate::error::{Error, Result};
use crate::scenario::{zone_occupancy_duration, LaneId, PathSpec, ZoneId};

/// Committed output of the upper level for one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulePlan {
    pub lane: LaneId,
    /// Optimal arrival time at the entry of each zone, in path order.
    pub arrivals: Vec<(ZoneId, f64)>,
    /// Imposed occupancy duration per zone, identical for all zones of the
    /// path since the zone length and average speed are.
    pub zone_occupancy: f64,
    /// Exit time of the final merging zone.
    pub exit_time: f64,
    /// Imposed average speed inside merging zones, the entry speed.
    pub v_avg: f64,
    /// True when no safety constraint delayed any arrival.
    pub nominal: bool,
}

impl SchedulePlan {
    pub fn arrival(&self, zone: ZoneId) -> Option<f64> {
        self.arrivals
            .iter()
            .find(|&&(z, _)| z == zone)
            .map(|&(_, t)| t)
    }

    pub fn final_arrival(&self) -> f64 {
        self.arrivals.last().map(|&(_, t)| t).unwrap_or(0.0)
    }

    /// The conflict-free plan: constant cruise at the entry speed.
    pub fn nominal_cruise(
        path: &PathSpec,
        t0: f64,
        v0: f64,
        zone_length: f64,
        lane: LaneId,
    ) -> SchedulePlan {
        let dt = zone_length / v0;
        let arrivals: Vec<(ZoneId, f64)> = path
            .zones
            .iter()
            .zip(&path.zone_entry_offsets)
            .map(|(&z, &off)| (z, t0 + off / v0))
            .collect();
        let exit_time = arrivals.last().unwrap().1 + dt;
        SchedulePlan {
            lane,
            arrivals,
            zone_occupancy: dt,
            exit_time,
            v_avg: v0,
            nominal: true,
        }
    }
}

/// Safety-derived time buffers.
#[derive(Debug, Clone, Copy)]
pub struct SafetyTimes {
    /// Time for a predecessor to cover the safe distance inside a zone.
    pub rear_end_headway: f64,
    /// Idle-time buffer absorbing bounded tracking error.
    pub idle: f64,
}

/// Headway a follower must keep behind predecessor `k` at a zone entry:
/// the time k needs to cover `delta` at its imposed average speed.
pub fn rear_end_headway(delta: f64, v_avg_k: f64) -> Result<f64> {
    if v_avg_k <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "predecessor average speed must be positive, got {v_avg_k}"
        )));
    }
    if delta <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "safe distance must be positive, got {delta}"
        )));
    }
    Ok(delta / v_avg_k)
}

/// Worst-case idle time for tracking error `epsilon`: time to cover 2ε at
/// the minimum speed.
pub fn idle_time(epsilon: f64, v_min: f64) -> Result<f64> {
    if epsilon == 0.0 {
        return Ok(0.0);
    }
    if epsilon < 0.0 {
        return Err(Error::InvalidArgument("tracking error must be non-negative".into()));
    }
    if v_min <= 0.0 {
        return Err(Error::InvalidArgument(
            "idle time requires a positive minimum speed".into(),
        ));
    }
    Ok(2.0 * epsilon / v_min)
}

/// Inputs shared by the scheduling entry points: the planning vehicle and
/// the coordinator snapshot it plans against.
#[derive(Debug, Clone, Copy)]
pub struct ScheduleContext<'a> {
    pub coordinator: &'a Coordinator,
    pub sets: &'a ConflictSets,
    pub path: &'a PathSpec,
    pub entry_time: f64,
    pub entry_speed: f64,
    pub zone_length: f64,
    pub safe_distance: f64,
    /// Optional floor on the first-zone arrival, used when re-planning after
    /// an infeasible trajectory solve.
    pub min_first_arrival: Option<f64>,
}

/// Unconstrained (energy-optimal) arrival bound at `zone_index` on the path:
/// cruise at the entry speed from the previous fixed arrival.
pub fn unconstrained_arrival(
    path: &PathSpec,
    t0: f64,
    v0: f64,
    zone_length: f64,
    zone_index: usize,
    previous_arrival: Option<f64>,
) -> Result<f64> {
    if zone_index >= path.zones.len() {
        return Err(Error::InvalidArgument(format!(
            "zone index {zone_index} outside path of {} zones",
            path.zones.len()
        )));
    }
    if v0 <= 0.0 {
        return Err(Error::InvalidArgument("entry speed must be positive".into()));
    }
    if zone_index == 0 {
        Ok(t0 + path.zone_entry_offsets[0] / v0)
    } else {
        let prev = previous_arrival.ok_or_else(|| {
            Error::InvalidArgument("previous arrival required for downstream zones".into())
        })?;
        let dt = zone_length / v0;
        let d = path.zone_entry_offsets[zone_index] - path.zone_entry_offsets[zone_index - 1]
            - zone_length;
        Ok(prev + dt + d / v0)
    }
}

/// Arrival times at every zone of the path for a hypothetical final lane,
/// without idle buffering.
pub fn arrival_times(ctx: &ScheduleContext, lane: LaneId) -> Result<SchedulePlan> {
    arrival_times_with_idle(ctx, lane, 0.0)
}

/// Arrival times with every safety comparison buffered by `idle` seconds.
pub fn arrival_times_with_idle(
    ctx: &ScheduleContext,
    lane: LaneId,
    idle: f64,
) -> Result<SchedulePlan> {
    if idle < 0.0 {
        return Err(Error::InvalidArgument("idle time must be non-negative".into()));
    }
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
        let mut t_star = t_bar;
        if idx == 0 {
            if let Some(floor) = ctx.min_first_arrival {
                t_star = t_star.max(floor);
            }
        }
        if let Some(k) = predecessor {
            if let Some(t_k) = k.plan.arrival(z) {
                let rho = rear_end_headway(ctx.safe_distance, k.plan.v_avg)?;
                // Separate both zone entries and zone exits: a follower with
                // a higher imposed zone speed would otherwise close the gap
                // inside the zone.
                t_star = t_star
                    .max(t_k + rho + idle)
                    .max(t_k + k.plan.zone_occupancy - dt_i + rho + idle);
            }
        }
        for (t_j, dt_j) in ctx.coordinator.lateral_arrival_windows(ctx.sets, z) {
            if t_j + dt_j + idle <= t_star {
                continue;
            }
            if t_star + dt_i + idle <= t_j {
                break;
            }
            t_star = t_j + dt_j + idle;
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

/// Lane-changing decision: keep the entry lane if the lane-changing zone is
/// occupied at entry, otherwise pick the lane with the earliest final-zone
/// arrival, ties toward the entry lane.
pub fn choose_lane(
    ctx: &ScheduleContext,
    lanes_per_road: usize,
    idle: f64,
) -> Result<SchedulePlan> {
    let entry_lane = ctx.path.entry_lane;
    if ctx
        .coordinator
        .lane_change_zone_occupied(ctx.sets, ctx.entry_time)
    {
        return arrival_times_with_idle(ctx, entry_lane, idle);
    }
    let mut best = arrival_times_with_idle(ctx, entry_lane, idle)?;
    for lane in 1..=lanes_per_road {
        if lane == entry_lane {
            continue;
        }
        let candidate = arrival_times_with_idle(ctx, lane, idle)?;
        if candidate.final_arrival() < best.final_arrival() {
            best = candidate;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coordinator::{Coordinator, EntryRequest};
    use crate::scenario::{Approach, Corridor, CorridorConfig};

    fn corridor() -> Corridor {
        Corridor::build(&CorridorConfig {
            approach_length_m: 150.0,
            spacing_m: vec![75.0, 75.0],
            lane_width_m: 3.75,
            merging_zone_m: None,
            lane_change_zone_m: 30.0,
            lanes_per_road: 2,
        })
        .unwrap()
    }

    fn commit_cross(
        coord: &mut Coordinator,
        c: &Corridor,
        approach: Approach,
        t0: f64,
        v0: f64,
    ) -> u64 {
        let path = c.path(approach, 1);
        let id = coord.register(
            c,
            EntryRequest {
                path: path.clone(),
                entry_time: t0,
                entry_speed: v0,
            },
        );
        let plan = SchedulePlan::nominal_cruise(&path, t0, v0, c.merging_zone_length, 1);
        let b = crate::ocp::BoundaryData::from_schedule(&plan, &path, t0, v0).unwrap();
        let traj = crate::ocp::solve_unconstrained(&b).unwrap();
        coord.commit(id, plan, traj, c.lane_change_zone_length).unwrap();
        id
    }

    #[test]
    fn unconstrained_recursion() {
        let c = corridor();
        let path = c.path(Approach::MainEast, 1);
        let t1 = unconstrained_arrival(&path, 0.0, 12.5, 15.0, 0, None).unwrap();
        assert!((t1 - 12.0).abs() < 1e-12);
        let t2 = unconstrained_arrival(&path, 0.0, 12.5, 15.0, 1, Some(12.0)).unwrap();
        assert!((t2 - 19.2).abs() < 1e-12);
        // A delayed upstream arrival propagates one-for-one.
        let t2 = unconstrained_arrival(&path, 0.0, 12.5, 15.0, 2, Some(21.2)).unwrap();
        assert!((t2 - 28.4).abs() < 1e-12);
        assert!(unconstrained_arrival(&path, 0.0, 12.5, 15.0, 3, Some(0.0)).is_err());
        assert!(unconstrained_arrival(&path, 0.0, 12.5, 15.0, 1, None).is_err());
    }

    #[test]
    fn no_conflicts_gives_lower_bound() {
        let c = corridor();
        let coord = Coordinator::new();
        let sets = Default::default();
        let path = c.path(Approach::MainEast, 1);
        let ctx = ScheduleContext {
            coordinator: &coord,
            sets: &sets,
            path: &path,
            entry_time: 0.0,
            entry_speed: 12.5,
            zone_length: c.merging_zone_length,
            safe_distance: 10.0,
            min_first_arrival: None,
        };
        let plan = arrival_times(&ctx, 1).unwrap();
        assert!(plan.nominal);
        assert_eq!(plan.arrivals[0], (1, 12.0));
        assert!((plan.arrivals[1].1 - 19.2).abs() < 1e-12);
        assert!((plan.arrivals[2].1 - 26.4).abs() < 1e-12);
        assert!((plan.exit_time - 27.6).abs() < 1e-12);
    }

    /// Conflict window [10.0, 11.2] overlapping the lower bound 10.5 pushes
    /// the arrival to the window's end.
    #[test]
    fn overlapping_window_pushes_arrival() {
        let c = corridor();
        let mut coord = Coordinator::new();
        // Cross vehicle at zone 1: arrival 10.0, occupancy 1.2 s.
        // Entry at 150 m, speed 12.5 -> t0 = -2.0 gives arrival 10.0.
        commit_cross(&mut coord, &c, Approach::CrossSouthbound(0), -2.0, 12.5);
        let path = c.path(Approach::MainEast, 1);
        let id = coord.register(
            &c,
            EntryRequest {
                path: path.clone(),
                entry_time: -1.5,
                entry_speed: 12.5,
            },
        );
        let sets = coord.conflict_sets(id).unwrap().clone();
        // t0 = -1.5 gives the lower bound 10.5 at zone 1.
        let ctx = ScheduleContext {
            coordinator: &coord,
            sets: &sets,
            path: &path,
            entry_time: -1.5,
            entry_speed: 12.5,
            zone_length: c.merging_zone_length,
            safe_distance: 10.0,
            min_first_arrival: None,
        };
        let plan = arrival_times(&ctx, 1).unwrap();
        assert!((plan.arrivals[0].1 - 11.2).abs() < 1e-12);
        assert!(!plan.nominal);
        assert_eq!(crate::oracle::exhaustive_plan(&ctx, 1, 0.0).unwrap(), plan);

        // With a 0.2 s idle buffer the same conflict yields 11.4.
        let buffered = arrival_times_with_idle(&ctx, 1, 0.2).unwrap();
        assert!((buffered.arrivals[0].1 - 11.4).abs() < 1e-12);
        assert_eq!(
            crate::oracle::exhaustive_plan(&ctx, 1, 0.2).unwrap(),
            buffered
        );

        // Zero idle bit-matches the plain variant.
        let degenerate = arrival_times_with_idle(&ctx, 1, 0.0).unwrap();
        assert_eq!(degenerate, plan);
    }

    /// A window starting after this vehicle's exit is not a conflict: the
    /// gap ahead of it is exploited.
    #[test]
    fn later_window_leaves_gap_exploited() {
        let c = corridor();
        let mut coord = Coordinator::new();
        // Cross vehicle arriving at zone 1 at t = 12.0.
        commit_cross(&mut coord, &c, Approach::CrossSouthbound(0), 0.0, 12.5);
        let path = c.path(Approach::MainEast, 1);
        let id = coord.register(
            &c,
            EntryRequest {
                path: path.clone(),
                entry_time: -1.5,
                entry_speed: 12.5,
            },
        );
        let sets = coord.conflict_sets(id).unwrap().clone();
        let ctx = ScheduleContext {
            coordinator: &coord,
            sets: &sets,
            path: &path,
            entry_time: -1.5,
            entry_speed: 12.5,
            zone_length: c.merging_zone_length,
            safe_distance: 10.0,
            min_first_arrival: None,
        };
        let plan = arrival_times(&ctx, 1).unwrap();
        // Enters 10.5, exits 11.7 <= 12.0: unconstrained bound kept.
        assert!((plan.arrivals[0].1 - 10.5).abs() < 1e-12);
        assert!(plan.nominal);
    }

    #[test]
    fn rear_end_bound_applies_per_zone() {
        let c = corridor();
        let mut coord = Coordinator::new();
        let k = commit_cross(&mut coord, &c, Approach::MainEast, 0.0, 12.5);
        let path = c.path(Approach::MainEast, 1);
        let id = coord.register(
            &c,
            EntryRequest {
                path: path.clone(),
                entry_time: 0.1,
                entry_speed: 12.5,
            },
        );
        let sets = coord.conflict_sets(id).unwrap().clone();
        let ctx = ScheduleContext {
            coordinator: &coord,
            sets: &sets,
            path: &path,
            entry_time: 0.1,
            entry_speed: 12.5,
            zone_length: c.merging_zone_length,
            safe_distance: 10.0,
            min_first_arrival: None,
        };
        let plan = arrival_times(&ctx, 1).unwrap();
        assert_eq!(crate::oracle::exhaustive_plan(&ctx, 1, 0.0).unwrap(), plan);
        let rho = 10.0 / 12.5;
        let k_plan = &coord.committed(k).unwrap().plan;
        for (i, &(z, t)) in plan.arrivals.iter().enumerate() {
            assert!(t + 1e-12 >= k_plan.arrivals[i].1 + rho);
            assert_eq!(z, k_plan.arrivals[i].0);
        }
        assert!(!plan.nominal);
    }

    #[test]
    fn idle_time_examples() {
        assert_eq!(idle_time(0.5, 5.0).unwrap(), 0.2);
        assert_eq!(idle_time(0.0, 0.0).unwrap(), 0.0);
        assert!(idle_time(0.5, 0.0).is_err());
        assert!(idle_time(-0.1, 5.0).is_err());
        assert!((rear_end_headway(10.0, 12.5).unwrap() - 0.8).abs() < 1e-12);
        assert!(rear_end_headway(10.0, 0.0).is_err());
    }

    #[test]
    fn lane_choice_prefers_faster_lane_and_respects_occupancy() {
        let c = corridor();
        let mut coord = Coordinator::new();
        // A slow predecessor committed on lane 1 far ahead in time pushes
        // lane-1 arrivals; lane 2 is free.
        let path = c.path(Approach::MainEast, 1);
        let k = coord.register(
            &c,
            EntryRequest {
                path: path.clone(),
                entry_time: -30.0,
                entry_speed: 12.5,
            },
        );
        let mut k_plan = SchedulePlan::nominal_cruise(&path, -30.0, 12.5, 15.0, 1);
        // Artificially delay the predecessor so following it is costly.
        for (_, t) in k_plan.arrivals.iter_mut() {
            *t += 50.0;
        }
        k_plan.exit_time += 50.0;
        k_plan.nominal = false;
        let b = crate::ocp::BoundaryData::from_schedule(&k_plan, &path, -30.0, 12.5).unwrap();
        let traj = crate::ocp::solve_unconstrained(&b).unwrap();
        coord.commit(k, k_plan, traj, c.lane_change_zone_length).unwrap();

        let id = coord.register(
            &c,
            EntryRequest {
                path: path.clone(),
                entry_time: 0.0,
                entry_speed: 12.5,
            },
        );
        let sets = coord.conflict_sets(id).unwrap().clone();
        let ctx = ScheduleContext {
            coordinator: &coord,
            sets: &sets,
            path: &path,
            entry_time: 0.0,
            entry_speed: 12.5,
            zone_length: c.merging_zone_length,
            safe_distance: 10.0,
            min_first_arrival: None,
        };
        // The predecessor entered at -30 and cleared the lane-changing zone.
        let plan = choose_lane(&ctx, c.lanes_per_road, 0.0).unwrap();
        assert_eq!(plan.lane, 2);
        assert!(plan.nominal);

        // An occupied lane-changing zone forces the entry lane.
        let id2 = coord.register(
            &c,
            EntryRequest {
                path: path.clone(),
                entry_time: 0.5,
                entry_speed: 12.5,
            },
        );
        let sets2 = coord.conflict_sets(id2).unwrap().clone();
        let ctx2 = ScheduleContext {
            coordinator: &coord,
            sets: &sets2,
            path: &path,
            entry_time: 0.5,
            entry_speed: 12.5,
            zone_length: c.merging_zone_length,
            safe_distance: 10.0,
            min_first_arrival: None,
        };
        // id (uncommitted plan for this test is committed? id committed no)
        let plan2 = choose_lane(&ctx2, c.lanes_per_road, 0.0).unwrap();
        assert_eq!(plan2.lane, 1);
    }

    #[test]
    fn tie_keeps_entry_lane() {
        let c = corridor();
        let coord = Coordinator::new();
        let sets = Default::default();
        let path = c.path(Approach::MainEast, 2);
        let ctx = ScheduleContext {
            coordinator: &coord,
            sets: &sets,
            path: &path,
            entry_time: 0.0,
            entry_speed: 12.5,
            zone_length: c.merging_zone_length,
            safe_distance: 10.0,
            min_first_arrival: None,
        };
        let plan = choose_lane(&ctx, c.lanes_per_road, 0.0).unwrap();
        assert_eq!(plan.lane, 2);
    }

    #[test]
    fn min_first_arrival_floor_shifts_whole_schedule() {
        let c = corridor();
        let coord = Coordinator::new();
        let sets = Default::default();
        let path = c.path(Approach::MainEast, 1);
        let ctx = ScheduleContext {
            coordinator: &coord,
            sets: &sets,
            path: &path,
            entry_time: 0.0,
            entry_speed: 12.5,
            zone_length: c.merging_zone_length,
            safe_distance: 10.0,
            min_first_arrival: Some(14.0),
        };
        let plan = arrival_times(&ctx, 1).unwrap();
        assert!((plan.arrivals[0].1 - 14.0).abs() < 1e-12);
        assert!((plan.arrivals[1].1 - 21.2).abs() < 1e-12);
        assert!(!plan.nominal);
    }
}
