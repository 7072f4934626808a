//! Microscopic simulation of the coordinated corridor: Poisson entry
//! streams, the per-vehicle plan/solve/commit pipeline, and a playback pass
//! with an independent safety monitor.
//!
//! Planning happens once per vehicle at its control-zone entry, in entry
//! order; the playback afterwards merely samples the committed closed-form
//! trajectories on a fixed grid and audits them against the rear-end,
//! lateral-exclusivity and envelope rules without reusing any planner state.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::Arc as SharedArc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coordinator::{Coordinator, EntryRequest, VehicleId};
use crate::error::{Error, Result};
use crate::metrics::{time_delay, FuelModel, VehicleMetrics};
use crate::ocp::{
    apply_tracking_margin, solve_constrained, BoundaryData, TrajectoryArcs,
};
use crate::scenario::{Approach, Corridor, LaneId, PathSpec, VehicleLimits, ZoneId};
use crate::scheduler::{choose_lane, idle_time, ScheduleContext, SchedulePlan};

/// Playback and monitor sampling period, s.
pub const PLAYBACK_STEP: f64 = 0.01;

/// Time-headway component of the entry-gate clearance; see
/// [`gate_clearance`]. Also covers the entry segment shared with
/// lane-changing leaders that the trajectory solver does not constrain
/// against.
pub const ENTRY_HEADWAY_S: f64 = 0.75;

/// Attempts to re-plan with a delayed first arrival after an infeasible
/// trajectory solve before giving up on a vehicle.
const REPLAN_ATTEMPTS: usize = 20;

/// Extra spacing, m, the scheduler adds on top of the trajectory solver's
/// effective rear-end distance. With an exact match an active rear-end bound
/// puts the follower precisely at the constraint boundary at a fixed
/// interior point, a degenerate arc topology; the pad keeps the constraint
/// strictly inactive at the scheduled instants.
const SCHED_GAP_PAD: f64 = 0.5;

/// Monitor slack absorbing closed-form evaluation round-off.
const MONITOR_TOL: f64 = 1e-6;

/// Demand description for one run: identical Poisson volume on every
/// (approach, lane) entry stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowSpec {
    /// Demand per lane per directional entry, veh/h.
    pub volume_veh_per_h: f64,
    /// Entry speeds drawn uniformly from this closed range, m/s.
    pub entry_speed_mps: (f64, f64),
    /// Arrival sampling horizon, s. Vehicles whose nominal arrival falls
    /// inside the horizon are all admitted, even if the entry gate defers
    /// them past it.
    pub horizon_s: f64,
}

impl FlowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.volume_veh_per_h <= 0.0 {
            return Err(Error::Config("flow volume must be positive".into()));
        }
        let (lo, hi) = self.entry_speed_mps;
        if !(0.0 < lo && lo <= hi) {
            return Err(Error::Config(format!(
                "entry speed range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
            )));
        }
        if self.horizon_s <= 0.0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        Ok(())
    }
}

/// One sampled demand event before it reaches the entry gate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Arrival {
    pub approach: Approach,
    pub entry_lane: LaneId,
    /// Nominal arrival time at the control-zone entry, s.
    pub time: f64,
    pub entry_speed: f64,
}

/// Everything recorded about one vehicle of a finished run.
#[derive(Debug, Clone)]
pub struct VehicleOutcome {
    pub id: VehicleId,
    pub approach: Approach,
    pub entry_lane: LaneId,
    pub lane: LaneId,
    pub path: PathSpec,
    /// Nominal arrival at the gate, before any entry deferral.
    pub nominal_arrival: f64,
    pub entry_time: f64,
    pub entry_speed: f64,
    pub exit_time: f64,
    pub plan: SchedulePlan,
    pub trajectory: SharedArc<TrajectoryArcs>,
    pub metrics: VehicleMetrics,
    /// Wall-clock time of planning plus trajectory solving, microseconds.
    /// Excluded from every deterministic artifact.
    pub plan_solve_us: u128,
    /// Re-plans needed before the trajectory solve succeeded.
    pub replans: usize,
    /// True when the committed trajectory came from the discretized
    /// fallback instead of the closed-form solver.
    pub fallback: bool,
}

/// One monitor finding. An empty violation list is the safety statement of
/// the run.
#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub t: f64,
    pub detail: String,
}

/// Fleet speed envelope sample at one playback instant.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnvelopeSample {
    pub t: f64,
    pub active: usize,
    pub v_min: f64,
    pub v_max: f64,
}

/// Complete artifacts of one simulated run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub outcomes: Vec<VehicleOutcome>,
    pub violations: Vec<Violation>,
    pub envelope: Vec<EnvelopeSample>,
}

impl RunArtifacts {
    pub fn per_vehicle_metrics(&self) -> Vec<VehicleMetrics> {
        self.outcomes.iter().map(|o| o.metrics).collect()
    }

    pub fn mean_plan_solve_ms(&self) -> f64 {
        if self.outcomes.is_empty() {
            return 0.0;
        }
        let total: u128 = self.outcomes.iter().map(|o| o.plan_solve_us).sum();
        total as f64 / 1000.0 / self.outcomes.len() as f64
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Independent stream generator: one ChaCha instance per (seed, stream).
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(stream)))
}

/// Samples Poisson arrivals on every (approach, lane) stream of the
/// corridor, sorted by nominal arrival time. Deterministic in `seed`.
pub fn sample_arrivals(corridor: &Corridor, flow: &FlowSpec, seed: u64) -> Result<Vec<Arrival>> {
    flow.validate()?;
    let mean_gap = 3600.0 / flow.volume_veh_per_h;
    let (v_lo, v_hi) = flow.entry_speed_mps;
    let mut arrivals = Vec::new();
    let mut stream = 0u64;
    for approach in corridor.approaches() {
        for lane in 1..=corridor.lanes_per_road {
            let mut rng = stream_rng(seed, stream);
            stream += 1;
            let mut t = 0.0;
            loop {
                let u: f64 = rng.gen();
                t += -(1.0 - u).ln() * mean_gap;
                if t >= flow.horizon_s {
                    break;
                }
                let v = v_lo + (v_hi - v_lo) * rng.gen::<f64>();
                arrivals.push(Arrival {
                    approach,
                    entry_lane: lane,
                    time: t,
                    entry_speed: v,
                });
            }
        }
    }
    arrivals.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then(a.approach.cmp(&b.approach))
            .then(a.entry_lane.cmp(&b.entry_lane))
    });
    Ok(arrivals)
}

/// Samples the demand and runs the coordinated pipeline plus playback.
pub fn simulate(
    corridor: &Corridor,
    limits: &VehicleLimits,
    flow: &FlowSpec,
    seed: u64,
) -> Result<RunArtifacts> {
    let arrivals = sample_arrivals(corridor, flow, seed)?;
    run_with_arrivals(corridor, limits, &arrivals, seed)
}

/// Heap entry: the gate-adjusted entry time of the head of one stream.
#[derive(Debug, PartialEq)]
struct Candidate {
    time: f64,
    stream: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.stream.cmp(&other.stream))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Gate clearance ahead of a new entrant: the effective safe distance plus
/// the larger of a time headway and the full-braking stopping distance. The
/// stopping-distance term makes the entry state feasible even against a
/// leader that brakes to a standstill just downstream.
fn gate_clearance(limits: &VehicleLimits, v0: f64) -> f64 {
    let stopping = v0 * v0 / (2.0 * -limits.u_min) + 1.0;
    apply_tracking_margin(limits) + (ENTRY_HEADWAY_S * v0).max(stopping)
}

/// Earliest time `arrival` may physically enter: its nominal time, pushed
/// past the clearance of every same-approach vehicle that shares a lane
/// segment with it (the entry lane before the lane-changing zone, the
/// committed lane beyond it).
fn gate_time(
    coord: &Coordinator,
    arrival: &Arrival,
    limits: &VehicleLimits,
) -> f64 {
    let clearance = gate_clearance(limits, arrival.entry_speed);
    let mut t = arrival.time;
    for &j in coord.active_ids() {
        let Some(r) = coord.vehicle(j) else { continue };
        if r.path.approach != arrival.approach {
            continue;
        }
        let plan_lane = r
            .committed
            .as_ref()
            .map(|c| c.plan.lane)
            .unwrap_or(r.path.entry_lane);
        if r.path.entry_lane != arrival.entry_lane && plan_lane != arrival.entry_lane {
            continue;
        }
        t = t.max(r.entry_time + PLAYBACK_STEP);
        if let Some(c) = &r.committed {
            t = t.max(c.trajectory.first_time_at_position(clearance));
        }
    }
    t
}

/// Runs the coordinated pipeline on an explicit arrival list. The `seed`
/// only feeds the tie-break draw for simultaneous entries.
pub fn run_with_arrivals(
    corridor: &Corridor,
    limits: &VehicleLimits,
    arrivals: &[Arrival],
    seed: u64,
) -> Result<RunArtifacts> {
    limits.validate()?;
    let idle = idle_time(limits.tracking_error, limits.v_min)?;
    let mut tie_rng = stream_rng(seed, u64::MAX);

    // Per-stream FIFO queues; the heap holds only each stream's head. Gate
    // times depend on commits from other streams, so candidates are
    // revalidated when popped and pushed back if their gate moved.
    let mut streams: Vec<Vec<&Arrival>> = Vec::new();
    let mut stream_of = std::collections::BTreeMap::new();
    for a in arrivals {
        let key = (a.approach, a.entry_lane);
        let idx = *stream_of.entry(key).or_insert_with(|| {
            streams.push(Vec::new());
            streams.len() - 1
        });
        streams[idx].push(a);
    }
    for q in &mut streams {
        q.sort_by(|a, b| a.time.total_cmp(&b.time));
        q.reverse();
    }

    let mut coord = Coordinator::new();
    let mut heap: BinaryHeap<Reverse<Candidate>> = BinaryHeap::new();
    for (idx, q) in streams.iter().enumerate() {
        if let Some(a) = q.last() {
            heap.push(Reverse(Candidate {
                time: gate_time(&coord, a, limits),
                stream: idx,
            }));
        }
    }

    let mut outcomes: Vec<VehicleOutcome> = Vec::new();
    let fuel = FuelModel::bundled();

    while let Some(Reverse(first)) = heap.pop() {
        let head = streams[first.stream].last().unwrap();
        let gated = gate_time(&coord, head, limits);
        if gated > first.time + 1e-12 {
            heap.push(Reverse(Candidate {
                time: gated,
                stream: first.stream,
            }));
            continue;
        }

        // Collect every stream head tied at the exact same instant and order
        // the tied group like the coordinator protocol prescribes.
        let mut group = vec![first];
        while let Some(Reverse(c)) = heap.peek() {
            if c.time == group[0].time {
                group.push(heap.pop().unwrap().0);
            } else {
                break;
            }
        }
        if group.len() > 1 {
            let mut requests: Vec<EntryRequest> = group
                .iter()
                .map(|c| {
                    let a = streams[c.stream].last().unwrap();
                    EntryRequest {
                        path: corridor.path(a.approach, a.entry_lane),
                        entry_time: c.time,
                        entry_speed: a.entry_speed,
                    }
                })
                .collect();
            Coordinator::order_simultaneous(&mut requests, &mut tie_rng);
            group.sort_by_key(|c| {
                let a = streams[c.stream].last().unwrap();
                requests
                    .iter()
                    .position(|r| {
                        r.path.approach == a.approach && r.path.entry_lane == a.entry_lane
                    })
                    .unwrap()
            });
        }

        for cand in group {
            let arrival = *streams[cand.stream].last().unwrap();
            // An earlier admission in this group may have moved the gate.
            let gated = gate_time(&coord, arrival, limits);
            if gated > cand.time + 1e-12 {
                heap.push(Reverse(Candidate {
                    time: gated,
                    stream: cand.stream,
                }));
                continue;
            }
            streams[cand.stream].pop();
            let outcome = admit(
                corridor,
                limits,
                &mut coord,
                arrival,
                cand.time,
                idle,
                fuel,
            )?;
            outcomes.push(outcome);
            if let Some(next) = streams[cand.stream].last() {
                heap.push(Reverse(Candidate {
                    time: gate_time(&coord, next, limits),
                    stream: cand.stream,
                }));
            }
        }
    }

    outcomes.sort_by_key(|o| o.id);
    let (violations, envelope) = playback(corridor, limits, &outcomes);
    Ok(RunArtifacts {
        outcomes,
        violations,
        envelope,
    })
}

/// Registers, plans, solves and commits one vehicle at its entry instant,
/// re-planning with a delayed first arrival when the solve is infeasible.
fn admit(
    corridor: &Corridor,
    limits: &VehicleLimits,
    coord: &mut Coordinator,
    arrival: &Arrival,
    entry_time: f64,
    idle: f64,
    fuel: &FuelModel,
) -> Result<VehicleOutcome> {
    // Vehicles past their final merging zone no longer constrain anyone.
    let exited: Vec<VehicleId> = coord
        .active_ids()
        .iter()
        .copied()
        .filter(|&j| {
            coord
                .committed(j)
                .map(|c| c.plan.exit_time < entry_time)
                .unwrap_or(false)
        })
        .collect();
    for j in exited {
        coord.deregister(j)?;
    }

    let path = corridor.path(arrival.approach, arrival.entry_lane);
    let id = coord.register(
        corridor,
        EntryRequest {
            path: path.clone(),
            entry_time,
            entry_speed: arrival.entry_speed,
        },
    );
    let sets = coord.conflict_sets(id)?.clone();

    let started = Instant::now();
    let mut floor: Option<f64> = None;
    let mut replans = 0usize;
    let mut fallback = false;
    let mut sched_delta = apply_tracking_margin(limits) + SCHED_GAP_PAD;
    let (plan, trajectory) = loop {
        let ctx = ScheduleContext {
            coordinator: coord,
            sets: &sets,
            path: &path,
            entry_time,
            entry_speed: arrival.entry_speed,
            zone_length: corridor.merging_zone_length,
            safe_distance: sched_delta,
            min_first_arrival: floor,
        };
        let plan = choose_lane(&ctx, corridor.lanes_per_road, idle)?;
        let boundary =
            BoundaryData::from_schedule(&plan, &path, entry_time, arrival.entry_speed)?;
        let predecessor = sets
            .predecessor(plan.lane)
            .and_then(|k| coord.committed(k))
            .map(|c| c.trajectory.clone());
        // Deep stop-and-go queues produce follow topologies the closed-form
        // solver cannot piece; the discretized program handles them at the
        // cost of discretization error. A leader already committed as a
        // dense control grid marks such a queue, so its follower skips the
        // doomed closed-form attempt.
        let dense_leader = predecessor
            .as_ref()
            .map(|p| p.arcs.len() > 20)
            .unwrap_or(false);
        let solved = if dense_leader {
            fallback = true;
            crate::ocp::solve_discretized(&boundary, limits, predecessor.as_ref())
        } else {
            solve_constrained(&boundary, limits, predecessor.as_ref()).or_else(|e| match e {
                Error::ConstrainedSolve(_) => {
                    fallback = true;
                    crate::ocp::solve_discretized(&boundary, limits, predecessor.as_ref())
                }
                other => Err(other),
            })
        };
        match solved {
            Ok(traj) => break (plan, traj),
            Err(Error::ConstrainedSolve(report)) => {
                if std::env::var_os("CORRIDOR_SIM_DEBUG").is_some() {
                    eprintln!(
                        "replan {replans} veh {id} t0={entry_time:.3} v0={:.3} lane {} err: {report}",
                        arrival.entry_speed, plan.lane
                    );
                    if replans >= REPLAN_ATTEMPTS {
                        let leader_arcs = predecessor.as_ref().map(|p| p.arcs.clone());
                        let leader_samples: Option<Vec<(f64, f64, f64)>> =
                            predecessor.as_ref().map(|p| {
                                let mut out = Vec::new();
                                let mut t = boundary.t0;
                                while t <= boundary.tf + 0.05 {
                                    let s = p.evaluate_extrapolated(t);
                                    out.push((t, s.p, s.v));
                                    t += 0.05;
                                }
                                out
                            });
                        let dump = serde_json::json!({
                            "boundary": &boundary,
                            "limits": limits,
                            "leader_arcs": leader_arcs,
                            "leader_samples": leader_samples,
                            "plan_arrivals": plan.arrivals,
                            "plan_occupancy": plan.zone_occupancy,
                            "plan_v_avg": plan.v_avg,
                        });
                        std::fs::write(
                            format!("/tmp/sim_fail_{id}.json"),
                            serde_json::to_string_pretty(&dump).unwrap(),
                        )
                        .ok();
                    }
                }
                if replans >= REPLAN_ATTEMPTS {
                    return Err(Error::ConstrainedSolve(report));
                }
                replans += 1;
                // A larger scheduling gap relieves bindings at downstream
                // zones; the exponentially backed-off floor handles
                // first-zone infeasibility in few attempts.
                sched_delta += 1.0;
                floor = Some(plan.arrivals[0].1 + 0.25 * (1u64 << replans.min(8)) as f64);
            }
            Err(e) => return Err(e),
        }
    };
    let plan_solve_us = started.elapsed().as_micros();

    let exit_time = plan.exit_time;
    coord.commit(id, plan.clone(), trajectory, corridor.lane_change_zone_length)?;
    let trajectory = coord.committed(id).unwrap().trajectory.clone();

    let travel_time = exit_time - entry_time;
    let metrics = VehicleMetrics {
        travel_time,
        delay: time_delay(travel_time, path.path_length, arrival.entry_speed)?,
        fuel_ml: fuel.consumed(&trajectory, PLAYBACK_STEP),
    };
    Ok(VehicleOutcome {
        id,
        approach: arrival.approach,
        entry_lane: arrival.entry_lane,
        lane: plan.lane,
        path,
        nominal_arrival: arrival.time,
        entry_time,
        entry_speed: arrival.entry_speed,
        exit_time,
        plan,
        trajectory,
        metrics,
        plan_solve_us,
        replans,
        fallback,
    })
}

/// Lane a vehicle physically occupies at position `p`: the entry lane until
/// the end of the lane-changing zone, the planned lane beyond it.
fn lane_label(outcome: &VehicleOutcome, p: f64, lane_change_zone: f64) -> LaneId {
    if p <= lane_change_zone {
        outcome.entry_lane
    } else {
        outcome.lane
    }
}

/// Samples every committed trajectory on the playback grid and audits
/// rear-end spacing, merging-zone exclusivity and the state envelope.
/// Independent of the planner: only closed-form states are inspected.
fn playback(
    corridor: &Corridor,
    limits: &VehicleLimits,
    outcomes: &[VehicleOutcome],
) -> (Vec<Violation>, Vec<EnvelopeSample>) {
    let mut violations = Vec::new();
    let mut envelope = Vec::new();
    if outcomes.is_empty() {
        return (violations, envelope);
    }

    let mut by_entry: Vec<usize> = (0..outcomes.len()).collect();
    by_entry.sort_by(|&a, &b| outcomes[a].entry_time.total_cmp(&outcomes[b].entry_time));
    let t_start = outcomes[by_entry[0]].entry_time;
    let t_end = outcomes
        .iter()
        .map(|o| o.exit_time)
        .fold(f64::NEG_INFINITY, f64::max);
    let steps = ((t_end - t_start) / PLAYBACK_STEP).ceil() as usize;

    let mut active: Vec<usize> = Vec::new();
    let mut next_entry = 0usize;
    // Scratch buffers reused across steps.
    let mut lane_groups: std::collections::BTreeMap<(Approach, LaneId), Vec<(f64, VehicleId)>> =
        Default::default();
    let mut zone_occupants: std::collections::BTreeMap<ZoneId, Vec<(Approach, VehicleId)>> =
        Default::default();

    for k in 0..=steps {
        let t = t_start + k as f64 * PLAYBACK_STEP;
        while next_entry < by_entry.len() && outcomes[by_entry[next_entry]].entry_time <= t {
            active.push(by_entry[next_entry]);
            next_entry += 1;
        }
        active.retain(|&i| outcomes[i].exit_time >= t);
        if active.is_empty() {
            continue;
        }

        lane_groups.clear();
        zone_occupants.clear();
        let mut v_lo = f64::INFINITY;
        let mut v_hi = f64::NEG_INFINITY;
        for &i in &active {
            let o = &outcomes[i];
            let s = o.trajectory.evaluate_extrapolated(t);
            v_lo = v_lo.min(s.v);
            v_hi = v_hi.max(s.v);
            if s.v < limits.v_min - MONITOR_TOL || s.v > limits.v_max + MONITOR_TOL {
                violations.push(Violation {
                    t,
                    detail: format!("vehicle {} speed {:.4} outside envelope", o.id, s.v),
                });
            }
            if s.u < limits.u_min - MONITOR_TOL || s.u > limits.u_max + MONITOR_TOL {
                violations.push(Violation {
                    t,
                    detail: format!("vehicle {} control {:.4} outside envelope", o.id, s.u),
                });
            }
            let label = lane_label(o, s.p, corridor.lane_change_zone_length);
            lane_groups
                .entry((o.approach, label))
                .or_default()
                .push((s.p, o.id));
            for (&z, &off) in o.path.zones.iter().zip(&o.path.zone_entry_offsets) {
                if s.p > off + MONITOR_TOL && s.p < off + corridor.merging_zone_length - MONITOR_TOL
                {
                    zone_occupants.entry(z).or_default().push((o.approach, o.id));
                }
            }
        }
        envelope.push(EnvelopeSample {
            t,
            active: active.len(),
            v_min: v_lo,
            v_max: v_hi,
        });

        for ((approach, lane), group) in lane_groups.iter_mut() {
            group.sort_by(|a, b| b.0.total_cmp(&a.0));
            for w in group.windows(2) {
                let gap = w[0].0 - w[1].0;
                if gap < limits.safe_distance - MONITOR_TOL {
                    violations.push(Violation {
                        t,
                        detail: format!(
                            "rear-end gap {:.4} m between {} and {} on {:?} lane {}",
                            gap, w[0].1, w[1].1, approach, lane
                        ),
                    });
                }
            }
        }
        for (&z, occ) in zone_occupants.iter() {
            for (a, &(ra, ia)) in occ.iter().enumerate() {
                for &(rb, ib) in occ.iter().skip(a + 1) {
                    if !ra.same_road(rb) {
                        violations.push(Violation {
                            t,
                            detail: format!(
                                "lateral conflict in zone {z}: vehicles {ia} ({ra:?}) and {ib} ({rb:?})"
                            ),
                        });
                    }
                }
            }
        }
    }
    (violations, envelope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::CorridorConfig;

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
    fn lone_vehicle_cruises_through() {
        let c = corridor();
        let arrivals = vec![Arrival {
            approach: Approach::MainEast,
            entry_lane: 1,
            time: 0.0,
            entry_speed: 12.5,
        }];
        let run = run_with_arrivals(&c, &limits(), &arrivals, 1).unwrap();
        assert_eq!(run.outcomes.len(), 1);
        let o = &run.outcomes[0];
        // 345 m to the final zone exit at 12.5 m/s.
        assert!((o.metrics.travel_time - 27.6).abs() < 1e-9);
        assert!(o.metrics.delay.abs() < 1e-9);
        assert!(o.plan.nominal);
        assert!(run.violations.is_empty());
        assert!(!run.envelope.is_empty());
    }

    #[test]
    fn crossing_pair_is_separated_without_violation() {
        let c = corridor();
        // Both reach zone 1's entry at t = 12 if unconstrained.
        let arrivals = vec![
            Arrival {
                approach: Approach::CrossSouthbound(0),
                entry_lane: 1,
                time: 0.0,
                entry_speed: 12.5,
            },
            Arrival {
                approach: Approach::MainEast,
                entry_lane: 1,
                time: 0.2,
                entry_speed: 12.5,
            },
        ];
        let run = run_with_arrivals(&c, &limits(), &arrivals, 1).unwrap();
        assert_eq!(run.outcomes.len(), 2);
        let cross = &run.outcomes[0];
        let main = &run.outcomes[1];
        assert!(cross.plan.nominal);
        assert!(!main.plan.nominal);
        // The main vehicle waits out the cross vehicle's occupancy window.
        assert!(main.plan.arrivals[0].1 >= cross.plan.arrival(1).unwrap() + 1.2 - 1e-9);
        assert!(run.violations.is_empty(), "{:?}", run.violations[0]);
    }

    #[test]
    fn tailgating_stream_keeps_the_gap() {
        let c = corridor();
        let arrivals: Vec<Arrival> = (0..4)
            .map(|k| Arrival {
                approach: Approach::MainEast,
                entry_lane: 1,
                time: 0.3 * k as f64,
                entry_speed: 12.5,
            })
            .collect();
        let run = run_with_arrivals(&c, &limits(), &arrivals, 1).unwrap();
        assert_eq!(run.outcomes.len(), 4);
        // The gate spaces the entries; with two lanes some vehicles divert.
        for w in run.outcomes.windows(2) {
            assert!(w[1].entry_time > w[0].entry_time);
        }
        assert!(run.violations.is_empty(), "{:?}", run.violations[0]);
    }

    #[test]
    fn entry_gate_defers_until_leader_clears() {
        let c = corridor();
        let mut l = limits();
        l.tracking_error = 0.1;
        l.v_min = 2.0;
        let arrivals = vec![
            Arrival {
                approach: Approach::MainEast,
                entry_lane: 1,
                time: 0.0,
                entry_speed: 12.0,
            },
            Arrival {
                approach: Approach::MainEast,
                entry_lane: 1,
                time: 0.01,
                entry_speed: 12.0,
            },
        ];
        let run = run_with_arrivals(&c, &l, &arrivals, 1).unwrap();
        let gap = gate_clearance(&l, 12.0);
        let clear = run.outcomes[0].trajectory.first_time_at_position(gap);
        assert!((run.outcomes[1].entry_time - clear).abs() < 1e-9);
        assert!(run.violations.is_empty());
    }

    #[test]
    fn identical_seeds_reproduce_bitwise() {
        let c = corridor();
        let flow = FlowSpec {
            volume_veh_per_h: 700.0,
            entry_speed_mps: (11.0, 13.0),
            horizon_s: 12.0,
        };
        let a = simulate(&c, &limits(), &flow, 42).unwrap();
        let b = simulate(&c, &limits(), &flow, 42).unwrap();
        assert_eq!(a.outcomes.len(), b.outcomes.len());
        assert!(!a.outcomes.is_empty());
        for (x, y) in a.outcomes.iter().zip(&b.outcomes) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.entry_time.to_bits(), y.entry_time.to_bits());
            assert_eq!(x.metrics.travel_time.to_bits(), y.metrics.travel_time.to_bits());
            assert_eq!(x.metrics.fuel_ml.to_bits(), y.metrics.fuel_ml.to_bits());
        }
        let other = simulate(&c, &limits(), &flow, 43).unwrap();
        assert!(
            other.outcomes.len() != a.outcomes.len()
                || other
                    .outcomes
                    .iter()
                    .zip(&a.outcomes)
                    .any(|(x, y)| x.entry_time.to_bits() != y.entry_time.to_bits())
        );
    }

    #[test]
    fn monitor_flags_constructed_tailgating() {
        let c = corridor();
        let l = limits();
        // Two committed cruises only 5 m apart, bypassing the planner.
        let mk = |offset: f64, id: u64| {
            let path = c.path(Approach::MainEast, 1);
            let plan = SchedulePlan::nominal_cruise(&path, offset, 12.5, 15.0, 1);
            let b = BoundaryData::from_schedule(&plan, &path, offset, 12.5).unwrap();
            let traj = crate::ocp::solve_unconstrained(&b).unwrap();
            let metrics = VehicleMetrics {
                travel_time: 26.4,
                delay: 0.0,
                fuel_ml: 0.0,
            };
            VehicleOutcome {
                id,
                approach: Approach::MainEast,
                entry_lane: 1,
                lane: 1,
                path,
                nominal_arrival: offset,
                entry_time: offset,
                entry_speed: 12.5,
                exit_time: plan.exit_time,
                plan,
                trajectory: SharedArc::new(traj),
                metrics,
                plan_solve_us: 0,
                replans: 0,
                fallback: false,
            }
        };
        let outcomes = vec![mk(0.0, 1), mk(0.4, 2)];
        let (violations, _) = playback(&c, &l, &outcomes);
        assert!(violations
            .iter()
            .any(|v| v.detail.contains("rear-end gap")));
    }

    #[test]
    fn monitor_flags_constructed_lateral_conflict() {
        let c = corridor();
        let l = limits();
        let mk = |approach: Approach, id: u64| {
            let path = c.path(approach, 1);
            let plan = SchedulePlan::nominal_cruise(&path, 0.0, 12.5, 15.0, 1);
            let b = BoundaryData::from_schedule(&plan, &path, 0.0, 12.5).unwrap();
            let traj = crate::ocp::solve_unconstrained(&b).unwrap();
            VehicleOutcome {
                id,
                approach,
                entry_lane: 1,
                lane: 1,
                path,
                nominal_arrival: 0.0,
                entry_time: 0.0,
                entry_speed: 12.5,
                exit_time: plan.exit_time,
                plan,
                trajectory: SharedArc::new(traj),
                metrics: VehicleMetrics {
                    travel_time: 0.0,
                    delay: 0.0,
                    fuel_ml: 0.0,
                },
                plan_solve_us: 0,
                replans: 0,
                fallback: false,
            }
        };
        // Both cross zone 1 at the same instant on conflicting roads.
        let outcomes = vec![mk(Approach::MainEast, 1), mk(Approach::CrossSouthbound(0), 2)];
        let (violations, _) = playback(&c, &l, &outcomes);
        assert!(violations
            .iter()
            .any(|v| v.detail.contains("lateral conflict")));
    }

    #[test]
    fn arrival_sampling_is_deterministic_and_rate_plausible() {
        let c = corridor();
        let flow = FlowSpec {
            volume_veh_per_h: 900.0,
            entry_speed_mps: (11.0, 13.0),
            horizon_s: 400.0,
        };
        let a = sample_arrivals(&c, &flow, 5).unwrap();
        let b = sample_arrivals(&c, &flow, 5).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.time.to_bits(), y.time.to_bits());
        }
        // 16 streams at 900 veh/h for 400 s: 1600 expected arrivals.
        let expected = 16.0 * 900.0 / 3600.0 * 400.0;
        assert!((a.len() as f64) > 0.8 * expected && (a.len() as f64) < 1.2 * expected);
        for v in &a {
            assert!(v.entry_speed >= 11.0 && v.entry_speed <= 13.0);
            assert!(v.time >= 0.0 && v.time < 400.0);
        }
        assert!(sample_arrivals(&c, &FlowSpec { volume_veh_per_h: 0.0, ..flow }, 5).is_err());
    }
}
