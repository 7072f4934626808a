//! Comparison scenario: two-phase fixed-time signals with an
//! intelligent-driver-model car-following law.
//!
//! Vehicles stay in their entry lane, follow the vehicle ahead of them on
//! that lane and treat a red signal as a standing obstacle at the stop
//! line. The run produces the same artifact shape as the coordinated
//! simulation so the metrics pipeline compares the two directly. Safety is
//! audited by a playback monitor of its own: rear-end spacing against the
//! jam gap and no merging-zone entry while the conflicting road is green.

use std::collections::BTreeMap;
use std::sync::Arc as SharedArc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{time_delay, FuelModel, VehicleMetrics};
use crate::ocp::{Arc, ArcKind, TrajectoryArcs};
use crate::scenario::{Approach, Corridor, LaneId};
use crate::scheduler::SchedulePlan;
use crate::sim::{
    sample_arrivals, Arrival, EnvelopeSample, FlowSpec, RunArtifacts, VehicleOutcome, Violation,
    PLAYBACK_STEP,
};

/// Car-following integration step, s.
const DT: f64 = 0.1;

/// Speed exponent of the free-flow term.
const IDM_EXPONENT: f64 = 4.0;

/// Spacing slack of the jam-gap audit, m. The jam gap is the exact
/// standstill equilibrium of the following law, so queued vehicles
/// asymptote onto it and the Euler integration undershoots by millimeters;
/// the allowance covers that discretization, not behavioral tailgating.
const GAP_TOL: f64 = 0.05;

/// Red-holding position margin before the stop line, m. Holding strictly
/// short of the line keeps the recorded stop-line crossing time on the
/// green release instead of on the creep toward the signal.
const HOLD_BACK_M: f64 = 0.5;

/// Two-phase fixed-time signal plan, shared by all intersections up to a
/// per-intersection offset. The cross-road phase leads the cycle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalPlan {
    pub cycle_s: f64,
    /// Fraction of the cycle given to the cross-road (north-south) phase.
    pub green_split: f64,
    /// All-red clearance at the end of each phase, s.
    pub all_red_s: f64,
    /// Cycle offset per intersection, s. Missing entries default to zero.
    pub offsets_s: Vec<f64>,
}

impl Default for SignalPlan {
    fn default() -> Self {
        SignalPlan {
            cycle_s: 60.0,
            green_split: 0.5,
            all_red_s: 2.0,
            offsets_s: Vec::new(),
        }
    }
}

impl SignalPlan {
    pub fn validate(&self) -> Result<()> {
        if self.cycle_s <= 0.0 {
            return Err(Error::Config("signal cycle must be positive".into()));
        }
        if !(0.0 < self.green_split && self.green_split < 1.0) {
            return Err(Error::Config(format!(
                "green split must lie in (0, 1), got {}",
                self.green_split
            )));
        }
        if self.all_red_s < 0.0 {
            return Err(Error::Config("all-red time must be non-negative".into()));
        }
        let cross = self.green_split * self.cycle_s;
        let main = self.cycle_s - cross;
        if cross <= self.all_red_s || main <= self.all_red_s {
            return Err(Error::Config(format!(
                "all-red time {} s leaves no green in a {} s cycle at split {}",
                self.all_red_s, self.cycle_s, self.green_split
            )));
        }
        Ok(())
    }

    fn offset(&self, intersection: usize) -> f64 {
        self.offsets_s.get(intersection).copied().unwrap_or(0.0)
    }

    /// Whether `approach` faces green at 0-based `intersection` at time `t`.
    pub fn green_for(&self, approach: Approach, intersection: usize, t: f64) -> bool {
        let tau = (t - self.offset(intersection)).rem_euclid(self.cycle_s);
        let cross_end = self.green_split * self.cycle_s;
        match approach {
            Approach::CrossSouthbound(_) | Approach::CrossNorthbound(_) => {
                tau < cross_end - self.all_red_s
            }
            Approach::MainEast | Approach::MainWest => {
                tau >= cross_end && tau < self.cycle_s - self.all_red_s
            }
        }
    }
}

/// Intelligent-driver-model parameters of the baseline fleet.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CarFollowingParams {
    /// Free-flow target speed, m/s. `None` uses each vehicle's entry speed.
    pub desired_speed_mps: Option<f64>,
    /// Maximum acceleration a, m/s^2.
    pub max_accel: f64,
    /// Comfortable braking b entering the spacing term, m/s^2 (positive).
    pub comfortable_decel: f64,
    /// Physical braking limit, m/s^2 (positive).
    pub max_decel: f64,
    /// Desired time headway T, s.
    pub time_headway: f64,
    /// Standstill jam gap s0, m. Replaces the coordinated run's safe
    /// distance in the monitor contract.
    pub jam_gap: f64,
}

impl Default for CarFollowingParams {
    fn default() -> Self {
        CarFollowingParams {
            desired_speed_mps: None,
            max_accel: 2.5,
            comfortable_decel: 2.0,
            max_decel: 6.0,
            time_headway: 1.2,
            jam_gap: 2.0,
        }
    }
}

impl CarFollowingParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max accel", self.max_accel),
            ("comfortable decel", self.comfortable_decel),
            ("max decel", self.max_decel),
            ("time headway", self.time_headway),
            ("jam gap", self.jam_gap),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(v) = self.desired_speed_mps {
            if v <= 0.0 {
                return Err(Error::Config("desired speed must be positive".into()));
            }
        }
        if self.comfortable_decel >= self.max_decel {
            return Err(Error::Config(format!(
                "comfortable decel {} must stay below the braking limit {}",
                self.comfortable_decel, self.max_decel
            )));
        }
        Ok(())
    }

    fn accel(&self, v: f64, v_des: f64, leader: Option<(f64, f64)>) -> f64 {
        let mut a = self.max_accel * (1.0 - (v / v_des).powf(IDM_EXPONENT));
        if let Some((gap, v_lead)) = leader {
            let gap = gap.max(0.1);
            let closing = v - v_lead;
            let s_star = self.jam_gap
                + (v * self.time_headway
                    + v * closing / (2.0 * (self.max_accel * self.comfortable_decel).sqrt()))
                .max(0.0);
            a -= self.max_accel * (s_star / gap).powi(2);
        }
        a.clamp(-self.max_decel, self.max_accel)
    }

    /// Entry clearance ahead of a new vehicle: jam gap plus the larger of
    /// the headway distance and the full-braking stopping distance.
    fn entry_clearance(&self, v0: f64) -> f64 {
        let stopping = v0 * v0 / (2.0 * self.max_decel) + 1.0;
        self.jam_gap + (self.time_headway * v0).max(stopping)
    }
}

struct BaselineVehicle {
    arrival: Arrival,
    path: crate::scenario::PathSpec,
    entry_time: f64,
    p: f64,
    v: f64,
    v_des: f64,
    arcs: Vec<Arc>,
    exit_time: Option<f64>,
}

/// Samples the demand and runs the signalized car-following baseline.
pub fn run_baseline(
    corridor: &Corridor,
    flow: &FlowSpec,
    signal: &SignalPlan,
    cf: &CarFollowingParams,
    seed: u64,
) -> Result<RunArtifacts> {
    let arrivals = sample_arrivals(corridor, flow, seed)?;
    run_baseline_with_arrivals(corridor, &arrivals, signal, cf)
}

/// Runs the baseline on an explicit arrival list.
pub fn run_baseline_with_arrivals(
    corridor: &Corridor,
    arrivals: &[Arrival],
    signal: &SignalPlan,
    cf: &CarFollowingParams,
) -> Result<RunArtifacts> {
    signal.validate()?;
    cf.validate()?;

    let mut queues: BTreeMap<(Approach, LaneId), Vec<usize>> = BTreeMap::new();
    let mut order: Vec<usize> = (0..arrivals.len()).collect();
    order.sort_by(|&a, &b| arrivals[a].time.total_cmp(&arrivals[b].time));
    for &i in &order {
        let a = &arrivals[i];
        queues.entry((a.approach, a.entry_lane)).or_default().push(i);
    }
    for q in queues.values_mut() {
        q.reverse();
    }

    // Front-to-back chain of vehicles on each lane; index into `vehicles`.
    let mut chains: BTreeMap<(Approach, LaneId), Vec<usize>> = BTreeMap::new();
    let mut vehicles: Vec<BaselineVehicle> = Vec::new();
    let horizon = arrivals.iter().map(|a| a.time).fold(0.0, f64::max);
    let t_max = horizon + 3600.0;
    let mut t = 0.0;
    let mut remaining = arrivals.len();

    while remaining > 0 || vehicles.iter().any(|v| v.exit_time.is_none()) {
        if t > t_max {
            return Err(Error::Config(format!(
                "baseline run did not drain within {t_max} s; check the signal plan"
            )));
        }

        for (key, queue) in queues.iter_mut() {
            let Some(&head) = queue.last() else { continue };
            let a = &arrivals[head];
            if a.time > t {
                continue;
            }
            let chain = chains.entry(*key).or_default();
            let blocked = chain
                .iter()
                .rev()
                .find(|&&i| vehicles[i].exit_time.is_none())
                .map(|&i| vehicles[i].p < cf.entry_clearance(a.entry_speed))
                .unwrap_or(false);
            if blocked {
                continue;
            }
            queue.pop();
            remaining -= 1;
            let v_des = cf.desired_speed_mps.unwrap_or(a.entry_speed);
            vehicles.push(BaselineVehicle {
                arrival: a.clone(),
                path: corridor.path(a.approach, a.entry_lane),
                entry_time: t,
                p: 0.0,
                v: a.entry_speed,
                v_des,
                arcs: Vec::new(),
                exit_time: None,
            });
            chain.push(vehicles.len() - 1);
        }

        // Synchronous update: accelerations from the state at `t`, then one
        // Euler step, with the step control adjusted so the recorded arc is
        // exact (no mid-step stop, no stop-line overshoot).
        let mut accels: Vec<(usize, f64)> = Vec::new();
        for chain in chains.values() {
            let mut lead: Option<usize> = None;
            for &i in chain {
                if vehicles[i].exit_time.is_some() {
                    continue;
                }
                let veh = &vehicles[i];
                let follow = lead.map(|l| {
                    let lv = &vehicles[l];
                    (lv.p - veh.p, lv.v)
                });
                let mut a = cf.accel(veh.v, veh.v_des, follow);
                if let Some(stop_line) = red_stop_line(veh, signal, cf, t) {
                    let hold = stop_line - HOLD_BACK_M;
                    let wall = cf.accel(veh.v, veh.v_des, Some((hold + cf.jam_gap - veh.p, 0.0)));
                    a = a.min(wall);
                    let p_next = veh.p + veh.v * DT + 0.5 * a * DT * DT;
                    if p_next > hold {
                        a = 2.0 * (hold - veh.p - veh.v * DT) / (DT * DT);
                    }
                }
                if veh.v + a * DT < 0.0 {
                    a = -veh.v / DT;
                }
                accels.push((i, a));
                lead = Some(i);
            }
        }
        for (i, a) in accels {
            let veh = &mut vehicles[i];
            let (p0, v0) = (veh.p, veh.v);
            let p1 = p0 + v0 * DT + 0.5 * a * DT * DT;
            let mut t_end = t + DT;
            if p1 >= veh.path.path_length {
                t_end = t + step_time_to(p0, v0, a, veh.path.path_length).unwrap_or(DT);
                veh.exit_time = Some(t_end);
            }
            veh.arcs.push(Arc {
                kind: ArcKind::Unconstrained,
                t_start: t,
                t_end,
                a: 0.0,
                b: a,
                c: v0,
                d: p0,
            });
            veh.p = p1;
            veh.v = v0 + a * DT;
        }
        for chain in chains.values_mut() {
            chain.retain(|&i| vehicles[i].exit_time.is_none());
        }

        t += DT;
    }

    let fuel = FuelModel::bundled();
    let mut outcomes: Vec<VehicleOutcome> = Vec::new();
    vehicles.sort_by(|a, b| {
        a.entry_time
            .total_cmp(&b.entry_time)
            .then(a.arrival.approach.cmp(&b.arrival.approach))
            .then(a.arrival.entry_lane.cmp(&b.arrival.entry_lane))
    });
    for (k, veh) in vehicles.into_iter().enumerate() {
        let exit_time = veh.exit_time.unwrap();
        let trajectory = SharedArc::new(TrajectoryArcs {
            arcs: veh.arcs,
            multipliers: vec![],
            predecessor: None,
            follow_gap: 0.0,
        });
        let travel_time = exit_time - veh.entry_time;
        let metrics = VehicleMetrics {
            travel_time,
            delay: time_delay(travel_time, veh.path.path_length, veh.arrival.entry_speed)?,
            fuel_ml: fuel.consumed(&trajectory, PLAYBACK_STEP),
        };
        let plan = SchedulePlan::nominal_cruise(
            &veh.path,
            veh.entry_time,
            veh.arrival.entry_speed,
            corridor.merging_zone_length,
            veh.arrival.entry_lane,
        );
        outcomes.push(VehicleOutcome {
            id: k as u64 + 1,
            approach: veh.arrival.approach,
            entry_lane: veh.arrival.entry_lane,
            lane: veh.arrival.entry_lane,
            path: veh.path,
            nominal_arrival: veh.arrival.time,
            entry_time: veh.entry_time,
            entry_speed: veh.arrival.entry_speed,
            exit_time,
            plan,
            trajectory,
            metrics,
            plan_solve_us: 0,
            replans: 0,
            fallback: false,
        });
    }

    let (violations, envelope) = baseline_playback(signal, cf, &outcomes);
    Ok(RunArtifacts {
        outcomes,
        violations,
        envelope,
    })
}

/// The stop line the vehicle must hold at, if its next merging zone is red
/// and it can still stop with the braking limit. Vehicles closer than their
/// stopping distance when the phase ends are committed and clear the
/// intersection during all-red.
fn red_stop_line(
    veh: &BaselineVehicle,
    signal: &SignalPlan,
    cf: &CarFollowingParams,
    t: f64,
) -> Option<f64> {
    // The hold window reaches slightly past the hold point so a vehicle
    // stopped there stays held despite integration round-off.
    let (idx, &stop_line) = veh
        .path
        .zone_entry_offsets
        .iter()
        .enumerate()
        .find(|&(_, &off)| off > veh.p + HOLD_BACK_M - 0.1)?;
    let intersection = veh.path.zones[idx] - 1;
    if signal.green_for(veh.arrival.approach, intersection, t) {
        return None;
    }
    let stoppable = stop_line - veh.p >= veh.v * veh.v / (2.0 * cf.max_decel);
    stoppable.then_some(stop_line)
}

/// Time within one step at which position `target` is reached under
/// constant control, or `None` when it is not.
fn step_time_to(p0: f64, v0: f64, a: f64, target: f64) -> Option<f64> {
    let d = target - p0;
    if a.abs() < 1e-12 {
        return (v0 > 0.0).then(|| d / v0).filter(|&tau| tau <= DT);
    }
    let disc = v0 * v0 + 2.0 * a * d;
    if disc < 0.0 {
        return None;
    }
    let tau = (-v0 + disc.sqrt()) / a;
    (0.0..=DT).contains(&tau).then_some(tau)
}

/// Audits the recorded trajectories: jam-gap spacing on every lane and no
/// merging-zone entry while the conflicting road faces green.
fn baseline_playback(
    signal: &SignalPlan,
    cf: &CarFollowingParams,
    outcomes: &[VehicleOutcome],
) -> (Vec<Violation>, Vec<EnvelopeSample>) {
    let mut violations = Vec::new();
    let mut envelope = Vec::new();
    if outcomes.is_empty() {
        return (violations, envelope);
    }

    for o in outcomes {
        for (&z, &off) in o.path.zones.iter().zip(&o.path.zone_entry_offsets) {
            let t_cross = o.trajectory.first_time_at_position(off);
            if !t_cross.is_finite() {
                continue;
            }
            let conflicting_green = match o.approach {
                Approach::MainEast | Approach::MainWest => {
                    signal.green_for(Approach::CrossSouthbound(z - 1), z - 1, t_cross)
                }
                Approach::CrossSouthbound(_) | Approach::CrossNorthbound(_) => {
                    signal.green_for(Approach::MainEast, z - 1, t_cross)
                }
            };
            if conflicting_green {
                violations.push(Violation {
                    t: t_cross,
                    detail: format!(
                        "vehicle {} enters zone {z} against a conflicting green",
                        o.id
                    ),
                });
            }
        }
    }

    let t_start = outcomes
        .iter()
        .map(|o| o.entry_time)
        .fold(f64::INFINITY, f64::min);
    let t_end = outcomes
        .iter()
        .map(|o| o.exit_time)
        .fold(f64::NEG_INFINITY, f64::max);
    let steps = ((t_end - t_start) / PLAYBACK_STEP).ceil() as usize;
    let mut lane_groups: BTreeMap<(Approach, LaneId), Vec<(f64, u64)>> = BTreeMap::new();
    for k in 0..=steps {
        let t = t_start + k as f64 * PLAYBACK_STEP;
        lane_groups.clear();
        let mut v_lo = f64::INFINITY;
        let mut v_hi = f64::NEG_INFINITY;
        let mut active = 0usize;
        for o in outcomes {
            if o.entry_time > t || o.exit_time < t {
                continue;
            }
            active += 1;
            let s = o.trajectory.evaluate_extrapolated(t);
            v_lo = v_lo.min(s.v);
            v_hi = v_hi.max(s.v);
            if s.v < -1e-9 {
                violations.push(Violation {
                    t,
                    detail: format!("vehicle {} rolls backwards at {:.4} m/s", o.id, s.v),
                });
            }
            lane_groups
                .entry((o.approach, o.entry_lane))
                .or_default()
                .push((s.p, o.id));
        }
        if active == 0 {
            continue;
        }
        envelope.push(EnvelopeSample {
            t,
            active,
            v_min: v_lo,
            v_max: v_hi,
        });
        for ((approach, lane), group) in lane_groups.iter_mut() {
            group.sort_by(|a, b| b.0.total_cmp(&a.0));
            for w in group.windows(2) {
                let gap = w[0].0 - w[1].0;
                if gap < cf.jam_gap - GAP_TOL {
                    violations.push(Violation {
                        t,
                        detail: format!(
                            "jam gap {:.4} m between {} and {} on {:?} lane {}",
                            gap, w[0].1, w[1].1, approach, lane
                        ),
                    });
                }
            }
        }
    }
    (violations, envelope)
}
