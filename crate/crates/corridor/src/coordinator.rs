//! The coordinator database: entry queue, per-vehicle conflict sets and
//! committed plans.
//!
//! The coordinator makes no decisions. It assigns queue indices, classifies
//! every earlier vehicle into the same-lane / lateral-conflict / no-conflict
//! families when a vehicle enters, and stores committed plans so later
//! entrants can plan against them. Registrations and commits are serialized
//! in queue order; the planning itself is a pure function of this state.

use std::collections::BTreeMap;
use std::sync::Arc as SharedArc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ocp::TrajectoryArcs;
use crate::scenario::{Corridor, LaneId, PathSpec, ZoneId};
use crate::scheduler::SchedulePlan;

pub type VehicleId = u64;

/// Time-invariant classification of all earlier vehicles, built at entry.
#[derive(Debug, Clone, Default)]
pub struct ConflictSets {
    /// Same direction and destination, keyed by the lane they occupy after
    /// the lane-changing zone; ordered by queue index.
    pub same_lane_ahead: BTreeMap<LaneId, Vec<VehicleId>>,
    /// Potential lateral collisions per merging zone on this vehicle's path.
    pub lateral: BTreeMap<ZoneId, Vec<VehicleId>>,
    /// Different origin-destination without any potential conflict.
    pub no_conflict: Vec<VehicleId>,
}

impl ConflictSets {
    /// Immediate predecessor on `lane`: the most recent same-direction
    /// entrant bound for that lane.
    pub fn predecessor(&self, lane: LaneId) -> Option<VehicleId> {
        self.same_lane_ahead
            .get(&lane)
            .and_then(|v| v.last())
            .copied()
    }

    pub fn all_ids(&self) -> Vec<VehicleId> {
        let mut ids: Vec<VehicleId> = self
            .same_lane_ahead
            .values()
            .flatten()
            .chain(self.lateral.values().flatten())
            .chain(self.no_conflict.iter())
            .copied()
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// A committed plan: the upper-level schedule, the solved trajectory and the
/// lane-changing-zone occupancy interval derived from it.
#[derive(Debug, Clone)]
pub struct Committed {
    pub plan: SchedulePlan,
    pub trajectory: SharedArc<TrajectoryArcs>,
    /// End of the occupancy interval: first time the position reaches L_c.
    pub lane_change_occupancy_end: f64,
}

#[derive(Debug, Clone)]
pub struct VehicleRecord {
    pub id: VehicleId,
    pub path: PathSpec,
    pub entry_time: f64,
    pub entry_speed: f64,
    pub conflict_sets: ConflictSets,
    pub committed: Option<Committed>,
}

/// An entry request before it has been assigned a queue position.
#[derive(Debug, Clone)]
pub struct EntryRequest {
    pub path: PathSpec,
    pub entry_time: f64,
    pub entry_speed: f64,
}

#[derive(Debug, Default)]
pub struct Coordinator {
    /// Active queue, in entry order.
    queue: Vec<VehicleId>,
    next_index: VehicleId,
    vehicles: BTreeMap<VehicleId, VehicleRecord>,
    /// Exited vehicles, retained for metrics.
    archive: BTreeMap<VehicleId, VehicleRecord>,
}

impl Coordinator {
    pub fn new() -> Self {
        Coordinator {
            next_index: 1,
            ..Default::default()
        }
    }

    pub fn active_ids(&self) -> &[VehicleId] {
        &self.queue
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&VehicleRecord> {
        self.vehicles.get(&id)
    }

    pub fn archived(&self, id: VehicleId) -> Option<&VehicleRecord> {
        self.archive.get(&id)
    }

    pub fn committed(&self, id: VehicleId) -> Option<&Committed> {
        self.vehicles.get(&id).and_then(|v| v.committed.as_ref())
    }

    /// Orders simultaneous arrivals: shorter path first, remaining ties by a
    /// seeded random draw.
    pub fn order_simultaneous<R: Rng>(requests: &mut Vec<EntryRequest>, rng: &mut R) {
        let mut keyed: Vec<(f64, f64, EntryRequest)> = requests
            .drain(..)
            .map(|r| (r.path.path_length, rng.gen::<f64>(), r))
            .collect();
        keyed.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap()
                .then(a.1.partial_cmp(&b.1).unwrap())
        });
        *requests = keyed.into_iter().map(|(_, _, r)| r).collect();
    }

    /// Appends a vehicle to the queue and classifies all active earlier
    /// vehicles into its conflict sets.
    pub fn register(&mut self, corridor: &Corridor, request: EntryRequest) -> VehicleId {
        let id = self.next_index;
        self.next_index += 1;

        let mut sets = ConflictSets::default();
        for &j in &self.queue {
            let other = &self.vehicles[&j];
            if other.path.approach == request.path.approach {
                let lane = other
                    .committed
                    .as_ref()
                    .map(|c| c.plan.lane)
                    .unwrap_or(other.path.entry_lane);
                sets.same_lane_ahead.entry(lane).or_default().push(j);
            } else {
                let zones = corridor.conflicting_zones(request.path.approach, other.path.approach);
                if zones.is_empty() {
                    sets.no_conflict.push(j);
                } else {
                    for z in zones {
                        sets.lateral.entry(z).or_default().push(j);
                    }
                }
            }
        }

        self.queue.push(id);
        self.vehicles.insert(
            id,
            VehicleRecord {
                id,
                path: request.path,
                entry_time: request.entry_time,
                entry_speed: request.entry_speed,
                conflict_sets: sets,
                committed: None,
            },
        );
        id
    }

    pub fn conflict_sets(&self, id: VehicleId) -> Result<&ConflictSets> {
        self.vehicles
            .get(&id)
            .map(|v| &v.conflict_sets)
            .ok_or(Error::UnknownVehicle(id))
    }

    /// Stores a plan and trajectory, making them visible to later entrants.
    pub fn commit(
        &mut self,
        id: VehicleId,
        plan: SchedulePlan,
        trajectory: TrajectoryArcs,
        lane_change_zone_length: f64,
    ) -> Result<()> {
        let record = self
            .vehicles
            .get_mut(&id)
            .ok_or(Error::UnknownVehicle(id))?;
        if record.committed.is_some() {
            return Err(Error::AlreadyCommitted(id));
        }
        let occupancy_end = trajectory.first_time_at_position(lane_change_zone_length);
        record.committed = Some(Committed {
            plan,
            trajectory: SharedArc::new(trajectory),
            lane_change_occupancy_end: occupancy_end,
        });
        Ok(())
    }

    /// Removes a vehicle that exited its final merging zone; its record is
    /// retained in the archive.
    pub fn deregister(&mut self, id: VehicleId) -> Result<()> {
        let record = self.vehicles.remove(&id).ok_or(Error::UnknownVehicle(id))?;
        self.queue.retain(|&q| q != id);
        self.archive.insert(id, record);
        Ok(())
    }

    /// Sorted lateral arrival windows at zone `z`: the optimal arrival time
    /// and occupancy duration of every committed lateral conflict.
    pub fn lateral_arrival_windows(&self, sets: &ConflictSets, z: ZoneId) -> Vec<(f64, f64)> {
        let mut windows: Vec<(f64, f64)> = sets
            .lateral
            .get(&z)
            .map(|ids| {
                ids.iter()
                    .filter_map(|j| self.committed(*j))
                    .filter_map(|c| {
                        c.plan
                            .arrival(z)
                            .map(|t| (t, c.plan.zone_occupancy))
                    })
                    .collect()
            })
            .unwrap_or_default();
        windows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        windows
    }

    /// True if any same-direction vehicle still occupies the lane-changing
    /// zone at time `t`, making a lane-change maneuver infeasible.
    pub fn lane_change_zone_occupied(&self, sets: &ConflictSets, t: f64) -> bool {
        sets.same_lane_ahead.values().flatten().any(|j| {
            match (self.vehicles.get(j), self.vehicles.get(j).and_then(|v| v.committed.as_ref())) {
                (Some(v), Some(c)) => v.entry_time <= t && t <= c.lane_change_occupancy_end,
                // An uncommitted same-direction vehicle is still at the entry.
                (Some(v), None) => v.entry_time <= t,
                _ => false,
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Approach, Corridor, CorridorConfig};
    use rand::SeedableRng;

    fn corridor(n_zones: usize) -> Corridor {
        Corridor::build(&CorridorConfig {
            approach_length_m: 150.0,
            spacing_m: vec![75.0; n_zones - 1],
            lane_width_m: 3.75,
            merging_zone_m: None,
            lane_change_zone_m: 30.0,
            lanes_per_road: 2,
        })
        .unwrap()
    }

    fn request(c: &Corridor, approach: Approach, lane: LaneId, t0: f64) -> EntryRequest {
        EntryRequest {
            path: c.path(approach, lane),
            entry_time: t0,
            entry_speed: 12.5,
        }
    }

    fn cruise_commit(coord: &mut Coordinator, c: &Corridor, id: VehicleId, lane: LaneId) {
        let record = coord.vehicle(id).unwrap();
        let plan = crate::scheduler::SchedulePlan::nominal_cruise(
            &record.path,
            record.entry_time,
            record.entry_speed,
            c.merging_zone_length,
            lane,
        );
        let boundary =
            crate::ocp::BoundaryData::from_schedule(&plan, &record.path, record.entry_time, record.entry_speed)
                .unwrap();
        let traj = crate::ocp::solve_unconstrained(&boundary).unwrap();
        coord
            .commit(id, plan, traj, c.lane_change_zone_length)
            .unwrap();
    }

    #[test]
    fn first_vehicle_has_empty_sets() {
        let c = corridor(2);
        let mut coord = Coordinator::new();
        let id = coord.register(&c, request(&c, Approach::MainEast, 1, 0.0));
        assert_eq!(id, 1);
        let sets = coord.conflict_sets(id).unwrap();
        assert!(sets.same_lane_ahead.is_empty());
        assert!(sets.lateral.is_empty());
        assert!(sets.no_conflict.is_empty());
    }

    /// Two-intersection configuration with eight earlier vehicles: the ninth
    /// entrant sees its predecessors split across lanes, the two zones and
    /// the no-conflict set, with the exited vehicle #1 absent.
    #[test]
    fn ninth_vehicle_classification() {
        let c = corridor(2);
        let mut coord = Coordinator::new();
        // #1 entered long ago and has already exited.
        let v1 = coord.register(&c, request(&c, Approach::MainEast, 1, -40.0));
        cruise_commit(&mut coord, &c, v1, 1);
        // #2 and #6 travel eastbound like #9, on lanes 2 and 1.
        let v2 = coord.register(&c, request(&c, Approach::MainEast, 2, -10.0));
        cruise_commit(&mut coord, &c, v2, 2);
        // #3, #4 cross at the first intersection.
        let v3 = coord.register(&c, request(&c, Approach::CrossSouthbound(0), 1, -9.0));
        cruise_commit(&mut coord, &c, v3, 1);
        let v4 = coord.register(&c, request(&c, Approach::CrossNorthbound(0), 1, -8.5));
        cruise_commit(&mut coord, &c, v4, 1);
        // #5 travels westbound: same roads as #9, opposite direction.
        let v5 = coord.register(&c, request(&c, Approach::MainWest, 1, -8.0));
        cruise_commit(&mut coord, &c, v5, 1);
        let v6 = coord.register(&c, request(&c, Approach::MainEast, 1, -6.0));
        cruise_commit(&mut coord, &c, v6, 1);
        // #7, #8 cross at the second intersection.
        let v7 = coord.register(&c, request(&c, Approach::CrossSouthbound(1), 1, -4.0));
        cruise_commit(&mut coord, &c, v7, 1);
        let v8 = coord.register(&c, request(&c, Approach::CrossNorthbound(1), 1, -3.5));
        cruise_commit(&mut coord, &c, v8, 1);

        coord.deregister(v1).unwrap();

        let v9 = coord.register(&c, request(&c, Approach::MainEast, 1, 0.0));
        assert_eq!(v9, 9);
        let sets = coord.conflict_sets(v9).unwrap();
        assert_eq!(sets.same_lane_ahead[&1], vec![6]);
        assert_eq!(sets.same_lane_ahead[&2], vec![2]);
        assert_eq!(sets.lateral[&1], vec![3, 4]);
        assert_eq!(sets.lateral[&2], vec![7, 8]);
        assert_eq!(sets.no_conflict, vec![5]);
    }

    #[test]
    fn partition_property() {
        let c = corridor(3);
        let mut coord = Coordinator::new();
        let approaches = [
            Approach::MainEast,
            Approach::MainWest,
            Approach::CrossSouthbound(0),
            Approach::CrossNorthbound(2),
            Approach::MainEast,
        ];
        for (i, &a) in approaches.iter().enumerate() {
            let id = coord.register(&c, request(&c, a, 1 + i % 2, i as f64));
            cruise_commit(&mut coord, &c, id, 1 + i % 2);
        }
        let id = coord.register(&c, request(&c, Approach::MainEast, 1, 10.0));
        let sets = coord.conflict_sets(id).unwrap();
        let mut all = sets.all_ids();
        all.sort_unstable();
        assert_eq!(all, vec![1, 2, 3, 4, 5]);
        // No id may appear in two families.
        let total: usize = sets.same_lane_ahead.values().map(|v| v.len()).sum::<usize>()
            + sets
                .lateral
                .values()
                .flatten()
                .copied()
                .collect::<std::collections::BTreeSet<_>>()
                .len()
            + sets.no_conflict.len();
        assert_eq!(total, 5);
    }

    #[test]
    fn shorter_path_wins_simultaneous_entry() {
        let c = corridor(3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut reqs = vec![
            request(&c, Approach::MainEast, 1, 0.0),
            request(&c, Approach::CrossSouthbound(0), 1, 0.0),
        ];
        Coordinator::order_simultaneous(&mut reqs, &mut rng);
        assert_eq!(reqs[0].path.approach, Approach::CrossSouthbound(0));
    }

    #[test]
    fn commit_and_occupancy_interval() {
        let c = corridor(2);
        let mut coord = Coordinator::new();
        let id = coord.register(&c, request(&c, Approach::MainEast, 1, 0.0));
        cruise_commit(&mut coord, &c, id, 1);
        // Cruise at 12.5 m/s reaches L_c = 30 m after 2.4 s.
        let committed = coord.committed(id).unwrap();
        assert!((committed.lane_change_occupancy_end - 2.4).abs() < 1e-9);
        // Double commit is rejected.
        let record = coord.vehicle(id).unwrap().clone();
        let plan = crate::scheduler::SchedulePlan::nominal_cruise(
            &record.path,
            0.0,
            12.5,
            c.merging_zone_length,
            1,
        );
        let boundary =
            crate::ocp::BoundaryData::from_schedule(&plan, &record.path, 0.0, 12.5).unwrap();
        let traj = crate::ocp::solve_unconstrained(&boundary).unwrap();
        assert!(matches!(
            coord.commit(id, plan, traj, c.lane_change_zone_length),
            Err(Error::AlreadyCommitted(_))
        ));
    }

    #[test]
    fn lateral_windows_track_commits() {
        let c = corridor(2);
        let mut coord = Coordinator::new();
        let j = coord.register(&c, request(&c, Approach::CrossSouthbound(0), 1, 0.0));
        cruise_commit(&mut coord, &c, j, 1);
        let i = coord.register(&c, request(&c, Approach::MainEast, 1, 1.0));
        let sets = coord.conflict_sets(i).unwrap().clone();
        let windows = coord.lateral_arrival_windows(&sets, 1);
        assert_eq!(windows.len(), 1);
        assert!((windows[0].0 - 12.0).abs() < 1e-9);
        assert!((windows[0].1 - 1.2).abs() < 1e-9);
        // The cross vehicle shares no window at zone 2.
        assert!(coord.lateral_arrival_windows(&sets, 2).is_empty());
    }

    #[test]
    fn deregister_archives_and_rejects_repeats() {
        let c = corridor(2);
        let mut coord = Coordinator::new();
        let id = coord.register(&c, request(&c, Approach::MainEast, 1, 0.0));
        cruise_commit(&mut coord, &c, id, 1);
        coord.deregister(id).unwrap();
        assert!(!coord.active_ids().contains(&id));
        assert!(coord.archived(id).unwrap().committed.is_some());
        assert!(matches!(coord.deregister(id), Err(Error::UnknownVehicle(_))));
    }
}
