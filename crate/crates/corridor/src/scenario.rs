//! Corridor geometry: intersections, merging zones, lanes and vehicle limits.
//!
//! Positions are longitudinal path coordinates in meters, measured from the
//! control-zone entry of each approach. The corridor is a main road crossing
//! `n_z` side streets; every intersection carries one merging zone where
//! crossing paths may collide. No turns are modeled, so each path is a
//! straight line through one or more zones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a merging zone, 1-based as zones are numbered along the main road.
pub type ZoneId = usize;

/// Lane index within a directional roadway. Lane 1 is the rightmost lane.
pub type LaneId = usize;

/// One directional entry into the control zone.
///
/// `MainEast`/`MainWest` travel the full corridor; `CrossSouthbound(k)` and
/// `CrossNorthbound(k)` cross only intersection `k` (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Approach {
    MainEast,
    MainWest,
    CrossSouthbound(usize),
    CrossNorthbound(usize),
}

impl Approach {
    /// Two approaches share a road when they are the two directions of the
    /// same street. Same-road traffic can never conflict laterally.
    pub fn same_road(self, other: Approach) -> bool {
        use Approach::*;
        matches!(
            (self, other),
            (MainEast, MainEast)
                | (MainEast, MainWest)
                | (MainWest, MainEast)
                | (MainWest, MainWest)
        ) || matches!(
            (self, other),
            (CrossSouthbound(a), CrossSouthbound(b))
            | (CrossSouthbound(a), CrossNorthbound(b))
            | (CrossNorthbound(a), CrossSouthbound(b))
            | (CrossNorthbound(a), CrossNorthbound(b)) if a == b
        )
    }
}

/// Per-vehicle control bounds and global speed/safety parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VehicleLimits {
    /// Minimum control input (max deceleration), m/s^2. Negative.
    pub u_min: f64,
    /// Maximum control input (max acceleration), m/s^2. Positive.
    pub u_max: f64,
    /// Minimum speed, m/s. Non-negative.
    pub v_min: f64,
    /// Maximum speed, m/s.
    pub v_max: f64,
    /// Rear-end safe distance delta, m.
    pub safe_distance: f64,
    /// Maximum position-tracking deviation epsilon, m.
    pub tracking_error: f64,
}

impl VehicleLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.u_min < 0.0 && 0.0 < self.u_max) {
            return Err(Error::InvalidCorridor(format!(
                "control bounds must satisfy u_min < 0 < u_max, got [{}, {}]",
                self.u_min, self.u_max
            )));
        }
        if !(0.0 <= self.v_min && self.v_min < self.v_max) {
            return Err(Error::InvalidCorridor(format!(
                "speed bounds must satisfy 0 <= v_min < v_max, got [{}, {}]",
                self.v_min, self.v_max
            )));
        }
        if self.safe_distance <= 0.0 {
            return Err(Error::InvalidCorridor(
                "safe distance delta must be positive".into(),
            ));
        }
        if self.tracking_error < 0.0 {
            return Err(Error::InvalidCorridor(
                "tracking error epsilon must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// One merging zone with its entry offsets per crossing approach.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergingZoneSpec {
    /// 1-based zone id, dense in `1..=n_zones`.
    pub zone_id: ZoneId,
    /// Entry offset (m from control-zone entry) for each approach crossing
    /// this zone, sorted by approach for determinism.
    pub entry_offsets: Vec<(Approach, f64)>,
    /// Ordered approach pairs whose straight paths cross inside this zone.
    pub conflicting_path_pairs: Vec<(Approach, Approach)>,
}

/// Geometry parameters accepted by [`Corridor::build`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorridorConfig {
    /// Approach length L: distance from control-zone entry to the first zone.
    pub approach_length_m: f64,
    /// Distance D_k between consecutive intersections (zone exit to next zone
    /// entry). One entry per consecutive pair; may be asymmetric.
    pub spacing_m: Vec<f64>,
    /// Lane width w.
    pub lane_width_m: f64,
    /// Merging-zone length S. `None` derives S = 4w (two lanes per road).
    pub merging_zone_m: Option<f64>,
    /// Lane-changing zone length L_c at the control-zone entry.
    pub lane_change_zone_m: f64,
    /// Same-directional lanes per road.
    pub lanes_per_road: usize,
}

/// Immutable corridor geometry shared by every other module.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Corridor {
    pub approach_length: f64,
    pub spacing: Vec<f64>,
    pub lane_width: f64,
    pub merging_zone_length: f64,
    pub lane_change_zone_length: f64,
    pub lanes_per_road: usize,
    /// Entry offset of zone k (1-based index k-1) on a main-road eastbound path.
    pub zone_offsets_east: Vec<f64>,
    pub zones: Vec<MergingZoneSpec>,
}

/// Straight path of one vehicle through the control zone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathSpec {
    pub approach: Approach,
    pub entry_lane: LaneId,
    /// Merging zones crossed, in traversal order.
    pub zones: Vec<ZoneId>,
    /// Entry offset of each crossed zone along this path, strictly increasing.
    pub zone_entry_offsets: Vec<f64>,
    /// Exit of the final merging zone; the control-zone exit for this path.
    pub path_length: f64,
}

impl Corridor {
    /// Validates the configuration and derives zone offsets and conflicts.
    pub fn build(config: &CorridorConfig) -> Result<Corridor> {
        let n_zones = config.spacing_m.len() + 1;
        let s = config
            .merging_zone_m
            .unwrap_or(4.0 * config.lane_width_m);

        if config.approach_length_m <= 0.0 {
            return Err(Error::InvalidCorridor("approach length must be positive".into()));
        }
        if config.lane_width_m <= 0.0 {
            return Err(Error::InvalidCorridor("lane width must be positive".into()));
        }
        if s <= 0.0 {
            return Err(Error::InvalidCorridor("merging zone length must be positive".into()));
        }
        if config.lane_change_zone_m <= 0.0 {
            return Err(Error::InvalidCorridor("lane-changing zone length must be positive".into()));
        }
        if config.lane_change_zone_m >= config.approach_length_m {
            return Err(Error::InvalidCorridor(format!(
                "lane-changing zone ({} m) must be shorter than the approach ({} m)",
                config.lane_change_zone_m, config.approach_length_m
            )));
        }
        if config.lanes_per_road == 0 {
            return Err(Error::InvalidCorridor("at least one lane per road required".into()));
        }
        for (k, d) in config.spacing_m.iter().enumerate() {
            if *d <= s {
                return Err(Error::InvalidCorridor(format!(
                    "intersection spacing D_{} = {} m must exceed the merging zone length {} m",
                    k + 1,
                    d,
                    s
                )));
            }
        }

        // Zone k entry on a straight main-road path: L + sum_{j<k} (S + D_j).
        let mut zone_offsets_east = Vec::with_capacity(n_zones);
        let mut offset = config.approach_length_m;
        zone_offsets_east.push(offset);
        for d in &config.spacing_m {
            offset += s + d;
            zone_offsets_east.push(offset);
        }

        let mut corridor = Corridor {
            approach_length: config.approach_length_m,
            spacing: config.spacing_m.clone(),
            lane_width: config.lane_width_m,
            merging_zone_length: s,
            lane_change_zone_length: config.lane_change_zone_m,
            lanes_per_road: config.lanes_per_road,
            zone_offsets_east,
            zones: Vec::new(),
        };
        corridor.zones = corridor.build_zone_specs();
        Ok(corridor)
    }

    pub fn n_zones(&self) -> usize {
        self.zone_offsets_east.len()
    }

    /// All directional entries of this corridor.
    pub fn approaches(&self) -> Vec<Approach> {
        let mut out = vec![Approach::MainEast, Approach::MainWest];
        for k in 0..self.n_zones() {
            out.push(Approach::CrossSouthbound(k));
            out.push(Approach::CrossNorthbound(k));
        }
        out
    }

    /// The straight path of a vehicle entering on `approach` in `entry_lane`.
    pub fn path(&self, approach: Approach, entry_lane: LaneId) -> PathSpec {
        let s = self.merging_zone_length;
        let (zones, offsets): (Vec<ZoneId>, Vec<f64>) = match approach {
            Approach::MainEast => (
                (1..=self.n_zones()).collect(),
                self.zone_offsets_east.clone(),
            ),
            Approach::MainWest => {
                // Westbound traverses zones n..1; spacing applies in reverse.
                let mut zones = Vec::with_capacity(self.n_zones());
                let mut offsets = Vec::with_capacity(self.n_zones());
                let mut offset = self.approach_length;
                for k in (0..self.n_zones()).rev() {
                    zones.push(k + 1);
                    offsets.push(offset);
                    if k > 0 {
                        offset += s + self.spacing[k - 1];
                    }
                }
                (zones, offsets)
            }
            Approach::CrossSouthbound(k) | Approach::CrossNorthbound(k) => {
                (vec![k + 1], vec![self.approach_length])
            }
        };
        let path_length = offsets.last().unwrap() + s;
        PathSpec {
            approach,
            entry_lane,
            zones,
            zone_entry_offsets: offsets,
            path_length,
        }
    }

    /// Zones in which straight paths on the two approaches cross each other.
    ///
    /// Paths conflict in a zone exactly when both traverse it on different
    /// roads; same-road traffic (either direction) runs on parallel lanes and
    /// never crosses.
    pub fn conflicting_zones(&self, a: Approach, b: Approach) -> Vec<ZoneId> {
        if a.same_road(b) {
            return Vec::new();
        }
        let za = self.path(a, 1).zones;
        let zb = self.path(b, 1).zones;
        za.into_iter().filter(|z| zb.contains(z)).collect()
    }

    fn build_zone_specs(&self) -> Vec<MergingZoneSpec> {
        let approaches = self.approaches();
        (1..=self.n_zones())
            .map(|zone_id| {
                let mut entry_offsets = Vec::new();
                for &a in &approaches {
                    let p = self.path(a, 1);
                    if let Some(idx) = p.zones.iter().position(|&z| z == zone_id) {
                        entry_offsets.push((a, p.zone_entry_offsets[idx]));
                    }
                }
                let crossing: Vec<Approach> =
                    entry_offsets.iter().map(|&(a, _)| a).collect();
                let mut conflicting_path_pairs = Vec::new();
                for (i, &a) in crossing.iter().enumerate() {
                    for &b in crossing.iter().skip(i + 1) {
                        if !a.same_road(b) {
                            conflicting_path_pairs.push((a, b));
                        }
                    }
                }
                MergingZoneSpec {
                    zone_id,
                    entry_offsets,
                    conflicting_path_pairs,
                }
            })
            .collect()
    }
}

/// Time a vehicle needs to traverse a merging zone of length `s` at the
/// imposed constant average speed `v_avg`.
pub fn zone_occupancy_duration(v_avg: f64, s: f64) -> Result<f64> {
    if v_avg <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "average zone speed must be positive, got {v_avg}"
        )));
    }
    Ok(s / v_avg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(spacing: Vec<f64>) -> CorridorConfig {
        CorridorConfig {
            approach_length_m: 150.0,
            spacing_m: spacing,
            lane_width_m: 3.75,
            merging_zone_m: None,
            lane_change_zone_m: 30.0,
            lanes_per_road: 2,
        }
    }

    #[test]
    fn merging_zone_derived_from_lane_width() {
        let c = Corridor::build(&config(vec![75.0, 75.0])).unwrap();
        assert_eq!(c.merging_zone_length, 15.0);
    }

    #[test]
    fn symmetric_zone_offsets() {
        let c = Corridor::build(&config(vec![75.0, 75.0])).unwrap();
        assert_eq!(c.zone_offsets_east, vec![150.0, 240.0, 330.0]);
    }

    #[test]
    fn asymmetric_zone_offsets() {
        // Hand evaluation of the offset recurrence for D = [30, 50], S = 15.
        let c = Corridor::build(&config(vec![30.0, 50.0])).unwrap();
        assert_eq!(c.zone_offsets_east, vec![150.0, 195.0, 260.0]);
    }

    #[test]
    fn westbound_path_mirrors_spacing() {
        let c = Corridor::build(&config(vec![30.0, 50.0])).unwrap();
        let p = c.path(Approach::MainWest, 1);
        assert_eq!(p.zones, vec![3, 2, 1]);
        assert_eq!(p.zone_entry_offsets, vec![150.0, 215.0, 260.0]);
        assert_eq!(p.path_length, 275.0);
    }

    #[test]
    fn offsets_increase_by_spacing_plus_zone() {
        let c = Corridor::build(&config(vec![75.0, 75.0])).unwrap();
        let p = c.path(Approach::MainEast, 1);
        for k in 1..p.zone_entry_offsets.len() {
            let gap = p.zone_entry_offsets[k] - p.zone_entry_offsets[k - 1];
            assert!((gap - (15.0 + 75.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn occupancy_duration_examples() {
        assert_eq!(zone_occupancy_duration(12.5, 15.0).unwrap(), 1.2);
        assert_eq!(zone_occupancy_duration(15.0, 15.0).unwrap(), 1.0);
        assert_eq!(zone_occupancy_duration(10.0, 15.0).unwrap(), 1.5);
        assert!(zone_occupancy_duration(0.0, 15.0).is_err());
        assert!(zone_occupancy_duration(-1.0, 15.0).is_err());
    }

    #[test]
    fn cross_paths_conflict_only_at_their_intersection() {
        let c = Corridor::build(&config(vec![75.0, 75.0])).unwrap();
        assert_eq!(
            c.conflicting_zones(Approach::MainEast, Approach::CrossSouthbound(1)),
            vec![2]
        );
        assert!(c
            .conflicting_zones(Approach::MainEast, Approach::MainWest)
            .is_empty());
        assert!(c
            .conflicting_zones(Approach::CrossSouthbound(0), Approach::CrossNorthbound(0))
            .is_empty());
        assert!(c
            .conflicting_zones(Approach::CrossSouthbound(0), Approach::CrossNorthbound(1))
            .is_empty());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut bad = config(vec![75.0]);
        bad.lane_change_zone_m = 200.0;
        assert!(Corridor::build(&bad).is_err());

        let mut bad = config(vec![10.0]);
        bad.merging_zone_m = Some(15.0);
        assert!(Corridor::build(&bad).is_err());

        let mut bad = config(vec![75.0]);
        bad.approach_length_m = -1.0;
        assert!(Corridor::build(&bad).is_err());
    }

    #[test]
    fn build_is_deterministic() {
        let a = Corridor::build(&config(vec![75.0, 75.0])).unwrap();
        let b = Corridor::build(&config(vec![75.0, 75.0])).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}
