//! Scenario files: the vehicles, ground-truth pits, access points and timed
//! events a simulation run is driven by.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::comms::AccessPoint;
use crate::detection::{GroundTruthSurface, Pit};
use crate::error::{Error, Result};
use crate::ids::{ArcId, NodeId, VehicleId};
use crate::network::StreetNetwork;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub id: VehicleId,
    pub start_arc: ArcId,
    #[serde(default)]
    pub start_offset_m: f64,
    pub speed_mps: f64,
    /// Destinations visited in order; the vehicle parks after the last.
    /// Without waypoints it roams.
    #[serde(default)]
    pub waypoints: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PitSpec {
    pub arc: ArcId,
    pub center_m: f64,
    pub half_length_m: f64,
    pub depth_mm: f64,
    pub reflectivity: f64,
}

impl PitSpec {
    pub fn pit(&self) -> Pit {
        Pit {
            center_m: self.center_m,
            half_length_m: self.half_length_m,
            depth_mm: self.depth_mm,
            reflectivity: self.reflectivity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimedKind {
    /// Set the destination to `node`, or clear it when `node` is absent.
    DestChange,
    /// Scan the stretch of the current arc driven since the last scan.
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedEvent {
    pub t_ms: u64,
    pub vehicle: VehicleId,
    pub kind: TimedKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    pub duration_ms: u64,
    #[serde(default)]
    pub vehicles: Vec<VehicleSpec>,
    #[serde(default)]
    pub pits: Vec<PitSpec>,
    #[serde(default)]
    pub access_points: Vec<AccessPoint>,
    #[serde(default)]
    pub events: Vec<TimedEvent>,
}

impl Scenario {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Checks every reference against `net` and builds the per-arc
    /// ground-truth surfaces.
    pub fn validate(&self, net: &StreetNetwork) -> Result<BTreeMap<ArcId, GroundTruthSurface>> {
        let mut ids = BTreeSet::new();
        for v in &self.vehicles {
            if !ids.insert(&v.id) {
                return Err(Error::Validation(format!("duplicate vehicle `{}`", v.id)));
            }
            let arc = net.arc(&v.start_arc)?;
            if !(0.0..=arc.length_m).contains(&v.start_offset_m) {
                return Err(Error::OffsetOutOfRange {
                    arc: arc.id.to_string(),
                    offset: v.start_offset_m,
                    length: arc.length_m,
                });
            }
            if !(v.speed_mps.is_finite() && v.speed_mps >= 0.0) {
                return Err(Error::Validation(format!(
                    "vehicle `{}` has invalid speed {}",
                    v.id, v.speed_mps
                )));
            }
            for n in &v.waypoints {
                net.node_idx(n)?;
            }
        }

        let mut by_arc: BTreeMap<ArcId, Vec<Pit>> = BTreeMap::new();
        for p in &self.pits {
            net.arc(&p.arc)?;
            by_arc.entry(p.arc.clone()).or_default().push(p.pit());
        }
        let mut surfaces = BTreeMap::new();
        for (arc, pits) in by_arc {
            let length = net.arc(&arc)?.length_m;
            surfaces.insert(arc.clone(), GroundTruthSurface::new(arc, length, pits)?);
        }

        let mut aps = BTreeSet::new();
        for ap in &self.access_points {
            if !aps.insert(&ap.id) {
                return Err(Error::Validation(format!(
                    "duplicate access point `{}`",
                    ap.id
                )));
            }
            if !(ap.range_m > 0.0 && ap.range_m.is_finite()) {
                return Err(Error::Validation(format!(
                    "access point `{}` has invalid range {}",
                    ap.id, ap.range_m
                )));
            }
        }

        for ev in &self.events {
            if ev.t_ms >= self.duration_ms {
                return Err(Error::Validation(format!(
                    "event at {} ms is outside the {} ms run",
                    ev.t_ms, self.duration_ms
                )));
            }
            if !ids.contains(&ev.vehicle) {
                return Err(Error::UnknownVehicle(ev.vehicle.to_string()));
            }
            match (ev.kind, &ev.node) {
                (TimedKind::DestChange, Some(n)) => {
                    net.node_idx(n)?;
                }
                (TimedKind::Sweep, Some(_)) => {
                    return Err(Error::Validation("sweep events take no node".into()));
                }
                _ => {}
            }
        }
        Ok(surfaces)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Arc, Node};

    fn net() -> StreetNetwork {
        StreetNetwork::new(
            vec![
                Node {
                    id: "a".into(),
                    x: 0.0,
                    y: 0.0,
                },
                Node {
                    id: "b".into(),
                    x: 50.0,
                    y: 0.0,
                },
            ],
            vec![Arc {
                id: "ab".into(),
                tail: "a".into(),
                head: "b".into(),
                length_m: 50.0,
            }],
        )
        .unwrap()
    }

    const GOOD: &str = r#"{
        "seed": 7,
        "duration_ms": 10000,
        "vehicles": [{"id": "v1", "start_arc": "ab", "speed_mps": 10, "waypoints": ["b"]}],
        "pits": [{"arc": "ab", "center_m": 20, "half_length_m": 1, "depth_mm": 40, "reflectivity": 0.2}],
        "access_points": [{"id": "ap1", "x": 25, "y": 5, "range_m": 60}],
        "events": [{"t_ms": 500, "vehicle": "v1", "kind": "sweep"},
                   {"t_ms": 900, "vehicle": "v1", "kind": "dest_change"}]
    }"#;

    #[test]
    fn parses_and_validates() {
        let sc = Scenario::from_json_str(GOOD).unwrap();
        assert_eq!(sc.vehicles[0].start_offset_m, 0.0);
        assert!(sc.access_points[0].open);
        let surfaces = sc.validate(&net()).unwrap();
        assert_eq!(surfaces.len(), 1);
        let again = Scenario::from_json_str(&sc.to_json_string()).unwrap();
        assert_eq!(again, sc);
    }

    #[test]
    fn rejects_bad_references() {
        let sc = Scenario::from_json_str(GOOD).unwrap();

        let mut bad = sc.clone();
        bad.vehicles[0].start_arc = "zz".into();
        assert!(matches!(bad.validate(&net()), Err(Error::UnknownArc(_))));

        let mut bad = sc.clone();
        bad.events[0].t_ms = 10_000;
        assert!(matches!(bad.validate(&net()), Err(Error::Validation(_))));

        let mut bad = sc.clone();
        bad.pits[0].center_m = 49.5;
        assert!(matches!(bad.validate(&net()), Err(Error::Validation(_))));

        let mut bad = sc.clone();
        bad.events[1].node = Some("q".into());
        assert!(matches!(bad.validate(&net()), Err(Error::UnknownNode(_))));

        let mut bad = sc;
        bad.vehicles[0].start_offset_m = 51.0;
        assert!(matches!(
            bad.validate(&net()),
            Err(Error::OffsetOutOfRange { .. })
        ));
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"{"duration_ms": 1, "vehicle": []}"#;
        assert!(matches!(
            Scenario::from_json_str(text),
            Err(Error::Parse(_))
        ));
    }
}
