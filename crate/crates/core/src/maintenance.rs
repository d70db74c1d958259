//! Repair prioritization. Every vehicle that passes a pothole reports it
//! again, so the number of updates a pothole receives per minute is a proxy
//! for the traffic on its road.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::Result;
use crate::ids::{ArcId, PotholeId};
use crate::registry::{Registry, UpdateEvent};

/// Trailing window over which updates are counted.
pub const WINDOW_MS: u64 = 60_000;

/// Per-pothole update counts in the half-open window `(at - 60 s, at]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityWindow {
    pub at_ms: u64,
    counts: BTreeMap<PotholeId, u32>,
}

fn in_window(t: u64, at: u64) -> bool {
    t <= at && t + WINDOW_MS > at
}

impl IntensityWindow {
    pub fn evaluate(events: &[UpdateEvent], at_ms: u64) -> Self {
        let mut counts = BTreeMap::new();
        for ev in events.iter().filter(|e| in_window(e.timestamp_ms, at_ms)) {
            *counts.entry(ev.pothole).or_insert(0) += 1;
        }
        Self { at_ms, counts }
    }

    /// Updates per minute for one pothole.
    pub fn count(&self, id: PotholeId) -> u32 {
        self.counts.get(&id).copied().unwrap_or(0)
    }
}

pub fn traffic_intensity(registry: &Registry, id: PotholeId, at_ms: u64) -> Result<u32> {
    registry.lookup(id)?;
    Ok(registry
        .events()
        .iter()
        .filter(|e| e.pothole == id && in_window(e.timestamp_ms, at_ms))
        .count() as u32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorityEntry {
    pub rank: usize,
    pub pothole: PotholeId,
    pub arc: ArcId,
    pub offset_m: f64,
    pub depth_mm: f64,
    pub intensity_per_min: u32,
}

/// All potholes ranked by traffic intensity (descending), then depth
/// (descending), then id (ascending). Ranks start at 1.
pub fn priority_report(registry: &Registry, at_ms: u64) -> Vec<PriorityEntry> {
    let window = IntensityWindow::evaluate(registry.events(), at_ms);
    let mut entries: Vec<PriorityEntry> = registry
        .records()
        .map(|r| PriorityEntry {
            rank: 0,
            pothole: r.id,
            arc: r.arc().clone(),
            offset_m: r.offset_m(),
            depth_mm: r.depth_mm(),
            intensity_per_min: window.count(r.id),
        })
        .collect();
    entries.sort_by(|a, b| {
        b.intensity_per_min
            .cmp(&a.intensity_per_min)
            .then_with(|| b.depth_mm.total_cmp(&a.depth_mm))
            .then_with(|| a.pothole.cmp(&b.pothole))
    });
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    entries
}

/// Report CSV: `rank,pothole_id,arc_id,offset_m,depth_mm,intensity_per_min`.
pub fn write_report_csv<W: Write>(entries: &[PriorityEntry], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "rank",
        "pothole_id",
        "arc_id",
        "offset_m",
        "depth_mm",
        "intensity_per_min",
    ])?;
    for e in entries {
        w.write_record([
            e.rank.to_string(),
            e.pothole.to_string(),
            e.arc.to_string(),
            e.offset_m.to_string(),
            e.depth_mm.to_string(),
            e.intensity_per_min.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::network::{Arc, Node, StreetNetwork};
    use crate::registry::{DetectionReport, Location};

    fn registry() -> Registry {
        let net = StreetNetwork::new(
            vec![
                Node {
                    id: "u".into(),
                    x: 0.0,
                    y: 0.0,
                },
                Node {
                    id: "v".into(),
                    x: 100.0,
                    y: 0.0,
                },
            ],
            vec![Arc {
                id: "a".into(),
                tail: "u".into(),
                head: "v".into(),
                length_m: 100.0,
            }],
        )
        .unwrap();
        Registry::new(&net)
    }

    fn hit(reg: &mut Registry, offset: f64, depth: f64, t: u64) -> PotholeId {
        reg.ingest_report(
            &DetectionReport {
                location: Location::new("a", offset),
                depth_mm: depth,
                intensity: 0.5,
            },
            &"v".into(),
            t,
        )
        .unwrap()
        .id
    }

    #[test]
    fn counts_updates_in_trailing_minute() {
        let mut reg = registry();
        let id = hit(&mut reg, 10.0, 20.0, 100_000);
        hit(&mut reg, 10.0, 20.0, 120_000);
        hit(&mut reg, 10.0, 20.0, 150_000);
        assert_eq!(traffic_intensity(&reg, id, 150_000).unwrap(), 3);
    }

    #[test]
    fn window_boundaries() {
        let mut reg = registry();
        let id = hit(&mut reg, 10.0, 20.0, 39_000);
        assert_eq!(traffic_intensity(&reg, id, 100_000).unwrap(), 0);
        let id2 = hit(&mut reg, 50.0, 20.0, 40_000);
        assert_eq!(traffic_intensity(&reg, id2, 100_000).unwrap(), 0);
        assert_eq!(traffic_intensity(&reg, id2, 99_999).unwrap(), 1);
        assert_eq!(traffic_intensity(&reg, id2, 40_000).unwrap(), 1);
        assert_eq!(traffic_intensity(&reg, id2, 39_999).unwrap(), 0);
    }

    #[test]
    fn unknown_pothole() {
        let reg = registry();
        assert!(matches!(
            traffic_intensity(&reg, PotholeId(3), 0),
            Err(Error::UnknownPothole(_))
        ));
    }

    #[test]
    fn empty_registry_empty_report() {
        assert!(priority_report(&registry(), 1_000).is_empty());
    }

    #[test]
    fn ranking_keys() {
        let mut reg = registry();
        let busy = hit(&mut reg, 10.0, 5.0, 1_000);
        for t in [2_000, 3_000, 4_000, 5_000] {
            hit(&mut reg, 10.0, 5.0, t);
        }
        let quiet = hit(&mut reg, 50.0, 80.0, 1_000);
        hit(&mut reg, 50.0, 80.0, 2_000);
        let report = priority_report(&reg, 10_000);
        assert_eq!(report[0].pothole, busy);
        assert_eq!(report[0].intensity_per_min, 5);
        assert_eq!(report[1].pothole, quiet);
        assert_eq!(report.iter().map(|e| e.rank).collect::<Vec<_>>(), [1, 2]);
    }

    #[test]
    fn depth_breaks_intensity_ties() {
        let mut reg = registry();
        let shallow = hit(&mut reg, 10.0, 10.0, 0);
        let deep = hit(&mut reg, 50.0, 20.0, 0);
        for t in 1..5 {
            hit(&mut reg, 10.0, 10.0, t);
            hit(&mut reg, 50.0, 20.0, t);
        }
        let report = priority_report(&reg, 10);
        assert_eq!(report[0].intensity_per_min, 5);
        assert_eq!(report[0].pothole, deep);
        assert_eq!(report[1].pothole, shallow);
    }

    #[test]
    fn csv_layout() {
        let mut reg = registry();
        hit(&mut reg, 12.5, 30.0, 0);
        let mut out = Vec::new();
        write_report_csv(&priority_report(&reg, 0), &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "rank,pothole_id,arc_id,offset_m,depth_mm,intensity_per_min\n1,1,a,12.5,30,1\n"
        );
    }
}
