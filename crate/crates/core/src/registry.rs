//! Central pothole registry: records keyed by pothole id, nearby repeat
//! reports merged into one record, and an append-only update log that the
//! maintenance module turns into traffic intensity.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{ArcId, PotholeId, VehicleId};
use crate::network::StreetNetwork;

/// Reports on the same arc whose offsets differ by at most this much are
/// treated as the same pothole.
pub const DEFAULT_DEDUP_RADIUS_M: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub arc: ArcId,
    /// Meters from the arc's tail node.
    pub offset_m: f64,
}

impl Location {
    pub fn new(arc: impl Into<ArcId>, offset_m: f64) -> Self {
        Self {
            arc: arc.into(),
            offset_m,
        }
    }
}

/// A pothole observation as it reaches the server after decryption.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub location: Location,
    pub depth_mm: f64,
    /// Mean laser return intensity over the pothole, in [0, 1].
    pub intensity: f64,
}

/// The stored (Depth, Location, Intensity) tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct PotholeTuple {
    pub depth_mm: f64,
    pub location: Location,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotholeRecord {
    pub id: PotholeId,
    pub tuple: PotholeTuple,
    pub first_seen_ms: u64,
    pub last_seen_ms: u64,
}

impl PotholeRecord {
    pub fn arc(&self) -> &ArcId {
        &self.tuple.location.arc
    }

    pub fn offset_m(&self) -> f64 {
        self.tuple.location.offset_m
    }

    pub fn depth_mm(&self) -> f64 {
        self.tuple.depth_mm
    }

    pub fn intensity(&self) -> f64 {
        self.tuple.intensity
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateEvent {
    #[serde(rename = "pothole_id")]
    pub pothole: PotholeId,
    #[serde(rename = "vehicle_id")]
    pub vehicle: VehicleId,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOutcome {
    pub id: PotholeId,
    pub is_new: bool,
}

#[derive(Serialize, Deserialize)]
struct RecordRow {
    pothole_id: PotholeId,
    arc_id: ArcId,
    offset_m: f64,
    depth_mm: f64,
    intensity: f64,
    first_seen_ms: u64,
    last_seen_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    dedup_radius_m: f64,
    /// Arc lengths of the network the registry is bound to. `None` for a
    /// registry restored from CSV that has not been bound yet.
    arc_lengths: Option<BTreeMap<ArcId, f64>>,
    records: BTreeMap<PotholeId, PotholeRecord>,
    by_arc: BTreeMap<ArcId, Vec<PotholeId>>,
    events: Vec<UpdateEvent>,
    next_id: u64,
}

impl Registry {
    pub fn new(net: &StreetNetwork) -> Self {
        Self::with_radius(net, DEFAULT_DEDUP_RADIUS_M)
    }

    pub fn with_radius(net: &StreetNetwork, dedup_radius_m: f64) -> Self {
        Self {
            dedup_radius_m,
            arc_lengths: Some(Self::lengths_of(net)),
            records: BTreeMap::new(),
            by_arc: BTreeMap::new(),
            events: Vec::new(),
            next_id: 1,
        }
    }

    fn lengths_of(net: &StreetNetwork) -> BTreeMap<ArcId, f64> {
        net.arcs()
            .iter()
            .map(|a| (a.id.clone(), a.length_m))
            .collect()
    }

    pub fn dedup_radius_m(&self) -> f64 {
        self.dedup_radius_m
    }

    fn arc_length(&self, arc: &ArcId) -> Result<f64> {
        self.arc_lengths
            .as_ref()
            .and_then(|m| m.get(arc).copied())
            .ok_or_else(|| Error::UnknownArc(arc.to_string()))
    }

    /// Stores a report, merging it into an existing record on the same arc
    /// when one lies within the dedup radius (the nearest such record, lowest
    /// id on ties). A merge keeps the record's offset, raises its depth to the
    /// maximum of old and new, and takes the new intensity only when the
    /// depth increased.
    pub fn ingest_report(
        &mut self,
        report: &DetectionReport,
        vehicle: &VehicleId,
        now_ms: u64,
    ) -> Result<IngestOutcome> {
        let loc = &report.location;
        let length = self.arc_length(&loc.arc)?;
        if !(loc.offset_m.is_finite() && (0.0..=length).contains(&loc.offset_m)) {
            return Err(Error::OffsetOutOfRange {
                arc: loc.arc.to_string(),
                offset: loc.offset_m,
                length,
            });
        }
        if !(report.depth_mm.is_finite() && report.depth_mm >= 0.0) {
            return Err(Error::InvalidDepth(report.depth_mm));
        }
        if !report.intensity.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite intensity {}",
                report.intensity
            )));
        }

        let nearest = self
            .by_arc
            .get(&loc.arc)
            .into_iter()
            .flatten()
            .map(|id| {
                let dist = (self.records[id].offset_m() - loc.offset_m).abs();
                (dist, *id)
            })
            .filter(|(dist, _)| *dist <= self.dedup_radius_m)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let outcome = match nearest {
            Some((_, id)) => {
                let rec = self.records.get_mut(&id).expect("indexed record exists");
                if report.depth_mm > rec.tuple.depth_mm {
                    rec.tuple.depth_mm = report.depth_mm;
                    rec.tuple.intensity = report.intensity;
                }
                rec.last_seen_ms = rec.last_seen_ms.max(now_ms);
                IngestOutcome { id, is_new: false }
            }
            None => {
                let id = PotholeId(self.next_id);
                self.next_id += 1;
                self.records.insert(
                    id,
                    PotholeRecord {
                        id,
                        tuple: PotholeTuple {
                            depth_mm: report.depth_mm,
                            location: loc.clone(),
                            intensity: report.intensity,
                        },
                        first_seen_ms: now_ms,
                        last_seen_ms: now_ms,
                    },
                );
                self.by_arc.entry(loc.arc.clone()).or_default().push(id);
                IngestOutcome { id, is_new: true }
            }
        };

        self.events.push(UpdateEvent {
            pothole: outcome.id,
            vehicle: vehicle.clone(),
            timestamp_ms: now_ms,
        });
        Ok(outcome)
    }

    /// Records on an arc, in id order.
    pub fn potholes_on_arc(&self, arc: &ArcId) -> Result<Vec<&PotholeRecord>> {
        if self.arc_lengths.is_some() {
            self.arc_length(arc)?;
        }
        Ok(self
            .by_arc
            .get(arc)
            .into_iter()
            .flatten()
            .map(|id| &self.records[id])
            .collect())
    }

    pub fn lookup(&self, id: PotholeId) -> Result<&PotholeRecord> {
        self.records
            .get(&id)
            .ok_or_else(|| Error::UnknownPothole(id.to_string()))
    }

    pub fn records(&self) -> impl Iterator<Item = &PotholeRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn events(&self) -> &[UpdateEvent] {
        &self.events
    }

    /// Arcs that carry at least one record.
    pub fn arcs_with_potholes(&self) -> impl Iterator<Item = &ArcId> {
        self.by_arc.keys()
    }

    /// Binds a restored registry to a network, checking that every record
    /// lies on an existing arc within its length.
    pub fn bind(&mut self, net: &StreetNetwork) -> Result<()> {
        let lengths = Self::lengths_of(net);
        for rec in self.records.values() {
            let length = *lengths
                .get(rec.arc())
                .ok_or_else(|| Error::UnknownArc(rec.arc().to_string()))?;
            if rec.offset_m() > length {
                return Err(Error::OffsetOutOfRange {
                    arc: rec.arc().to_string(),
                    offset: rec.offset_m(),
                    length,
                });
            }
        }
        self.arc_lengths = Some(lengths);
        Ok(())
    }

    /// Registry dump: `pothole_id,arc_id,offset_m,depth_mm,intensity,first_seen_ms,last_seen_ms`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for rec in self.records.values() {
            w.serialize(RecordRow {
                pothole_id: rec.id,
                arc_id: rec.arc().clone(),
                offset_m: rec.offset_m(),
                depth_mm: rec.depth_mm(),
                intensity: rec.intensity(),
                first_seen_ms: rec.first_seen_ms,
                last_seen_ms: rec.last_seen_ms,
            })?;
        }
        if self.records.is_empty() {
            w.write_record([
                "pothole_id",
                "arc_id",
                "offset_m",
                "depth_mm",
                "intensity",
                "first_seen_ms",
                "last_seen_ms",
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Restores records from a registry dump. The result is unbound; call
    /// [`Registry::bind`] before ingesting into it.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut reg = Self {
            dedup_radius_m: DEFAULT_DEDUP_RADIUS_M,
            arc_lengths: None,
            records: BTreeMap::new(),
            by_arc: BTreeMap::new(),
            events: Vec::new(),
            next_id: 1,
        };
        for row in rdr.deserialize() {
            let row: RecordRow = row.map_err(|e| Error::Parse(e.to_string()))?;
            if !(row.offset_m.is_finite() && row.offset_m >= 0.0) {
                return Err(Error::Validation(format!(
                    "pothole {} has invalid offset {}",
                    row.pothole_id, row.offset_m
                )));
            }
            if !(row.depth_mm.is_finite() && row.depth_mm >= 0.0) {
                return Err(Error::InvalidDepth(row.depth_mm));
            }
            if row.last_seen_ms < row.first_seen_ms {
                return Err(Error::Validation(format!(
                    "pothole {} last seen before first seen",
                    row.pothole_id
                )));
            }
            if reg.records.contains_key(&row.pothole_id) {
                return Err(Error::Validation(format!(
                    "duplicate pothole id {}",
                    row.pothole_id
                )));
            }
            reg.next_id = reg.next_id.max(row.pothole_id.0 + 1);
            reg.by_arc
                .entry(row.arc_id.clone())
                .or_default()
                .push(row.pothole_id);
            reg.records.insert(
                row.pothole_id,
                PotholeRecord {
                    id: row.pothole_id,
                    tuple: PotholeTuple {
                        depth_mm: row.depth_mm,
                        location: Location::new(row.arc_id, row.offset_m),
                        intensity: row.intensity,
                    },
                    first_seen_ms: row.first_seen_ms,
                    last_seen_ms: row.last_seen_ms,
                },
            );
        }
        for ids in reg.by_arc.values_mut() {
            ids.sort();
        }
        Ok(reg)
    }

    /// Update log dump: `pothole_id,vehicle_id,timestamp_ms`.
    pub fn write_events_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for ev in &self.events {
            w.serialize(ev)?;
        }
        if self.events.is_empty() {
            w.write_record(["pothole_id", "vehicle_id", "timestamp_ms"])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Appends a stored update log. Every event must name a known pothole.
    pub fn read_events_csv<R: Read>(&mut self, reader: R) -> Result<()> {
        let mut rdr = csv::Reader::from_reader(reader);
        for row in rdr.deserialize() {
            let ev: UpdateEvent = row.map_err(|e| Error::Parse(e.to_string()))?;
            self.lookup(ev.pothole)?;
            self.events.push(ev);
        }
        Ok(())
    }
}
