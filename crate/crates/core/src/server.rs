//! Central server: decrypts uploaded envelopes, stores potholes, keeps the
//! weighted network in step with the registry and answers route and road
//! condition queries.
//!
//! Commands are processed one at a time, so every response reflects exactly
//! one registry/weights snapshot, identified by a sequence number that
//! increments with each accepted envelope.

use std::str::FromStr;

use log::debug;

use crate::detection::column_profile;
use crate::error::{Error, Result};
use crate::geocrypto::{decrypt, PlainReport, ReportEnvelope, SharedKey};
use crate::ids::{ArcId, NodeId, PotholeId};
use crate::network::StreetNetwork;
use crate::registry::{DetectionReport, IngestOutcome, PotholeRecord, Registry};
use crate::routing::{route, Route};
use crate::weighting::{preprocess, WeightedNetwork};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServerStats {
    pub envelopes_accepted: u64,
    pub envelopes_dropped: u64,
    pub queries_answered: u64,
    pub queries_failed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    Route { source: NodeId, dest: NodeId },
    Condition { arc: ArcId },
}

impl FromStr for Query {
    type Err = Error;

    /// `route <source> <dest>` or `condition <arc>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        match parts.as_slice() {
            ["route", source, dest] => Ok(Query::Route {
                source: (*source).into(),
                dest: (*dest).into(),
            }),
            ["condition", arc] => Ok(Query::Condition { arc: (*arc).into() }),
            _ => Err(Error::MalformedRequest(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Answer {
    Route(Route),
    Condition {
        arc: ArcId,
        weight: f64,
        potholes: Vec<PotholeRecord>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub snapshot: u64,
    pub answer: Answer,
}

/// Depth and intensity carried by a decrypted report: the deepest cell and
/// the mean longitudinal intensity, exactly as extraction computed them.
pub fn summarize(report: &PlainReport) -> Result<DetectionReport> {
    let profile = column_profile(&report.depth_map, &report.intensity)?;
    if profile.is_empty() {
        return Err(Error::Validation(
            "report carries an empty depth map".into(),
        ));
    }
    let depth_mm = profile.iter().map(|p| p.0).fold(0.0, f64::max);
    let intensity = profile.iter().map(|p| p.1).sum::<f64>() / profile.len() as f64;
    Ok(DetectionReport {
        location: report.location.clone(),
        depth_mm,
        intensity,
    })
}

#[derive(Debug, Clone)]
pub struct Server {
    key: SharedKey,
    registry: Registry,
    wnet: WeightedNetwork,
    stats: ServerStats,
    snapshot: u64,
}

impl Server {
    pub fn new(net: &StreetNetwork, key: SharedKey) -> Result<Self> {
        let registry = Registry::new(net);
        Self::with_registry(net, registry, key)
    }

    pub fn with_registry(net: &StreetNetwork, registry: Registry, key: SharedKey) -> Result<Self> {
        let wnet = preprocess(net, &registry)?;
        Ok(Self {
            key,
            registry,
            wnet,
            stats: ServerStats::default(),
            snapshot: 0,
        })
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn weighted(&self) -> &WeightedNetwork {
        &self.wnet
    }

    pub fn stats(&self) -> ServerStats {
        self.stats
    }

    pub fn snapshot(&self) -> u64 {
        self.snapshot
    }

    /// Decrypts an envelope, stores the pothole it reports and re-weights
    /// the affected arc. Envelopes that fail decryption are dropped and
    /// counted; the registry is left untouched.
    pub fn receive_envelope(
        &mut self,
        env: &ReportEnvelope,
        claimed: &crate::registry::Location,
        now_ms: u64,
    ) -> Result<IngestOutcome> {
        let plain = match decrypt(env, &self.key, claimed) {
            Ok(p) => p,
            Err(err) => {
                self.stats.envelopes_dropped += 1;
                debug!("dropping envelope: {err}");
                return Err(err.into());
            }
        };
        let report = match summarize(&plain) {
            Ok(r) => r,
            Err(err) => {
                self.stats.envelopes_dropped += 1;
                return Err(err);
            }
        };
        let outcome = self
            .registry
            .ingest_report(&report, &plain.vehicle, now_ms)?;
        self.wnet
            .apply_update(&report.location.arc, &self.registry)?;
        self.stats.envelopes_accepted += 1;
        self.snapshot += 1;
        Ok(outcome)
    }

    pub fn query(&mut self, request: &Query) -> Result<Response> {
        let answer = match request {
            Query::Route { source, dest } => route(&self.wnet, source, dest).map(Answer::Route),
            Query::Condition { arc } => self.condition(arc),
        };
        match answer {
            Ok(answer) => {
                self.stats.queries_answered += 1;
                Ok(Response {
                    snapshot: self.snapshot,
                    answer,
                })
            }
            Err(err) => {
                self.stats.queries_failed += 1;
                Err(err)
            }
        }
    }

    /// Parses and answers a textual request.
    pub fn query_str(&mut self, request: &str) -> Result<Response> {
        match request.parse::<Query>() {
            Ok(q) => self.query(&q),
            Err(err) => {
                self.stats.queries_failed += 1;
                Err(err)
            }
        }
    }

    fn condition(&self, arc: &ArcId) -> Result<Answer> {
        let weight = self.wnet.weight(arc)?;
        let potholes = self
            .registry
            .potholes_on_arc(arc)?
            .into_iter()
            .cloned()
            .collect();
        Ok(Answer::Condition {
            arc: arc.clone(),
            weight,
            potholes,
        })
    }

    pub fn lookup(&self, id: PotholeId) -> Result<&PotholeRecord> {
        self.registry.lookup(id)
    }
}
