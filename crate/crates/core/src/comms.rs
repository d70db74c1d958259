//! Vehicle communications: single-hop warnings to vehicles within radio
//! range, and opportunistic uplink through open access points.
//!
//! A vehicle's AP connection walks SCANNING -> ASSOCIATING ->
//! AUTHENTICATING -> CONNECTED, one request/response exchange per phase.
//! Any phase past SCANNING that hears nothing from its AP for more than the
//! loss timeout drops to LOST, and LOST immediately goes back to SCANNING.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geocrypto::ReportEnvelope;
use crate::ids::{ApId, ArcId, NodeId, PotholeId, VehicleId};
use crate::network::StreetNetwork;
use crate::registry::{IngestOutcome, Location};
use crate::routing::{Position, RoutingSession};
use crate::server::Server;

/// Vehicles within this distance of a detecting vehicle are warned.
pub const P2P_RANGE_M: f64 = 20.0;
/// Silence after which a connection is declared lost.
pub const LOSS_TIMEOUT_MS: u64 = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommsConfig {
    pub p2p_range_m: f64,
    pub loss_timeout_ms: u64,
    /// Duration of one request/response exchange (scan, associate,
    /// authenticate).
    pub phase_latency_ms: u64,
    /// Envelopes transferred per uplink event.
    pub transfer_budget: usize,
    /// Spacing of uplink events while a queue is draining.
    pub transfer_interval_ms: u64,
}

impl Default for CommsConfig {
    fn default() -> Self {
        Self {
            p2p_range_m: P2P_RANGE_M,
            loss_timeout_ms: LOSS_TIMEOUT_MS,
            phase_latency_ms: 100,
            transfer_budget: 4,
            transfer_interval_ms: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessPoint {
    pub id: ApId,
    pub x: f64,
    pub y: f64,
    pub range_m: f64,
    #[serde(default = "default_open")]
    pub open: bool,
}

fn default_open() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Scanning,
    Associating,
    Authenticating,
    Connected,
    Lost,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Scanning => "SCANNING",
            Phase::Associating => "ASSOCIATING",
            Phase::Authenticating => "AUTHENTICATING",
            Phase::Connected => "CONNECTED",
            Phase::Lost => "LOST",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionState {
    pub phase: Phase,
    /// Last time anything was heard from the AP; for SCANNING, the start of
    /// the current scan.
    pub last_activity_ms: u64,
    pub peer: Option<ApId>,
}

impl ConnectionState {
    pub fn scanning(now_ms: u64) -> Self {
        Self {
            phase: Phase::Scanning,
            last_activity_ms: now_ms,
            peer: None,
        }
    }

    pub fn is_connected(&self) -> bool {
        self.phase == Phase::Connected
    }

    fn timed_out(&self, now_ms: u64, cfg: &CommsConfig) -> bool {
        now_ms.saturating_sub(self.last_activity_ms) > cfg.loss_timeout_ms
    }
}

/// Advances the connection by at most one phase.
///
/// `visible` is what the radio hears right now: while scanning, the first
/// open AP in range; in later phases, the peer AP if it is still in range.
pub fn step_connection(
    conn: &ConnectionState,
    visible: Option<&ApId>,
    now_ms: u64,
    cfg: &CommsConfig,
) -> ConnectionState {
    let elapsed = now_ms.saturating_sub(conn.last_activity_ms);
    match conn.phase {
        Phase::Lost => ConnectionState::scanning(now_ms),
        Phase::Scanning => match visible {
            _ if elapsed < cfg.phase_latency_ms => conn.clone(),
            Some(ap) => ConnectionState {
                phase: Phase::Associating,
                last_activity_ms: now_ms,
                peer: Some(ap.clone()),
            },
            None => ConnectionState::scanning(now_ms),
        },
        Phase::Associating | Phase::Authenticating | Phase::Connected => {
            if conn.timed_out(now_ms, cfg) {
                return ConnectionState {
                    phase: Phase::Lost,
                    last_activity_ms: conn.last_activity_ms,
                    peer: conn.peer.clone(),
                };
            }
            if visible.is_none() || visible != conn.peer.as_ref() {
                return conn.clone();
            }
            let phase = match conn.phase {
                Phase::Connected => Phase::Connected,
                _ if elapsed < cfg.phase_latency_ms => return conn.clone(),
                Phase::Associating => Phase::Authenticating,
                _ => Phase::Connected,
            };
            ConnectionState {
                phase,
                last_activity_ms: now_ms,
                peer: conn.peer.clone(),
            }
        }
    }
}

/// Identity of a warned-about pothole in a vehicle's warning cache.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum WarningKey {
    Minted(PotholeId),
    /// Not yet registered: arc plus offset rounded to the millimeter.
    Candidate {
        arc: ArcId,
        offset_mm: i64,
    },
}

impl WarningKey {
    pub fn candidate(loc: &Location) -> Self {
        WarningKey::Candidate {
            arc: loc.arc.clone(),
            offset_mm: (loc.offset_m * 1000.0).round() as i64,
        }
    }
}

impl fmt::Display for WarningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WarningKey::Minted(id) => write!(f, "pothole={id}"),
            WarningKey::Candidate { arc, offset_mm } => {
                write!(f, "arc={arc} offset_mm={offset_mm}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub seq: u64,
    pub envelope: ReportEnvelope,
    pub location: Location,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    pub speed_mps: f64,
    pub session: RoutingSession,
    pub outbox: VecDeque<Outbound>,
    pub warnings: BTreeSet<WarningKey>,
    pub conn: ConnectionState,
    /// Remaining waypoints after the current destination.
    pub waypoints: VecDeque<NodeId>,
    /// Arcs still to drive after the current one.
    pub plan: VecDeque<ArcId>,
    /// Offset on the current arc up to which the road has been scanned.
    pub swept_from_m: f64,
    pub parked: bool,
}

impl VehicleState {
    pub fn new(id: VehicleId, speed_mps: f64, position: Position) -> Self {
        let swept_from_m = match &position {
            Position::OnArc { offset_m, .. } => *offset_m,
            Position::AtNode(_) => 0.0,
        };
        Self {
            id,
            speed_mps,
            session: RoutingSession::new(position),
            outbox: VecDeque::new(),
            warnings: BTreeSet::new(),
            conn: ConnectionState::scanning(0),
            waypoints: VecDeque::new(),
            plan: VecDeque::new(),
            swept_from_m,
            parked: false,
        }
    }

    /// Planar position, with arcs treated as straight segments.
    pub fn xy(&self, net: &StreetNetwork) -> Result<(f64, f64)> {
        match self.session.position() {
            Position::AtNode(n) => net.node(n).map(|n| (n.x, n.y)),
            Position::OnArc { arc, offset_m } => Ok(net.point_on_arc(net.arc_idx(arc)?, *offset_m)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct World {
    pub vehicles: BTreeMap<VehicleId, VehicleState>,
    /// Ordered by id; scanning picks the first open AP in range.
    pub aps: Vec<AccessPoint>,
    pub cfg: CommsConfig,
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

impl World {
    pub fn new(mut aps: Vec<AccessPoint>, cfg: CommsConfig) -> Self {
        aps.sort_by(|a, b| a.id.cmp(&b.id));
        Self {
            vehicles: BTreeMap::new(),
            aps,
            cfg,
        }
    }

    pub fn add_vehicle(&mut self, vehicle: VehicleState) {
        self.vehicles.insert(vehicle.id.clone(), vehicle);
    }

    pub fn vehicle(&self, id: &VehicleId) -> Result<&VehicleState> {
        self.vehicles
            .get(id)
            .ok_or_else(|| Error::UnknownVehicle(id.to_string()))
    }

    pub fn vehicle_mut(&mut self, id: &VehicleId) -> Result<&mut VehicleState> {
        self.vehicles
            .get_mut(id)
            .ok_or_else(|| Error::UnknownVehicle(id.to_string()))
    }

    fn ap_in_range(&self, ap: &AccessPoint, pos: (f64, f64)) -> bool {
        distance((ap.x, ap.y), pos) <= ap.range_m
    }

    /// What the vehicle's radio hears, in the sense of [`step_connection`].
    pub fn visible_ap(&self, net: &StreetNetwork, vehicle: &VehicleId) -> Result<Option<ApId>> {
        let v = self.vehicle(vehicle)?;
        let pos = v.xy(net)?;
        Ok(match (&v.conn.phase, &v.conn.peer) {
            (Phase::Scanning | Phase::Lost, _) | (_, None) => self
                .aps
                .iter()
                .find(|ap| ap.open && self.ap_in_range(ap, pos))
                .map(|ap| ap.id.clone()),
            (_, Some(peer)) => self
                .aps
                .iter()
                .find(|ap| &ap.id == peer && self.ap_in_range(ap, pos))
                .map(|ap| ap.id.clone()),
        })
    }
}

/// Warns every other vehicle within P2P range of the sender. Receivers add
/// the warning to their cache and do not forward it.
pub fn p2p_broadcast(
    world: &mut World,
    net: &StreetNetwork,
    sender: &VehicleId,
    warning: &WarningKey,
) -> Result<Vec<VehicleId>> {
    let origin = world.vehicle(sender)?.xy(net)?;
    let range = world.cfg.p2p_range_m;
    let mut receivers = Vec::new();
    for (id, v) in world.vehicles.iter_mut() {
        if id == sender {
            continue;
        }
        if distance(v.xy(net)?, origin) <= range {
            v.warnings.insert(warning.clone());
            receivers.push(id.clone());
        }
    }
    Ok(receivers)
}

/// One delivered envelope and what the server made of it.
#[derive(Debug)]
pub struct Delivery {
    pub seq: u64,
    pub outcome: Result<IngestOutcome>,
}

/// Transfers up to the configured budget of queued envelopes to the server.
/// Delivers nothing unless the connection is CONNECTED, not timed out, and
/// the peer AP is in range. Each transferred envelope leaves the queue,
/// whether or not the server accepts it.
pub fn uplink(
    world: &mut World,
    net: &StreetNetwork,
    server: &mut Server,
    vehicle: &VehicleId,
    now_ms: u64,
) -> Result<Vec<Delivery>> {
    let cfg = world.cfg;
    let visible = world.visible_ap(net, vehicle)?;
    let v = world.vehicle_mut(vehicle)?;
    if !v.conn.is_connected() || v.conn.timed_out(now_ms, &cfg) || visible != v.conn.peer {
        return Ok(Vec::new());
    }
    let mut delivered = Vec::new();
    while delivered.len() < cfg.transfer_budget {
        let Some(out) = v.outbox.pop_front() else {
            break;
        };
        let outcome = server.receive_envelope(&out.envelope, &out.location, now_ms);
        delivered.push(Delivery {
            seq: out.seq,
            outcome,
        });
    }
    if !delivered.is_empty() {
        v.conn.last_activity_ms = now_ms;
    }
    Ok(delivered)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{DepthMap, IntensityImage};
    use crate::geocrypto::{encrypt, PlainReport, SharedKey};
    use crate::network::{Arc, Node};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> CommsConfig {
        CommsConfig::default()
    }

    fn state(phase: Phase, last: u64) -> ConnectionState {
        ConnectionState {
            phase,
            last_activity_ms: last,
            peer: Some("ap".into()),
        }
    }

    #[test]
    fn silence_over_timeout_loses_connection() {
        let ap: ApId = "ap".into();
        let lost = step_connection(&state(Phase::Connected, 0), None, 600, &cfg());
        assert_eq!(lost.phase, Phase::Lost);
        let kept = step_connection(&state(Phase::Connected, 0), None, 400, &cfg());
        assert_eq!(kept.phase, Phase::Connected);
        assert_eq!(kept.last_activity_ms, 0);
        let boundary = step_connection(&state(Phase::Connected, 0), None, 500, &cfg());
        assert_eq!(boundary.phase, Phase::Connected);
        let over = step_connection(&state(Phase::Connected, 0), Some(&ap), 501, &cfg());
        assert_eq!(over.phase, Phase::Lost);
        assert_eq!(
            step_connection(&over, None, 501, &cfg()).phase,
            Phase::Scanning
        );
    }

    #[test]
    fn lifecycle_advances_in_order() {
        let ap: ApId = "ap".into();
        let c = &cfg();
        let s0 = ConnectionState::scanning(0);
        assert_eq!(step_connection(&s0, Some(&ap), 50, c), s0);
        let s1 = step_connection(&s0, Some(&ap), 100, c);
        assert_eq!(
            (s1.phase, s1.peer.clone()),
            (Phase::Associating, Some(ap.clone()))
        );
        let s2 = step_connection(&s1, Some(&ap), 200, c);
        assert_eq!(s2.phase, Phase::Authenticating);
        let s3 = step_connection(&s2, Some(&ap), 300, c);
        assert_eq!(s3.phase, Phase::Connected);
        let s4 = step_connection(&s3, Some(&ap), 350, c);
        assert_eq!((s4.phase, s4.last_activity_ms), (Phase::Connected, 350));
    }

    #[test]
    fn no_progress_without_the_peer() {
        let other: ApId = "other".into();
        let c = &cfg();
        let auth = state(Phase::Authenticating, 0);
        assert_eq!(step_connection(&auth, None, 200, c), auth);
        assert_eq!(step_connection(&auth, Some(&other), 200, c), auth);
        let idle = step_connection(&ConnectionState::scanning(0), None, 100, c);
        assert_eq!(idle, ConnectionState::scanning(100));
    }

    fn world_on_line(positions: &[(&str, f64)]) -> (World, StreetNetwork) {
        let net = StreetNetwork::new(
            vec![
                Node {
                    id: "w".into(),
                    x: 0.0,
                    y: 0.0,
                },
                Node {
                    id: "e".into(),
                    x: 100.0,
                    y: 0.0,
                },
            ],
            vec![Arc {
                id: "we".into(),
                tail: "w".into(),
                head: "e".into(),
                length_m: 100.0,
            }],
        )
        .unwrap();
        let mut world = World::new(
            vec![AccessPoint {
                id: "ap".into(),
                x: 0.0,
                y: 0.0,
                range_m: 30.0,
                open: true,
            }],
            cfg(),
        );
        for (id, offset) in positions {
            world.add_vehicle(VehicleState::new(
                (*id).into(),
                10.0,
                Position::OnArc {
                    arc: "we".into(),
                    offset_m: *offset,
                },
            ));
        }
        (world, net)
    }

    #[test]
    fn broadcast_range_is_closed_at_twenty_meters() {
        let (mut world, net) =
            world_on_line(&[("s", 50.0), ("near", 65.0), ("far", 25.0), ("edge", 70.0)]);
        let key = WarningKey::candidate(&Location::new("we", 50.0));
        let got = p2p_broadcast(&mut world, &net, &"s".into(), &key).unwrap();
        assert_eq!(got, vec![VehicleId::from("edge"), VehicleId::from("near")]);
        assert!(world
            .vehicle(&"near".into())
            .unwrap()
            .warnings
            .contains(&key));
        assert!(world.vehicle(&"far".into()).unwrap().warnings.is_empty());
        assert!(world.vehicle(&"s".into()).unwrap().warnings.is_empty());

        let before = world.clone();
        p2p_broadcast(&mut world, &net, &"s".into(), &key).unwrap();
        assert_eq!(world, before);

        assert!(matches!(
            p2p_broadcast(&mut world, &net, &"ghost".into(), &key),
            Err(Error::UnknownVehicle(_))
        ));
    }

    fn queued(world: &mut World, vehicle: &str, n: usize, key: &SharedKey) {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let v = world.vehicle_mut(&vehicle.into()).unwrap();
        for i in 0..n {
            let loc = Location::new("we", 10.0 * i as f64 + 5.0);
            let plain = PlainReport {
                depth_map: DepthMap {
                    rows: 1,
                    cols: 1,
                    cell_m: 0.5,
                    depths: vec![20.0],
                },
                intensity: IntensityImage {
                    rows: 1,
                    cols: 1,
                    values: vec![0.5],
                },
                location: loc.clone(),
                vehicle: vehicle.into(),
                timestamp_ms: 0,
            };
            v.outbox.push_back(Outbound {
                seq: i as u64,
                envelope: encrypt(&plain, key, &mut rng),
                location: loc,
            });
        }
    }

    #[test]
    fn uplink_drains_within_budget() {
        let key = SharedKey::new([1; 32]);
        let (mut world, net) = world_on_line(&[("v", 10.0)]);
        let mut server = Server::new(&net, key.clone()).unwrap();
        queued(&mut world, "v", 3, &key);

        let v: VehicleId = "v".into();
        assert!(uplink(&mut world, &net, &mut server, &v, 0)
            .unwrap()
            .is_empty());

        world.vehicle_mut(&v).unwrap().conn = state(Phase::Connected, 0);
        let got = uplink(&mut world, &net, &mut server, &v, 100).unwrap();
        assert_eq!(got.len(), 3);
        assert!(got.iter().all(|d| d.outcome.as_ref().unwrap().is_new));
        assert!(world.vehicle(&v).unwrap().outbox.is_empty());
        assert_eq!(server.registry().len(), 3);
    }

    #[test]
    fn lost_connection_keeps_remainder_queued() {
        let key = SharedKey::new([1; 32]);
        let (mut world, net) = world_on_line(&[("v", 10.0)]);
        let mut server = Server::new(&net, key.clone()).unwrap();
        queued(&mut world, "v", 10, &key);
        let v: VehicleId = "v".into();
        world.vehicle_mut(&v).unwrap().conn = state(Phase::Connected, 0);

        assert_eq!(
            uplink(&mut world, &net, &mut server, &v, 0).unwrap().len(),
            4
        );
        // vehicle drives out of the AP's 30 m range and hears nothing more
        world.vehicle_mut(&v).unwrap().session.set_offset(60.0);
        assert!(uplink(&mut world, &net, &mut server, &v, 100)
            .unwrap()
            .is_empty());
        let conn = world.vehicle(&v).unwrap().conn.clone();
        let lost = step_connection(&conn, None, 501, &world.cfg);
        assert_eq!(lost.phase, Phase::Lost);
        world.vehicle_mut(&v).unwrap().conn = lost;
        assert!(uplink(&mut world, &net, &mut server, &v, 600)
            .unwrap()
            .is_empty());

        let left: Vec<u64> = world
            .vehicle(&v)
            .unwrap()
            .outbox
            .iter()
            .map(|o| o.seq)
            .collect();
        assert_eq!(left, (4..10).collect::<Vec<_>>());
        assert_eq!(server.registry().len(), 4);
    }

    #[test]
    fn scanning_sees_first_open_ap() {
        let (mut world, net) = world_on_line(&[("v", 10.0)]);
        world.aps.insert(
            0,
            AccessPoint {
                id: "aa-closed".into(),
                x: 10.0,
                y: 0.0,
                range_m: 50.0,
                open: false,
            },
        );
        assert_eq!(
            world.visible_ap(&net, &"v".into()).unwrap(),
            Some(ApId::from("ap"))
        );
        world
            .vehicle_mut(&"v".into())
            .unwrap()
            .session
            .set_offset(40.0);
        assert_eq!(world.visible_ap(&net, &"v".into()).unwrap(), None);
    }
}
