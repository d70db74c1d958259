//! Deterministic discrete-event simulation of a scenario: vehicles drive and
//! scan the road, warn their neighbours, upload sealed reports through
//! access points, and re-route on the weights the server maintains.
//!
//! Events run in timestamp order, ties in scheduling order. Nothing at or
//! after the scenario duration is processed. All randomness (the shared key
//! and envelope nonces) comes from one ChaCha stream seeded by the scenario.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::comms::{
    self, step_connection, CommsConfig, ConnectionState, Outbound, Phase, VehicleState, WarningKey,
    World,
};
use crate::detection::{
    extract_runs, sweep, GroundTruthSurface, SweepConfig, WindowOrigin, DEFAULT_THRESHOLD_MM,
};
use crate::error::{Error, Result};
use crate::geocrypto::{encrypt, PlainReport, SharedKey};
use crate::ids::{ArcId, NodeId, VehicleId};
use crate::maintenance::{priority_report, write_report_csv, PriorityEntry};
use crate::network::StreetNetwork;
use crate::registry::Registry;
use crate::routing::{Guidance, Position};
use crate::scenario::{Scenario, TimedKind};
use crate::server::Server;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub threshold_mm: f64,
    pub sweep: SweepConfig,
    pub comms: CommsConfig,
    /// Movement and radio step.
    pub tick_ms: u64,
    /// Overrides the scenario's seed.
    pub seed: Option<u64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            threshold_mm: DEFAULT_THRESHOLD_MM,
            sweep: SweepConfig::default(),
            comms: CommsConfig::default(),
            tick_ms: 100,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum EventKind {
    DestChange {
        vehicle: VehicleId,
        dest: Option<NodeId>,
        from_waypoints: bool,
    },
    Move(VehicleId),
    Detect(VehicleId),
    P2pBroadcast {
        vehicle: VehicleId,
        warning: WarningKey,
    },
    PhaseTimeout(VehicleId),
    Uplink(VehicleId),
}

#[derive(Debug, PartialEq, Eq)]
struct Scheduled {
    t_ms: u64,
    seq: u64,
    kind: EventKind,
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.t_ms, self.seq).cmp(&(other.t_ms, other.seq))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub struct Simulation {
    cfg: SimConfig,
    duration_ms: u64,
    net: StreetNetwork,
    key: SharedKey,
    server: Server,
    world: World,
    surfaces: BTreeMap<ArcId, GroundTruthSurface>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    next_seq: u64,
    next_outbound: u64,
    rng: ChaCha8Rng,
    trace: String,
    routes: BTreeMap<VehicleId, String>,
    uplink_pending: BTreeSet<VehicleId>,
}

/// Everything a finished run leaves behind.
pub struct SimOutput {
    pub duration_ms: u64,
    pub trace: String,
    /// Guidance log per vehicle.
    pub routes: BTreeMap<VehicleId, String>,
    pub server: Server,
}

impl SimOutput {
    pub fn registry(&self) -> &Registry {
        self.server.registry()
    }

    /// Repair priorities as of the end of the run.
    pub fn maintenance(&self) -> Vec<PriorityEntry> {
        priority_report(self.registry(), self.duration_ms)
    }

    /// Writes `trace.txt`, `routes/<vehicle>.txt`, `registry.csv`,
    /// `events.csv`, `weighted.csv` and `maintenance.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let routes = dir.join("routes");
        fs::create_dir_all(&routes)?;
        fs::write(dir.join("trace.txt"), &self.trace)?;
        for (id, text) in &self.routes {
            fs::write(routes.join(format!("{id}.txt")), text)?;
        }
        self.registry()
            .write_csv(fs::File::create(dir.join("registry.csv"))?)?;
        self.registry()
            .write_events_csv(fs::File::create(dir.join("events.csv"))?)?;
        self.server
            .weighted()
            .write_csv(fs::File::create(dir.join("weighted.csv"))?)?;
        write_report_csv(
            &self.maintenance(),
            fs::File::create(dir.join("maintenance.csv"))?,
        )?;
        Ok(())
    }
}

fn join_ids<T: std::fmt::Display>(ids: &[T]) -> String {
    if ids.is_empty() {
        return "-".into();
    }
    ids.iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn file_safe(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

impl Simulation {
    pub fn new(net: &StreetNetwork, scenario: &Scenario, cfg: SimConfig) -> Result<Self> {
        let surfaces = scenario.validate(net)?;
        if let Some(v) = scenario.vehicles.iter().find(|v| !file_safe(v.id.as_str())) {
            return Err(Error::Validation(format!(
                "vehicle id `{}` must be alphanumeric, `-`, `_` or `.`",
                v.id
            )));
        }
        if cfg.tick_ms == 0 {
            return Err(Error::Validation("tick must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.unwrap_or(scenario.seed));
        let key = SharedKey::random(&mut rng);
        let mut sim = Self {
            cfg,
            duration_ms: scenario.duration_ms,
            net: net.clone(),
            server: Server::new(net, key.clone())?,
            key,
            world: World::new(scenario.access_points.clone(), cfg.comms),
            surfaces,
            queue: BinaryHeap::new(),
            next_seq: 0,
            next_outbound: 0,
            rng,
            trace: String::new(),
            routes: BTreeMap::new(),
            uplink_pending: BTreeSet::new(),
        };

        for spec in &scenario.vehicles {
            let mut v = VehicleState::new(
                spec.id.clone(),
                spec.speed_mps,
                Position::OnArc {
                    arc: spec.start_arc.clone(),
                    offset_m: spec.start_offset_m,
                },
            );
            v.waypoints = spec.waypoints.iter().cloned().collect();
            let first = v.waypoints.pop_front();
            sim.world.add_vehicle(v);
            sim.routes.insert(spec.id.clone(), String::new());
            if let Some(dest) = first {
                sim.schedule(
                    0,
                    EventKind::DestChange {
                        vehicle: spec.id.clone(),
                        dest: Some(dest),
                        from_waypoints: true,
                    },
                );
            }
            sim.schedule(cfg.tick_ms, EventKind::Move(spec.id.clone()));
        }
        for ev in &scenario.events {
            let kind = match ev.kind {
                TimedKind::DestChange => EventKind::DestChange {
                    vehicle: ev.vehicle.clone(),
                    dest: ev.node.clone(),
                    from_waypoints: false,
                },
                TimedKind::Sweep => EventKind::Detect(ev.vehicle.clone()),
            };
            sim.schedule(ev.t_ms, kind);
        }
        Ok(sim)
    }

    pub fn run(mut self) -> Result<SimOutput> {
        while let Some(Reverse(ev)) = self.queue.pop() {
            if ev.t_ms >= self.duration_ms {
                break;
            }
            self.handle(ev.t_ms, ev.kind)?;
        }
        Ok(SimOutput {
            duration_ms: self.duration_ms,
            trace: self.trace,
            routes: self.routes,
            server: self.server,
        })
    }

    fn schedule(&mut self, t_ms: u64, kind: EventKind) {
        if t_ms >= self.duration_ms {
            return;
        }
        self.queue.push(Reverse(Scheduled {
            t_ms,
            seq: self.next_seq,
            kind,
        }));
        self.next_seq += 1;
    }

    fn log(&mut self, t_ms: u64, kind: &str, details: std::fmt::Arguments<'_>) {
        let _ = writeln!(self.trace, "t={t_ms} {kind} {details}");
    }

    fn vehicle(&mut self, id: &VehicleId) -> Result<&mut VehicleState> {
        self.world.vehicle_mut(id)
    }

    fn handle(&mut self, now: u64, kind: EventKind) -> Result<()> {
        match kind {
            EventKind::DestChange {
                vehicle,
                dest,
                from_waypoints,
            } => self.on_dest_change(now, &vehicle, dest, from_waypoints),
            EventKind::Move(vehicle) => self.on_move(now, &vehicle),
            EventKind::Detect(vehicle) => self.detect(now, &vehicle),
            EventKind::P2pBroadcast { vehicle, warning } => {
                let receivers =
                    comms::p2p_broadcast(&mut self.world, &self.net, &vehicle, &warning)?;
                self.log(
                    now,
                    "P2P_BROADCAST",
                    format_args!("{vehicle} {warning} receivers={}", join_ids(&receivers)),
                );
                Ok(())
            }
            EventKind::PhaseTimeout(vehicle) => self.on_timeout(now, &vehicle),
            EventKind::Uplink(vehicle) => self.on_uplink(now, &vehicle),
        }
    }

    fn note_route(&mut self, now: u64, id: &VehicleId, guidance: &Guidance) {
        let wnet = self.server.weighted();
        let log = self.routes.entry(id.clone()).or_default();
        match guidance {
            Guidance::Route(r) => {
                let _ = writeln!(log, "# t={now} route {} -> {}", r.source, r.dest);
                log.push_str(&r.trace(wnet));
            }
            Guidance::ArcWeight { arc, weight } => {
                let _ = writeln!(log, "# t={now} arc {arc} weight {weight}");
            }
            Guidance::Arrived(n) => {
                let _ = writeln!(log, "# t={now} arrived {n}");
            }
            Guidance::Idle | Guidance::Unchanged => {}
        }
    }

    fn on_dest_change(
        &mut self,
        now: u64,
        id: &VehicleId,
        dest: Option<NodeId>,
        from_waypoints: bool,
    ) -> Result<()> {
        let shown = dest.as_ref().map_or("-".to_string(), |d| d.to_string());
        let wnet = self.server.weighted();
        let v = self.world.vehicle_mut(id)?;
        if !from_waypoints {
            v.waypoints.clear();
        }
        let guidance = match v.session.modify_destination(wnet, dest) {
            Ok(g) => g,
            Err(Error::Unreachable { .. }) => {
                self.log(
                    now,
                    "DEST_CHANGE",
                    format_args!("{id} dest={shown} unreachable"),
                );
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        match &guidance {
            Guidance::Route(r) => {
                v.plan = r.arcs.iter().cloned().collect();
                v.parked = false;
            }
            Guidance::Unchanged => {
                self.log(
                    now,
                    "DEST_CHANGE",
                    format_args!("{id} dest={shown} unchanged"),
                );
                return Ok(());
            }
            _ => {
                v.plan.clear();
                v.parked = false;
            }
        }
        let arcs: Vec<ArcId> = v.plan.iter().cloned().collect();
        let at_node = match v.session.position() {
            Position::AtNode(n) => Some(n.clone()),
            Position::OnArc { .. } => None,
        };
        self.log(
            now,
            "DEST_CHANGE",
            format_args!("{id} dest={shown} arcs={}", join_ids(&arcs)),
        );
        self.note_route(now, id, &guidance);
        // a new destination equal to the current node is reached at once
        if let (Some(node), Guidance::Route(r)) = (at_node, &guidance) {
            if r.arcs.is_empty() {
                self.cross(now, id, &node)?;
            }
        }
        Ok(())
    }

    fn on_move(&mut self, now: u64, id: &VehicleId) -> Result<()> {
        let tick = self.cfg.tick_ms;
        let v = self.vehicle(id)?;
        let mut remaining = v.speed_mps * tick as f64 / 1000.0;
        let start = v.session.position().clone();
        loop {
            let v = self.world.vehicle(id)?;
            if v.parked {
                break;
            }
            match v.session.position().clone() {
                Position::AtNode(node) => {
                    if !self.depart(now, id, &node)? {
                        break;
                    }
                }
                Position::OnArc { arc, offset_m } => {
                    let (length, head) = {
                        let a = self.net.arc(&arc)?;
                        (a.length_m, a.head.clone())
                    };
                    let left = length - offset_m;
                    if remaining < left {
                        self.vehicle(id)?.session.set_offset(offset_m + remaining);
                        break;
                    }
                    remaining -= left;
                    self.vehicle(id)?.session.set_offset(length);
                    self.detect(now, id)?;
                    self.cross(now, id, &head)?;
                }
            }
        }
        let end = self.world.vehicle(id)?.session.position().clone();
        if end != start {
            match &end {
                Position::OnArc { arc, offset_m } => self.log(
                    now,
                    "MOVE",
                    format_args!("{id} arc={arc} offset={offset_m}"),
                ),
                Position::AtNode(n) => self.log(now, "MOVE", format_args!("{id} node={n} parked")),
            }
        }
        self.radio_step(now, id)?;
        self.schedule(now + tick, EventKind::Move(id.clone()));
        Ok(())
    }

    /// Handles reaching `node` at the end of an arc.
    fn cross(&mut self, now: u64, id: &VehicleId, node: &NodeId) -> Result<()> {
        let wnet = self.server.weighted();
        let v = self.world.vehicle_mut(id)?;
        let mut guidance = match v.session.node_crossed(wnet, node) {
            Ok(g) => g,
            Err(Error::Unreachable { dest, .. }) => {
                v.parked = true;
                v.plan.clear();
                self.log(
                    now,
                    "ROUTE",
                    format_args!("{id} from={node} dest={dest} unreachable"),
                );
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        loop {
            match guidance {
                Guidance::Arrived(dest) => {
                    self.log(now, "ROUTE", format_args!("{id} arrived={dest}"));
                    self.note_route(now, id, &Guidance::Arrived(dest));
                    let wnet = self.server.weighted();
                    let v = self.world.vehicle_mut(id)?;
                    let Some(next) = v.waypoints.pop_front() else {
                        v.parked = true;
                        v.plan.clear();
                        return Ok(());
                    };
                    guidance = match v.session.modify_destination(wnet, Some(next.clone())) {
                        Ok(Guidance::Route(r)) if r.arcs.is_empty() => {
                            v.session.node_crossed(wnet, node)?
                        }
                        Ok(g) => g,
                        Err(Error::Unreachable { .. }) => {
                            v.parked = true;
                            v.plan.clear();
                            self.log(
                                now,
                                "ROUTE",
                                format_args!("{id} from={node} dest={next} unreachable"),
                            );
                            return Ok(());
                        }
                        Err(e) => return Err(e),
                    };
                }
                Guidance::Route(r) => {
                    let v = self.world.vehicle_mut(id)?;
                    let changed = !v.plan.iter().eq(r.arcs.iter());
                    v.plan = r.arcs.iter().cloned().collect();
                    if changed {
                        self.log(
                            now,
                            "ROUTE",
                            format_args!(
                                "{id} from={node} dest={} arcs={} weight={}",
                                r.dest,
                                join_ids(&r.arcs),
                                r.total_weight
                            ),
                        );
                    }
                    self.note_route(now, id, &Guidance::Route(r));
                    return Ok(());
                }
                _ => {
                    self.world.vehicle_mut(id)?.plan.clear();
                    return Ok(());
                }
            }
        }
    }

    /// Leaves `node` along the planned arc, or the lowest-id outgoing arc
    /// when roaming without a destination. Parks when there is nowhere to go.
    fn depart(&mut self, now: u64, id: &VehicleId, node: &NodeId) -> Result<bool> {
        let wnet = self.server.weighted();
        let v = self.world.vehicle_mut(id)?;
        let next = if v.session.destination().is_some() {
            v.plan.pop_front()
        } else {
            let idx = self.net.node_idx(node)?;
            self.net
                .out_arcs(idx)
                .first()
                .map(|&a| self.net.arc_at(a).id.clone())
        };
        let Some(arc) = next else {
            v.parked = true;
            return Ok(false);
        };
        let guidance = v.session.arc_entered(wnet, &arc)?;
        v.swept_from_m = 0.0;
        self.note_route(now, id, &guidance);
        Ok(true)
    }

    /// Scans the stretch of the current arc driven since the last scan and
    /// queues one sealed report per pothole found.
    fn detect(&mut self, now: u64, id: &VehicleId) -> Result<()> {
        let v = self.world.vehicle(id)?;
        let Position::OnArc { arc, offset_m } = v.session.position().clone() else {
            return Ok(());
        };
        let start = v.swept_from_m;
        if offset_m <= start {
            return Ok(());
        }
        let length = self.net.arc(&arc)?.length_m;
        let surface = self
            .surfaces
            .get(&arc)
            .cloned()
            .unwrap_or_else(|| GroundTruthSurface::flat(arc.clone(), length));
        let (dm, ii) = sweep(&surface, (start, offset_m), &self.cfg.sweep)?;
        let origin = WindowOrigin {
            arc: arc.clone(),
            start_m: start,
            arc_length_m: length,
        };
        let runs = extract_runs(&dm, &ii, self.cfg.threshold_mm, &origin)?;
        self.vehicle(id)?.swept_from_m = offset_m;
        self.log(
            now,
            "DETECT",
            format_args!(
                "{id} arc={arc} from={start} to={offset_m} found={}",
                runs.len()
            ),
        );

        for run in &runs {
            let report = &run.report;
            let plain = PlainReport {
                depth_map: dm.columns(run.columns.clone()),
                intensity: ii.columns(run.columns.clone()),
                location: report.location.clone(),
                vehicle: id.clone(),
                timestamp_ms: now,
            };
            let envelope = encrypt(&plain, &self.key, &mut self.rng);
            let seq = self.next_outbound;
            self.next_outbound += 1;
            self.vehicle(id)?.outbox.push_back(Outbound {
                seq,
                envelope,
                location: report.location.clone(),
            });
            self.log(
                now,
                "DETECT",
                format_args!(
                    "{id} report seq={seq} arc={arc} offset={} depth_mm={}",
                    report.location.offset_m, report.depth_mm
                ),
            );
            self.schedule(
                now,
                EventKind::P2pBroadcast {
                    vehicle: id.clone(),
                    warning: WarningKey::candidate(&report.location),
                },
            );
        }
        if !runs.is_empty() && self.world.vehicle(id)?.conn.is_connected() {
            self.schedule_uplink(now, id);
        }
        Ok(())
    }

    fn schedule_uplink(&mut self, t_ms: u64, id: &VehicleId) {
        if self.uplink_pending.insert(id.clone()) {
            self.schedule(t_ms, EventKind::Uplink(id.clone()));
        }
    }

    fn radio_step(&mut self, now: u64, id: &VehicleId) -> Result<()> {
        let visible = self.world.visible_ap(&self.net, id)?;
        let before = self.world.vehicle(id)?.conn.clone();
        let after = step_connection(&before, visible.as_ref(), now, &self.cfg.comms);
        self.transition(now, id, before, after)
    }

    fn transition(
        &mut self,
        now: u64,
        id: &VehicleId,
        before: ConnectionState,
        after: ConnectionState,
    ) -> Result<()> {
        let mut after = after;
        if after.phase != before.phase {
            let peer = after.peer.as_ref().map_or("-".into(), |p| p.to_string());
            self.log(
                now,
                "PHASE",
                format_args!("{id} {}->{} ap={peer}", before.phase, after.phase),
            );
        }
        if after.phase == Phase::Lost {
            let rescan = step_connection(&after, None, now, &self.cfg.comms);
            self.log(
                now,
                "PHASE",
                format_args!("{id} {}->{} ap=-", after.phase, rescan.phase),
            );
            after = rescan;
        }
        let refreshed =
            after.last_activity_ms != before.last_activity_ms || after.phase != before.phase;
        let connected_now = after.is_connected() && !before.is_connected();
        let watch = matches!(
            after.phase,
            Phase::Associating | Phase::Authenticating | Phase::Connected
        );
        let deadline = after.last_activity_ms + self.cfg.comms.loss_timeout_ms + 1;
        let v = self.vehicle(id)?;
        v.conn = after;
        let has_mail = !v.outbox.is_empty();
        if refreshed && watch {
            self.schedule(deadline, EventKind::PhaseTimeout(id.clone()));
        }
        if connected_now && has_mail {
            self.schedule_uplink(now, id);
        }
        Ok(())
    }

    fn on_timeout(&mut self, now: u64, id: &VehicleId) -> Result<()> {
        let before = self.world.vehicle(id)?.conn.clone();
        let watched = matches!(
            before.phase,
            Phase::Associating | Phase::Authenticating | Phase::Connected
        );
        let silent = now.saturating_sub(before.last_activity_ms);
        if !watched || silent <= self.cfg.comms.loss_timeout_ms {
            return Ok(());
        }
        let peer = before.peer.as_ref().map_or("-".into(), |p| p.to_string());
        self.log(
            now,
            "PHASE_TIMEOUT",
            format_args!("{id} ap={peer} silent_ms={silent}"),
        );
        let after = step_connection(&before, None, now, &self.cfg.comms);
        self.transition(now, id, before, after)
    }

    fn on_uplink(&mut self, now: u64, id: &VehicleId) -> Result<()> {
        self.uplink_pending.remove(id);
        let deliveries = comms::uplink(&mut self.world, &self.net, &mut self.server, id, now)?;
        let peer = self
            .world
            .vehicle(id)?
            .conn
            .peer
            .as_ref()
            .map_or("-".into(), |p| p.to_string());
        for d in &deliveries {
            match &d.outcome {
                Ok(out) => self.log(
                    now,
                    "UPLINK",
                    format_args!(
                        "{id} ap={peer} seq={} pothole={} new={}",
                        d.seq, out.id, out.is_new
                    ),
                ),
                Err(err) => self.log(
                    now,
                    "UPLINK",
                    format_args!("{id} ap={peer} seq={} rejected={err}", d.seq),
                ),
            }
        }
        let v = self.world.vehicle(id)?;
        let deadline = v.conn.last_activity_ms + self.cfg.comms.loss_timeout_ms + 1;
        let keep_going = v.conn.is_connected() && !v.outbox.is_empty();
        if !deliveries.is_empty() {
            self.schedule(deadline, EventKind::PhaseTimeout(id.clone()));
        }
        if keep_going {
            self.schedule_uplink(now + self.cfg.comms.transfer_interval_ms, id);
        }
        Ok(())
    }
}

/// Validates and runs a scenario to completion.
pub fn simulate(net: &StreetNetwork, scenario: &Scenario, cfg: SimConfig) -> Result<SimOutput> {
    Simulation::new(net, scenario, cfg)?.run()
}
