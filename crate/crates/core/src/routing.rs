//! Minimum-damage routing over the weighted multigraph.
//!
//! [`gda`] is Dijkstra generalized to multigraphs: each ordered node pair is
//! relaxed once, through the pair's minimum weight `w_uv` taken from its
//! weight multiset. Clean arcs weigh zero, so many paths can tie on weight;
//! labels therefore carry the physical length as a secondary key, and
//! [`route`] picks the lexicographically smallest arc-id sequence among the
//! paths that tie on both.
//!
//! [`RoutingSession`] is the in-vehicle state machine: with a destination it
//! yields routes, without one it reports the weight of the arc being driven.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::ids::{ArcId, NodeId};
use crate::weighting::WeightedNetwork;

/// Path label: weight first, physical length second.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cost {
    weight: f64,
    length: f64,
}

impl Cost {
    const ZERO: Cost = Cost {
        weight: 0.0,
        length: 0.0,
    };

    fn plus(self, weight: f64, length: f64) -> Cost {
        Cost {
            weight: self.weight + weight,
            length: self.length + length,
        }
    }
}

impl Eq for Cost {}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> Ordering {
        self.weight
            .total_cmp(&other.weight)
            .then_with(|| self.length.total_cmp(&other.length))
    }
}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source result of [`gda`].
#[derive(Debug, Clone)]
pub struct ShortestPathTree<'a> {
    wnet: &'a WeightedNetwork,
    source: usize,
    labels: Vec<Option<Cost>>,
    /// (predecessor node, arc) per node.
    pred: Vec<Option<(usize, usize)>>,
}

impl<'a> ShortestPathTree<'a> {
    pub fn source(&self) -> &'a NodeId {
        &self.wnet.base().node_at(self.source).id
    }

    /// Minimum path weight to `node`, `None` when unreachable.
    pub fn distance(&self, node: &NodeId) -> Result<Option<f64>> {
        let idx = self.wnet.base().node_idx(node)?;
        Ok(self.labels[idx].map(|c| c.weight))
    }

    /// Physical length of the selected minimum-weight path to `node`.
    pub fn path_length(&self, node: &NodeId) -> Result<Option<f64>> {
        let idx = self.wnet.base().node_idx(node)?;
        Ok(self.labels[idx].map(|c| c.length))
    }

    pub fn predecessor(&self, node: &NodeId) -> Result<Option<(&'a NodeId, &'a ArcId)>> {
        let net = self.wnet.base();
        let idx = net.node_idx(node)?;
        Ok(self.pred[idx].map(|(p, a)| (&net.node_at(p).id, &net.arc_at(a).id)))
    }

    pub fn is_reachable(&self, node: &NodeId) -> Result<bool> {
        Ok(self.distance(node)?.is_some())
    }
}

/// Single-source minimum-weight paths over the min-weight multiset.
pub fn gda<'a>(wnet: &'a WeightedNetwork, source: &NodeId) -> Result<ShortestPathTree<'a>> {
    let net = wnet.base();
    let src = net.node_idx(source)?;
    if let Some((arc, weight)) = wnet.invalid_weight() {
        return Err(Error::NegativeWeight {
            arc: arc.to_string(),
            weight,
        });
    }

    let n = net.node_count();
    let mut labels: Vec<Option<Cost>> = vec![None; n];
    let mut pred = vec![None; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    labels[src] = Some(Cost::ZERO);
    heap.push(Reverse((Cost::ZERO, src)));

    while let Some(Reverse((cost, u))) = heap.pop() {
        if settled[u] {
            continue;
        }
        settled[u] = true;
        for pair in net.out_pairs(u) {
            let v = pair.head;
            if settled[v] {
                continue;
            }
            let (arc, w, len) = relaxation_arc(wnet, u, v);
            let cand = cost.plus(w, len);
            if labels[v].is_none_or(|cur| cand < cur) {
                labels[v] = Some(cand);
                pred[v] = Some((u, arc));
                heap.push(Reverse((cand, v)));
            }
        }
    }

    Ok(ShortestPathTree {
        wnet,
        source: src,
        labels,
        pred,
    })
}

/// The arc used to relax pair (u, v): weight `w_uv` from the head of the
/// pair's weight multiset; among arcs sharing that weight, the shortest,
/// then the smallest id.
fn relaxation_arc(wnet: &WeightedNetwork, u: usize, v: usize) -> (usize, f64, f64) {
    let net = wnet.base();
    let set = wnet
        .multiset(u, v)
        .expect("every adjacent pair has a weight multiset");
    let w_uv = set.entries()[0].1;
    set.entries()
        .iter()
        .take_while(|(_, w)| *w == w_uv)
        .map(|(id, _)| {
            let idx = net.arc_idx(id).expect("multiset arcs exist");
            (idx, net.arc_at(idx).length_m)
        })
        .min_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then_with(|| net.arc_at(a.0).id.cmp(&net.arc_at(b.0).id))
        })
        .map(|(idx, len)| (idx, w_uv, len))
        .expect("multisets are non-empty")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub source: NodeId,
    pub dest: NodeId,
    pub arcs: Vec<ArcId>,
    pub total_weight: f64,
    pub total_length_m: f64,
}

impl Route {
    /// One line per arc (`arc_id tail head weight length`) followed by
    /// `TOTAL weight length`.
    pub fn trace(&self, wnet: &WeightedNetwork) -> String {
        let mut out = String::new();
        for id in &self.arcs {
            let arc = wnet.base().arc(id).expect("route arcs exist");
            let weight = wnet.weight(id).expect("route arcs exist");
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                arc.id, arc.tail, arc.head, weight, arc.length_m
            );
        }
        let _ = writeln!(out, "TOTAL {} {}", self.total_weight, self.total_length_m);
        out
    }
}

/// Minimum-weight route from `source` to `dest`. Among equal-weight routes
/// the physically shortest wins, then the lexicographically smallest arc-id
/// sequence.
pub fn route(wnet: &WeightedNetwork, source: &NodeId, dest: &NodeId) -> Result<Route> {
    let net = wnet.base();
    let tree = gda(wnet, source)?;
    let src = tree.source;
    let dst = net.node_idx(dest)?;
    let Some(total) = tree.labels[dst] else {
        return Err(Error::Unreachable {
            from: source.to_string(),
            dest: dest.to_string(),
        });
    };

    // An arc is tight when it extends an optimal label to another optimal
    // label exactly. Every arc has positive length, so tight arcs form a DAG
    // and every tight path from the source is optimal to its end node.
    let labels = &tree.labels;
    let tight = |arc: usize| -> bool {
        let (u, v) = net.arc_ends(arc);
        match (labels[u], labels[v]) {
            (Some(lu), Some(lv)) => lu.plus(wnet.weight_at(arc), net.arc_at(arc).length_m) == lv,
            _ => false,
        }
    };

    let mut reaches_dest = vec![false; net.node_count()];
    reaches_dest[dst] = true;
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); net.node_count()];
    for arc in 0..net.arc_count() {
        if tight(arc) {
            incoming[net.arc_ends(arc).1].push(arc);
        }
    }
    let mut stack = vec![dst];
    while let Some(v) = stack.pop() {
        for &arc in &incoming[v] {
            let u = net.arc_ends(arc).0;
            if !reaches_dest[u] {
                reaches_dest[u] = true;
                stack.push(u);
            }
        }
    }

    let mut arcs = Vec::new();
    let mut at = src;
    while at != dst {
        let next = net
            .out_arcs(at)
            .into_iter()
            .filter(|&a| tight(a) && reaches_dest[net.arc_ends(a).1])
            .min_by(|&a, &b| net.arc_at(a).id.cmp(&net.arc_at(b).id))
            .expect("a tight path to the destination exists");
        arcs.push(net.arc_at(next).id.clone());
        at = net.arc_ends(next).1;
    }

    Ok(Route {
        source: source.clone(),
        dest: dest.clone(),
        arcs,
        total_weight: total.weight,
        total_length_m: total.length,
    })
}

/// Damage level of the arc the vehicle is driving on.
pub fn current_arc_weight(wnet: &WeightedNetwork, arc: &ArcId) -> Result<f64> {
    wnet.weight(arc)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Position {
    AtNode(NodeId),
    OnArc { arc: ArcId, offset_m: f64 },
}

/// What the in-vehicle display shows after a session event.
#[derive(Debug, Clone, PartialEq)]
pub enum Guidance {
    /// A destination is set: the route from the next upcoming node.
    Route(Route),
    /// No destination: the weight of the arc being driven.
    ArcWeight {
        arc: ArcId,
        weight: f64,
    },
    /// No destination and not on an arc.
    Idle,
    /// The destination was reached and cleared.
    Arrived(NodeId),
    Unchanged,
}

/// Routing state owned by one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingSession {
    position: Position,
    destination: Option<NodeId>,
    route: Option<Route>,
}

impl RoutingSession {
    pub fn new(position: Position) -> Self {
        Self {
            position,
            destination: None,
            route: None,
        }
    }

    pub fn position(&self) -> &Position {
        &self.position
    }

    pub fn destination(&self) -> Option<&NodeId> {
        self.destination.as_ref()
    }

    pub fn route(&self) -> Option<&Route> {
        self.route.as_ref()
    }

    /// Node a new route starts from: the current node, or the head of the
    /// arc being driven (a vehicle finishes its arc before re-routing).
    pub fn anchor(&self, wnet: &WeightedNetwork) -> Result<NodeId> {
        match &self.position {
            Position::AtNode(n) => Ok(n.clone()),
            Position::OnArc { arc, .. } => Ok(wnet.base().arc(arc)?.head.clone()),
        }
    }

    pub fn set_offset(&mut self, offset_m: f64) {
        if let Position::OnArc { offset_m: o, .. } = &mut self.position {
            *o = offset_m;
        }
    }

    /// Sets, changes or clears the destination. An unchanged destination is
    /// a no-op; on error the session is left as it was.
    pub fn modify_destination(
        &mut self,
        wnet: &WeightedNetwork,
        new_dest: Option<NodeId>,
    ) -> Result<Guidance> {
        if new_dest == self.destination {
            return Ok(Guidance::Unchanged);
        }
        match new_dest {
            Some(dest) => {
                wnet.base().node_idx(&dest)?;
                let r = route(wnet, &self.anchor(wnet)?, &dest)?;
                self.destination = Some(dest);
                self.route = Some(r.clone());
                Ok(Guidance::Route(r))
            }
            None => {
                self.destination = None;
                self.route = None;
                self.display(wnet)
            }
        }
    }

    /// Re-evaluates the session at a node crossing: arrival clears the
    /// destination, otherwise the route is recomputed on current weights.
    pub fn node_crossed(&mut self, wnet: &WeightedNetwork, node: &NodeId) -> Result<Guidance> {
        wnet.base().node_idx(node)?;
        self.position = Position::AtNode(node.clone());
        match self.destination.clone() {
            Some(dest) if &dest == node => {
                self.destination = None;
                self.route = None;
                Ok(Guidance::Arrived(dest))
            }
            Some(dest) => {
                let r = route(wnet, node, &dest)?;
                self.route = Some(r.clone());
                Ok(Guidance::Route(r))
            }
            None => Ok(Guidance::Idle),
        }
    }

    pub fn arc_entered(&mut self, wnet: &WeightedNetwork, arc: &ArcId) -> Result<Guidance> {
        wnet.base().arc_idx(arc)?;
        self.position = Position::OnArc {
            arc: arc.clone(),
            offset_m: 0.0,
        };
        if self.destination.is_some() {
            Ok(Guidance::Unchanged)
        } else {
            self.display(wnet)
        }
    }

    /// Current display in the no-destination mode.
    fn display(&self, wnet: &WeightedNetwork) -> Result<Guidance> {
        match &self.position {
            Position::OnArc { arc, .. } => Ok(Guidance::ArcWeight {
                arc: arc.clone(),
                weight: current_arc_weight(wnet, arc)?,
            }),
            Position::AtNode(_) => Ok(Guidance::Idle),
        }
    }
}
