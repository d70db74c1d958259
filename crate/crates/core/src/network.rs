//! Street network as a directed multigraph, plus the weight multiset and
//! min-weight multiset views used by the weighting and routing modules.
//!
//! The on-disk format is JSON:
//!
//! ```json
//! {
//!   "nodes": [{ "id": "n1", "x": 0.0, "y": 0.0 }],
//!   "arcs":  [{ "id": "a1", "tail": "n1", "head": "n2", "length_m": 10.0 }]
//! }
//! ```
//!
//! Unknown keys are rejected, as are dangling node references, duplicate
//! ids, non-positive lengths and self-loops.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{ArcId, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: NodeId,
    /// Planar easting in meters.
    pub x: f64,
    /// Planar northing in meters.
    pub y: f64,
}

/// A directed street segment. The length is stored explicitly because
/// streets curve; the endpoints only fix where the segment starts and ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arc {
    pub id: ArcId,
    pub tail: NodeId,
    pub head: NodeId,
    pub length_m: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    nodes: Vec<Node>,
    arcs: Vec<Arc>,
}

/// Parallel arcs from one tail node to one head node.
#[derive(Debug, Clone)]
pub struct PairArcs {
    pub head: usize,
    /// Arc indices, ordered by arc id.
    pub arcs: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct StreetNetwork {
    nodes: Vec<Node>,
    arcs: Vec<Arc>,
    node_index: HashMap<NodeId, usize>,
    arc_index: HashMap<ArcId, usize>,
    arc_ends: Vec<(usize, usize)>,
    /// Per tail node: outgoing pairs ordered by head node index.
    out_pairs: Vec<Vec<PairArcs>>,
}

impl PartialEq for StreetNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.arcs == other.arcs
    }
}

impl StreetNetwork {
    pub fn new(nodes: Vec<Node>, arcs: Vec<Arc>) -> Result<Self> {
        let mut node_index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if !node.x.is_finite() || !node.y.is_finite() {
                return Err(Error::Validation(format!(
                    "node `{}` has non-finite coordinates",
                    node.id
                )));
            }
            if node_index.insert(node.id.clone(), i).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate node id `{}`",
                    node.id
                )));
            }
        }

        let mut arc_index = HashMap::with_capacity(arcs.len());
        let mut arc_ends = Vec::with_capacity(arcs.len());
        let mut pairs: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (i, arc) in arcs.iter().enumerate() {
            if arc_index.insert(arc.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate arc id `{}`", arc.id)));
            }
            if !(arc.length_m.is_finite() && arc.length_m > 0.0) {
                return Err(Error::Validation(format!(
                    "arc `{}` has non-positive length {}",
                    arc.id, arc.length_m
                )));
            }
            let tail = *node_index.get(&arc.tail).ok_or_else(|| {
                Error::Validation(format!(
                    "arc `{}` references missing node `{}`",
                    arc.id, arc.tail
                ))
            })?;
            let head = *node_index.get(&arc.head).ok_or_else(|| {
                Error::Validation(format!(
                    "arc `{}` references missing node `{}`",
                    arc.id, arc.head
                ))
            })?;
            if tail == head {
                return Err(Error::Validation(format!(
                    "arc `{}` is a self-loop",
                    arc.id
                )));
            }
            arc_ends.push((tail, head));
            pairs.entry((tail, head)).or_default().push(i);
        }

        let mut out_pairs = vec![Vec::new(); nodes.len()];
        for ((tail, head), mut members) in pairs {
            members.sort_by(|&a, &b| arcs[a].id.cmp(&arcs[b].id));
            out_pairs[tail].push(PairArcs {
                head,
                arcs: members,
            });
        }

        Ok(Self {
            nodes,
            arcs,
            node_index,
            arc_index,
            arc_ends,
            out_pairs,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(text)?;
        Self::new(file.nodes, file.arcs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let file = NetworkFile {
            nodes: self.nodes.clone(),
            arcs: self.arcs.clone(),
        };
        serde_json::to_string_pretty(&file).expect("network serializes")
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn node_idx(&self, id: &NodeId) -> Result<usize> {
        self.node_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn arc_idx(&self, id: &ArcId) -> Result<usize> {
        self.arc_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownArc(id.to_string()))
    }

    pub fn node(&self, id: &NodeId) -> Result<&Node> {
        self.node_idx(id).map(|i| &self.nodes[i])
    }

    pub fn arc(&self, id: &ArcId) -> Result<&Arc> {
        self.arc_idx(id).map(|i| &self.arcs[i])
    }

    pub fn node_at(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    pub fn arc_at(&self, idx: usize) -> &Arc {
        &self.arcs[idx]
    }

    /// (tail, head) node indices of an arc.
    pub fn arc_ends(&self, idx: usize) -> (usize, usize) {
        self.arc_ends[idx]
    }

    pub fn out_pairs(&self, node_idx: usize) -> &[PairArcs] {
        &self.out_pairs[node_idx]
    }

    /// Arcs leaving a node, in arc-id order.
    pub fn out_arcs(&self, node_idx: usize) -> Vec<usize> {
        let mut arcs: Vec<usize> = self.out_pairs[node_idx]
            .iter()
            .flat_map(|p| p.arcs.iter().copied())
            .collect();
        arcs.sort_by(|&a, &b| self.arcs[a].id.cmp(&self.arcs[b].id));
        arcs
    }

    /// All ordered pairs (tail index, head index, parallel arcs).
    pub fn pairs(&self) -> impl Iterator<Item = (usize, &PairArcs)> {
        self.out_pairs
            .iter()
            .enumerate()
            .flat_map(|(tail, pairs)| pairs.iter().map(move |p| (tail, p)))
    }

    /// All arcs with tail `u` and head `v`, in arc-id order.
    pub fn arcs_between(&self, u: &NodeId, v: &NodeId) -> Result<Vec<&Arc>> {
        let tail = self.node_idx(u)?;
        let head = self.node_idx(v)?;
        Ok(self.out_pairs[tail]
            .binary_search_by_key(&head, |p| p.head)
            .map(|pos| {
                self.out_pairs[tail][pos]
                    .arcs
                    .iter()
                    .map(|&i| &self.arcs[i])
                    .collect()
            })
            .unwrap_or_default())
    }

    /// Planar position at `offset_m` along an arc, treating the arc as a
    /// straight segment between its endpoints.
    pub fn point_on_arc(&self, arc_idx: usize, offset_m: f64) -> (f64, f64) {
        let (tail, head) = self.arc_ends[arc_idx];
        let a = &self.nodes[tail];
        let b = &self.nodes[head];
        let frac = (offset_m / self.arcs[arc_idx].length_m).clamp(0.0, 1.0);
        (a.x + (b.x - a.x) * frac, a.y + (b.y - a.y) * frac)
    }
}

/// Total order used for multiset entries: weight ascending, then arc id.
pub(crate) fn entry_order(a: &(ArcId, f64), b: &(ArcId, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0))
}

/// The arcs from `tail` to `head`, keyed and sorted non-descending by
/// weight. Equal weights are ordered by arc id.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMultiset {
    tail: NodeId,
    head: NodeId,
    entries: Vec<(ArcId, f64)>,
}

impl WeightMultiset {
    pub fn new(tail: NodeId, head: NodeId, mut entries: Vec<(ArcId, f64)>) -> Self {
        entries.sort_by(entry_order);
        Self {
            tail,
            head,
            entries,
        }
    }

    pub fn tail(&self) -> &NodeId {
        &self.tail
    }

    pub fn head(&self) -> &NodeId {
        &self.head
    }

    pub fn entries(&self) -> &[(ArcId, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Replaces the weight of one member arc and restores the sort order.
    /// Returns false when the arc is not part of this multiset.
    pub fn set_weight(&mut self, arc: &ArcId, weight: f64) -> bool {
        let Some(pos) = self.entries.iter().position(|(id, _)| id == arc) else {
            return false;
        };
        let mut entry = self.entries.remove(pos);
        entry.1 = weight;
        let at = self
            .entries
            .partition_point(|e| entry_order(e, &entry) == Ordering::Less);
        self.entries.insert(at, entry);
        true
    }

    pub fn is_sorted(&self) -> bool {
        self.entries
            .windows(2)
            .all(|w| entry_order(&w[0], &w[1]) != Ordering::Greater)
    }

    /// The pair's minimum weight `w_uv` and the arc achieving it: the first
    /// entry, since entries are kept sorted.
    pub fn min_weight(&self) -> Result<(&ArcId, f64)> {
        self.entries
            .first()
            .map(|(id, w)| (id, *w))
            .ok_or_else(|| Error::EmptyMultiset(self.tail.to_string(), self.head.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinEntry {
    pub weight: f64,
    pub arc: ArcId,
}

/// One entry per ordered pair with at least one arc: the pair's minimum
/// weight and the arc achieving it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MinWeightMultiset {
    entries: BTreeMap<(NodeId, NodeId), MinEntry>,
}

impl MinWeightMultiset {
    pub fn from_multisets<'a>(sets: impl IntoIterator<Item = &'a WeightMultiset>) -> Self {
        let mut out = Self::default();
        for set in sets {
            out.refresh(set);
        }
        out
    }

    /// Re-derives the entry for one pair from its weight multiset.
    pub fn refresh(&mut self, set: &WeightMultiset) {
        let key = (set.tail.clone(), set.head.clone());
        match set.min_weight() {
            Ok((arc, weight)) => {
                self.entries.insert(
                    key,
                    MinEntry {
                        weight,
                        arc: arc.clone(),
                    },
                );
            }
            Err(_) => {
                self.entries.remove(&key);
            }
        }
    }

    pub fn get(&self, tail: &NodeId, head: &NodeId) -> Option<&MinEntry> {
        self.entries.get(&(tail.clone(), head.clone()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(NodeId, NodeId), &MinEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
