//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the routing or weighting code under test.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use pothole_core::network::{Arc, Node};
use pothole_core::registry::{DetectionReport, Location, Registry};
use pothole_core::{ArcId, StreetNetwork};
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

/// Random directed multigraph: up to `max_nodes` nodes, each ordered pair
/// present with a per-graph probability, 1 to `max_parallel` arcs per pair.
pub fn random_network(rng: &mut impl Rng, max_nodes: usize, max_parallel: usize) -> StreetNetwork {
    let n = rng.random_range(2..=max_nodes);
    let density = rng.random_range(0.15..0.6);
    let nodes: Vec<Node> = (0..n)
        .map(|i| Node {
            id: format!("n{i}").into(),
            x: rng.random_range(0.0..500.0),
            y: rng.random_range(0.0..500.0),
        })
        .collect();
    let mut arcs = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u == v || !rng.random_bool(density) {
                continue;
            }
            for _ in 0..rng.random_range(1..=max_parallel) {
                // integral lengths make length ties, and so id tie-breaks, common
                let length = if rng.random_bool(0.5) {
                    rng.random_range(1..=4) as f64 * 25.0
                } else {
                    rng.random_range(5.0..120.0)
                };
                arcs.push(Arc {
                    id: format!("e{}", arcs.len()).into(),
                    tail: format!("n{u}").into(),
                    head: format!("n{v}").into(),
                    length_m: length,
                });
            }
        }
    }
    StreetNetwork::new(nodes, arcs).expect("generated network is valid")
}

/// Random reports on a random subset of arcs, ingested in order.
pub fn random_reports(
    rng: &mut impl Rng,
    net: &StreetNetwork,
    max_reports: usize,
) -> Vec<DetectionReport> {
    if net.arc_count() == 0 {
        return Vec::new();
    }
    let damaged: Vec<&Arc> = net.arcs().iter().filter(|_| rng.random_bool(0.5)).collect();
    if damaged.is_empty() {
        return Vec::new();
    }
    (0..rng.random_range(0..=max_reports))
        .map(|_| {
            let arc = damaged[rng.random_range(0..damaged.len())];
            DetectionReport {
                location: Location::new(arc.id.clone(), rng.random_range(0.0..=arc.length_m)),
                depth_mm: rng.random_range(0.0..120.0),
                intensity: rng.random_range(0.0..1.0),
            }
        })
        .collect()
}

pub fn registry_from(net: &StreetNetwork, reports: &[DetectionReport]) -> Registry {
    let mut reg = Registry::new(net);
    for (t, r) in reports.iter().enumerate() {
        reg.ingest_report(r, &"probe".into(), t as u64 * 10)
            .unwrap();
    }
    reg
}

/// Average pothole depth times arc length, summed in reverse id order so
/// the arithmetic differs from the code under test.
pub fn reference_weights(net: &StreetNetwork, reg: &Registry) -> BTreeMap<ArcId, f64> {
    let mut depths: BTreeMap<ArcId, Vec<f64>> = BTreeMap::new();
    for rec in reg.records() {
        depths
            .entry(rec.arc().clone())
            .or_default()
            .push(rec.depth_mm());
    }
    net.arcs()
        .iter()
        .map(|a| {
            let w = match depths.get(&a.id) {
                Some(d) if !d.is_empty() => {
                    let sum: f64 = d.iter().rev().sum();
                    sum / d.len() as f64 * a.length_m
                }
                _ => 0.0,
            };
            (a.id.clone(), w)
        })
        .collect()
}

/// Arcs as plain (tail, head, weight, id) rows over node indices.
pub struct FlatGraph {
    pub n: usize,
    pub names: Vec<String>,
    pub arcs: Vec<(usize, usize, f64, String)>,
}

impl FlatGraph {
    pub fn new(net: &StreetNetwork, weights: &BTreeMap<ArcId, f64>) -> Self {
        let names: Vec<String> = net.nodes().iter().map(|n| n.id.to_string()).collect();
        let index = |id: &str| names.iter().position(|n| n == id).unwrap();
        let arcs = net
            .arcs()
            .iter()
            .map(|a| {
                (
                    index(a.tail.as_str()),
                    index(a.head.as_str()),
                    weights[&a.id],
                    a.id.to_string(),
                )
            })
            .collect();
        Self {
            n: names.len(),
            names,
            arcs,
        }
    }

    pub fn index(&self, name: &str) -> usize {
        self.names.iter().position(|n| n == name).unwrap()
    }

    /// Minimum weight over every simple path from `source`, enumerating each
    /// parallel arc separately. `None` for unreachable nodes.
    pub fn enumerate_min(&self, source: usize) -> Vec<Option<f64>> {
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); self.n];
        for (i, a) in self.arcs.iter().enumerate() {
            out[a.0].push(i);
        }
        let mut best = vec![None; self.n];
        let mut on_path = vec![false; self.n];
        fn dfs(
            g: &FlatGraph,
            out: &[Vec<usize>],
            at: usize,
            weight: f64,
            on_path: &mut [bool],
            best: &mut [Option<f64>],
        ) {
            if best[at].is_none_or(|b| weight < b) {
                best[at] = Some(weight);
            }
            on_path[at] = true;
            for &i in &out[at] {
                let (_, v, w, _) = &g.arcs[i];
                if !on_path[*v] {
                    dfs(g, out, *v, weight + w, on_path, best);
                }
            }
            on_path[at] = false;
        }
        dfs(self, &out, source, 0.0, &mut on_path, &mut best);
        best
    }

    /// Textbook Dijkstra relaxing every arc individually.
    pub fn dijkstra_all_arcs(&self, source: usize) -> Vec<Option<f64>> {
        let mut dist: Vec<Option<f64>> = vec![None; self.n];
        let mut done = vec![false; self.n];
        dist[source] = Some(0.0);
        loop {
            let next = (0..self.n)
                .filter(|&v| !done[v])
                .filter_map(|v| dist[v].map(|d| (d, v)))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            let Some((d, u)) = next else { break };
            done[u] = true;
            for (t, h, w, _) in &self.arcs {
                if *t == u && dist[*h].is_none_or(|cur| d + w < cur) {
                    dist[*h] = Some(d + w);
                }
            }
        }
        dist
    }

    /// Minimum weight over simple paths from `source` to `dest` that avoid
    /// arc `banned`, and over those that use it.
    pub fn min_with_and_without(
        &self,
        source: usize,
        dest: usize,
        banned: &str,
    ) -> (Option<f64>, Option<f64>) {
        let mut with = None;
        let mut without = None;
        let mut on_path = vec![false; self.n];
        #[allow(clippy::too_many_arguments)]
        fn dfs(
            g: &FlatGraph,
            at: usize,
            dest: usize,
            banned: &str,
            weight: f64,
            used: bool,
            on_path: &mut [bool],
            with: &mut Option<f64>,
            without: &mut Option<f64>,
        ) {
            if at == dest {
                let slot = if used { with } else { without };
                if slot.is_none_or(|b| weight < b) {
                    *slot = Some(weight);
                }
                return;
            }
            on_path[at] = true;
            for (t, h, w, id) in &g.arcs {
                if *t == at && !on_path[*h] {
                    dfs(
                        g,
                        *h,
                        dest,
                        banned,
                        weight + w,
                        used || id == banned,
                        on_path,
                        with,
                        without,
                    );
                }
            }
            on_path[at] = false;
        }
        dfs(
            self,
            source,
            dest,
            banned,
            0.0,
            false,
            &mut on_path,
            &mut with,
            &mut without,
        );
        (with, without)
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}
