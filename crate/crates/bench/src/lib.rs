//! Workloads shared by the benchmarks.

use pothole_core::network::{Arc, Node};
use pothole_core::registry::{DetectionReport, Location};
use pothole_core::{Registry, StreetNetwork};

/// A `side` x `side` two-way grid of 100 m blocks with a parallel arc on
/// every third street, plus a registry with a pothole on every fifth arc.
pub fn grid(side: usize) -> (StreetNetwork, Registry) {
    let name = |r: usize, c: usize| format!("n{r}_{c}");
    let mut nodes = Vec::new();
    let mut arcs = Vec::new();
    let link = |arcs: &mut Vec<Arc>, a: String, b: String, length: f64| {
        let id = format!("e{}", arcs.len());
        arcs.push(Arc {
            id: id.into(),
            tail: a.into(),
            head: b.into(),
            length_m: length,
        });
    };
    for r in 0..side {
        for c in 0..side {
            nodes.push(Node {
                id: name(r, c).into(),
                x: c as f64 * 100.0,
                y: r as f64 * 100.0,
            });
            let mut pairs = Vec::new();
            if c + 1 < side {
                pairs.push((name(r, c), name(r, c + 1)));
            }
            if r + 1 < side {
                pairs.push((name(r, c), name(r + 1, c)));
            }
            for (a, b) in pairs {
                link(&mut arcs, a.clone(), b.clone(), 100.0);
                link(&mut arcs, b.clone(), a.clone(), 100.0);
                if (r + c) % 3 == 0 {
                    link(&mut arcs, a, b, 130.0);
                }
            }
        }
    }
    let net = StreetNetwork::new(nodes, arcs).expect("grid is valid");
    let mut reg = Registry::new(&net);
    for (i, arc) in net.arcs().iter().enumerate().filter(|(i, _)| i % 5 == 0) {
        let report = DetectionReport {
            location: Location::new(arc.id.clone(), (i % 90) as f64 + 5.0),
            depth_mm: 10.0 + (i * 37 % 80) as f64,
            intensity: 0.5,
        };
        reg.ingest_report(&report, &"bench".into(), i as u64)
            .expect("report is valid");
    }
    (net, reg)
}
