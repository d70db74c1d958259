//! Street network preprocessing: every arc gets weight `w(e) = d(e) * l(e)`
//! where `d(e)` is the mean depth (mm) of the potholes on the arc and `l(e)`
//! its length (m). Weights are therefore in mm·m; a clean arc weighs 0.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::ids::ArcId;
use crate::network::{MinWeightMultiset, StreetNetwork, WeightMultiset};
use crate::registry::Registry;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArcDamage {
    /// Sum of pothole depths on the arc, mm.
    pub damage_sum_mm: f64,
    /// Number of potholes on the arc.
    pub count: usize,
    /// `damage_sum_mm / count`, or 0 for an arc without potholes.
    pub average_mm: f64,
}

/// Damage statistics of one arc under the current registry state. Depths
/// are summed in pothole-id order so repeated evaluation is bit-identical.
pub fn arc_damage(arc: &ArcId, registry: &Registry) -> Result<ArcDamage> {
    let potholes = registry.potholes_on_arc(arc)?;
    let count = potholes.len();
    let damage_sum_mm: f64 = potholes.iter().map(|p| p.depth_mm()).sum();
    let average_mm = if count == 0 {
        0.0
    } else {
        damage_sum_mm / count as f64
    };
    Ok(ArcDamage {
        damage_sum_mm,
        count,
        average_mm,
    })
}

/// The street network annotated with per-arc damage and weight, with the
/// per-pair weight multisets and the min-weight multiset kept in sync.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedNetwork {
    base: StreetNetwork,
    damage: Vec<ArcDamage>,
    weights: Vec<f64>,
    multisets: BTreeMap<(usize, usize), WeightMultiset>,
    min_weights: MinWeightMultiset,
}

/// Computes the weighted network for the current registry state.
pub fn preprocess(net: &StreetNetwork, registry: &Registry) -> Result<WeightedNetwork> {
    for arc in registry.arcs_with_potholes() {
        net.arc_idx(arc)?;
    }

    let mut damage = Vec::with_capacity(net.arc_count());
    let mut weights = Vec::with_capacity(net.arc_count());
    for arc in net.arcs() {
        let d = arc_damage(&arc.id, registry)?;
        weights.push(d.average_mm * arc.length_m);
        damage.push(d);
    }

    let multisets: BTreeMap<_, _> = net
        .pairs()
        .map(|(tail, pair)| {
            let entries = pair
                .arcs
                .iter()
                .map(|&i| (net.arc_at(i).id.clone(), weights[i]))
                .collect();
            let set = WeightMultiset::new(
                net.node_at(tail).id.clone(),
                net.node_at(pair.head).id.clone(),
                entries,
            );
            ((tail, pair.head), set)
        })
        .collect();
    let min_weights = MinWeightMultiset::from_multisets(multisets.values());

    Ok(WeightedNetwork {
        base: net.clone(),
        damage,
        weights,
        multisets,
        min_weights,
    })
}

impl WeightedNetwork {
    /// Recomputes one arc after a registry change and repairs its pair's
    /// weight multiset and min-weight entry. The result equals a full
    /// [`preprocess`] over the same registry.
    pub fn apply_update(&mut self, arc: &ArcId, registry: &Registry) -> Result<()> {
        let idx = self.base.arc_idx(arc)?;
        let d = arc_damage(arc, registry)?;
        let weight = d.average_mm * self.base.arc_at(idx).length_m;
        self.damage[idx] = d;
        self.weights[idx] = weight;

        let key = self.base.arc_ends(idx);
        let set = self
            .multisets
            .get_mut(&key)
            .expect("every arc belongs to a pair multiset");
        set.set_weight(arc, weight);
        self.min_weights.refresh(set);
        Ok(())
    }

    pub fn base(&self) -> &StreetNetwork {
        &self.base
    }

    pub fn weight(&self, arc: &ArcId) -> Result<f64> {
        self.base.arc_idx(arc).map(|i| self.weights[i])
    }

    pub fn weight_at(&self, arc_idx: usize) -> f64 {
        self.weights[arc_idx]
    }

    pub fn damage(&self, arc: &ArcId) -> Result<ArcDamage> {
        self.base.arc_idx(arc).map(|i| self.damage[i])
    }

    pub fn multiset(&self, tail: usize, head: usize) -> Option<&WeightMultiset> {
        self.multisets.get(&(tail, head))
    }

    pub fn multisets(&self) -> impl Iterator<Item = &WeightMultiset> {
        self.multisets.values()
    }

    pub fn min_weights(&self) -> &MinWeightMultiset {
        &self.min_weights
    }

    /// First arc with a negative or non-finite weight, if any.
    pub fn invalid_weight(&self) -> Option<(&ArcId, f64)> {
        self.weights
            .iter()
            .position(|w| !(w.is_finite() && *w >= 0.0))
            .map(|i| (&self.base.arc_at(i).id, self.weights[i]))
    }

    /// Weighted-network dump:
    /// `arc_id,tail,head,length_m,pothole_count,avg_damage_mm,weight`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "arc_id",
            "tail",
            "head",
            "length_m",
            "pothole_count",
            "avg_damage_mm",
            "weight",
        ])?;
        for (i, arc) in self.base.arcs().iter().enumerate() {
            w.write_record([
                arc.id.to_string(),
                arc.tail.to_string(),
                arc.head.to_string(),
                arc.length_m.to_string(),
                self.damage[i].count.to_string(),
                self.damage[i].average_mm.to_string(),
                self.weights[i].to_string(),
            ])?;
        }
        w.flush().map_err(Error::from)
    }

    #[cfg(test)]
    pub(crate) fn force_weight(&mut self, arc: &ArcId, weight: f64) {
        let idx = self.base.arc_idx(arc).unwrap();
        self.weights[idx] = weight;
        let key = self.base.arc_ends(idx);
        let set = self.multisets.get_mut(&key).unwrap();
        set.set_weight(arc, weight);
        self.min_weights.refresh(set);
    }
}
