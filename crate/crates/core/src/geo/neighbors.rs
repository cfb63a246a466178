use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::{haversine_km, TractGraph};
use crate::error::{Error, Result};

/// Rows of the 2D neighbour layout.
pub const LAYOUT_ROWS: usize = 9;
/// Row holding the target tract.
pub const CENTER_ROW: usize = 4;
/// Largest supported neighbour count.
pub const MAX_NEIGHBORS: usize = 8;

/// Row index for neighbour ranks 1..=8. Successive ranks flank the centre,
/// alternating below and above it, moving outward.
pub const RANK_ROWS: [usize; MAX_NEIGHBORS] = [5, 3, 6, 2, 7, 1, 8, 0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowSlot {
    Target,
    /// One-based distance rank.
    Rank(u8),
    Padding,
}

/// One target tract's neighbour arrangement.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSet {
    pub target: String,
    /// Neighbour ids ordered by distance rank.
    pub neighbors: Vec<String>,
    pub distances_km: Vec<f64>,
    pub rows: [RowSlot; LAYOUT_ROWS],
}

impl NeighborSet {
    fn new(target: String, neighbors: Vec<String>, distances_km: Vec<f64>) -> Self {
        let mut rows = [RowSlot::Padding; LAYOUT_ROWS];
        rows[CENTER_ROW] = RowSlot::Target;
        for rank in 0..neighbors.len() {
            rows[RANK_ROWS[rank]] = RowSlot::Rank(rank as u8 + 1);
        }
        Self {
            target,
            neighbors,
            distances_km,
            rows,
        }
    }

    pub fn pad_mask(&self) -> [bool; LAYOUT_ROWS] {
        self.rows.map(|s| s == RowSlot::Padding)
    }

    /// The tract occupying `row`, if any.
    pub fn tract_at(&self, row: usize) -> Option<&str> {
        match self.rows[row] {
            RowSlot::Target => Some(&self.target),
            RowSlot::Rank(r) => Some(&self.neighbors[r as usize - 1]),
            RowSlot::Padding => None,
        }
    }
}

/// Fixed-length nearest-neighbour sets for every in-city tract.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborMap {
    k: usize,
    sets: BTreeMap<String, NeighborSet>,
}

impl NeighborMap {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, tract_id: &str) -> Option<&NeighborSet> {
        self.sets.get(tract_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &NeighborSet> {
        self.sets.values()
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

/// For each in-city tract, the `k` nearest other in-city tracts by
/// great-circle centroid distance, ties broken by ascending tract id.
pub fn build_neighbor_map(graph: &TractGraph, k: usize) -> Result<NeighborMap> {
    if k > MAX_NEIGHBORS {
        return Err(Error::Invalid(format!(
            "at most {MAX_NEIGHBORS} neighbours fit the layout, asked for {k}"
        )));
    }
    let city: Vec<_> = graph.city_tracts().collect();
    let mut sets = BTreeMap::new();
    for target in &city {
        let mut cands: Vec<(f64, &str)> = city
            .iter()
            .filter(|t| t.tract_id != target.tract_id)
            .map(|t| {
                (
                    haversine_km(target.lat, target.lon, t.lat, t.lon),
                    t.tract_id.as_str(),
                )
            })
            .collect();
        cands.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.1.cmp(b.1))
        });
        cands.truncate(k);
        let (dists, ids): (Vec<f64>, Vec<String>) =
            cands.into_iter().map(|(d, id)| (d, id.to_string())).unzip();
        sets.insert(
            target.tract_id.clone(),
            NeighborSet::new(target.tract_id.clone(), ids, dists),
        );
    }
    Ok(NeighborMap { k, sets })
}
