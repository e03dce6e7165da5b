//! County adjacency structure for the spatial random effects.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// Undirected county neighbor graph.
///
/// Edges are stored once as (low index, high index) pairs; adjacency lists
/// are kept alongside for fast operator application.
#[derive(Debug, Clone)]
pub struct AdjacencyGraph {
    county_ids: Vec<String>,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl AdjacencyGraph {
    /// Builds a graph from raw id pairs; the county set is inferred from the
    /// edges, indexed in sorted id order. Reversed duplicates collapse to one
    /// edge; self-loops are rejected.
    pub fn build(edge_list: &[(String, String)]) -> Result<Self> {
        if edge_list.is_empty() {
            return Err(Error::Input("edge list is empty".into()));
        }
        let mut ids: BTreeSet<&str> = BTreeSet::new();
        for (a, b) in edge_list {
            ids.insert(a);
            ids.insert(b);
        }
        let county_ids: Vec<String> = ids.into_iter().map(|s| s.to_string()).collect();
        Self::with_universe(county_ids, edge_list)
    }

    /// Builds a graph over a fixed county universe (index = position in
    /// `county_ids`). Counties absent from the edge list stay isolated;
    /// unknown edge endpoints are input errors.
    pub fn with_universe(county_ids: Vec<String>, edge_list: &[(String, String)]) -> Result<Self> {
        if county_ids.is_empty() {
            return Err(Error::Input("county universe is empty".into()));
        }
        let index: BTreeMap<&str, usize> = county_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        if index.len() != county_ids.len() {
            return Err(Error::Input("duplicate county id in universe".into()));
        }
        let mut set: BTreeSet<(usize, usize)> = BTreeSet::new();
        for (k, (a, b)) in edge_list.iter().enumerate() {
            let ia = *index.get(a.as_str()).ok_or_else(|| {
                Error::Input(format!("edge {k} references unknown county id `{a}`"))
            })?;
            let ib = *index.get(b.as_str()).ok_or_else(|| {
                Error::Input(format!("edge {k} references unknown county id `{b}`"))
            })?;
            if ia == ib {
                return Err(Error::Input(format!("edge {k} is a self-loop on `{a}`")));
            }
            set.insert((ia.min(ib), ia.max(ib)));
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); county_ids.len()];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        Ok(AdjacencyGraph {
            county_ids,
            edges,
            neighbors,
        })
    }

    pub fn n_counties(&self) -> usize {
        self.county_ids.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn county_ids(&self) -> &[String] {
        &self.county_ids
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Counties with no neighbors (possible when built over a universe).
    pub fn isolated_counties(&self) -> Vec<usize> {
        (0..self.n_counties()).filter(|&i| self.degree(i) == 0).collect()
    }
}
