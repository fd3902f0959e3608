use std::collections::{BTreeMap, BTreeSet};

use super::DocumentRecord;

/// Undirected weighted coauthorship graph. Weights follow the max rule
/// `w_ac = max_{d : a, c in A_d} 1 / (|A_d| - 1)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoauthorGraph {
    adjacency: BTreeMap<String, BTreeMap<String, f64>>,
}

impl CoauthorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or strengthen an edge; keeps the larger weight.
    pub fn add_edge(&mut self, a: &str, c: &str, w: f64) {
        if a == c {
            return;
        }
        for (u, v) in [(a, c), (c, a)] {
            let slot = self
                .adjacency
                .entry(u.to_string())
                .or_default()
                .entry(v.to_string())
                .or_insert(0.0);
            if w > *slot {
                *slot = w;
            }
        }
    }

    pub fn add_node(&mut self, a: &str) {
        self.adjacency.entry(a.to_string()).or_default();
    }

    pub fn weight(&self, a: &str, c: &str) -> Option<f64> {
        self.adjacency.get(a).and_then(|n| n.get(c)).copied()
    }

    pub fn neighbors(&self, a: &str) -> impl Iterator<Item = (&str, f64)> {
        self.adjacency
            .get(a)
            .into_iter()
            .flat_map(|n| n.iter().map(|(c, &w)| (c.as_str(), w)))
    }

    pub fn neighbor_set(&self, a: &str) -> BTreeSet<&str> {
        self.neighbors(a).map(|(c, _)| c).collect()
    }

    pub fn degree(&self, a: &str) -> usize {
        self.adjacency.get(a).map_or(0, BTreeMap::len)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.adjacency.keys().map(String::as_str)
    }

    /// Each undirected edge once, with `a < c`.
    pub fn edges(&self) -> Vec<(&str, &str, f64)> {
        let mut out = Vec::new();
        for (a, nbrs) in &self.adjacency {
            for (c, &w) in nbrs {
                if a < c {
                    out.push((a.as_str(), c.as_str(), w));
                }
            }
        }
        out
    }

    /// Copy without the edge between `a` and `c`.
    pub fn without_edge(&self, a: &str, c: &str) -> CoauthorGraph {
        let mut g = self.clone();
        if let Some(n) = g.adjacency.get_mut(a) {
            n.remove(c);
        }
        if let Some(n) = g.adjacency.get_mut(c) {
            n.remove(a);
        }
        g
    }
}

pub fn build_coauthor_graph<'a, I>(docs: I) -> CoauthorGraph
where
    I: IntoIterator<Item = &'a DocumentRecord>,
{
    let mut g = CoauthorGraph::new();
    for doc in docs {
        let n = doc.authors.len();
        for a in &doc.authors {
            g.add_node(a);
        }
        if n < 2 {
            continue;
        }
        let w = 1.0 / (n - 1) as f64;
        for (i, a) in doc.authors.iter().enumerate() {
            for c in &doc.authors[i + 1..] {
                g.add_edge(a, c, w);
            }
        }
    }
    g
}
