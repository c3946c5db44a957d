//! Graph storage, dataset IO, induced-subgraph extraction, label
//! derivation, few-shot sampling, and synthetic graph generation.

mod dataset;
mod fewshot;
pub(crate) mod induce;
mod io;
mod synth;

pub use dataset::{
    edge_binary_dataset, edge_class_dataset, edge_pair_class, graph_dataset, node_dataset,
    DataItem, Dataset, Level,
};
pub use fewshot::{sample_few_shot, FewShotSplit};
pub use induce::{
    induced_edge_graph, induced_node_graph, majority_label, shortest_dists, InducedSample, Origin,
};
pub use io::{load_graph, save_graph};
pub use synth::{gaussian, synth_sbm};

use crate::diff::Tensor;
use crate::error::{Error, Result};

/// Undirected weighted graph with row-aligned node features.
///
/// Edges are stored once with `u < v`; duplicates are dropped keeping the
/// first weight, and directed input is symmetrized by canonicalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    features: Tensor,
    node_labels: Option<Vec<usize>>,
    graph_label: Option<GraphLabel>,
}

/// Graph-level supervision: a class id or a real-valued target vector.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphLabel {
    Class(usize),
    Target(Vec<f64>),
}

impl Graph {
    pub fn new(
        n: usize,
        edges: Vec<(usize, usize, f64)>,
        features: Tensor,
        node_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if features.rows() != n {
            return Err(Error::ShapeMismatch {
                op: "Graph::new",
                detail: format!("{} feature rows for {n} nodes", features.rows()),
            });
        }
        if let Some(labels) = &node_labels {
            if labels.len() != n {
                return Err(Error::ShapeMismatch {
                    op: "Graph::new",
                    detail: format!("{} labels for {n} nodes", labels.len()),
                });
            }
        }
        let mut canon: Vec<(usize, usize, f64)> = Vec::with_capacity(edges.len());
        let mut seen = std::collections::BTreeSet::new();
        for (u, v, w) in edges {
            if u >= n {
                return Err(Error::NodeOutOfRange { id: u, n });
            }
            if v >= n {
                return Err(Error::NodeOutOfRange { id: v, n });
            }
            if u == v {
                return Err(Error::invalid(format!("self-loop on node {u}")));
            }
            if w < 0.0 || !w.is_finite() {
                return Err(Error::invalid(format!("edge ({u},{v}) has bad weight {w}")));
            }
            let key = (u.min(v), u.max(v));
            if seen.insert(key) {
                canon.push((key.0, key.1, w));
            }
        }
        canon.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        Ok(Graph {
            n,
            edges: canon,
            features,
            node_labels,
            graph_label: None,
        })
    }

    pub fn with_graph_label(mut self, label: GraphLabel) -> Self {
        self.graph_label = Some(label);
        self
    }

    /// Replaces the feature matrix; the row count must stay `n`.
    pub fn with_features(mut self, features: Tensor) -> Result<Self> {
        if features.rows() != self.n {
            return Err(Error::ShapeMismatch {
                op: "Graph::with_features",
                detail: format!("{} rows for {} nodes", features.rows(), self.n),
            });
        }
        self.features = features;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn node_labels(&self) -> Option<&[usize]> {
        self.node_labels.as_deref()
    }

    pub fn graph_label(&self) -> Option<&GraphLabel> {
        self.graph_label.as_ref()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        let key = (u.min(v), u.max(v));
        self.edges.iter().any(|&(a, b, _)| (a, b) == key)
    }

    /// True when every edge has weight exactly 1 (hop distances apply).
    pub fn is_unit_weighted(&self) -> bool {
        self.edges.iter().all(|&(_, _, w)| w == 1.0)
    }

    /// Adjacency list: for each node the (neighbor, weight) pairs.
    pub fn adjacency_list(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v, w) in &self.edges {
            adj[u].push((v, w));
            adj[v].push((u, w));
        }
        adj
    }

    /// Dense symmetric weighted adjacency (no self-loops).
    pub fn dense_adjacency(&self) -> Tensor {
        let mut a = Tensor::zeros(vec![self.n, self.n]);
        for &(u, v, w) in &self.edges {
            a.set2(u, v, w);
            a.set2(v, u, w);
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(n: usize) -> Tensor {
        Tensor::zeros(vec![n, 2])
    }

    #[test]
    fn canonicalizes_and_dedups_edges() {
        let g = Graph::new(
            3,
            vec![(2, 0, 1.5), (0, 2, 9.0), (1, 2, 1.0)],
            feats(3),
            None,
        )
        .unwrap();
        // first weight kept, direction normalized, sorted
        assert_eq!(g.edges(), &[(0, 2, 1.5), (1, 2, 1.0)]);
    }

    #[test]
    fn rejects_out_of_range_and_self_loops() {
        assert!(Graph::new(2, vec![(0, 2, 1.0)], feats(2), None).is_err());
        assert!(Graph::new(2, vec![(1, 1, 1.0)], feats(2), None).is_err());
        assert!(Graph::new(2, vec![(0, 1, -1.0)], feats(2), None).is_err());
    }

    #[test]
    fn feature_rows_must_match_nodes() {
        assert!(Graph::new(3, vec![], feats(2), None).is_err());
    }
}
