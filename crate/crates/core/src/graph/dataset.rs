use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::graph::induce::{induced_edge_graph, induced_node_graph, majority_label, Origin};
use crate::graph::Graph;

/// Task level of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Node,
    Edge,
    Graph,
}

impl Level {
    pub fn as_str(&self) -> &'static str {
        match self {
            Level::Node => "node",
            Level::Edge => "edge",
            Level::Graph => "graph",
        }
    }
}

impl std::str::FromStr for Level {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "node" => Ok(Level::Node),
            "edge" => Ok(Level::Edge),
            "graph" => Ok(Level::Graph),
            other => Err(Error::invalid(format!("unknown level '{other}'"))),
        }
    }
}

/// One labeled item: a (possibly induced) graph plus its supervision.
#[derive(Debug, Clone)]
pub struct DataItem {
    pub graph: Graph,
    /// Index into the dataset class vocabulary, classification only.
    pub class: Option<usize>,
    /// Regression target, regression only.
    pub target: Option<Vec<f64>>,
}

/// A level-tagged collection of items with a class vocabulary.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<DataItem>,
    /// Class names; a class id is an index into this list. Empty for
    /// regression datasets.
    pub classes: Vec<String>,
    pub level: Level,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Item indices belonging to a class, in ascending order.
    pub fn class_members(&self, class: usize) -> Vec<usize> {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.class == Some(class))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_regression(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.items.first().map_or(0, |it| it.graph.feature_dim())
    }

    fn validate(self) -> Result<Self> {
        for (i, item) in self.items.iter().enumerate() {
            if let Some(c) = item.class {
                if c >= self.classes.len() {
                    return Err(Error::invalid(format!(
                        "item {i} has class {c} outside vocabulary of {}",
                        self.classes.len()
                    )));
                }
            }
        }
        Ok(self)
    }
}

/// Distinct node-class ids of a labeled graph, ascending.
fn class_ids(g: &Graph) -> Result<Vec<usize>> {
    let labels = g
        .node_labels()
        .ok_or_else(|| Error::invalid("graph has no node labels"))?;
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    Ok(ids)
}

/// Node-level dataset: one tau-ball sample per selected node, labeled by the
/// node's class. `nodes = None` takes every node.
pub fn node_dataset(g: &Graph, tau: f64, nodes: Option<&[usize]>) -> Result<Dataset> {
    let labels = g
        .node_labels()
        .ok_or_else(|| Error::invalid("node_dataset: graph has no node labels"))?;
    let ids = class_ids(g)?;
    let to_class = |label: usize| ids.binary_search(&label).unwrap();
    let all: Vec<usize> = (0..g.n()).collect();
    let chosen = nodes.unwrap_or(&all);
    let mut items = Vec::with_capacity(chosen.len());
    for &v in chosen {
        let sample = induced_node_graph(g, v, tau)?;
        items.push(DataItem {
            graph: sample.graph,
            class: Some(to_class(labels[v])),
            target: None,
        });
    }
    Dataset {
        items,
        classes: ids.iter().map(|c| c.to_string()).collect(),
        level: Level::Node,
    }
    .validate()
}

/// Canonical id of an unordered endpoint-class pair among `k` node classes.
/// Pairs are enumerated (0,0), (0,1), .., (0,k-1), (1,1), .. so same-class
/// pairs count as their own category.
pub fn edge_pair_class(a: usize, b: usize, k: usize) -> usize {
    let (lo, hi) = (a.min(b), a.max(b));
    // offset of row `lo` in the upper-triangular enumeration including diagonal
    lo * k - lo * (lo.saturating_sub(1)) / 2 - lo + hi
}

fn pair_class_names(names: &[String]) -> Vec<String> {
    let k = names.len();
    let mut out = Vec::with_capacity(k * (k + 1) / 2);
    for a in 0..k {
        for b in a..k {
            out.push(format!("{}-{}", names[a], names[b]));
        }
    }
    out
}

/// Edge-level classification dataset: one pair-induced sample per edge,
/// labeled by the unordered endpoint-class pair.
pub fn edge_class_dataset(g: &Graph, tau: f64) -> Result<Dataset> {
    let labels = g
        .node_labels()
        .ok_or_else(|| Error::invalid("edge_class_dataset: graph has no node labels"))?;
    let ids = class_ids(g)?;
    let k = ids.len();
    let to_class = |label: usize| ids.binary_search(&label).unwrap();
    let mut items = Vec::with_capacity(g.num_edges());
    for &(u, v, _) in g.edges() {
        let sample = induced_edge_graph(g, (u, v), tau)?;
        let class = edge_pair_class(to_class(labels[u]), to_class(labels[v]), k);
        items.push(DataItem {
            graph: sample.graph,
            class: Some(class),
            target: None,
        });
    }
    let names: Vec<String> = ids.iter().map(|c| c.to_string()).collect();
    Dataset {
        items,
        classes: pair_class_names(&names),
        level: Level::Edge,
    }
    .validate()
}

/// Binary edge dataset for link-style tasks: every edge as a positive sample
/// plus an equal number of uniformly drawn non-adjacent pairs as negatives.
pub fn edge_binary_dataset(g: &Graph, tau: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    for &(u, v, _) in g.edges() {
        let sample = induced_edge_graph(g, (u, v), tau)?;
        items.push(DataItem {
            graph: sample.graph,
            class: Some(1),
            target: None,
        });
    }
    let negatives = sample_non_adjacent_pairs(g, g.num_edges(), &mut rng)?;
    for (u, v) in negatives {
        let sample = induced_edge_graph(g, (u, v), tau)?;
        debug_assert!(matches!(sample.origin, Origin::Pair { positive: false, .. }));
        items.push(DataItem {
            graph: sample.graph,
            class: Some(0),
            target: None,
        });
    }
    Dataset {
        items,
        classes: vec!["neg".into(), "pos".into()],
        level: Level::Edge,
    }
    .validate()
}

/// Uniformly samples distinct non-adjacent node pairs.
pub fn sample_non_adjacent_pairs(
    g: &Graph,
    count: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<(usize, usize)>> {
    use rand::Rng;
    let n = g.n();
    let total_pairs = n * (n - 1) / 2;
    if total_pairs.saturating_sub(g.num_edges()) < count {
        return Err(Error::invalid(format!(
            "cannot sample {count} non-adjacent pairs from a graph with {} free pairs",
            total_pairs - g.num_edges()
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u == v {
            continue;
        }
        let key = (u.min(v), u.max(v));
        if g.has_edge(key.0, key.1) || !seen.insert(key) {
            continue;
        }
        out.push(key);
    }
    Ok(out)
}

/// Graph-level dataset: tau-ball subgraphs around uniformly drawn centers;
/// each subgraph's label follows the majority class of its nodes.
pub fn graph_dataset(g: &Graph, tau: f64, count: usize, seed: u64) -> Result<Dataset> {
    g.node_labels()
        .ok_or_else(|| Error::invalid("graph_dataset: graph has no node labels"))?;
    let ids = class_ids(g)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut centers: Vec<usize> = (0..g.n()).collect();
    centers.shuffle(&mut rng);
    centers.truncate(count.min(g.n()));
    centers.sort_unstable();

    let mut items = Vec::with_capacity(centers.len());
    for v in centers {
        let sample = induced_node_graph(g, v, tau)?;
        let label = majority_label(&sample, g.node_labels().unwrap())?;
        let class = ids.binary_search(&label).unwrap();
        items.push(DataItem {
            graph: sample.graph,
            class: Some(class),
            target: None,
        });
    }
    Dataset {
        items,
        classes: ids.iter().map(|c| c.to_string()).collect(),
        level: Level::Graph,
    }
    .validate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synth_sbm;

    #[test]
    fn pair_class_enumeration_with_three_classes() {
        // 3 node classes give 6 categories: 00 01 02 11 12 22
        let k = 3;
        let expected = [
            ((0, 0), 0),
            ((0, 1), 1),
            ((0, 2), 2),
            ((1, 1), 3),
            ((1, 2), 4),
            ((2, 2), 5),
        ];
        for ((a, b), id) in expected {
            assert_eq!(edge_pair_class(a, b, k), id);
            assert_eq!(edge_pair_class(b, a, k), id);
        }
    }

    #[test]
    fn node_dataset_labels_match_centers() {
        let g = synth_sbm(&[4, 4], 1.0, 0.0, 4, 0.0, 1).unwrap();
        let ds = node_dataset(&g, 1.0, None).unwrap();
        assert_eq!(ds.items.len(), 8);
        for (i, item) in ds.items.iter().enumerate() {
            assert_eq!(item.class, Some(g.node_labels().unwrap()[i]));
        }
    }

    #[test]
    fn edge_binary_dataset_is_balanced() {
        let g = synth_sbm(&[6, 6], 0.8, 0.05, 4, 0.0, 3).unwrap();
        let ds = edge_binary_dataset(&g, 1.0, 4).unwrap();
        let pos = ds.items.iter().filter(|it| it.class == Some(1)).count();
        let neg = ds.items.iter().filter(|it| it.class == Some(0)).count();
        assert_eq!(pos, neg);
        assert_eq!(pos, g.num_edges());
    }

    #[test]
    fn graph_dataset_uses_majority_labels() {
        let g = synth_sbm(&[10, 10], 0.9, 0.0, 4, 0.0, 7).unwrap();
        let ds = graph_dataset(&g, 1.0, 10, 5).unwrap();
        assert_eq!(ds.items.len(), 10);
        // with p_out = 0 each ego net stays within one block
        for item in &ds.items {
            assert!(item.class.is_some());
        }
    }
}
