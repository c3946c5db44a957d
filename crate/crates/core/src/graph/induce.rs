use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Target of an induced extraction: a single node or a node pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Node { id: usize },
    /// `positive` records whether (u, v) is an edge of the source graph.
    Pair { u: usize, v: usize, positive: bool },
}

/// A relabeled induced subgraph together with its provenance.
///
/// `orig_ids[new_id] = original_id`; new ids follow ascending original ids.
#[derive(Debug, Clone)]
pub struct InducedSample {
    pub graph: Graph,
    pub origin: Origin,
    pub tau: f64,
    pub orig_ids: Vec<usize>,
}

impl InducedSample {
    /// Position of an original node inside the sample.
    pub fn local_id(&self, original: usize) -> Option<usize> {
        self.orig_ids.binary_search(&original).ok()
    }
}

#[derive(PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, tie-break on node id for determinism
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest-path distances from a set of sources. Unit-weighted graphs use
/// breadth-first hop counts; weighted graphs use Dijkstra with the edge
/// weight as the path length.
pub fn shortest_dists(g: &Graph, sources: &[usize]) -> Result<Vec<f64>> {
    for &s in sources {
        if s >= g.n() {
            return Err(Error::NodeOutOfRange { id: s, n: g.n() });
        }
    }
    let adj = g.adjacency_list();
    let mut dist = vec![f64::INFINITY; g.n()];

    if g.is_unit_weighted() {
        let mut queue = std::collections::VecDeque::new();
        for &s in sources {
            dist[s] = 0.0;
            queue.push_back(s);
        }
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &adj[u] {
                if dist[v].is_infinite() {
                    dist[v] = dist[u] + 1.0;
                    queue.push_back(v);
                }
            }
        }
    } else {
        let mut heap = BinaryHeap::new();
        for &s in sources {
            dist[s] = 0.0;
            heap.push(HeapEntry { dist: 0.0, node: s });
        }
        while let Some(HeapEntry { dist: d, node: u }) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(v, w) in &adj[u] {
                let nd = d + w;
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(HeapEntry { dist: nd, node: v });
                }
            }
        }
    }
    Ok(dist)
}

/// Induced subgraph on a sorted node set, relabeled to 0..k-1. Edge multiset
/// and feature/label rows are carried over.
pub(crate) fn subgraph(g: &Graph, nodes: &[usize]) -> Result<(Graph, Vec<usize>)> {
    let orig_ids: Vec<usize> = nodes.to_vec();
    let mut local = vec![usize::MAX; g.n()];
    for (new, &old) in orig_ids.iter().enumerate() {
        local[old] = new;
    }
    let mut edges = Vec::new();
    for &(u, v, w) in g.edges() {
        if local[u] != usize::MAX && local[v] != usize::MAX {
            edges.push((local[u], local[v], w));
        }
    }
    let d = g.feature_dim();
    let mut fdata = Vec::with_capacity(orig_ids.len() * d);
    for &old in &orig_ids {
        fdata.extend_from_slice(g.features().row(old));
    }
    let features = crate::diff::Tensor::matrix(orig_ids.len(), d, fdata)?;
    let labels = g
        .node_labels()
        .map(|all| orig_ids.iter().map(|&o| all[o]).collect());
    let sub = Graph::new(orig_ids.len(), edges, features, labels)?;
    Ok((sub, orig_ids))
}

/// The tau-ball induced graph around a node: all nodes within shortest-path
/// distance tau, with every edge among them. An isolated target still yields
/// a singleton sample.
pub fn induced_node_graph(g: &Graph, v: usize, tau: f64) -> Result<InducedSample> {
    if v >= g.n() {
        return Err(Error::NodeOutOfRange { id: v, n: g.n() });
    }
    if tau < 0.0 {
        return Err(Error::invalid("induced_node_graph: tau must be >= 0"));
    }
    let dist = shortest_dists(g, &[v])?;
    let nodes: Vec<usize> = (0..g.n()).filter(|&u| dist[u] <= tau).collect();
    let (graph, orig_ids) = subgraph(g, &nodes)?;
    Ok(InducedSample {
        graph,
        origin: Origin::Node { id: v },
        tau,
        orig_ids,
    })
}

/// Induced graph for a node pair: the union of the two tau-balls. The sample
/// is positive when (u, v) is an edge of the source graph.
pub fn induced_edge_graph(g: &Graph, pair: (usize, usize), tau: f64) -> Result<InducedSample> {
    let (u, v) = pair;
    if u >= g.n() {
        return Err(Error::NodeOutOfRange { id: u, n: g.n() });
    }
    if v >= g.n() {
        return Err(Error::NodeOutOfRange { id: v, n: g.n() });
    }
    if u == v {
        return Err(Error::invalid("induced_edge_graph: endpoints must differ"));
    }
    if tau < 0.0 {
        return Err(Error::invalid("induced_edge_graph: tau must be >= 0"));
    }
    let du = shortest_dists(g, &[u])?;
    let dv = shortest_dists(g, &[v])?;
    let nodes: Vec<usize> = (0..g.n())
        .filter(|&w| du[w] <= tau || dv[w] <= tau)
        .collect();
    let positive = g.has_edge(u, v);
    let (graph, orig_ids) = subgraph(g, &nodes)?;
    Ok(InducedSample {
        graph,
        origin: Origin::Pair { u, v, positive },
        tau,
        orig_ids,
    })
}

/// Most frequent class among the sample's nodes, ties broken by the
/// smallest class id. `node_labels` is indexed by original node id.
pub fn majority_label(sample: &InducedSample, node_labels: &[usize]) -> Result<usize> {
    if sample.orig_ids.is_empty() {
        return Err(Error::invalid("majority_label: empty sample"));
    }
    let mut counts = std::collections::BTreeMap::new();
    for &orig in &sample.orig_ids {
        let label = node_labels.get(orig).ok_or(Error::NodeOutOfRange {
            id: orig,
            n: node_labels.len(),
        })?;
        *counts.entry(*label).or_insert(0usize) += 1;
    }
    // BTreeMap iterates in ascending class id, so `>` keeps the smallest on ties
    let mut best = (usize::MAX, 0usize);
    for (class, count) in counts {
        if count > best.1 {
            best = (class, count);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;

    fn path_graph(n: usize) -> Graph {
        let edges = (0..n - 1).map(|i| (i, i + 1, 1.0)).collect();
        Graph::new(n, edges, Tensor::zeros(vec![n, 1]), Some((0..n).collect())).unwrap()
    }

    #[test]
    fn path_ball_around_middle() {
        let g = path_graph(5);
        let s = induced_node_graph(&g, 2, 1.0).unwrap();
        assert_eq!(s.orig_ids, vec![1, 2, 3]);
        assert_eq!(s.graph.edges(), &[(0, 1, 1.0), (1, 2, 1.0)]);
    }

    #[test]
    fn tau_zero_is_singleton() {
        let g = path_graph(5);
        let s = induced_node_graph(&g, 2, 0.0).unwrap();
        assert_eq!(s.orig_ids, vec![2]);
        assert!(s.graph.edges().is_empty());
    }

    #[test]
    fn isolated_node_yields_singleton() {
        let g = Graph::new(3, vec![(0, 1, 1.0)], Tensor::zeros(vec![3, 1]), None).unwrap();
        let s = induced_node_graph(&g, 2, 2.0).unwrap();
        assert_eq!(s.orig_ids, vec![2]);
    }

    #[test]
    fn edge_pair_union_on_path() {
        let g = path_graph(4);
        let s = induced_edge_graph(&g, (1, 2), 1.0).unwrap();
        assert_eq!(s.orig_ids, vec![0, 1, 2, 3]);
        match s.origin {
            Origin::Pair { positive, .. } => assert!(positive),
            _ => panic!("expected pair origin"),
        }
    }

    #[test]
    fn non_adjacent_pair_tau_zero_is_negative() {
        let g = path_graph(4);
        let s = induced_edge_graph(&g, (0, 3), 0.0).unwrap();
        assert_eq!(s.orig_ids, vec![0, 3]);
        match s.origin {
            Origin::Pair { positive, .. } => assert!(!positive),
            _ => panic!("expected pair origin"),
        }
    }

    #[test]
    fn majority_and_tie_break() {
        let g = path_graph(3);
        let s = induced_node_graph(&g, 1, 1.0).unwrap();
        assert_eq!(majority_label(&s, &[7, 7, 8]).unwrap(), 7);
        // tie between class 3 (node 0) and class 9 (node 1) at tau = 1 around node 0
        let s2 = induced_node_graph(&g, 0, 1.0).unwrap();
        assert_eq!(majority_label(&s2, &[9, 3, 5]).unwrap(), 3);
        assert_eq!(majority_label(&s2, &[4, 4, 4]).unwrap(), 4);
    }

    #[test]
    fn weighted_distances_use_dijkstra() {
        // 0 -2.5- 1 -2.5- 2, plus direct 0-2 with weight 10
        let g = Graph::new(
            3,
            vec![(0, 1, 2.5), (1, 2, 2.5), (0, 2, 10.0)],
            Tensor::zeros(vec![3, 1]),
            None,
        )
        .unwrap();
        let d = shortest_dists(&g, &[0]).unwrap();
        assert_eq!(d, vec![0.0, 2.5, 5.0]);
        let s = induced_node_graph(&g, 0, 2.5).unwrap();
        assert_eq!(s.orig_ids, vec![0, 1]);
    }

    #[test]
    fn relabeling_preserves_edges_and_features() {
        let mut feats = Tensor::zeros(vec![4, 2]);
        for i in 0..4 {
            feats.set2(i, 0, i as f64);
        }
        let g = Graph::new(4, vec![(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)], feats, None).unwrap();
        let s = induced_node_graph(&g, 2, 1.0).unwrap();
        for (new, &old) in s.orig_ids.iter().enumerate() {
            assert_eq!(s.graph.features().get2(new, 0), old as f64);
        }
        // inverse-mapped edge multiset matches source edges among kept nodes
        let mapped: Vec<(usize, usize)> = s
            .graph
            .edges()
            .iter()
            .map(|&(a, b, _)| {
                let (x, y) = (s.orig_ids[a], s.orig_ids[b]);
                (x.min(y), x.max(y))
            })
            .collect();
        assert_eq!(mapped, vec![(1, 2), (2, 3)]);
    }
}
