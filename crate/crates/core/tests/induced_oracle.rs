//! Brute-force oracle for induced-graph extraction: Floyd-Warshall all-pairs
//! distances on small random weighted graphs must reproduce the node sets
//! exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use graphprompt_core::diff::Tensor;
use graphprompt_core::graph::{induced_edge_graph, induced_node_graph, Graph};

fn random_weighted_graph(seed: u64) -> Graph {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = rng.gen_range(5..=50);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.gen::<f64>() < 0.15 {
                let unit_weights = seed % 3 == 0;
                let w = if unit_weights { 1.0 } else { rng.gen_range(0.1..3.0) };
                edges.push((u, v, w));
            }
        }
    }
    Graph::new(n, edges, Tensor::zeros(vec![n, 1]), Some(vec![0; n])).unwrap()
}

fn floyd_warshall(g: &Graph) -> Vec<Vec<f64>> {
    let n = g.n();
    let mut dist = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in dist.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for &(u, v, w) in g.edges() {
        dist[u][v] = dist[u][v].min(w);
        dist[v][u] = dist[v][u].min(w);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let through = dist[i][k] + dist[k][j];
                if through < dist[i][j] {
                    dist[i][j] = through;
                }
            }
        }
    }
    dist
}

#[test]
fn node_balls_match_floyd_warshall_on_100_graphs() {
    for seed in 0..100u64 {
        let g = random_weighted_graph(seed);
        let dist = floyd_warshall(&g);
        let mut rng = ChaCha20Rng::seed_from_u64(1_000 + seed);
        let v = rng.gen_range(0..g.n());
        let tau = rng.gen_range(0.0..3.0);
        let sample = induced_node_graph(&g, v, tau).unwrap();
        let expect: Vec<usize> = (0..g.n()).filter(|&u| dist[v][u] <= tau).collect();
        assert_eq!(sample.orig_ids, expect, "seed {seed}, v {v}, tau {tau}");
    }
}

#[test]
fn pair_unions_match_floyd_warshall_on_100_graphs() {
    for seed in 0..100u64 {
        let g = random_weighted_graph(seed);
        let dist = floyd_warshall(&g);
        let mut rng = ChaCha20Rng::seed_from_u64(2_000 + seed);
        let u = rng.gen_range(0..g.n());
        let v = (u + rng.gen_range(1..g.n())) % g.n();
        let tau = rng.gen_range(0.0..2.5);
        let sample = induced_edge_graph(&g, (u, v), tau).unwrap();
        let expect: Vec<usize> = (0..g.n())
            .filter(|&w| dist[u][w] <= tau || dist[v][w] <= tau)
            .collect();
        assert_eq!(sample.orig_ids, expect, "seed {seed}, pair ({u},{v}), tau {tau}");
    }
}

#[test]
fn relabeling_round_trips_edges_and_features() {
    for seed in 0..50u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let n = rng.gen_range(6..=30);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.gen::<f64>() < 0.2 {
                    edges.push((u, v, rng.gen_range(0.5..2.0)));
                }
            }
        }
        let feats = Tensor::matrix(n, 2, (0..2 * n).map(|i| i as f64).collect()).unwrap();
        let g = Graph::new(n, edges, feats, None).unwrap();
        let v = rng.gen_range(0..n);
        let sample = induced_node_graph(&g, v, 2.0).unwrap();
        // feature rows follow their original nodes
        for (new, &old) in sample.orig_ids.iter().enumerate() {
            assert_eq!(sample.graph.features().row(new), g.features().row(old));
        }
        // inverse-mapped edges form a subset of the source edge set with
        // identical weights
        for &(a, b, w) in sample.graph.edges() {
            let (x, y) = (sample.orig_ids[a], sample.orig_ids[b]);
            let key = (x.min(y), x.max(y));
            let found = g
                .edges()
                .iter()
                .find(|&&(u, v, _)| (u, v) == key)
                .unwrap_or_else(|| panic!("edge {key:?} not in source"));
            assert_eq!(found.2, w);
        }
        // and every source edge between kept nodes is present
        let kept: std::collections::BTreeSet<usize> = sample.orig_ids.iter().copied().collect();
        let expected_edges = g
            .edges()
            .iter()
            .filter(|(u, v, _)| kept.contains(u) && kept.contains(v))
            .count();
        assert_eq!(sample.graph.num_edges(), expected_edges);
    }
}
