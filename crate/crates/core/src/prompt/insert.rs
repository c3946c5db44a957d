use std::collections::BTreeMap;

use crate::diff::{Cmp, NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::prompt::{InsertionMode, PromptGraph, StructureScheme};

/// A materialized manipulated graph with its readout bookkeeping.
#[derive(Debug, Clone)]
pub struct Manipulated {
    pub graph: Graph,
    /// True exactly for the original input nodes; token nodes are masked out
    /// of the readout so embeddings stay comparable across prompt sizes.
    pub original_mask: Vec<bool>,
}

/// On-tape manipulated graph, differentiable with respect to the prompt.
#[derive(Debug, Clone)]
pub struct InsertedGraph {
    /// Feature matrix node ((n or n + |P|) x d).
    pub features: NodeId,
    /// Raw weighted adjacency node, no self-loops.
    pub adjacency: NodeId,
    pub original_mask: Vec<bool>,
}

/// Inserts a prompt graph into an input graph, producing a plain Graph.
///
/// - graph_augment appends one node per token (feature row p_k), token-token
///   edges from the structure scheme, and cross edges (i, token k) for every
///   surviving cross-link weight w_ik > 0;
/// - feature_weighted leaves the topology alone and adds the cross-link
///   weighted token mix to each node's features;
/// - feature_uniform adds the plain token sum to every node's features.
pub fn insert(g: &Graph, pg: &PromptGraph, mode: InsertionMode) -> Result<Manipulated> {
    if g.feature_dim() != pg.dim() {
        return Err(Error::ShapeMismatch {
            op: "insert",
            detail: format!("graph d = {}, prompt d = {}", g.feature_dim(), pg.dim()),
        });
    }
    let n = g.n();
    let d = g.feature_dim();
    let k = pg.num_tokens();
    match mode {
        InsertionMode::FeatureUniform => {
            let mut sum = vec![0.0; d];
            for t in 0..k {
                for (j, v) in pg.tokens.row(t).iter().enumerate() {
                    sum[j] += v;
                }
            }
            let mut data = g.features().data().to_vec();
            for i in 0..n {
                for j in 0..d {
                    data[i * d + j] += sum[j];
                }
            }
            let graph = g.clone().with_features(Tensor::matrix(n, d, data)?)?;
            Ok(Manipulated {
                graph,
                original_mask: vec![true; n],
            })
        }
        InsertionMode::FeatureWeighted => {
            let links = pg.cross_links(g.features())?;
            let mix = links.weights.matmul(&pg.tokens)?;
            let data: Vec<f64> = g
                .features()
                .data()
                .iter()
                .zip(mix.data())
                .map(|(a, b)| a + b)
                .collect();
            let graph = g.clone().with_features(Tensor::matrix(n, d, data)?)?;
            Ok(Manipulated {
                graph,
                original_mask: vec![true; n],
            })
        }
        InsertionMode::GraphAugment => {
            let links = pg.cross_links(g.features())?;
            let mut edges: Vec<(usize, usize, f64)> = g.edges().to_vec();
            for (i, j, w) in pg.token_edges() {
                if w > 0.0 {
                    edges.push((n + i, n + j, w));
                }
            }
            for i in 0..n {
                for t in 0..k {
                    let w = links.weights.get2(i, t);
                    if w > 0.0 {
                        edges.push((i, n + t, w));
                    }
                }
            }
            let mut data = g.features().data().to_vec();
            data.extend_from_slice(pg.tokens.data());
            let features = Tensor::matrix(n + k, d, data)?;
            // token nodes carry no labels; supervision lives on the item
            let mut graph = Graph::new(n + k, edges, features, None)?;
            if let Some(label) = g.graph_label() {
                graph = graph.with_graph_label(label.clone());
            }
            let mut original_mask = vec![true; n];
            original_mask.extend(std::iter::repeat(false).take(k));
            Ok(Manipulated {
                graph,
                original_mask,
            })
        }
    }
}

/// Tape counterpart of [`insert`]. `prompt_ids` maps the prompt parameter
/// names ([`PromptGraph::TOKENS`], [`PromptGraph::STRUCTURE`]) to registered
/// nodes, so gradients flow to the tokens and pair scores in every mode.
pub fn insert_tape(
    tape: &mut Tape,
    g: &Graph,
    pg: &PromptGraph,
    prompt_ids: &BTreeMap<String, NodeId>,
    mode: InsertionMode,
) -> Result<InsertedGraph> {
    if g.feature_dim() != pg.dim() {
        return Err(Error::ShapeMismatch {
            op: "insert",
            detail: format!("graph d = {}, prompt d = {}", g.feature_dim(), pg.dim()),
        });
    }
    let tokens = *prompt_ids
        .get(PromptGraph::TOKENS)
        .ok_or_else(|| Error::invalid("insert: prompt tokens not registered"))?;
    let n = g.n();
    let k = pg.num_tokens();
    let x = tape.constant(g.features().clone());

    match mode {
        InsertionMode::FeatureUniform => {
            let ones_row = tape.constant(Tensor::matrix(1, k, vec![1.0; k])?);
            let token_sum = tape.matmul(ones_row, tokens)?; // 1 x d
            let ones_col = tape.constant(Tensor::matrix(n, 1, vec![1.0; n])?);
            let broadcast = tape.matmul(ones_col, token_sum)?; // n x d
            let features = tape.add(x, broadcast)?;
            let adjacency = tape.constant(g.dense_adjacency());
            Ok(InsertedGraph {
                features,
                adjacency,
                original_mask: vec![true; n],
            })
        }
        InsertionMode::FeatureWeighted => {
            let weights = cross_links_tape(tape, x, tokens, pg.delta)?;
            let mix = tape.matmul(weights, tokens)?;
            let features = tape.add(x, mix)?;
            let adjacency = tape.constant(g.dense_adjacency());
            Ok(InsertedGraph {
                features,
                adjacency,
                original_mask: vec![true; n],
            })
        }
        InsertionMode::GraphAugment => {
            let weights = cross_links_tape(tape, x, tokens, pg.delta)?;
            let token_block = token_block_tape(tape, pg, prompt_ids)?;
            let base = tape.constant(g.dense_adjacency());
            let weights_t = tape.transpose(weights)?;
            let adjacency = tape.block2x2(base, weights, weights_t, token_block)?;
            let features = tape.stack_rows(vec![x, tokens])?;
            let mut original_mask = vec![true; n];
            original_mask.extend(std::iter::repeat(false).take(k));
            Ok(InsertedGraph {
                features,
                adjacency,
                original_mask,
            })
        }
    }
}

/// w = sigma(X P^T) with entries kept only strictly above delta.
fn cross_links_tape(tape: &mut Tape, x: NodeId, tokens: NodeId, delta: f64) -> Result<NodeId> {
    let tokens_t = tape.transpose(tokens)?;
    let dots = tape.matmul(x, tokens_t)?;
    let sims = tape.sigmoid(dots)?;
    tape.threshold_keep(sims, delta, Cmp::Gt)
}

/// Token-token adjacency block under the prompt's structure scheme.
fn token_block_tape(
    tape: &mut Tape,
    pg: &PromptGraph,
    prompt_ids: &BTreeMap<String, NodeId>,
) -> Result<NodeId> {
    let k = pg.num_tokens();
    match pg.scheme {
        StructureScheme::Independent => Ok(tape.constant(Tensor::zeros(vec![k, k]))),
        StructureScheme::Learnable => {
            if k == 1 {
                return Ok(tape.constant(Tensor::zeros(vec![1, 1])));
            }
            let scores = *prompt_ids
                .get(PromptGraph::STRUCTURE)
                .ok_or_else(|| Error::invalid("insert: prompt structure not registered"))?;
            let weights = tape.sigmoid(scores)?;
            tape.sym_from_upper(weights, k)
        }
        StructureScheme::DotThreshold => {
            let tokens = prompt_ids[PromptGraph::TOKENS];
            let tokens_t = tape.transpose(tokens)?;
            let dots = tape.matmul(tokens, tokens_t)?;
            let sims = tape.sigmoid(dots)?;
            let kept = tape.threshold_keep(sims, pg.delta, pg.structure_cmp)?;
            // tokens never self-loop; normalization adds the self term
            let mut off = Tensor::zeros(vec![k, k]);
            for i in 0..k {
                for j in 0..k {
                    if i != j {
                        off.set2(i, j, 1.0);
                    }
                }
            }
            let off = tape.constant(off);
            tape.mul(kept, off)
        }
    }
}
