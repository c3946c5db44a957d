use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::diff::{NodeId, ParamSet, Tape, Tensor};
use crate::error::{Error, Result};

/// LeakyReLU slope used inside attention scores.
pub const ATTENTION_SLOPE: f64 = 0.2;

/// Two-layer multi-head GAT weights: per head a projection and a pair of
/// attention vectors. The hidden width must divide evenly across heads.
#[derive(Debug, Clone)]
pub struct GatParams {
    pub heads: usize,
    pub per_head: usize,
    tensors: ParamSet,
}

impl GatParams {
    pub fn init(d: usize, h: usize, heads: usize, seed: u64) -> Result<Self> {
        if heads == 0 || h % heads != 0 {
            return Err(Error::invalid(format!(
                "gat: hidden {h} not divisible by {heads} heads"
            )));
        }
        let per_head = h / heads;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut tensors = ParamSet::new();
        for (layer, fan_in) in [(1usize, d), (2usize, h)] {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for head in 0..heads {
                tensors
                    .insert(
                        gat_name(layer, head, "w"),
                        Tensor::uniform(vec![fan_in, per_head], bound, &mut rng),
                    )
                    .expect("fresh set");
                tensors
                    .insert(
                        gat_name(layer, head, "asrc"),
                        Tensor::uniform(vec![per_head, 1], bound, &mut rng),
                    )
                    .expect("fresh set");
                tensors
                    .insert(
                        gat_name(layer, head, "adst"),
                        Tensor::uniform(vec![per_head, 1], bound, &mut rng),
                    )
                    .expect("fresh set");
            }
        }
        Ok(GatParams {
            heads,
            per_head,
            tensors,
        })
    }

    pub fn into_param_set(self) -> ParamSet {
        self.tensors
    }
}

pub(crate) fn gat_name(layer: usize, head: usize, part: &str) -> String {
    format!("enc.l{layer}.h{head}.{part}")
}

/// Attention scope: neighbors plus self, derived from the current adjacency
/// values (any strictly positive entry counts as an edge).
pub(crate) fn attention_mask(adj: &Tensor) -> Vec<bool> {
    let n = adj.rows();
    let mut mask = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            mask[i * n + j] = i == j || adj.get2(i, j) > 0.0;
        }
    }
    mask
}

fn gat_layer(
    tape: &mut Tape,
    mask: &[bool],
    x: NodeId,
    ids: &BTreeMap<String, NodeId>,
    layer: usize,
    heads: usize,
) -> Result<NodeId> {
    let get = |name: String| -> Result<NodeId> {
        ids.get(&name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("gat node '{name}' not registered")))
    };
    let mut head_outputs = Vec::with_capacity(heads);
    for head in 0..heads {
        let w = get(gat_name(layer, head, "w"))?;
        let a_src = get(gat_name(layer, head, "asrc"))?;
        let a_dst = get(gat_name(layer, head, "adst"))?;
        let proj = tape.matmul(x, w)?; // n x per_head
        let s = tape.matmul(proj, a_src)?; // n x 1
        let t = tape.matmul(proj, a_dst)?; // n x 1
        let scores = tape.add_outer(s, t)?; // n x n
        let act = tape.leaky_relu(scores, ATTENTION_SLOPE)?;
        let alpha = tape.masked_softmax_rows(act, mask.to_vec())?;
        head_outputs.push(tape.matmul(alpha, proj)?);
    }
    tape.concat_cols(head_outputs)
}

/// Two-layer multi-head attention encoder. Per-head attention coefficients
/// over each node's neighborhood (self included) are non-negative and sum
/// to one; head outputs are concatenated, with relu between the layers.
pub fn gat_forward(
    tape: &mut Tape,
    mask: &[bool],
    x: NodeId,
    ids: &BTreeMap<String, NodeId>,
    heads: usize,
    h: usize,
) -> Result<NodeId> {
    if heads == 0 || h % heads != 0 {
        return Err(Error::invalid("gat_forward: bad head count"));
    }
    let first = gat_layer(tape, mask, x, ids, 1, heads)?;
    let act = tape.relu(first)?;
    gat_layer(tape, mask, act, ids, 2, heads)
}
