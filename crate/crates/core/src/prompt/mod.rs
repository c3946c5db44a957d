//! The learnable prompt graph: tokens, token structure schemes, cross links
//! to input nodes, and insertion into input graphs.

mod insert;

pub use insert::{insert, insert_tape, InsertedGraph, Manipulated};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::backbone::Checkpoint;
use crate::diff::{sigmoid, Cmp, ParamSet, Tensor};
use crate::error::{Error, Result};

/// How token-token edges are determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureScheme {
    /// A tunable score per token pair; edge weight is its sigmoid.
    Learnable,
    /// Pairs are kept by comparing sigmoid(p_i . p_j) against delta.
    DotThreshold,
    /// No token-token edges at all.
    Independent,
}

impl StructureScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            StructureScheme::Learnable => "learnable",
            StructureScheme::DotThreshold => "dot_threshold",
            StructureScheme::Independent => "independent",
        }
    }
}

impl std::str::FromStr for StructureScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learnable" => Ok(StructureScheme::Learnable),
            "dot_threshold" => Ok(StructureScheme::DotThreshold),
            "independent" => Ok(StructureScheme::Independent),
            other => Err(Error::invalid(format!("unknown structure scheme '{other}'"))),
        }
    }
}

/// How the prompt joins the input graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertionMode {
    /// Materialize tokens as extra nodes with token-token and cross edges.
    GraphAugment,
    /// Add the cross-link weighted token mix to each node's features.
    FeatureWeighted,
    /// Add the unweighted token sum to each node's features.
    FeatureUniform,
}

impl InsertionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            InsertionMode::GraphAugment => "graph_augment",
            InsertionMode::FeatureWeighted => "feature_weighted",
            InsertionMode::FeatureUniform => "feature_uniform",
        }
    }
}

impl std::str::FromStr for InsertionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graph_augment" => Ok(InsertionMode::GraphAugment),
            "feature_weighted" => Ok(InsertionMode::FeatureWeighted),
            "feature_uniform" => Ok(InsertionMode::FeatureUniform),
            other => Err(Error::invalid(format!("unknown insertion mode '{other}'"))),
        }
    }
}

/// Learnable prompt graph: token vectors sharing the input feature
/// dimension, a structure scheme with its parameters, the pruning threshold
/// delta, and an optional partition into sub-prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptGraph {
    pub tokens: Tensor,
    pub scheme: StructureScheme,
    /// Upper-triangle pair scores, learnable scheme only (empty otherwise).
    pub structure: Tensor,
    pub delta: f64,
    /// Comparison direction for the dot_threshold scheme.
    pub structure_cmp: Cmp,
    /// Disjoint covering groups of token rows, when sub-prompts are used.
    pub subprompts: Option<Vec<Vec<usize>>>,
}

/// Cross-link weights from input nodes to tokens, with a diagnostics flag
/// for prompts that every node pruned away.
#[derive(Debug, Clone)]
pub struct CrossLinks {
    /// n x |P|; entry (i, k) is sigma(p_k . x_i) when it clears delta, else 0.
    pub weights: Tensor,
    pub disconnected: bool,
}

impl PromptGraph {
    pub const TOKENS: &'static str = "prompt.tokens";
    pub const STRUCTURE: &'static str = "prompt.structure";

    /// Tokens ~ uniform(-1/sqrt(d), 1/sqrt(d)); learnable pair scores start
    /// at 0 so every token edge begins at weight sigma(0) = 0.5.
    pub fn init(num_tokens: usize, d: usize, scheme: StructureScheme, seed: u64) -> Result<Self> {
        if num_tokens == 0 || d == 0 {
            return Err(Error::invalid("init_prompt: need num_tokens >= 1 and d >= 1"));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let tokens = Tensor::uniform(vec![num_tokens, d], 1.0 / (d as f64).sqrt(), &mut rng);
        let structure = match scheme {
            StructureScheme::Learnable => Tensor::zeros(vec![num_tokens * (num_tokens - 1) / 2]),
            _ => Tensor::zeros(vec![0]),
        };
        Ok(PromptGraph {
            tokens,
            scheme,
            structure,
            delta: 0.5,
            structure_cmp: Cmp::Gt,
            subprompts: None,
        })
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        if !(0.0 < delta && delta < 1.0) {
            return Err(Error::invalid(format!("delta {delta} not in (0, 1)")));
        }
        self.delta = delta;
        Ok(self)
    }

    pub fn with_structure_cmp(mut self, cmp: Cmp) -> Self {
        self.structure_cmp = cmp;
        self
    }

    /// Partitions the token rows into `groups` equal sub-prompts.
    pub fn with_subprompt_groups(mut self, groups: usize) -> Result<Self> {
        let n = self.num_tokens();
        if groups == 0 || groups > n {
            return Err(Error::invalid(format!("cannot split {n} tokens into {groups} groups")));
        }
        let mut parts = vec![Vec::new(); groups];
        for t in 0..n {
            parts[t * groups / n].push(t);
        }
        self.subprompts = Some(parts);
        Ok(self)
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.rows()
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    /// Tunable parameters: token matrix plus pair scores for the learnable
    /// scheme.
    pub fn param_set(&self) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert(Self::TOKENS, self.tokens.clone()).expect("fresh");
        if self.scheme == StructureScheme::Learnable {
            ps.insert(Self::STRUCTURE, self.structure.clone()).expect("fresh");
        }
        ps
    }

    /// Replaces parameter values from a set produced by [`Self::param_set`].
    pub fn set_params(&mut self, ps: &ParamSet) -> Result<()> {
        let tokens = ps
            .get(Self::TOKENS)
            .ok_or_else(|| Error::invalid("prompt params missing tokens"))?;
        if tokens.shape() != self.tokens.shape() {
            return Err(Error::ShapeMismatch {
                op: "PromptGraph::set_params",
                detail: "token shape changed".into(),
            });
        }
        self.tokens = tokens.clone();
        if self.scheme == StructureScheme::Learnable {
            let st = ps
                .get(Self::STRUCTURE)
                .ok_or_else(|| Error::invalid("prompt params missing structure"))?;
            self.structure = st.clone();
        }
        Ok(())
    }

    /// Weighted token-token edge list under the current scheme.
    pub fn token_edges(&self) -> Vec<(usize, usize, f64)> {
        let k = self.num_tokens();
        match self.scheme {
            StructureScheme::Independent => Vec::new(),
            StructureScheme::Learnable => {
                let mut out = Vec::with_capacity(k * (k - 1) / 2);
                let mut idx = 0;
                for i in 0..k {
                    for j in (i + 1)..k {
                        out.push((i, j, sigmoid(self.structure.data()[idx])));
                        idx += 1;
                    }
                }
                out
            }
            StructureScheme::DotThreshold => {
                let mut out = Vec::new();
                for i in 0..k {
                    for j in (i + 1)..k {
                        let dot: f64 = self
                            .tokens
                            .row(i)
                            .iter()
                            .zip(self.tokens.row(j))
                            .map(|(a, b)| a * b)
                            .sum();
                        let s = sigmoid(dot);
                        let keep = match self.structure_cmp {
                            Cmp::Gt => s > self.delta,
                            Cmp::Lt => s < self.delta,
                        };
                        if keep {
                            out.push((i, j, s));
                        }
                    }
                }
                out
            }
        }
    }

    /// Cross-link weights against a feature matrix (strict `> delta` prune).
    pub fn cross_links(&self, x: &Tensor) -> Result<CrossLinks> {
        if x.cols() != self.dim() {
            return Err(Error::ShapeMismatch {
                op: "cross_links",
                detail: format!("features d = {}, tokens d = {}", x.cols(), self.dim()),
            });
        }
        let n = x.rows();
        let k = self.num_tokens();
        let mut weights = Tensor::zeros(vec![n, k]);
        let mut any = false;
        for i in 0..n {
            for t in 0..k {
                let dot: f64 = x.row(i).iter().zip(self.tokens.row(t)).map(|(a, b)| a * b).sum();
                let s = sigmoid(dot);
                if s > self.delta {
                    weights.set2(i, t, s);
                    any = true;
                }
            }
        }
        Ok(CrossLinks {
            weights,
            disconnected: !any,
        })
    }

    /// A prompt containing only the given token rows (a sub-prompt view).
    /// Learnable pair scores are restricted to pairs inside the group.
    pub fn restricted_to(&self, group: &[usize]) -> Result<PromptGraph> {
        if group.is_empty() {
            return Err(Error::invalid("restricted_to: empty sub-prompt group"));
        }
        let k = self.num_tokens();
        let d = self.dim();
        let mut sorted = group.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != group.len() || *sorted.last().unwrap() >= k {
            return Err(Error::invalid("restricted_to: bad token indices"));
        }
        let mut tdata = Vec::with_capacity(sorted.len() * d);
        for &t in &sorted {
            tdata.extend_from_slice(self.tokens.row(t));
        }
        let tokens = Tensor::matrix(sorted.len(), d, tdata)?;
        let structure = if self.scheme == StructureScheme::Learnable {
            let mut sdata = Vec::new();
            for a in 0..sorted.len() {
                for b in (a + 1)..sorted.len() {
                    sdata.push(self.structure.data()[upper_index(sorted[a], sorted[b], k)]);
                }
            }
            Tensor::vector(sdata)
        } else {
            Tensor::zeros(vec![0])
        };
        Ok(PromptGraph {
            tokens,
            scheme: self.scheme,
            structure,
            delta: self.delta,
            structure_cmp: self.structure_cmp,
            subprompts: None,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new("prompt", self.param_set())
            .with_meta("scheme", self.scheme.as_str())
            .with_meta("delta", self.delta.to_string())
            .with_meta("tokens", self.num_tokens().to_string())
            .with_meta("d", self.dim().to_string())
            .with_meta(
                "structure_cmp",
                match self.structure_cmp {
                    Cmp::Gt => "gt",
                    Cmp::Lt => "lt",
                },
            );
        if let Some(parts) = &self.subprompts {
            let body = parts
                .iter()
                .map(|p| p.iter().map(usize::to_string).collect::<Vec<_>>().join(","))
                .collect::<Vec<_>>()
                .join(";");
            ckpt = ckpt.with_meta("subprompts", body);
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, path: &str) -> Result<PromptGraph> {
        if ckpt.tag != "prompt" {
            return Err(Error::BadCheckpoint {
                path: path.into(),
                msg: format!("expected tag 'prompt', found '{}'", ckpt.tag),
            });
        }
        let scheme: StructureScheme = ckpt.meta_parsed::<String>("scheme", path)?.parse()?;
        let delta: f64 = ckpt.meta_parsed("delta", path)?;
        let cmp = match ckpt.meta_value("structure_cmp") {
            Some("lt") => Cmp::Lt,
            _ => Cmp::Gt,
        };
        let tokens = ckpt
            .tensors
            .get(Self::TOKENS)
            .ok_or_else(|| Error::BadCheckpoint {
                path: path.into(),
                msg: "missing prompt.tokens".into(),
            })?
            .clone();
        let structure = ckpt
            .tensors
            .get(Self::STRUCTURE)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(vec![0]));
        let subprompts = match ckpt.meta_value("subprompts") {
            None => None,
            Some(body) => Some(
                body.split(';')
                    .map(|grp| {
                        grp.split(',')
                            .map(|t| {
                                t.parse::<usize>().map_err(|_| Error::BadCheckpoint {
                                    path: path.into(),
                                    msg: format!("bad subprompt index '{t}'"),
                                })
                            })
                            .collect::<Result<Vec<usize>>>()
                    })
                    .collect::<Result<Vec<Vec<usize>>>>()?,
            ),
        };
        let mut pg = PromptGraph {
            tokens,
            scheme,
            structure,
            delta: 0.5,
            structure_cmp: cmp,
            subprompts,
        };
        pg = pg.with_delta(delta)?;
        Ok(pg)
    }
}

/// Index of pair (i, j), i < j, in the upper-triangle enumeration of k items.
pub(crate) fn upper_index(i: usize, j: usize, k: usize) -> usize {
    debug_assert!(i < j && j < k);
    i * k - i * (i + 1) / 2 + (j - i - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tunable_scalar_counts() {
        let pg = PromptGraph::init(10, 100, StructureScheme::Learnable, 0).unwrap();
        assert_eq!(pg.param_set().count_scalars(), 1_045);
        let pg = PromptGraph::init(10, 100, StructureScheme::Independent, 0).unwrap();
        assert_eq!(pg.param_set().count_scalars(), 1_000);
    }

    #[test]
    fn init_is_deterministic() {
        let a = PromptGraph::init(5, 8, StructureScheme::Learnable, 42).unwrap();
        let b = PromptGraph::init(5, 8, StructureScheme::Learnable, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn independent_scheme_has_no_edges() {
        let pg = PromptGraph::init(6, 4, StructureScheme::Independent, 1).unwrap();
        assert!(pg.token_edges().is_empty());
    }

    #[test]
    fn learnable_zero_scores_give_complete_half_weight_graph() {
        let pg = PromptGraph::init(4, 4, StructureScheme::Learnable, 2).unwrap();
        let edges = pg.token_edges();
        assert_eq!(edges.len(), 6);
        for (_, _, w) in edges {
            assert_eq!(w, 0.5);
        }
    }

    #[test]
    fn dot_threshold_keeps_unit_vector_pair() {
        // identical unit tokens: sigma(1) ~ 0.7311 > 0.7
        let mut pg = PromptGraph::init(2, 2, StructureScheme::DotThreshold, 3).unwrap();
        pg = pg.with_delta(0.7).unwrap();
        pg.tokens = Tensor::matrix(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let edges = pg.token_edges();
        assert_eq!(edges.len(), 1);
        assert!((edges[0].2 - sigmoid(1.0)).abs() < 1e-12);
        // flipped comparison drops it
        let flipped = pg.clone().with_structure_cmp(Cmp::Lt);
        assert!(flipped.token_edges().is_empty());
    }

    #[test]
    fn cross_link_boundary_is_strict() {
        let mut pg = PromptGraph::init(1, 2, StructureScheme::Independent, 0).unwrap();
        pg.tokens = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap(); // dot = 0, sigma = 0.5
        let x = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        let links = pg.cross_links(&x).unwrap();
        assert_eq!(links.weights.data(), &[0.0]);
        assert!(links.disconnected);
    }

    #[test]
    fn strong_dot_cross_link() {
        let mut pg = PromptGraph::init(1, 1, StructureScheme::Independent, 0).unwrap();
        pg.tokens = Tensor::matrix(1, 1, vec![10.0]).unwrap();
        let x = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let links = pg.cross_links(&x).unwrap();
        assert!((links.weights.data()[0] - sigmoid(10.0)).abs() < 1e-12);
        assert!(!links.disconnected);
    }

    #[test]
    fn near_one_delta_disconnects_everything() {
        let pg = PromptGraph::init(3, 4, StructureScheme::Independent, 5)
            .unwrap()
            .with_delta(0.999_999)
            .unwrap();
        let x = Tensor::matrix(2, 4, vec![5.0; 8]).unwrap();
        let links = pg.cross_links(&x).unwrap();
        assert!(links.disconnected);
        assert!(links.weights.data().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn subprompt_partition_covers_disjointly() {
        let pg = PromptGraph::init(10, 4, StructureScheme::Learnable, 6)
            .unwrap()
            .with_subprompt_groups(3)
            .unwrap();
        let parts = pg.subprompts.as_ref().unwrap();
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn restriction_preserves_pair_scores() {
        let mut pg = PromptGraph::init(4, 3, StructureScheme::Learnable, 7).unwrap();
        let scores: Vec<f64> = (0..6).map(|i| i as f64 / 10.0).collect();
        pg.structure = Tensor::vector(scores);
        let sub = pg.restricted_to(&[1, 3]).unwrap();
        // pair (1,3) sits at upper index 4 in a 4-token prompt
        assert_eq!(sub.structure.data(), &[0.4]);
        assert_eq!(sub.tokens.row(0), pg.tokens.row(1));
        assert_eq!(sub.tokens.row(1), pg.tokens.row(3));
    }

    #[test]
    fn checkpoint_round_trip() {
        let pg = PromptGraph::init(6, 5, StructureScheme::Learnable, 8)
            .unwrap()
            .with_delta(0.4)
            .unwrap()
            .with_subprompt_groups(2)
            .unwrap();
        let ckpt = pg.to_checkpoint();
        let back = PromptGraph::from_checkpoint(&ckpt, "mem").unwrap();
        assert_eq!(pg, back);
    }

    #[test]
    fn delta_bounds_enforced() {
        let pg = PromptGraph::init(2, 2, StructureScheme::Independent, 0).unwrap();
        assert!(pg.clone().with_delta(0.0).is_err());
        assert!(pg.clone().with_delta(1.0).is_err());
        assert!(pg.with_delta(0.5).is_ok());
    }
}
