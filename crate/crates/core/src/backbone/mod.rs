//! Graph neural encoders (GCN, GAT), graph-level readout, parameter
//! accounting, and the checkpoint container.

mod checkpoint;
mod gat;
mod gcn;

pub use checkpoint::Checkpoint;
pub use gat::{gat_forward, GatParams};
pub use gcn::{gcn_forward, GcnParams};

use std::collections::BTreeMap;

use crate::diff::{NodeId, ParamSet, Reduction, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Graph-level pooling mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadoutMode {
    Sum,
    Mean,
}

impl std::str::FromStr for ReadoutMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(ReadoutMode::Sum),
            "mean" => Ok(ReadoutMode::Mean),
            other => Err(Error::invalid(format!("unknown readout mode '{other}'"))),
        }
    }
}

/// Encoder family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneKind {
    Gcn,
    Gat,
}

impl BackboneKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BackboneKind::Gcn => "gcn",
            BackboneKind::Gat => "gat",
        }
    }
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(BackboneKind::Gcn),
            "gat" => Ok(BackboneKind::Gat),
            other => Err(Error::invalid(format!("unknown backbone kind '{other}'"))),
        }
    }
}

/// Symmetric-normalized adjacency with self-loops:
/// `D^{-1/2} (A + I) D^{-1/2}`. A fully isolated node reduces to a
/// self-loop entry of exactly 1.
pub fn normalized_adjacency(g: &Graph) -> Result<Tensor> {
    let n = g.n();
    let mut a = g.dense_adjacency();
    for &(u, v, w) in g.edges() {
        if w < 0.0 {
            return Err(Error::invalid(format!("negative edge weight on ({u},{v})")));
        }
    }
    for i in 0..n {
        let v = a.get2(i, i) + 1.0;
        a.set2(i, i, v);
    }
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
    let s: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            let v = a.get2(i, j) * s[i] * s[j];
            a.set2(i, j, v);
        }
    }
    Ok(a)
}

/// On-tape version of [`normalized_adjacency`], differentiable through the
/// raw adjacency entries. `adj` is the weighted adjacency without self-loops.
pub fn normalized_adjacency_tape(tape: &mut Tape, adj: NodeId) -> Result<NodeId> {
    let n = tape.value(adj).rows();
    if tape.value(adj).cols() != n {
        return Err(Error::ShapeMismatch {
            op: "normalized_adjacency",
            detail: format!("{:?} is not square", tape.value(adj).shape()),
        });
    }
    let eye = tape.constant(Tensor::eye(n));
    let a1 = tape.add(adj, eye)?;
    let deg = tape.row_sum(a1)?;
    let s = tape.powf(deg, -0.5)?;
    let rows = tape.scale_rows(a1, s)?;
    tape.scale_cols(rows, s)
}

/// Pools node embeddings into a single `1 x h` graph representation over the
/// masked rows.
pub fn readout(tape: &mut Tape, h: NodeId, mode: ReadoutMode, node_mask: &[bool]) -> Result<NodeId> {
    let red = match mode {
        ReadoutMode::Sum => Reduction::Sum,
        ReadoutMode::Mean => Reduction::Mean,
    };
    tape.masked_reduce_rows(h, node_mask.to_vec(), red)
}

/// Total number of tunable scalars in a parameter set.
pub fn count_params(params: &ParamSet) -> usize {
    params.count_scalars()
}

/// An encoder configuration plus its current parameter values.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub kind: BackboneKind,
    pub d: usize,
    pub h: usize,
    pub heads: usize,
    params: ParamSet,
}

impl Encoder {
    pub const PARAM_PREFIX: &'static str = "enc.";

    pub fn init(kind: BackboneKind, d: usize, h: usize, heads: usize, seed: u64) -> Result<Self> {
        let params = match kind {
            BackboneKind::Gcn => GcnParams::init(d, h, seed).into_param_set(),
            BackboneKind::Gat => GatParams::init(d, h, heads, seed)?.into_param_set(),
        };
        Ok(Encoder {
            kind,
            d,
            h,
            heads,
            params,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        for name in self.params.names() {
            if params.get(name).is_none() {
                return Err(Error::invalid(format!("encoder params missing '{name}'")));
            }
        }
        self.params = params;
        Ok(())
    }

    /// Registers the encoder parameters on a tape. Trainable parameters
    /// become named leaves; a frozen encoder enters as constants, so no
    /// gradient can reach it by construction.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Result<BTreeMap<String, NodeId>> {
        let mut ids = BTreeMap::new();
        for (name, t) in self.params.iter() {
            let id = if trainable {
                tape.leaf(name.clone(), t.clone())?
            } else {
                tape.constant(t.clone())
            };
            ids.insert(name.clone(), id);
        }
        Ok(ids)
    }

    /// Encodes node features into `n x h` embeddings. `adj` is the raw
    /// weighted adjacency node (no self-loops); normalization or attention
    /// masking happens inside.
    pub fn encode(
        &self,
        tape: &mut Tape,
        ids: &BTreeMap<String, NodeId>,
        adj: NodeId,
        x: NodeId,
    ) -> Result<NodeId> {
        let get = |name: &str| -> Result<NodeId> {
            ids.get(name)
                .copied()
                .ok_or_else(|| Error::invalid(format!("encoder node '{name}' not registered")))
        };
        match self.kind {
            BackboneKind::Gcn => {
                let a_hat = normalized_adjacency_tape(tape, adj)?;
                gcn_forward(tape, a_hat, x, get("enc.w1")?, get("enc.w2")?)
            }
            BackboneKind::Gat => {
                let mask = gat::attention_mask(tape.value(adj));
                gat_forward(tape, &mask, x, ids, self.heads, self.h)
            }
        }
    }

    /// Convenience: embeds a standalone graph with this encoder and pools it.
    /// Returns the `1 x h` readout node.
    pub fn embed_graph(
        &self,
        tape: &mut Tape,
        g: &Graph,
        mode: ReadoutMode,
        trainable: bool,
    ) -> Result<NodeId> {
        let ids = self.register(tape, trainable)?;
        self.embed_graph_with(tape, &ids, g, mode)
    }

    /// Same as [`Self::embed_graph`] but with already-registered parameters
    /// (so several graphs can share one tape).
    pub fn embed_graph_with(
        &self,
        tape: &mut Tape,
        ids: &BTreeMap<String, NodeId>,
        g: &Graph,
        mode: ReadoutMode,
    ) -> Result<NodeId> {
        let adj = tape.constant(g.dense_adjacency());
        let x = tape.constant(g.features().clone());
        let h = self.encode(tape, ids, adj, x)?;
        readout(tape, h, mode, &vec![true; g.n()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{grad_check, Tape, GRAD_CHECK_EPS};

    fn tri_graph() -> Graph {
        Graph::new(
            3,
            vec![(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)],
            Tensor::zeros(vec![3, 2]),
            None,
        )
        .unwrap()
    }

    #[test]
    fn single_node_normalizes_to_one() {
        let g = Graph::new(1, vec![], Tensor::zeros(vec![1, 2]), None).unwrap();
        let a = normalized_adjacency(&g).unwrap();
        assert_eq!(a.data(), &[1.0]);
    }

    #[test]
    fn triangle_normalizes_to_third() {
        let a = normalized_adjacency(&tri_graph()).unwrap();
        for v in a.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn path_matches_hand_computation() {
        // path 0-1-2: degrees with self-loops are (2, 3, 2)
        let g = Graph::new(
            3,
            vec![(0, 1, 1.0), (1, 2, 1.0)],
            Tensor::zeros(vec![3, 2]),
            None,
        )
        .unwrap();
        let a = normalized_adjacency(&g).unwrap();
        let d = [2.0f64, 3.0, 2.0];
        for i in 0..3 {
            for j in 0..3 {
                let raw = if i == j {
                    1.0
                } else if (i as i64 - j as i64).abs() == 1 {
                    1.0
                } else {
                    0.0
                };
                let expect = raw / (d[i] * d[j]).sqrt();
                assert!((a.get2(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tape_normalization_matches_plain() {
        let g = tri_graph();
        let plain = normalized_adjacency(&g).unwrap();
        let mut tape = Tape::new();
        let adj = tape.constant(g.dense_adjacency());
        let id = normalized_adjacency_tape(&mut tape, adj).unwrap();
        for (a, b) in plain.data().iter().zip(tape.value(id).data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn readout_single_row_and_mean() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::matrix(3, 2, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap());
        let mean = readout(&mut tape, h, ReadoutMode::Mean, &[true, true, true]).unwrap();
        assert_eq!(tape.value(mean).data(), &[1.0, 2.0]);
        let single = readout(&mut tape, h, ReadoutMode::Sum, &[false, true, false]).unwrap();
        assert_eq!(tape.value(single).data(), &[1.0, 2.0]);
        assert!(readout(&mut tape, h, ReadoutMode::Sum, &[false, false, false]).is_err());
    }

    #[test]
    fn count_params_cases() {
        // GCN at Cora dimensions: 1433*100 + 100*100
        let enc = Encoder::init(BackboneKind::Gcn, 1433, 100, 1, 0).unwrap();
        assert_eq!(count_params(enc.params()), 153_300);
        assert_eq!(count_params(&ParamSet::new()), 0);
    }

    #[test]
    fn gradients_flow_through_normalization() {
        // loss depends on adjacency entries via normalization
        let loss = |tape: &mut Tape, leaves: &[(String, crate::diff::NodeId)]| {
            let raw = leaves[0].1;
            let sym = tape.mul(raw, raw)?; // keep entries positive
            let a_hat = normalized_adjacency_tape(tape, sym)?;
            let sq = tape.mul(a_hat, a_hat)?;
            tape.sum(sq)
        };
        let mut ps = ParamSet::new();
        ps.insert(
            "a",
            Tensor::matrix(3, 3, vec![0.0, 0.8, 0.3, 0.8, 0.0, 0.5, 0.3, 0.5, 0.0]).unwrap(),
        )
        .unwrap();
        let err = grad_check(&loss, &ps, GRAD_CHECK_EPS).unwrap();
        assert!(err < 1e-6, "err = {err}");
    }
}
