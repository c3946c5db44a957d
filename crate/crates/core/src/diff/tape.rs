use std::collections::BTreeSet;

use crate::diff::tensor::{matmul_raw, Tensor};
use crate::diff::ParamSet;
use crate::error::{Error, Result};

/// Index of a node on the tape.
pub type NodeId = usize;

/// Comparison direction for threshold pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Gt,
    Lt,
}

/// Reduction used by masked row readout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    /// (m,k) x (k,n) -> (m,n)
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product of same-shape tensors.
    Mul(NodeId, NodeId),
    /// Multiply by a compile-time scalar.
    Scale(NodeId, f64),
    /// Broadcast-add a 1-element node to every entry.
    AddScalar(NodeId, NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Exp(NodeId),
    Log(NodeId),
    /// Elementwise x^p for fixed p (domain x > 0 expected for fractional p).
    Powf(NodeId, f64),
    Sum(NodeId),
    Mean(NodeId),
    /// (m,n) -> (m,1)
    RowSum(NodeId),
    /// L2-normalize each row.
    RowNormalize(NodeId),
    /// Softmax along each row.
    SoftmaxRows(NodeId),
    /// Softmax per row restricted to `mask`; entries outside the mask are 0.
    MaskedSoftmaxRows(NodeId, Vec<bool>),
    /// Scale row i of the matrix by v[i].
    ScaleRows(NodeId, NodeId),
    /// Scale column j of the matrix by v[j].
    ScaleCols(NodeId, NodeId),
    /// out[i][j] = s[i] + t[j]
    AddOuter(NodeId, NodeId),
    Transpose(NodeId),
    /// Vertical concatenation; all parts share a column count.
    StackRows(Vec<NodeId>),
    /// Horizontal concatenation; all parts share a row count.
    ConcatCols(Vec<NodeId>),
    /// [[tl, tr], [bl, br]]
    Block2x2 {
        tl: NodeId,
        tr: NodeId,
        bl: NodeId,
        br: NodeId,
    },
    /// Symmetric k x k matrix with zero diagonal from an upper-triangle vector.
    SymFromUpper(NodeId, usize),
    /// Keep entries that compare against delta, zero the rest; gradient
    /// passes through kept entries only (the mask is treated as constant).
    ThresholdKeep(NodeId, f64, Cmp),
    /// Reduce the selected rows to a single 1 x n row.
    MaskedReduceRows(NodeId, Vec<bool>, Reduction),
    /// Mean binary cross-entropy over logits with fixed targets,
    /// computed in the numerically stable max(x,0) - x*y + ln(1+e^-|x|) form.
    BceWithLogits(NodeId, Vec<f64>),
}

struct Node {
    op: Op,
    value: Tensor,
    leaf_name: Option<String>,
}

/// Reverse-mode tape with eager forward evaluation.
///
/// Every recorded operation computes and caches its value immediately, and
/// errors out on shape mismatches or non-finite results. `backward` replays
/// the tape in reverse, accumulating vector-Jacobian products into the
/// gradients of the named leaves.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_names: BTreeSet<String>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Registers a non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_unchecked(Op::Constant, value, None)
    }

    /// Registers a differentiable parameter leaf under a unique name.
    pub fn leaf(&mut self, name: impl Into<String>, value: Tensor) -> Result<NodeId> {
        let name = name.into();
        if !self.leaf_names.insert(name.clone()) {
            return Err(Error::invalid(format!("duplicate leaf '{name}'")));
        }
        Ok(self.push_unchecked(Op::Leaf, value, Some(name)))
    }

    /// Registers every tensor of a ParamSet as a leaf, in name order.
    pub fn leaves(&mut self, params: &ParamSet) -> Result<Vec<(String, NodeId)>> {
        let mut out = Vec::with_capacity(params.len());
        for (name, t) in params.iter() {
            let id = self.leaf(name.clone(), t.clone())?;
            out.push((name.clone(), id));
        }
        Ok(out)
    }

    /// Registers a ParamSet as named leaves (trainable) or anonymous
    /// constants (frozen), returning a name-to-node map either way.
    pub fn register_params(
        &mut self,
        params: &ParamSet,
        trainable: bool,
    ) -> Result<std::collections::BTreeMap<String, NodeId>> {
        let mut ids = std::collections::BTreeMap::new();
        for (name, t) in params.iter() {
            let id = if trainable {
                self.leaf(name.clone(), t.clone())?
            } else {
                self.constant(t.clone())
            };
            ids.insert(name.clone(), id);
        }
        Ok(ids)
    }

    fn push_unchecked(&mut self, op: Op, value: Tensor, leaf_name: Option<String>) -> NodeId {
        self.nodes.push(Node { op, value, leaf_name });
        self.nodes.len() - 1
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let value = self.compute(&op)?;
        Ok(self.push_unchecked(op, value, None))
    }

    // ── recorded operations ─────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Matmul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        self.push(Op::AddScalar(a, s))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> Result<NodeId> {
        self.push(Op::LeakyRelu(a, slope))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Log(a))
    }

    pub fn powf(&mut self, a: NodeId, p: f64) -> Result<NodeId> {
        self.push(Op::Powf(a, p))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Mean(a))
    }

    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::RowSum(a))
    }

    pub fn row_normalize(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::RowNormalize(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::SoftmaxRows(a))
    }

    pub fn masked_softmax_rows(&mut self, a: NodeId, mask: Vec<bool>) -> Result<NodeId> {
        self.push(Op::MaskedSoftmaxRows(a, mask))
    }

    pub fn scale_rows(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        self.push(Op::ScaleRows(a, v))
    }

    pub fn scale_cols(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        self.push(Op::ScaleCols(a, v))
    }

    pub fn add_outer(&mut self, s: NodeId, t: NodeId) -> Result<NodeId> {
        self.push(Op::AddOuter(s, t))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Transpose(a))
    }

    pub fn stack_rows(&mut self, parts: Vec<NodeId>) -> Result<NodeId> {
        self.push(Op::StackRows(parts))
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> Result<NodeId> {
        self.push(Op::ConcatCols(parts))
    }

    pub fn block2x2(&mut self, tl: NodeId, tr: NodeId, bl: NodeId, br: NodeId) -> Result<NodeId> {
        self.push(Op::Block2x2 { tl, tr, bl, br })
    }

    pub fn sym_from_upper(&mut self, a: NodeId, k: usize) -> Result<NodeId> {
        self.push(Op::SymFromUpper(a, k))
    }

    pub fn threshold_keep(&mut self, a: NodeId, delta: f64, cmp: Cmp) -> Result<NodeId> {
        self.push(Op::ThresholdKeep(a, delta, cmp))
    }

    pub fn masked_reduce_rows(
        &mut self,
        a: NodeId,
        mask: Vec<bool>,
        red: Reduction,
    ) -> Result<NodeId> {
        self.push(Op::MaskedReduceRows(a, mask, red))
    }

    pub fn bce_with_logits(&mut self, logits: NodeId, targets: Vec<f64>) -> Result<NodeId> {
        self.push(Op::BceWithLogits(logits, targets))
    }

    // ── forward evaluation ──────────────────────────────────────────

    fn shape_err(op: &'static str, detail: String) -> Error {
        Error::ShapeMismatch { op, detail }
    }

    fn compute(&self, op: &Op) -> Result<Tensor> {
        let v = |id: NodeId| &self.nodes[id].value;
        let out = match op {
            Op::Leaf | Op::Constant => unreachable!("leaves are pushed directly"),
            Op::Matmul(a, b) => v(*a).matmul(v(*b))?,
            Op::Add(a, b) => zip_same("add", v(*a), v(*b), |x, y| x + y)?,
            Op::Sub(a, b) => zip_same("sub", v(*a), v(*b), |x, y| x - y)?,
            Op::Mul(a, b) => zip_same("mul", v(*a), v(*b), |x, y| x * y)?,
            Op::Scale(a, c) => map(v(*a), |x| x * c),
            Op::AddScalar(a, s) => {
                let sv = v(*s);
                if !sv.is_scalar() {
                    return Err(Self::shape_err("add_scalar", format!("{:?}", sv.shape())));
                }
                let c = sv.value();
                map(v(*a), |x| x + c)
            }
            Op::Sigmoid(a) => map(v(*a), sigmoid),
            Op::Relu(a) => map(v(*a), |x| if x > 0.0 { x } else { 0.0 }),
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                map(v(*a), move |x| if x > 0.0 { x } else { s * x })
            }
            Op::Exp(a) => map(v(*a), f64::exp),
            Op::Log(a) => map(v(*a), f64::ln),
            Op::Powf(a, p) => {
                let p = *p;
                map(v(*a), move |x| x.powf(p))
            }
            Op::Sum(a) => Tensor::scalar(v(*a).data().iter().sum()),
            Op::Mean(a) => {
                let t = v(*a);
                Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64)
            }
            Op::RowSum(a) => {
                let t = v(*a);
                let (m, n) = (t.rows(), t.cols());
                let data = (0..m).map(|i| t.data()[i * n..(i + 1) * n].iter().sum()).collect();
                Tensor::new(vec![m, 1], data)?
            }
            Op::RowNormalize(a) => {
                let t = v(*a);
                let (m, n) = (t.rows(), t.cols());
                let mut out = t.data().to_vec();
                for i in 0..m {
                    let row = &mut out[i * n..(i + 1) * n];
                    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        return Err(Error::invalid(format!("row_normalize: zero-norm row {i}")));
                    }
                    row.iter_mut().for_each(|x| *x /= norm);
                }
                Tensor::new(t.shape().to_vec(), out)?
            }
            Op::SoftmaxRows(a) => {
                let t = v(*a);
                let (m, n) = (t.rows(), t.cols());
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    softmax_into(t.row(i), &mut out[i * n..(i + 1) * n], None);
                }
                Tensor::new(vec![m, n], out)?
            }
            Op::MaskedSoftmaxRows(a, mask) => {
                let t = v(*a);
                let (m, n) = (t.rows(), t.cols());
                if mask.len() != m * n {
                    return Err(Self::shape_err(
                        "masked_softmax_rows",
                        format!("mask len {} vs {}x{}", mask.len(), m, n),
                    ));
                }
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    let rmask = &mask[i * n..(i + 1) * n];
                    if !rmask.iter().any(|&b| b) {
                        return Err(Error::invalid(format!(
                            "masked_softmax_rows: row {i} has empty mask"
                        )));
                    }
                    softmax_into(t.row(i), &mut out[i * n..(i + 1) * n], Some(rmask));
                }
                Tensor::new(vec![m, n], out)?
            }
            Op::ScaleRows(a, s) => {
                let (t, sv) = (v(*a), v(*s));
                let (m, n) = (t.rows(), t.cols());
                if sv.numel() != m {
                    return Err(Self::shape_err("scale_rows", format!("{} vs {m} rows", sv.numel())));
                }
                let mut out = t.data().to_vec();
                for i in 0..m {
                    let c = sv.data()[i];
                    out[i * n..(i + 1) * n].iter_mut().for_each(|x| *x *= c);
                }
                Tensor::new(t.shape().to_vec(), out)?
            }
            Op::ScaleCols(a, s) => {
                let (t, sv) = (v(*a), v(*s));
                let (m, n) = (t.rows(), t.cols());
                if sv.numel() != n {
                    return Err(Self::shape_err("scale_cols", format!("{} vs {n} cols", sv.numel())));
                }
                let mut out = t.data().to_vec();
                for i in 0..m {
                    for j in 0..n {
                        out[i * n + j] *= sv.data()[j];
                    }
                }
                Tensor::new(t.shape().to_vec(), out)?
            }
            Op::AddOuter(s, t) => {
                let (sv, tv) = (v(*s), v(*t));
                let (m, n) = (sv.numel(), tv.numel());
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        out[i * n + j] = sv.data()[i] + tv.data()[j];
                    }
                }
                Tensor::new(vec![m, n], out)?
            }
            Op::Transpose(a) => v(*a).transpose(),
            Op::StackRows(parts) => {
                if parts.is_empty() {
                    return Err(Error::invalid("stack_rows: empty part list"));
                }
                let n = v(parts[0]).cols();
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let t = v(p);
                    if t.cols() != n {
                        return Err(Self::shape_err(
                            "stack_rows",
                            format!("{} vs {n} cols", t.cols()),
                        ));
                    }
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                Tensor::new(vec![rows, n], data)?
            }
            Op::ConcatCols(parts) => {
                if parts.is_empty() {
                    return Err(Error::invalid("concat_cols: empty part list"));
                }
                let m = v(parts[0]).rows();
                let total: usize = parts.iter().map(|&p| v(p).cols()).sum();
                let mut out = vec![0.0; m * total];
                let mut off = 0;
                for &p in parts {
                    let t = v(p);
                    if t.rows() != m {
                        return Err(Self::shape_err(
                            "concat_cols",
                            format!("{} vs {m} rows", t.rows()),
                        ));
                    }
                    let n = t.cols();
                    for i in 0..m {
                        out[i * total + off..i * total + off + n].copy_from_slice(t.row(i));
                    }
                    off += n;
                }
                Tensor::new(vec![m, total], out)?
            }
            Op::Block2x2 { tl, tr, bl, br } => {
                let (a, b, c, d) = (v(*tl), v(*tr), v(*bl), v(*br));
                let (m1, n1) = (a.rows(), a.cols());
                let (m2, n2) = (d.rows(), d.cols());
                if b.rows() != m1 || b.cols() != n2 || c.rows() != m2 || c.cols() != n1 {
                    return Err(Self::shape_err(
                        "block2x2",
                        format!(
                            "tl {:?} tr {:?} bl {:?} br {:?}",
                            a.shape(),
                            b.shape(),
                            c.shape(),
                            d.shape()
                        ),
                    ));
                }
                let (m, n) = (m1 + m2, n1 + n2);
                let mut out = vec![0.0; m * n];
                for i in 0..m1 {
                    out[i * n..i * n + n1].copy_from_slice(a.row(i));
                    out[i * n + n1..(i + 1) * n].copy_from_slice(b.row(i));
                }
                for i in 0..m2 {
                    out[(m1 + i) * n..(m1 + i) * n + n1].copy_from_slice(c.row(i));
                    out[(m1 + i) * n + n1..(m1 + i + 1) * n].copy_from_slice(d.row(i));
                }
                Tensor::new(vec![m, n], out)?
            }
            Op::SymFromUpper(a, k) => {
                let t = v(*a);
                let k = *k;
                if t.numel() != k * (k.saturating_sub(1)) / 2 {
                    return Err(Self::shape_err(
                        "sym_from_upper",
                        format!("{} entries for k={k}", t.numel()),
                    ));
                }
                let mut out = vec![0.0; k * k];
                let mut idx = 0;
                for i in 0..k {
                    for j in (i + 1)..k {
                        out[i * k + j] = t.data()[idx];
                        out[j * k + i] = t.data()[idx];
                        idx += 1;
                    }
                }
                Tensor::new(vec![k, k], out)?
            }
            Op::ThresholdKeep(a, delta, cmp) => {
                let (d, c) = (*delta, *cmp);
                map(v(*a), move |x| {
                    let keep = match c {
                        Cmp::Gt => x > d,
                        Cmp::Lt => x < d,
                    };
                    if keep {
                        x
                    } else {
                        0.0
                    }
                })
            }
            Op::MaskedReduceRows(a, mask, red) => {
                let t = v(*a);
                let (m, n) = (t.rows(), t.cols());
                if mask.len() != m {
                    return Err(Self::shape_err(
                        "masked_reduce_rows",
                        format!("mask len {} vs {m} rows", mask.len()),
                    ));
                }
                let count = mask.iter().filter(|&&b| b).count();
                if count == 0 {
                    return Err(Error::invalid("masked_reduce_rows: empty mask"));
                }
                let mut out = vec![0.0; n];
                for i in 0..m {
                    if mask[i] {
                        for j in 0..n {
                            out[j] += t.data()[i * n + j];
                        }
                    }
                }
                if *red == Reduction::Mean {
                    out.iter_mut().for_each(|x| *x /= count as f64);
                }
                Tensor::new(vec![1, n], out)?
            }
            Op::BceWithLogits(a, targets) => {
                let t = v(*a);
                if t.numel() != targets.len() {
                    return Err(Self::shape_err(
                        "bce_with_logits",
                        format!("{} logits vs {} targets", t.numel(), targets.len()),
                    ));
                }
                let total: f64 = t
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
                    .sum();
                Tensor::scalar(total / targets.len() as f64)
            }
        };
        if !out.all_finite() {
            return Err(Error::NonFinite { op: op_name(op) });
        }
        Ok(out)
    }

    // ── backward pass ───────────────────────────────────────────────

    /// Reverse accumulation from a scalar loss node. Returns one gradient per
    /// leaf, keyed by leaf name; leaves the loss does not reach get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<ParamSet> {
        if !self.nodes[loss].value.is_scalar() {
            return Err(Error::invalid(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.nodes[loss].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(vec![1.0]);

        for id in (0..=loss).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_op(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let mut out = ParamSet::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.leaf_name {
                let data = grads[id]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                out.insert(name.clone(), Tensor::new(node.value.shape().to_vec(), data)?)?;
            }
        }
        Ok(out)
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, delta: &[f64]) {
        match &mut grads[id] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => grads[id] = Some(delta.to_vec()),
        }
    }

    fn backward_op(&self, id: NodeId, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let v = |i: NodeId| &self.nodes[i].value;
        match &self.nodes[id].op {
            Op::Leaf | Op::Constant => {}
            Op::Matmul(a, b) => {
                let (av, bv) = (v(*a), v(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                // dA = G B^T
                let bt = bv.transpose();
                let da = matmul_raw(g, bt.data(), m, n, k);
                Self::accumulate(grads, *a, &da);
                // dB = A^T G
                let at = av.transpose();
                let db = matmul_raw(at.data(), g, k, m, n);
                Self::accumulate(grads, *b, &db);
            }
            Op::Add(a, b) => {
                Self::accumulate(grads, *a, g);
                Self::accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                Self::accumulate(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                Self::accumulate(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g.iter().zip(v(*b).data()).map(|(x, y)| x * y).collect();
                let db: Vec<f64> = g.iter().zip(v(*a).data()).map(|(x, y)| x * y).collect();
                Self::accumulate(grads, *a, &da);
                Self::accumulate(grads, *b, &db);
            }
            Op::Scale(a, c) => {
                let da: Vec<f64> = g.iter().map(|x| x * c).collect();
                Self::accumulate(grads, *a, &da);
            }
            Op::AddScalar(a, s) => {
                Self::accumulate(grads, *a, g);
                Self::accumulate(grads, *s, &[g.iter().sum()]);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[id].value;
                let da: Vec<f64> = g
                    .iter()
                    .zip(y.data())
                    .map(|(x, s)| x * s * (1.0 - s))
                    .collect();
                Self::accumulate(grads, *a, &da);
            }
            Op::Relu(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(v(*a).data())
                    .map(|(x, &i)| if i > 0.0 { *x } else { 0.0 })
                    .collect();
                Self::accumulate(grads, *a, &da);
            }
            Op::LeakyRelu(a, slope) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(v(*a).data())
                    .map(|(x, &i)| if i > 0.0 { *x } else { slope * x })
                    .collect();
                Self::accumulate(grads, *a, &da);
            }
            Op::Exp(a) => {
                let y = &self.nodes[id].value;
                let da: Vec<f64> = g.iter().zip(y.data()).map(|(x, e)| x * e).collect();
                Self::accumulate(grads, *a, &da);
            }
            Op::Log(a) => {
                let da: Vec<f64> = g.iter().zip(v(*a).data()).map(|(x, i)| x / i).collect();
                Self::accumulate(grads, *a, &da);
            }
            Op::Powf(a, p) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(v(*a).data())
                    .map(|(x, &i)| x * p * i.powf(p - 1.0))
                    .collect();
                Self::accumulate(grads, *a, &da);
            }
            Op::Sum(a) => {
                let da = vec![g[0]; v(*a).numel()];
                Self::accumulate(grads, *a, &da);
            }
            Op::Mean(a) => {
                let n = v(*a).numel();
                let da = vec![g[0] / n as f64; n];
                Self::accumulate(grads, *a, &da);
            }
            Op::RowSum(a) => {
                let t = v(*a);
                let (m, n) = (t.rows(), t.cols());
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    da[i * n..(i + 1) * n].iter_mut().for_each(|x| *x = g[i]);
                }
                Self::accumulate(grads, *a, &da);
            }
            Op::RowNormalize(a) => {
                let t = v(*a);
                let y = &self.nodes[id].value;
                let (m, n) = (t.rows(), t.cols());
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let xr = t.row(i);
                    let yr = y.row(i);
                    let gr = &g[i * n..(i + 1) * n];
                    let norm = xr.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        da[i * n + j] = (gr[j] - dot * yr[j]) / norm;
                    }
                }
                Self::accumulate(grads, *a, &da);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[id].value;
                let (m, n) = (y.rows(), y.cols());
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let yr = y.row(i);
                    let gr = &g[i * n..(i + 1) * n];
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        da[i * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                Self::accumulate(grads, *a, &da);
            }
            Op::MaskedSoftmaxRows(a, mask) => {
                let y = &self.nodes[id].value;
                let (m, n) = (y.rows(), y.cols());
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let yr = y.row(i);
                    let gr = &g[i * n..(i + 1) * n];
                    let rmask = &mask[i * n..(i + 1) * n];
                    let dot: f64 = (0..n).filter(|&j| rmask[j]).map(|j| gr[j] * yr[j]).sum();
                    for j in 0..n {
                        if rmask[j] {
                            da[i * n + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                }
                Self::accumulate(grads, *a, &da);
            }
            Op::ScaleRows(a, s) => {
                let (t, sv) = (v(*a), v(*s));
                let (m, n) = (t.rows(), t.cols());
                let mut da = vec![0.0; m * n];
                let mut ds = vec![0.0; m];
                for i in 0..m {
                    let c = sv.data()[i];
                    for j in 0..n {
                        da[i * n + j] = g[i * n + j] * c;
                        ds[i] += g[i * n + j] * t.data()[i * n + j];
                    }
                }
                Self::accumulate(grads, *a, &da);
                Self::accumulate(grads, *s, &ds);
            }
            Op::ScaleCols(a, s) => {
                let (t, sv) = (v(*a), v(*s));
                let (m, n) = (t.rows(), t.cols());
                let mut da = vec![0.0; m * n];
                let mut ds = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] = g[i * n + j] * sv.data()[j];
                        ds[j] += g[i * n + j] * t.data()[i * n + j];
                    }
                }
                Self::accumulate(grads, *a, &da);
                Self::accumulate(grads, *s, &ds);
            }
            Op::AddOuter(s, t) => {
                let (m, n) = (v(*s).numel(), v(*t).numel());
                let mut ds = vec![0.0; m];
                let mut dt = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        ds[i] += g[i * n + j];
                        dt[j] += g[i * n + j];
                    }
                }
                Self::accumulate(grads, *s, &ds);
                Self::accumulate(grads, *t, &dt);
            }
            Op::Transpose(a) => {
                let t = v(*a);
                let (m, n) = (t.rows(), t.cols());
                // gradient has shape (n, m); transpose it back
                let mut da = vec![0.0; m * n];
                for i in 0..n {
                    for j in 0..m {
                        da[j * n + i] = g[i * m + j];
                    }
                }
                Self::accumulate(grads, *a, &da);
            }
            Op::StackRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let cnt = v(p).numel();
                    Self::accumulate(grads, p, &g[off..off + cnt]);
                    off += cnt;
                }
            }
            Op::ConcatCols(parts) => {
                let m = v(parts[0]).rows();
                let total: usize = parts.iter().map(|&p| v(p).cols()).sum();
                let mut off = 0;
                for &p in parts {
                    let n = v(p).cols();
                    let mut dp = vec![0.0; m * n];
                    for i in 0..m {
                        dp[i * n..(i + 1) * n]
                            .copy_from_slice(&g[i * total + off..i * total + off + n]);
                    }
                    Self::accumulate(grads, p, &dp);
                    off += n;
                }
            }
            Op::Block2x2 { tl, tr, bl, br } => {
                let (m1, n1) = (v(*tl).rows(), v(*tl).cols());
                let (m2, n2) = (v(*br).rows(), v(*br).cols());
                let n = n1 + n2;
                let mut dtl = vec![0.0; m1 * n1];
                let mut dtr = vec![0.0; m1 * n2];
                let mut dbl = vec![0.0; m2 * n1];
                let mut dbr = vec![0.0; m2 * n2];
                for i in 0..m1 {
                    dtl[i * n1..(i + 1) * n1].copy_from_slice(&g[i * n..i * n + n1]);
                    dtr[i * n2..(i + 1) * n2].copy_from_slice(&g[i * n + n1..(i + 1) * n]);
                }
                for i in 0..m2 {
                    let base = (m1 + i) * n;
                    dbl[i * n1..(i + 1) * n1].copy_from_slice(&g[base..base + n1]);
                    dbr[i * n2..(i + 1) * n2].copy_from_slice(&g[base + n1..base + n]);
                }
                Self::accumulate(grads, *tl, &dtl);
                Self::accumulate(grads, *tr, &dtr);
                Self::accumulate(grads, *bl, &dbl);
                Self::accumulate(grads, *br, &dbr);
            }
            Op::SymFromUpper(a, k) => {
                let k = *k;
                let mut da = vec![0.0; k * (k - 1) / 2];
                let mut idx = 0;
                for i in 0..k {
                    for j in (i + 1)..k {
                        da[idx] = g[i * k + j] + g[j * k + i];
                        idx += 1;
                    }
                }
                Self::accumulate(grads, *a, &da);
            }
            Op::ThresholdKeep(a, delta, cmp) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(v(*a).data())
                    .map(|(x, &i)| {
                        let keep = match cmp {
                            Cmp::Gt => i > *delta,
                            Cmp::Lt => i < *delta,
                        };
                        if keep {
                            *x
                        } else {
                            0.0
                        }
                    })
                    .collect();
                Self::accumulate(grads, *a, &da);
            }
            Op::MaskedReduceRows(a, mask, red) => {
                let t = v(*a);
                let (m, n) = (t.rows(), t.cols());
                let count = mask.iter().filter(|&&b| b).count() as f64;
                let scale = match red {
                    Reduction::Sum => 1.0,
                    Reduction::Mean => 1.0 / count,
                };
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    if mask[i] {
                        for j in 0..n {
                            da[i * n + j] = g[j] * scale;
                        }
                    }
                }
                Self::accumulate(grads, *a, &da);
            }
            Op::BceWithLogits(a, targets) => {
                let t = v(*a);
                let b = targets.len() as f64;
                let da: Vec<f64> = t
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&x, &y)| g[0] * (sigmoid(x) - y) / b)
                    .collect();
                Self::accumulate(grads, *a, &da);
            }
        }
    }

    // ── diagnostics ─────────────────────────────────────────────────

    /// Recomputes every non-leaf node from its inputs and checks that the
    /// cached values are reproduced bit-exactly.
    pub fn replay(&self) -> Result<()> {
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf | Op::Constant) {
                continue;
            }
            let recomputed = self.compute(&node.op)?;
            if recomputed.data() != node.value.data() {
                return Err(Error::invalid(format!("replay mismatch at node {id}")));
            }
        }
        Ok(())
    }

    /// Smallest distance of any recorded relu / threshold input to its kink.
    /// Infinite when the tape holds no piecewise-linear operation.
    pub fn min_kink_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        let v = |i: NodeId| &self.nodes[i].value;
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) | Op::LeakyRelu(a, _) => {
                    for &x in v(*a).data() {
                        best = best.min(x.abs());
                    }
                }
                Op::ThresholdKeep(a, delta, _) => {
                    for &x in v(*a).data() {
                        best = best.min((x - delta).abs());
                    }
                }
                _ => {}
            }
        }
        best
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Constant => "constant",
        Op::Matmul(..) => "matmul",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::AddScalar(..) => "add_scalar",
        Op::Sigmoid(..) => "sigmoid",
        Op::Relu(..) => "relu",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::Exp(..) => "exp",
        Op::Log(..) => "log",
        Op::Powf(..) => "powf",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::RowSum(..) => "row_sum",
        Op::RowNormalize(..) => "row_normalize",
        Op::SoftmaxRows(..) => "softmax_rows",
        Op::MaskedSoftmaxRows(..) => "masked_softmax_rows",
        Op::ScaleRows(..) => "scale_rows",
        Op::ScaleCols(..) => "scale_cols",
        Op::AddOuter(..) => "add_outer",
        Op::Transpose(..) => "transpose",
        Op::StackRows(..) => "stack_rows",
        Op::ConcatCols(..) => "concat_cols",
        Op::Block2x2 { .. } => "block2x2",
        Op::SymFromUpper(..) => "sym_from_upper",
        Op::ThresholdKeep(..) => "threshold_keep",
        Op::MaskedReduceRows(..) => "masked_reduce_rows",
        Op::BceWithLogits(..) => "bce_with_logits",
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
        .expect("same shape")
}

fn zip_same(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn softmax_into(row: &[f64], out: &mut [f64], mask: Option<&[bool]>) {
    let included = |j: usize| mask.map_or(true, |m| m[j]);
    let mut max = f64::NEG_INFINITY;
    for (j, &x) in row.iter().enumerate() {
        if included(j) && x > max {
            max = x;
        }
    }
    let mut total = 0.0;
    for (j, &x) in row.iter().enumerate() {
        if included(j) {
            let e = (x - max).exp();
            out[j] = e;
            total += e;
        } else {
            out[j] = 0.0;
        }
    }
    for (j, o) in out.iter_mut().enumerate() {
        if included(j) {
            *o /= total;
        }
    }
}
