use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::backbone::{readout, Checkpoint, Encoder, ReadoutMode};
use crate::diff::{sigmoid, NodeId, ParamSet, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::optim::{sgd_step, Adam};
use crate::prompt::{insert_tape, InsertionMode, PromptGraph};

/// Per-task loss family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    BinaryCe,
    Mse,
}

/// Linear task head: a weight column plus a scalar bias mapping a pooled
/// embedding to one output. The same shape serves binary classification
/// (through a sigmoid) and regression (raw).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl HeadParams {
    pub const W: &'static str = "head.w";
    pub const B: &'static str = "head.b";

    pub fn init(h: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        HeadParams {
            w: Tensor::uniform(vec![h, 1], 1.0 / (h as f64).sqrt(), &mut rng),
            b: Tensor::scalar(0.0),
        }
    }

    pub fn zeros(h: usize) -> Self {
        HeadParams {
            w: Tensor::zeros(vec![h, 1]),
            b: Tensor::scalar(0.0),
        }
    }

    pub fn param_set(&self) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert(Self::W, self.w.clone()).expect("fresh");
        ps.insert(Self::B, self.b.clone()).expect("fresh");
        ps
    }

    pub fn set_params(&mut self, ps: &ParamSet) -> Result<()> {
        self.w = ps
            .get(Self::W)
            .ok_or_else(|| Error::invalid("head params missing w"))?
            .clone();
        self.b = ps
            .get(Self::B)
            .ok_or_else(|| Error::invalid("head params missing b"))?
            .clone();
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new("head", self.param_set())
    }
}

/// A full scoring path: encoder, optional prompt, task head, with
/// per-component trainability flags. The frozen components are registered as
/// tape constants, so no gradient can reach them by construction.
#[derive(Debug, Clone)]
pub struct ScoringModel {
    pub encoder: Encoder,
    pub prompt: Option<PromptGraph>,
    pub head: HeadParams,
    pub insertion: InsertionMode,
    pub readout: ReadoutMode,
    pub train_encoder: bool,
    pub train_prompt: bool,
    pub train_head: bool,
}

impl ScoringModel {
    /// Standard prompt pipeline: frozen backbone, tunable prompt and head.
    pub fn prompted(encoder: Encoder, prompt: PromptGraph, head: HeadParams) -> Self {
        ScoringModel {
            encoder,
            prompt: Some(prompt),
            head,
            insertion: InsertionMode::GraphAugment,
            readout: ReadoutMode::Mean,
            train_encoder: false,
            train_prompt: true,
            train_head: true,
        }
    }

    /// Head-only tuning over a frozen backbone (the fine-tune arm).
    pub fn head_only(encoder: Encoder, head: HeadParams) -> Self {
        ScoringModel {
            encoder,
            prompt: None,
            head,
            insertion: InsertionMode::GraphAugment,
            readout: ReadoutMode::Mean,
            train_encoder: false,
            train_prompt: false,
            train_head: true,
        }
    }

    /// Backbone plus head trained from scratch (the supervised arm).
    pub fn supervised(encoder: Encoder, head: HeadParams) -> Self {
        ScoringModel {
            encoder,
            prompt: None,
            head,
            insertion: InsertionMode::GraphAugment,
            readout: ReadoutMode::Mean,
            train_encoder: true,
            train_prompt: false,
            train_head: true,
        }
    }

    pub fn with_insertion(mut self, mode: InsertionMode) -> Self {
        self.insertion = mode;
        self
    }

    pub fn with_readout(mut self, mode: ReadoutMode) -> Self {
        self.readout = mode;
        self
    }

    pub fn with_train_head(mut self, train: bool) -> Self {
        self.train_head = train;
        self
    }

    pub fn with_train_prompt(mut self, train: bool) -> Self {
        self.train_prompt = train;
        self
    }

    /// The tunable ParamSet under the current flags.
    pub fn tunable_params(&self) -> ParamSet {
        let mut ps = ParamSet::new();
        if self.train_encoder {
            ps = ps.merged(self.encoder.params().clone()).expect("prefixes differ");
        }
        if self.train_prompt {
            if let Some(pg) = &self.prompt {
                ps = ps.merged(pg.param_set()).expect("prefixes differ");
            }
        }
        if self.train_head {
            ps = ps.merged(self.head.param_set()).expect("prefixes differ");
        }
        ps
    }

    /// Writes updated tunable values back into the model.
    pub fn apply_params(&mut self, ps: &ParamSet) -> Result<()> {
        if self.train_encoder {
            let enc = ps.with_prefix(Encoder::PARAM_PREFIX);
            self.encoder.set_params(enc)?;
        }
        if self.train_prompt {
            if let Some(pg) = &mut self.prompt {
                pg.set_params(ps)?;
            }
        }
        if self.train_head {
            self.head.set_params(ps)?;
        }
        Ok(())
    }

    /// Registers every component on the tape: tunable ones come from `ids`
    /// (already-registered leaves), frozen ones are added as constants.
    /// Returns (encoder ids, prompt ids, head w, head b).
    #[allow(clippy::type_complexity)]
    fn register_frozen(
        &self,
        tape: &mut Tape,
        ids: &BTreeMap<String, NodeId>,
    ) -> Result<(
        BTreeMap<String, NodeId>,
        BTreeMap<String, NodeId>,
        NodeId,
        NodeId,
    )> {
        let enc_ids = if self.train_encoder {
            self.subset(ids, Encoder::PARAM_PREFIX)?
        } else {
            tape.register_params(self.encoder.params(), false)?
        };
        let prompt_ids = match &self.prompt {
            None => BTreeMap::new(),
            Some(pg) => {
                if self.train_prompt {
                    self.subset(ids, "prompt.")?
                } else {
                    tape.register_params(&pg.param_set(), false)?
                }
            }
        };
        let (w, b) = if self.train_head {
            (
                *ids.get(HeadParams::W)
                    .ok_or_else(|| Error::invalid("missing head.w leaf"))?,
                *ids.get(HeadParams::B)
                    .ok_or_else(|| Error::invalid("missing head.b leaf"))?,
            )
        } else {
            (
                tape.constant(self.head.w.clone()),
                tape.constant(self.head.b.clone()),
            )
        };
        Ok((enc_ids, prompt_ids, w, b))
    }

    fn subset(
        &self,
        ids: &BTreeMap<String, NodeId>,
        prefix: &str,
    ) -> Result<BTreeMap<String, NodeId>> {
        let out: BTreeMap<String, NodeId> = ids
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, &v)| (k.clone(), v))
            .collect();
        if out.is_empty() {
            return Err(Error::invalid(format!("no '{prefix}*' leaves registered")));
        }
        Ok(out)
    }

    /// Pooled embedding node of one (possibly prompted) graph.
    fn embed_node(
        &self,
        tape: &mut Tape,
        enc_ids: &BTreeMap<String, NodeId>,
        prompt_ids: &BTreeMap<String, NodeId>,
        g: &Graph,
    ) -> Result<NodeId> {
        let (features, adjacency, mask) = match &self.prompt {
            Some(pg) => {
                let inserted = insert_tape(tape, g, pg, prompt_ids, self.insertion)?;
                (inserted.features, inserted.adjacency, inserted.original_mask)
            }
            None => (
                tape.constant(g.features().clone()),
                tape.constant(g.dense_adjacency()),
                vec![true; g.n()],
            ),
        };
        let h = self.encoder.encode(tape, enc_ids, adjacency, features)?;
        readout(tape, h, self.readout, &mask)
    }

    /// Raw head output (`1 x 1` node) for one graph.
    fn logit_node(
        &self,
        tape: &mut Tape,
        enc_ids: &BTreeMap<String, NodeId>,
        prompt_ids: &BTreeMap<String, NodeId>,
        w: NodeId,
        b: NodeId,
        g: &Graph,
    ) -> Result<NodeId> {
        let z = self.embed_node(tape, enc_ids, prompt_ids, g)?;
        let zw = tape.matmul(z, w)?;
        tape.add_scalar(zw, b)
    }

    /// Mean loss over a labeled batch, recorded against the tunable leaves
    /// in `ids`.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        ids: &BTreeMap<String, NodeId>,
        samples: &[(&Graph, f64)],
        kind: LossKind,
    ) -> Result<NodeId> {
        if samples.is_empty() {
            return Err(Error::invalid("batch_loss: empty sample set"));
        }
        let (enc_ids, prompt_ids, w, b) = self.register_frozen(tape, ids)?;
        let mut logits = Vec::with_capacity(samples.len());
        for (g, _) in samples {
            logits.push(self.logit_node(tape, &enc_ids, &prompt_ids, w, b, g)?);
        }
        let stacked = tape.stack_rows(logits)?;
        let targets: Vec<f64> = samples.iter().map(|(_, y)| *y).collect();
        match kind {
            LossKind::BinaryCe => tape.bce_with_logits(stacked, targets),
            LossKind::Mse => {
                let t = tape.constant(Tensor::matrix(targets.len(), 1, targets)?);
                let diff = tape.sub(stacked, t)?;
                let sq = tape.mul(diff, diff)?;
                tape.mean(sq)
            }
        }
    }

    /// Score of one sample with the current parameter values:
    /// sigmoid(logit) for binary heads, the raw output for regression.
    pub fn score(&self, g: &Graph, kind: LossKind) -> Result<f64> {
        let mut tape = Tape::new();
        let ids = tape.register_params(&self.tunable_params(), true)?;
        let (enc_ids, prompt_ids, w, b) = self.register_frozen(&mut tape, &ids)?;
        let logit = self.logit_node(&mut tape, &enc_ids, &prompt_ids, w, b, g)?;
        let raw = tape.value(logit).value();
        Ok(match kind {
            LossKind::BinaryCe => sigmoid(raw),
            LossKind::Mse => raw,
        })
    }

    /// Pooled embedding values of one graph under the current parameters
    /// (prompt applied when present).
    pub fn embedding(&self, g: &Graph) -> Result<Tensor> {
        let mut tape = Tape::new();
        let ids = tape.register_params(&self.tunable_params(), true)?;
        let (enc_ids, prompt_ids, _, _) = self.register_frozen(&mut tape, &ids)?;
        let z = self.embed_node(&mut tape, &enc_ids, &prompt_ids, g)?;
        Ok(tape.value(z).clone())
    }

    /// Pooled embedding with no prompt applied, whatever the model's prompt
    /// state (the plain backbone view of the graph).
    pub fn plain_embedding(&self, g: &Graph) -> Result<Tensor> {
        let mut tape = Tape::new();
        let enc_ids = tape.register_params(self.encoder.params(), false)?;
        let adj = tape.constant(g.dense_adjacency());
        let x = tape.constant(g.features().clone());
        let h = self.encoder.encode(&mut tape, &enc_ids, adj, x)?;
        let z = readout(&mut tape, h, self.readout, &vec![true; g.n()])?;
        Ok(tape.value(z).clone())
    }
}

/// Gradient-based tuning loop over a model's tunable parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneOptimizer {
    Adam,
    Sgd,
}

/// Full-batch tuning of a model on labeled samples; returns the per-step
/// loss curve. Non-finite losses abort with the step index as the epoch.
pub fn tune_model(
    model: &mut ScoringModel,
    samples: &[(&Graph, f64)],
    kind: LossKind,
    steps: usize,
    lr: f64,
    optimizer: TuneOptimizer,
) -> Result<Vec<f64>> {
    let mut params = model.tunable_params();
    if params.is_empty() {
        return Err(Error::invalid("tune_model: nothing is tunable"));
    }
    let mut adam = Adam::new(lr, params.count_scalars());
    let mut curve = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut tape = Tape::new();
        let ids = tape.register_params(&params, true)?;
        let loss = match model.batch_loss(&mut tape, &ids, samples, kind) {
            Ok(l) => l,
            Err(Error::NonFinite { .. }) => return Err(Error::Diverged { epoch: step + 1 }),
            Err(e) => return Err(e),
        };
        curve.push(tape.value(loss).value());
        let grads = tape.backward(loss)?;
        params = match optimizer {
            TuneOptimizer::Adam => adam.step(&params, &grads)?,
            TuneOptimizer::Sgd => sgd_step(&params, &grads, lr)?,
        };
    }
    model.apply_params(&params)?;
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneKind;
    use crate::graph::synth_sbm;

    fn toy_model(train_prompt: bool) -> ScoringModel {
        let enc = Encoder::init(BackboneKind::Gcn, 4, 6, 1, 0).unwrap();
        let pg = PromptGraph::init(3, 4, crate::prompt::StructureScheme::Learnable, 1).unwrap();
        let head = HeadParams::init(6, 2);
        let mut m = ScoringModel::prompted(enc, pg, head);
        m.train_prompt = train_prompt;
        m
    }

    #[test]
    fn zero_head_scores_half() {
        let mut m = toy_model(true);
        m.head = HeadParams::zeros(6);
        let g = synth_sbm(&[3, 3], 0.8, 0.2, 4, 0.1, 0).unwrap();
        let s = m.score(&g, LossKind::BinaryCe).unwrap();
        assert_eq!(s, 0.5);
        assert_eq!(m.score(&g, LossKind::Mse).unwrap(), 0.0);
    }

    #[test]
    fn large_bias_saturates_score() {
        let mut m = toy_model(true);
        m.head = HeadParams::zeros(6);
        m.head.b = Tensor::scalar(30.0);
        let g = synth_sbm(&[3, 3], 0.8, 0.2, 4, 0.1, 0).unwrap();
        let s = m.score(&g, LossKind::BinaryCe).unwrap();
        assert!(s > 0.999_999);
    }

    #[test]
    fn tunable_params_respect_flags() {
        let m = toy_model(true);
        let tunables = m.tunable_params();
        let names: Vec<&String> = tunables.names().collect();
        assert!(names.iter().any(|n| n.starts_with("prompt.")));
        assert!(names.iter().any(|n| n.starts_with("head.")));
        assert!(!names.iter().any(|n| n.starts_with("enc.")));
        let frozen_prompt = toy_model(false);
        let names: Vec<String> = frozen_prompt
            .tunable_params()
            .names()
            .cloned()
            .collect();
        assert!(!names.iter().any(|n| n.starts_with("prompt.")));
    }

    #[test]
    fn tuning_reduces_loss_on_separable_samples() {
        let mut m = toy_model(true);
        let pos = synth_sbm(&[5], 0.9, 0.9, 4, 0.05, 1).unwrap();
        let neg = {
            let g = synth_sbm(&[5], 0.9, 0.9, 4, 0.05, 2).unwrap();
            let shifted: Vec<f64> = g.features().data().iter().map(|v| v - 2.0).collect();
            g.clone()
                .with_features(Tensor::matrix(5, 4, shifted).unwrap())
                .unwrap()
        };
        let samples = vec![(&pos, 1.0), (&neg, 0.0)];
        let curve = tune_model(
            &mut m,
            &samples,
            LossKind::BinaryCe,
            60,
            0.05,
            TuneOptimizer::Adam,
        )
        .unwrap();
        assert!(curve.last().unwrap() < curve.first().unwrap());
    }

    #[test]
    fn frozen_encoder_stays_bit_identical_through_tuning() {
        let mut m = toy_model(true);
        let before = m.encoder.params().clone();
        let g = synth_sbm(&[4, 4], 0.7, 0.1, 4, 0.2, 3).unwrap();
        let samples = vec![(&g, 1.0)];
        tune_model(&mut m, &samples, LossKind::BinaryCe, 5, 0.01, TuneOptimizer::Sgd).unwrap();
        assert_eq!(m.encoder.params(), &before);
    }
}
