use std::collections::BTreeMap;

use crate::diff::{NodeId, ParamSet, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::meta::adapt::{
    inner_adapt, meta_train, meta_update, MetaConfig, MetaObjective,
};
use crate::meta::model::{LossKind, ScoringModel};
use crate::meta::task::{Episode, Task};
use crate::prompt::{insert_tape, PromptGraph};

/// The prompt-tuning pipeline: a frozen backbone, a tunable prompt graph,
/// and a tunable task head, trained episodically.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub model: ScoringModel,
    pub meta: MetaConfig,
}

/// A task bound to a model, exposing its support/query losses for the
/// inner/outer loops.
pub struct TaskObjective<'a> {
    pub model: &'a ScoringModel,
    pub task: &'a Task,
}

impl MetaObjective for TaskObjective<'_> {
    fn support_loss(&self, tape: &mut Tape, ids: &BTreeMap<String, NodeId>) -> Result<NodeId> {
        let samples: Vec<(&Graph, f64)> = self
            .task
            .support
            .iter()
            .map(|s| (&s.graph, s.target))
            .collect();
        self.model.batch_loss(tape, ids, &samples, self.task.loss)
    }

    fn query_loss(&self, tape: &mut Tape, ids: &BTreeMap<String, NodeId>) -> Result<NodeId> {
        let samples: Vec<(&Graph, f64)> = self
            .task
            .query
            .iter()
            .map(|s| (&s.graph, s.target))
            .collect();
        self.model.batch_loss(tape, ids, &samples, self.task.loss)
    }
}

impl Pipeline {
    pub fn new(model: ScoringModel, meta: MetaConfig) -> Result<Self> {
        if model.train_encoder {
            return Err(Error::invalid("pipeline: the backbone must stay frozen"));
        }
        if model.prompt.is_none() {
            return Err(Error::invalid("pipeline: a prompt graph is required"));
        }
        Ok(Pipeline { model, meta })
    }

    /// Adapted copy of the tunable parameters for one task (Pipeline
    /// parameters are untouched).
    pub fn inner_adapt(&self, task: &Task) -> Result<ParamSet> {
        let obj = TaskObjective {
            model: &self.model,
            task,
        };
        inner_adapt(&obj, &self.model.tunable_params(), self.meta.alpha, self.meta.inner_steps)
    }

    /// One outer update from already-adapted episode tasks. Returns the mean
    /// query loss across the episode.
    pub fn meta_update(&mut self, tasks: &[(&Task, &ParamSet)]) -> Result<f64> {
        let shared = self.model.tunable_params();
        let objectives: Vec<TaskObjective> = tasks
            .iter()
            .map(|(task, _)| TaskObjective {
                model: &self.model,
                task,
            })
            .collect();
        let pairs: Vec<(&TaskObjective, &ParamSet)> = objectives
            .iter()
            .zip(tasks.iter().map(|(_, p)| *p))
            .collect();
        let (updated, mean_loss) = meta_update(&pairs, &shared, &self.meta)?;
        self.model.apply_params(&updated)?;
        Ok(mean_loss)
    }

    /// Episodic meta-training over a task pool. Each episode adapts its
    /// tasks from the current shared initialization and applies one outer
    /// update; returns the per-episode mean query loss curve.
    pub fn meta_train(&mut self, tasks: &[Task], episodes: &[Episode]) -> Result<Vec<(usize, f64)>> {
        let objectives: Vec<TaskObjective> = tasks
            .iter()
            .map(|task| TaskObjective {
                model: &self.model,
                task,
            })
            .collect();
        let episode_ids: Vec<Vec<usize>> = episodes.iter().map(|e| e.task_ids.clone()).collect();
        let init = self.model.tunable_params();
        let (trained, curve) = meta_train(&objectives, &episode_ids, init, &self.meta)?;
        self.model.apply_params(&trained)?;
        Ok(curve)
    }

    /// Score one sample with the current parameters.
    pub fn predict(&self, g: &Graph, kind: LossKind) -> Result<f64> {
        self.model.score(g, kind)
    }
}

/// Distance used by head-free answering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadFreeMetric {
    Euclidean,
    Cosine,
}

fn distance(a: &Tensor, b: &Tensor, metric: HeadFreeMetric) -> f64 {
    match metric {
        HeadFreeMetric::Euclidean => a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        HeadFreeMetric::Cosine => {
            let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
            1.0 - dot / (a.l2_norm() * b.l2_norm()).max(1e-12)
        }
    }
}

/// Head-free answering: insert each sub-prompt on its own, embed the
/// resulting graph view, and return the group index whose view lands
/// closest to the unprompted embedding. Ties break toward the smallest
/// group index.
pub fn headfree_predict(
    model: &ScoringModel,
    g: &Graph,
    metric: HeadFreeMetric,
) -> Result<usize> {
    let pg = model
        .prompt
        .as_ref()
        .ok_or_else(|| Error::invalid("headfree_predict: model has no prompt"))?;
    let groups = pg
        .subprompts
        .as_ref()
        .ok_or_else(|| Error::invalid("headfree_predict: prompt has no sub-prompts"))?;
    let plain = model.plain_embedding(g)?;
    let mut best = (0usize, f64::INFINITY);
    for (idx, group) in groups.iter().enumerate() {
        let sub = pg.restricted_to(group)?;
        let mut view_model = model.clone();
        view_model.prompt = Some(sub);
        let view = view_model.embedding(g)?;
        let d = distance(&view, &plain, metric);
        if d < best.1 {
            best = (idx, d);
        }
    }
    Ok(best.0)
}

/// Tape loss for tuning the sub-prompts without any task head: a softmax
/// cross-entropy over classes where the logit of class l is the negative
/// squared distance between the l-th prompted view and the unprompted
/// embedding.
pub fn headfree_loss(
    tape: &mut Tape,
    model: &ScoringModel,
    ids: &BTreeMap<String, NodeId>,
    samples: &[(&Graph, usize)],
    temperature: f64,
) -> Result<NodeId> {
    let pg = model
        .prompt
        .as_ref()
        .ok_or_else(|| Error::invalid("headfree_loss: model has no prompt"))?;
    let groups = pg
        .subprompts
        .clone()
        .ok_or_else(|| Error::invalid("headfree_loss: prompt has no sub-prompts"))?;
    if temperature <= 0.0 {
        return Err(Error::invalid("headfree_loss: temperature must be positive"));
    }
    if samples.is_empty() {
        return Err(Error::invalid("headfree_loss: empty sample set"));
    }
    let k = groups.len();
    let enc_ids = tape.register_params(model.encoder.params(), false)?;
    let tokens = *ids
        .get(PromptGraph::TOKENS)
        .ok_or_else(|| Error::invalid("headfree_loss: prompt tokens not registered"))?;

    let mut per_sample = Vec::with_capacity(samples.len());
    for (g, class) in samples {
        if *class >= k {
            return Err(Error::invalid(format!("headfree_loss: class {class} >= {k} groups")));
        }
        // unprompted view
        let adj = tape.constant(g.dense_adjacency());
        let x = tape.constant(g.features().clone());
        let h = model.encoder.encode(tape, &enc_ids, adj, x)?;
        let plain = crate::backbone::readout(tape, h, model.readout, &vec![true; g.n()])?;

        let mut neg_dists = Vec::with_capacity(k);
        for group in &groups {
            let (sub, sub_ids) = subprompt_nodes(tape, pg, ids, tokens, group)?;
            let inserted = insert_tape(tape, g, &sub, &sub_ids, model.insertion)?;
            let hm = model
                .encoder
                .encode(tape, &enc_ids, inserted.adjacency, inserted.features)?;
            let view =
                crate::backbone::readout(tape, hm, model.readout, &inserted.original_mask)?;
            let diff = tape.sub(view, plain)?;
            let sq = tape.mul(diff, diff)?;
            let dist = tape.sum(sq)?;
            neg_dists.push(tape.scale(dist, -1.0 / temperature)?);
        }
        let col = tape.stack_rows(neg_dists)?; // k x 1
        let row = tape.transpose(col)?; // 1 x k
        let probs = tape.softmax_rows(row)?;
        let logp = tape.log(probs)?;
        let mut hot = Tensor::zeros(vec![1, k]);
        hot.set2(0, *class, 1.0);
        let hot = tape.constant(hot);
        let picked = tape.mul(logp, hot)?;
        let nll = tape.sum(picked)?;
        per_sample.push(tape.scale(nll, -1.0)?);
    }
    let stacked = tape.stack_rows(per_sample)?;
    tape.mean(stacked)
}

/// Differentiable restriction of the prompt to one sub-group: token rows are
/// selected with a constant 0/1 matrix so gradients flow back to the full
/// token matrix, and learnable pair scores are gathered the same way.
fn subprompt_nodes(
    tape: &mut Tape,
    pg: &PromptGraph,
    ids: &BTreeMap<String, NodeId>,
    tokens: NodeId,
    group: &[usize],
) -> Result<(PromptGraph, BTreeMap<String, NodeId>)> {
    let sub = pg.restricted_to(group)?;
    let mut sorted = group.to_vec();
    sorted.sort_unstable();
    let k = pg.num_tokens();
    let mut sel = Tensor::zeros(vec![sorted.len(), k]);
    for (row, &t) in sorted.iter().enumerate() {
        sel.set2(row, t, 1.0);
    }
    let sel = tape.constant(sel);
    let sub_tokens = tape.matmul(sel, tokens)?;
    let mut sub_ids = BTreeMap::new();
    sub_ids.insert(PromptGraph::TOKENS.to_string(), sub_tokens);

    if pg.scheme == crate::prompt::StructureScheme::Learnable && sorted.len() > 1 {
        let structure = *ids
            .get(PromptGraph::STRUCTURE)
            .ok_or_else(|| Error::invalid("subprompt: structure not registered"))?;
        let full_pairs = k * (k - 1) / 2;
        let sub_pairs = sorted.len() * (sorted.len() - 1) / 2;
        let mut gather = Tensor::zeros(vec![full_pairs, sub_pairs]);
        let mut col = 0;
        for a in 0..sorted.len() {
            for b in (a + 1)..sorted.len() {
                let src = crate::prompt::upper_index(sorted[a], sorted[b], k);
                gather.set2(src, col, 1.0);
                col += 1;
            }
        }
        let gather = tape.constant(gather);
        let sub_struct = tape.matmul(structure, gather)?; // 1 x sub_pairs
        sub_ids.insert(PromptGraph::STRUCTURE.to_string(), sub_struct);
    }
    Ok((sub, sub_ids))
}

/// Tunes sub-prompt tokens with the head-free distance loss, full batch.
pub fn headfree_tune(
    model: &mut ScoringModel,
    samples: &[(&Graph, usize)],
    steps: usize,
    lr: f64,
    temperature: f64,
) -> Result<Vec<f64>> {
    let mut params = model
        .prompt
        .as_ref()
        .ok_or_else(|| Error::invalid("headfree_tune: model has no prompt"))?
        .param_set();
    let mut adam = crate::optim::Adam::new(lr, params.count_scalars());
    let mut curve = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut tape = Tape::new();
        let ids = tape.register_params(&params, true)?;
        let loss = match headfree_loss(&mut tape, model, &ids, samples, temperature) {
            Ok(l) => l,
            Err(Error::NonFinite { .. }) => return Err(Error::Diverged { epoch: step + 1 }),
            Err(e) => return Err(e),
        };
        curve.push(tape.value(loss).value());
        let grads = tape.backward(loss)?;
        params = adam.step(&params, &grads)?;
        if let Some(pg) = &mut model.prompt {
            pg.set_params(&params)?;
        }
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{BackboneKind, Encoder};
    use crate::graph::{node_dataset, synth_sbm};
    use crate::meta::model::HeadParams;
    use crate::meta::task::{build_tasks, TaskBuildConfig};
    use crate::prompt::StructureScheme;

    fn toy_pipeline(subgroups: Option<usize>) -> Pipeline {
        let enc = Encoder::init(BackboneKind::Gcn, 4, 6, 1, 0).unwrap();
        let mut pg = PromptGraph::init(4, 4, StructureScheme::Learnable, 1).unwrap();
        if let Some(k) = subgroups {
            pg = pg.with_subprompt_groups(k).unwrap();
        }
        let head = HeadParams::init(6, 2);
        Pipeline::new(ScoringModel::prompted(enc, pg, head), MetaConfig::default()).unwrap()
    }

    fn toy_tasks() -> Vec<Task> {
        let g = synth_sbm(&[8, 8], 0.7, 0.1, 4, 0.4, 2).unwrap();
        let ds = node_dataset(&g, 1.0, None).unwrap();
        build_tasks(&ds, &TaskBuildConfig { shots: 3, query_cap: 4, seed: 0 }).unwrap()
    }

    #[test]
    fn alpha_zero_adaptation_is_identity() {
        let mut p = toy_pipeline(None);
        p.meta.alpha = 0.0;
        let tasks = toy_tasks();
        let adapted = p.inner_adapt(&tasks[0]).unwrap();
        assert_eq!(adapted, p.model.tunable_params());
    }

    #[test]
    fn support_loss_never_increases_with_small_steps() {
        let tasks = toy_tasks();
        for seed in 0..5u64 {
            let mut p = toy_pipeline(None);
            p.model.head = HeadParams::init(6, seed);
            p.meta.alpha = 1e-3;
            let obj = TaskObjective { model: &p.model, task: &tasks[0] };
            let init = p.model.tunable_params();
            let (before, _) =
                crate::meta::adapt::support_loss_and_grad(&obj, &init).unwrap();
            let adapted = p.inner_adapt(&tasks[0]).unwrap();
            let (after, _) =
                crate::meta::adapt::support_loss_and_grad(&obj, &adapted).unwrap();
            assert!(after <= before + 1e-12, "seed {seed}: {before} -> {after}");
        }
    }

    #[test]
    fn frozen_backbone_is_bit_identical_after_meta_training() {
        let mut p = toy_pipeline(None);
        let before = p.model.encoder.params().clone();
        let tasks = toy_tasks();
        let episodes = vec![
            Episode { task_ids: vec![0, 1] },
            Episode { task_ids: vec![1, 0] },
        ];
        p.meta.beta = 0.01;
        let curve = p.meta_train(&tasks, &episodes).unwrap();
        assert_eq!(curve.len(), 2);
        assert_eq!(p.model.encoder.params(), &before);
        // and only prompt + head are counted as tunable
        let tunables = p.model.tunable_params();
        let names: Vec<&String> = tunables.names().collect();
        assert!(names.iter().all(|n| !n.starts_with("enc.")));
    }

    #[test]
    fn meta_training_is_bit_deterministic() {
        let tasks = toy_tasks();
        let episodes = vec![Episode { task_ids: vec![0, 1] }; 3];
        let run = || {
            let mut p = toy_pipeline(None);
            let curve = p.meta_train(&tasks, &episodes).unwrap();
            (p.model.tunable_params(), curve)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn single_group_headfree_always_answers_zero() {
        let p = toy_pipeline(Some(1));
        let g = synth_sbm(&[4, 4], 0.8, 0.1, 4, 0.3, 5).unwrap();
        let class = headfree_predict(&p.model, &g, HeadFreeMetric::Euclidean).unwrap();
        assert_eq!(class, 0);
    }

    #[test]
    fn identical_subprompts_tie_toward_zero() {
        let mut p = toy_pipeline(Some(2));
        if let Some(pg) = &mut p.model.prompt {
            // duplicate the first two token rows into the last two
            let d = pg.dim();
            let mut data = pg.tokens.data().to_vec();
            let (head, tail) = data.split_at_mut(2 * d);
            tail.copy_from_slice(head);
            pg.tokens = Tensor::matrix(4, d, data).unwrap();
            // equal pair scores everywhere
            pg.structure = Tensor::zeros(vec![6]);
        }
        let g = synth_sbm(&[4, 4], 0.8, 0.1, 4, 0.3, 6).unwrap();
        let class = headfree_predict(&p.model, &g, HeadFreeMetric::Euclidean).unwrap();
        assert_eq!(class, 0);
    }

    #[test]
    fn headfree_matches_bruteforce_distance_loop() {
        let p = toy_pipeline(Some(2)).model;
        let g = synth_sbm(&[4, 4], 0.8, 0.1, 4, 0.3, 7).unwrap();
        let predicted = headfree_predict(&p, &g, HeadFreeMetric::Euclidean).unwrap();
        // independent loop over groups
        let pg = p.prompt.as_ref().unwrap();
        let plain = p.plain_embedding(&g).unwrap();
        let mut dists = Vec::new();
        for group in pg.subprompts.as_ref().unwrap() {
            let mut vm = p.clone();
            vm.prompt = Some(pg.restricted_to(group).unwrap());
            let view = vm.embedding(&g).unwrap();
            let d: f64 = view
                .data()
                .iter()
                .zip(plain.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dists.push(d);
        }
        let brute = dists
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(predicted, brute);
    }

    #[test]
    fn headfree_tuning_reduces_loss() {
        let mut p = toy_pipeline(Some(2));
        let g = synth_sbm(&[6, 6], 0.8, 0.05, 4, 0.3, 8).unwrap();
        let ds = node_dataset(&g, 1.0, None).unwrap();
        let samples: Vec<(&Graph, usize)> = ds
            .items
            .iter()
            .map(|it| (&it.graph, it.class.unwrap()))
            .collect();
        let curve = headfree_tune(&mut p.model, &samples[..8], 30, 0.05, 1.0).unwrap();
        assert!(curve.last().unwrap() < curve.first().unwrap());
    }
}
