//! End-to-end meta-training behavior on synthetic multi-task data.

use graphprompt_core::backbone::{BackboneKind, Encoder};
use graphprompt_core::graph::{
    edge_class_dataset, graph_dataset, node_dataset, synth_sbm,
};
use graphprompt_core::meta::{
    build_episodes, build_tasks, HeadParams, MetaConfig, Pipeline, ScoringModel, Task,
    TaskBuildConfig,
};
use graphprompt_core::pretrain::{pretrain, ContrastiveConfig};
use graphprompt_core::prompt::{PromptGraph, StructureScheme};

const FEAT_DIM: usize = 6;
const HIDDEN: usize = 8;

fn multi_task_pool(seed: u64) -> Vec<Task> {
    let g = synth_sbm(&[14, 14], 0.5, 0.06, FEAT_DIM, 0.6, seed).unwrap();
    let cfg = TaskBuildConfig {
        shots: 4,
        query_cap: 6,
        seed,
    };
    let mut tasks = Vec::new();
    tasks.extend(build_tasks(&node_dataset(&g, 1.0, None).unwrap(), &cfg).unwrap());
    tasks.extend(build_tasks(&edge_class_dataset(&g, 1.0).unwrap(), &cfg).unwrap());
    tasks.extend(build_tasks(&graph_dataset(&g, 1.0, 20, seed).unwrap(), &cfg).unwrap());
    tasks
}

fn pretrained_encoder(seed: u64) -> Encoder {
    let g = synth_sbm(&[14, 14], 0.5, 0.06, FEAT_DIM, 0.6, seed).unwrap();
    let ds = graph_dataset(&g, 1.0, 24, seed).unwrap();
    let enc = Encoder::init(BackboneKind::Gcn, FEAT_DIM, HIDDEN, 1, seed).unwrap();
    pretrain(&ds, enc, &ContrastiveConfig { epochs: 8, ..Default::default() }, seed)
        .unwrap()
        .encoder
}

#[test]
fn query_loss_improves_over_episodes() {
    // mean query loss over the final 10 episodes beats the first 10,
    // in at least 4 of 5 seeds
    let mut wins = 0;
    for seed in 0..5u64 {
        let tasks = multi_task_pool(seed);
        let pool: Vec<usize> = (0..tasks.len()).collect();
        let episodes = build_episodes(&tasks, &pool, 40, 2, seed).unwrap();
        let enc = pretrained_encoder(seed);
        let pg = PromptGraph::init(4, FEAT_DIM, StructureScheme::Learnable, seed).unwrap();
        let head = HeadParams::init(HIDDEN, seed);
        let mut pipeline = Pipeline::new(
            ScoringModel::prompted(enc, pg, head)
                .with_readout(graphprompt_core::backbone::ReadoutMode::Sum),
            MetaConfig {
                alpha: 0.05,
                beta: 0.05,
                ..Default::default()
            },
        )
        .unwrap();
        let curve = pipeline.meta_train(&tasks, &episodes).unwrap();
        let first: f64 = curve[..10].iter().map(|(_, l)| l).sum::<f64>() / 10.0;
        let last: f64 = curve[curve.len() - 10..].iter().map(|(_, l)| l).sum::<f64>() / 10.0;
        if last < first {
            wins += 1;
        }
    }
    assert!(wins >= 4, "improved in only {wins}/5 seeds");
}

#[test]
fn support_adaptation_reduces_loss_on_separable_tasks() {
    // 5/5 seeds at alpha = 1e-3
    for seed in 0..5u64 {
        let tasks = multi_task_pool(seed);
        let enc = pretrained_encoder(seed);
        let pg = PromptGraph::init(4, FEAT_DIM, StructureScheme::Learnable, seed).unwrap();
        let head = HeadParams::init(HIDDEN, seed);
        let pipeline = Pipeline::new(
            ScoringModel::prompted(enc, pg, head),
            MetaConfig {
                alpha: 1e-3,
                inner_steps: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let task = &tasks[0];
        let obj = graphprompt_core::meta::TaskObjective {
            model: &pipeline.model,
            task,
        };
        let init = pipeline.model.tunable_params();
        let (before, _) = graphprompt_core::meta::support_loss_and_grad(&obj, &init).unwrap();
        let adapted = pipeline.inner_adapt(task).unwrap();
        let (after, _) = graphprompt_core::meta::support_loss_and_grad(&obj, &adapted).unwrap();
        assert!(after <= before, "seed {seed}: {before} -> {after}");
    }
}
