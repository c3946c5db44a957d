use std::collections::BTreeMap;

use graphprompt_core::backbone::{Checkpoint, Encoder};
use graphprompt_core::graph::{
    edge_pair_class, induced_edge_graph, node_dataset, DataItem, Dataset, Graph,
    Level,
};
use graphprompt_core::meta::{
    build_episodes, build_tasks, split_tasks, HeadParams, LossKind, Pipeline, ScoringModel, Task,
    TaskBuildConfig, TuneOptimizer,
};
use graphprompt_core::pretrain::{pretrain, Augmentation, AugmentationKind, ContrastiveConfig};
use graphprompt_core::prompt::PromptGraph;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::config::Settings;
use crate::data::{build_bundle, run_dataset_seed, DataBundle};
use crate::error::{CliError, Result};
use crate::report::SeedRecord;

/// Labeled samples kept per class when carving task datasets out of one
/// source graph (the few-shot label budget of the protocol).
pub const SAMPLES_PER_CLASS: usize = 100;

/// Derives independent deterministic seed streams from a run seed.
pub fn mix_seed(run_seed: u64, salt: u64) -> u64 {
    run_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(salt)
}

/// Everything a driver needs for one seed: datasets, the frozen backbone,
/// the pooled task list, and per-level meta-train / meta-test pools.
pub struct Prepared {
    pub bundle: DataBundle,
    pub encoder: Encoder,
    pub pretrain_curve: Vec<(usize, f64)>,
    pub tasks: Vec<Task>,
    pub train_pool: Vec<usize>,
    pub test_pool: Vec<usize>,
}

impl Prepared {
    pub fn test_tasks_at(&self, level: Level) -> Vec<usize> {
        self.test_pool
            .iter()
            .copied()
            .filter(|&t| self.tasks[t].level == level)
            .collect()
    }
}

pub fn contrastive_config(cfg: &Settings) -> ContrastiveConfig {
    ContrastiveConfig {
        strategy: cfg.strategy,
        temperature: cfg.temperature,
        batch_size: cfg.pretrain_batch,
        epochs: cfg.pretrain_epochs,
        learning_rate: cfg.pretrain_lr,
        perturb_scale: cfg.eta,
        augmentations: AugmentationKind::ALL
            .iter()
            .map(|&kind| Augmentation {
                kind,
                ratio: cfg.aug_ratio,
            })
            .collect(),
        readout: cfg.readout,
    }
}

/// Caps a labeled dataset at `cap` items per class, seeded.
pub fn cap_per_class(ds: Dataset, cap: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut keep: Vec<usize> = Vec::new();
    for class in 0..ds.num_classes() {
        let mut members = ds.class_members(class);
        members.shuffle(&mut rng);
        members.truncate(cap);
        keep.extend(members);
    }
    keep.sort_unstable();
    Dataset {
        items: keep.into_iter().map(|i| ds.items[i].clone()).collect(),
        classes: ds.classes,
        level: ds.level,
    }
}

/// Drops classes with fewer than `min_members` items and compacts the
/// vocabulary, so task construction never sees a degenerate class.
pub fn prune_thin_classes(ds: Dataset, min_members: usize) -> Dataset {
    let kept_classes: Vec<usize> = (0..ds.num_classes())
        .filter(|&c| ds.class_members(c).len() >= min_members)
        .collect();
    let remap: BTreeMap<usize, usize> = kept_classes
        .iter()
        .enumerate()
        .map(|(new, &old)| (old, new))
        .collect();
    let items: Vec<DataItem> = ds
        .items
        .into_iter()
        .filter_map(|mut item| match item.class {
            Some(c) => remap.get(&c).map(|&new| {
                item.class = Some(new);
                item
            }),
            None => Some(item),
        })
        .collect();
    Dataset {
        items,
        classes: kept_classes
            .into_iter()
            .map(|c| ds.classes[c].clone())
            .collect(),
        level: ds.level,
    }
}

/// Node-level dataset capped per class.
pub fn capped_node_dataset(g: &Graph, tau: f64, seed: u64) -> Result<Dataset> {
    let full = node_dataset(g, tau, None)?;
    Ok(prune_thin_classes(
        cap_per_class(full, SAMPLES_PER_CLASS, seed),
        4,
    ))
}

/// Edge-level classification dataset capped per pair category. Edges are
/// grouped by endpoint-class pair first, so extraction only runs on the
/// sampled ones.
pub fn capped_edge_dataset(g: &Graph, tau: f64, seed: u64) -> Result<Dataset> {
    let labels = g
        .node_labels()
        .ok_or_else(|| CliError::runtime("edge dataset needs node labels"))?;
    let mut class_ids: Vec<usize> = labels.to_vec();
    class_ids.sort_unstable();
    class_ids.dedup();
    let k = class_ids.len();
    let to_class = |label: usize| class_ids.binary_search(&label).unwrap();

    let mut by_category: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for &(u, v, _) in g.edges() {
        let cat = edge_pair_class(to_class(labels[u]), to_class(labels[v]), k);
        by_category.entry(cat).or_default().push((u, v));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut classes = Vec::new();
    let mut items = Vec::new();
    for a in 0..k {
        for b in a..k {
            classes.push(format!("{}-{}", class_ids[a], class_ids[b]));
        }
    }
    for (cat, edges) in &mut by_category {
        edges.shuffle(&mut rng);
        edges.truncate(SAMPLES_PER_CLASS);
        edges.sort_unstable();
        for &(u, v) in edges.iter() {
            let sample = induced_edge_graph(g, (u, v), tau)?;
            items.push(DataItem {
                graph: sample.graph,
                class: Some(*cat),
                target: None,
            });
        }
    }
    Ok(prune_thin_classes(
        Dataset {
            items,
            classes,
            level: Level::Edge,
        },
        4,
    ))
}

/// Builds the frozen backbone for a run: loads the configured checkpoint or
/// pre-trains on the bundle's graph-level samples.
pub fn frozen_backbone(
    cfg: &Settings,
    bundle: &DataBundle,
    run_seed: u64,
) -> Result<(Encoder, Vec<(usize, f64)>)> {
    if let Some(path) = &cfg.backbone_checkpoint {
        let ckpt = Checkpoint::load(path)?;
        let encoder = encoder_from_checkpoint(&ckpt, &path.display().to_string())?;
        if encoder.d != bundle.feature_dim() {
            return Err(CliError::config(format!(
                "checkpoint expects d = {}, dataset has d = {}",
                encoder.d,
                bundle.feature_dim()
            )));
        }
        return Ok((encoder, Vec::new()));
    }
    let ds = bundle
        .graph_level
        .as_ref()
        .ok_or_else(|| CliError::runtime("no graph-level samples to pre-train on"))?;
    let encoder = Encoder::init(
        cfg.backbone,
        bundle.feature_dim(),
        cfg.hidden,
        cfg.heads,
        mix_seed(run_seed, 1),
    )?;
    let out = pretrain(ds, encoder, &contrastive_config(cfg), mix_seed(run_seed, 2))?;
    Ok((out.encoder, out.curve))
}

pub fn encoder_from_checkpoint(ckpt: &Checkpoint, path: &str) -> Result<Encoder> {
    if ckpt.tag != "backbone" {
        return Err(CliError::config(format!(
            "{path}: expected a backbone checkpoint, found tag '{}'",
            ckpt.tag
        )));
    }
    let kind: graphprompt_core::backbone::BackboneKind = ckpt
        .meta_parsed::<String>("kind", path)?
        .parse()
        .map_err(|e: graphprompt_core::Error| CliError::config(e.to_string()))?;
    let d: usize = ckpt.meta_parsed("d", path)?;
    let h: usize = ckpt.meta_parsed("h", path)?;
    let heads: usize = ckpt.meta_parsed("heads", path)?;
    let mut encoder = Encoder::init(kind, d, h, heads, 0)?;
    encoder.set_params(ckpt.tensors.clone())?;
    Ok(encoder)
}

/// Builds all per-level tasks plus disjoint 1:1 meta-train/meta-test pools.
pub fn prepare(cfg: &Settings, run_seed: u64) -> Result<Prepared> {
    let base_bundle = build_bundle(cfg, run_seed)?;
    let ds_seed = run_dataset_seed(cfg, run_seed);

    // rebuild node/edge levels with the per-class cap
    let bundle = DataBundle {
        node: if base_bundle.node.is_some() {
            Some(capped_node_dataset(
                &base_bundle.graph,
                cfg.tau_node,
                mix_seed(ds_seed, 3),
            )?)
        } else {
            None
        },
        edge: if base_bundle.edge.is_some() {
            Some(capped_edge_dataset(
                &base_bundle.graph,
                cfg.tau_edge,
                mix_seed(ds_seed, 4),
            )?)
        } else {
            None
        },
        graph_level: base_bundle
            .graph_level
            .clone()
            .map(|ds| prune_thin_classes(ds, 4)),
        graph: base_bundle.graph,
    };

    let (encoder, pretrain_curve) = frozen_backbone(cfg, &bundle, run_seed)?;

    let mut tasks: Vec<Task> = Vec::new();
    let mut train_pool = Vec::new();
    let mut test_pool = Vec::new();
    for (salt, level) in [(10u64, Level::Node), (11, Level::Edge), (12, Level::Graph)] {
        let Some(ds) = bundle.dataset(level) else {
            continue;
        };
        if ds.num_classes() < 2 {
            continue;
        }
        let level_tasks = build_tasks(
            ds,
            &TaskBuildConfig {
                shots: cfg.shots,
                query_cap: cfg.query_cap,
                seed: mix_seed(run_seed, salt),
            },
        )?;
        let offset = tasks.len();
        let (train, test) = split_tasks(level_tasks.len(), mix_seed(run_seed, salt + 10));
        train_pool.extend(train.into_iter().map(|t| t + offset));
        test_pool.extend(test.into_iter().map(|t| t + offset));
        tasks.extend(level_tasks);
    }
    if tasks.is_empty() {
        return Err(CliError::runtime("no tasks could be built from the dataset"));
    }
    Ok(Prepared {
        bundle,
        encoder,
        pretrain_curve,
        tasks,
        train_pool,
        test_pool,
    })
}

pub fn make_prompt(cfg: &Settings, d: usize, seed: u64) -> Result<PromptGraph> {
    Ok(PromptGraph::init(cfg.tokens, d, cfg.scheme, seed)?
        .with_delta(cfg.delta)?
        .with_structure_cmp(cfg.structure_cmp))
}

/// The prompt pipeline model for a run: frozen backbone, fresh prompt and
/// head, insertion and readout from config.
pub fn make_prompt_model(cfg: &Settings, encoder: Encoder, run_seed: u64) -> Result<ScoringModel> {
    let d = encoder.d;
    let h = encoder.h;
    let prompt = make_prompt(cfg, d, mix_seed(run_seed, 20))?;
    let head = HeadParams::init(h, mix_seed(run_seed, 21));
    Ok(ScoringModel::prompted(encoder, prompt, head)
        .with_insertion(cfg.insertion)
        .with_readout(cfg.readout))
}

/// Meta-trains a fresh prompt pipeline on the prepared meta-train pool.
/// Returns the pipeline and its per-episode loss curve.
pub fn train_prompt_pipeline(
    cfg: &Settings,
    prepared: &Prepared,
    run_seed: u64,
) -> Result<(Pipeline, Vec<(usize, f64)>)> {
    let model = make_prompt_model(cfg, prepared.encoder.clone(), run_seed)?;
    let mut pipeline = Pipeline::new(model, cfg.meta_config())?;
    let episodes = build_episodes(
        &prepared.tasks,
        &prepared.train_pool,
        cfg.episodes,
        cfg.tasks_per_level,
        mix_seed(run_seed, 22),
    )?;
    let curve = pipeline.meta_train(&prepared.tasks, &episodes)?;
    Ok((pipeline, curve))
}

/// Scores every query sample of a task. Returns (scores, labels).
pub fn eval_scores(model: &ScoringModel, task: &Task) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut scores = Vec::with_capacity(task.query.len());
    let mut labels = Vec::with_capacity(task.query.len());
    for sample in &task.query {
        scores.push(model.score(&sample.graph, task.loss)?);
        labels.push(sample.target as usize);
    }
    Ok((scores, labels))
}

/// Acc / macro-F1 / AUC of a model on one task's query set.
pub fn classification_metrics(model: &ScoringModel, task: &Task) -> Result<(f64, f64, f64)> {
    let (scores, labels) = eval_scores(model, task)?;
    Ok((
        crate::metrics::accuracy(&scores, &labels)?,
        crate::metrics::macro_f1(&scores, &labels)?,
        crate::metrics::auc(&scores, &labels)?,
    ))
}

/// Clones the model, tunes it on the task's support set with Adam, and
/// evaluates the query set.
pub fn adapt_and_eval(
    base: &ScoringModel,
    task: &Task,
    steps: usize,
    lr: f64,
) -> Result<(f64, f64, f64)> {
    let mut model = base.clone();
    if steps > 0 {
        let samples: Vec<(&Graph, f64)> = task
            .support
            .iter()
            .map(|s| (&s.graph, s.target))
            .collect();
        graphprompt_core::meta::tune_model(
            &mut model,
            &samples,
            task.loss,
            steps,
            lr,
            TuneOptimizer::Adam,
        )?;
    }
    classification_metrics(&model, task)
}

/// Mean of metric triples.
pub fn mean_triple(rows: &[(f64, f64, f64)]) -> (f64, f64, f64) {
    let n = rows.len().max(1) as f64;
    let sum = rows.iter().fold((0.0, 0.0, 0.0), |acc, r| {
        (acc.0 + r.0, acc.1 + r.1, acc.2 + r.2)
    });
    (sum.0 / n, sum.1 / n, sum.2 / n)
}

/// Inserts a metric triple under `prefix.{acc,f1,auc}`.
pub fn record_triple(metrics: &mut BTreeMap<String, f64>, prefix: &str, triple: (f64, f64, f64)) {
    metrics.insert(format!("{prefix}.acc"), triple.0);
    metrics.insert(format!("{prefix}.f1"), triple.1);
    metrics.insert(format!("{prefix}.auc"), triple.2);
}

/// Runs one closure per seed, optionally across threads, merging records in
/// seed order so the output is independent of the job count.
pub fn run_seeds<F>(seeds: &[u64], jobs: usize, f: F) -> Result<Vec<SeedRecord>>
where
    F: Fn(u64) -> Result<SeedRecord> + Sync,
{
    if jobs <= 1 || seeds.len() <= 1 {
        return seeds.iter().map(|&s| f(s)).collect();
    }
    let mut out: Vec<Option<Result<SeedRecord>>> = seeds.iter().map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<SeedRecord>>>> =
        seeds.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(seeds.len()) {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if idx >= seeds.len() {
                    break;
                }
                let result = f(seeds[idx]);
                *slots[idx].lock().unwrap() = Some(result);
            });
        }
    });
    for (slot, cell) in slots.into_iter().zip(out.iter_mut()) {
        *cell = slot.into_inner().unwrap();
    }
    out.into_iter()
        .map(|r| r.expect("every seed slot filled"))
        .collect()
}

/// Binary task helpers shared by drivers: positive-class score used when a
/// model answers through sub-prompt distances instead of a head.
pub fn headfree_scores(
    model: &ScoringModel,
    task: &Task,
    metric: graphprompt_core::meta::HeadFreeMetric,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let pg = model
        .prompt
        .as_ref()
        .ok_or_else(|| CliError::runtime("headfree scoring needs a prompt"))?;
    let groups = pg
        .subprompts
        .as_ref()
        .ok_or_else(|| CliError::runtime("headfree scoring needs sub-prompts"))?;
    if groups.len() != 2 {
        return Err(CliError::runtime("binary headfree scoring needs 2 groups"));
    }
    let mut scores = Vec::with_capacity(task.query.len());
    let mut labels = Vec::with_capacity(task.query.len());
    for sample in &task.query {
        let plain = model.plain_embedding(&sample.graph)?;
        let mut dists = [0.0f64; 2];
        for (slot, group) in dists.iter_mut().zip(groups) {
            let mut vm = model.clone();
            vm.prompt = Some(pg.restricted_to(group)?);
            let view = vm.embedding(&sample.graph)?;
            *slot = match metric {
                graphprompt_core::meta::HeadFreeMetric::Euclidean => view
                    .data()
                    .iter()
                    .zip(plain.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
                graphprompt_core::meta::HeadFreeMetric::Cosine => {
                    let dot: f64 =
                        view.data().iter().zip(plain.data()).map(|(a, b)| a * b).sum();
                    1.0 - dot / (view.l2_norm() * plain.l2_norm()).max(1e-12)
                }
            };
        }
        // group 1 is the positive view; closer positive view = higher score
        scores.push(graphprompt_core::diff::sigmoid(dists[0] - dists[1]));
        labels.push(sample.target as usize);
    }
    Ok((scores, labels))
}

pub fn loss_kind_of(task: &Task) -> LossKind {
    task.loss
}
