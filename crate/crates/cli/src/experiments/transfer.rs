use std::collections::BTreeMap;

use graphprompt_core::graph::Level;
use graphprompt_core::meta::{build_episodes, Pipeline};

use crate::config::Settings;
use crate::data::reduce_features;
use crate::error::{CliError, Result};
use crate::experiments::common::{
    adapt_and_eval, capped_edge_dataset, capped_node_dataset, classification_metrics,
    frozen_backbone, make_prompt_model, mean_triple, mix_seed, prune_thin_classes, record_triple,
    run_seeds,
};
use crate::report::{Report, SeedRecord};

/// Transferability protocol: a pipeline trained on source-level tasks is
/// carried to target-level tasks three ways; hard (no adaptation),
/// fine-tune (head only), and prompt (prompt only, the source head kept
/// verbatim). The cross-domain variant first reduces both domains' features
/// to a shared dimension.
pub fn run_transfer(cfg: &Settings) -> Result<Report> {
    let records = run_seeds(&cfg.seeds, cfg.jobs, |seed| seed_run(cfg, seed))?;
    Ok(Report::new("transfer", &cfg.digest(), records))
}

fn parse_level(name: &str) -> Result<Level> {
    name.parse()
        .map_err(|e: graphprompt_core::Error| CliError::config(e.to_string()))
}

fn seed_run(cfg: &Settings, seed: u64) -> Result<SeedRecord> {
    let source_level = parse_level(&cfg.source_level)?;
    let target_level = parse_level(&cfg.target_level)?;

    // source domain (and optionally a second domain for the target)
    let mut source_cfg = cfg.clone();
    if cfg.cross_domain {
        // unify dimensions before anything touches the features
        source_cfg.feature_dim = cfg.svd_dim;
    }
    let mut prepared = crate::experiments::common::prepare(&source_cfg, seed)?;

    let target_graph = if cfg.cross_domain {
        // a second domain: different generator seed and twice the raw
        // feature dimension, reduced to the shared size
        let mut alt = cfg.clone();
        alt.feature_dim = (cfg.feature_dim * 2).max(cfg.svd_dim);
        alt.dataset_seed = cfg.dataset_seed.wrapping_add(7919);
        let raw = crate::data::source_graph(&alt, seed)?;
        reduce_features(&raw, cfg.svd_dim)?
    } else {
        prepared.bundle.graph.clone()
    };
    if cfg.cross_domain {
        prepared.bundle.graph = reduce_features(
            &crate::data::source_graph(&source_cfg, seed)?,
            cfg.svd_dim,
        )?;
        // rebuild the source bundle's datasets against the reduced features
        let ds_seed = crate::data::run_dataset_seed(&source_cfg, seed);
        prepared.bundle.node = Some(capped_node_dataset(
            &prepared.bundle.graph,
            cfg.tau_node,
            mix_seed(ds_seed, 3),
        )?);
        prepared.bundle.edge = Some(capped_edge_dataset(
            &prepared.bundle.graph,
            cfg.tau_edge,
            mix_seed(ds_seed, 4),
        )?);
        // a fresh backbone over the reduced source domain
        let (enc, _) = frozen_backbone(&source_cfg, &prepared.bundle, seed)?;
        prepared.encoder = enc;
        prepared.tasks.clear();
        prepared.train_pool.clear();
        prepared.test_pool.clear();
        let tasks = graphprompt_core::meta::build_tasks(
            prepared.bundle.dataset(source_level).ok_or_else(|| {
                CliError::runtime("source level dataset missing after reduction")
            })?,
            &graphprompt_core::meta::TaskBuildConfig {
                shots: cfg.shots,
                query_cap: cfg.query_cap,
                seed: mix_seed(seed, 31),
            },
        )?;
        let n = tasks.len();
        prepared.tasks = tasks;
        prepared.train_pool = (0..n).collect();
    }

    // train the source pipeline on source-level tasks only
    let source_pool: Vec<usize> = prepared
        .train_pool
        .iter()
        .copied()
        .filter(|&t| prepared.tasks[t].level == source_level)
        .collect();
    if source_pool.is_empty() {
        return Err(CliError::runtime(format!(
            "no source tasks at level {}",
            source_level.as_str()
        )));
    }
    let model = make_prompt_model(cfg, prepared.encoder.clone(), seed)?;
    let mut pipeline = Pipeline::new(model, cfg.meta_config())?;
    let episodes = build_episodes(
        &prepared.tasks,
        &source_pool,
        cfg.episodes,
        cfg.tasks_per_level,
        mix_seed(seed, 32),
    )?;
    pipeline.meta_train(&prepared.tasks, &episodes)?;
    let source_model = pipeline.model;

    // target tasks, possibly on the second domain
    let target_ds = match target_level {
        Level::Node => capped_node_dataset(&target_graph, cfg.tau_node, mix_seed(seed, 33))?,
        Level::Edge => capped_edge_dataset(&target_graph, cfg.tau_edge, mix_seed(seed, 34))?,
        Level::Graph => prune_thin_classes(
            graphprompt_core::graph::graph_dataset(
                &target_graph,
                cfg.tau_node,
                cfg.graph_samples,
                mix_seed(seed, 35),
            )?,
            4,
        ),
    };
    let target_tasks = graphprompt_core::meta::build_tasks(
        &target_ds,
        &graphprompt_core::meta::TaskBuildConfig {
            shots: cfg.shots,
            query_cap: cfg.query_cap,
            seed: mix_seed(seed, 36),
        },
    )?;

    let mut hard_rows = Vec::new();
    let mut finetune_rows = Vec::new();
    let mut prompt_rows = Vec::new();
    for task in &target_tasks {
        // hard transfer: direct inference
        hard_rows.push(classification_metrics(&source_model, task)?);
        // fine-tune: tune the head only
        let ft = source_model.clone().with_train_prompt(false).with_train_head(true);
        finetune_rows.push(adapt_and_eval(&ft, task, cfg.eval_adapt_steps, cfg.eval_adapt_lr)?);
        // prompt: adapt the prompt, leave the source head unchanged
        let pr = source_model.clone().with_train_prompt(true).with_train_head(false);
        let head_before = pr.head.clone();
        let tunable = pr.tunable_params();
        if tunable.names().any(|n| n.starts_with("head.")) {
            return Err(CliError::runtime("prompt arm must tune zero head parameters"));
        }
        let row = adapt_and_eval(&pr, task, cfg.eval_adapt_steps, cfg.eval_adapt_lr)?;
        debug_assert_eq!(pr.head, head_before);
        prompt_rows.push(row);
    }

    let mut metrics = BTreeMap::new();
    record_triple(&mut metrics, "target.hard", mean_triple(&hard_rows));
    record_triple(&mut metrics, "target.finetune", mean_triple(&finetune_rows));
    record_triple(&mut metrics, "target.prompt", mean_triple(&prompt_rows));
    metrics.insert("target.tasks".to_string(), target_tasks.len() as f64);
    Ok(SeedRecord { seed, metrics })
}
