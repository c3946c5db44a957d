use std::collections::BTreeMap;
use std::path::Path;

use graphprompt_core::graph::save_graph;

use crate::config::Settings;
use crate::data::{build_bundle, source_graph};
use crate::error::{CliError, Result};
use crate::experiments::common::{frozen_backbone, prepare, run_seeds, train_prompt_pipeline};
use crate::report::{write_curve, Report, SeedRecord};

/// `pretrain` subcommand: trains the contrastive backbone per seed, writing
/// `backbone_seed{N}.ckpt` and an `epoch,loss` curve file.
pub fn run_pretrain(cfg: &Settings, out_dir: &Path) -> Result<Report> {
    let records = run_seeds(&cfg.seeds, cfg.jobs, |seed| {
        let bundle = build_bundle(cfg, seed)?;
        let mut no_ckpt = cfg.clone();
        no_ckpt.backbone_checkpoint = None;
        let (encoder, curve) = frozen_backbone(&no_ckpt, &bundle, seed)?;
        let ckpt = graphprompt_core::backbone::Checkpoint::new(
            "backbone",
            encoder.params().clone(),
        )
        .with_meta("kind", encoder.kind.as_str())
        .with_meta("d", encoder.d.to_string())
        .with_meta("h", encoder.h.to_string())
        .with_meta("heads", encoder.heads.to_string())
        .with_meta("seed", seed.to_string())
        .with_meta("frozen", "true");
        std::fs::create_dir_all(out_dir)
            .map_err(|e| CliError::runtime(format!("mkdir {}: {e}", out_dir.display())))?;
        ckpt.save(out_dir.join(format!("backbone_seed{seed}.ckpt")))?;
        write_curve(
            &out_dir.join(format!("pretrain_curve_seed{seed}.csv")),
            "epoch,loss",
            &curve,
        )?;
        let mut metrics = BTreeMap::new();
        if let Some((_, first)) = curve.first() {
            metrics.insert("initial_loss".to_string(), *first);
        }
        if let Some((_, last)) = curve.last() {
            metrics.insert("final_loss".to_string(), *last);
        }
        Ok(SeedRecord { seed, metrics })
    })?;
    Ok(Report::new("pretrain", &cfg.digest(), records))
}

/// `metatune` subcommand: meta-trains the prompt pipeline per seed, writing
/// prompt and head checkpoints plus an `episode,meta_loss` curve.
pub fn run_metatune(cfg: &Settings, out_dir: &Path) -> Result<Report> {
    let records = run_seeds(&cfg.seeds, cfg.jobs, |seed| {
        let prepared = prepare(cfg, seed)?;
        let (pipeline, curve) = train_prompt_pipeline(cfg, &prepared, seed)?;
        std::fs::create_dir_all(out_dir)
            .map_err(|e| CliError::runtime(format!("mkdir {}: {e}", out_dir.display())))?;
        let prompt = pipeline
            .model
            .prompt
            .as_ref()
            .ok_or_else(|| CliError::runtime("pipeline lost its prompt"))?;
        prompt
            .to_checkpoint()
            .save(out_dir.join(format!("prompt_seed{seed}.ckpt")))?;
        pipeline
            .model
            .head
            .to_checkpoint()
            .save(out_dir.join(format!("head_seed{seed}.ckpt")))?;
        write_curve(
            &out_dir.join(format!("meta_curve_seed{seed}.csv")),
            "episode,meta_loss",
            &curve,
        )?;
        let mut metrics = BTreeMap::new();
        if let Some((_, first)) = curve.first() {
            metrics.insert("initial_meta_loss".to_string(), *first);
        }
        if let Some((_, last)) = curve.last() {
            metrics.insert("final_meta_loss".to_string(), *last);
        }
        metrics.insert("train_tasks".to_string(), prepared.train_pool.len() as f64);
        metrics.insert("test_tasks".to_string(), prepared.test_pool.len() as f64);
        Ok(SeedRecord { seed, metrics })
    })?;
    Ok(Report::new("metatune", &cfg.digest(), records))
}

/// `synth` subcommand: writes the generated SBM as edge/feature/label files
/// plus a manifest, one set per seed.
pub fn run_synth(cfg: &Settings, out_dir: &Path) -> Result<Report> {
    let records = run_seeds(&cfg.seeds, cfg.jobs, |seed| {
        let g = source_graph(cfg, seed)?;
        std::fs::create_dir_all(out_dir)
            .map_err(|e| CliError::runtime(format!("mkdir {}: {e}", out_dir.display())))?;
        let prefix = format!("{}_seed{seed}", cfg.synth_prefix);
        let edges = out_dir.join(format!("{prefix}_edges.csv"));
        let feats = out_dir.join(format!("{prefix}_features.csv"));
        let labels = out_dir.join(format!("{prefix}_labels.csv"));
        save_graph(&g, &edges, &feats, Some(&labels))?;
        let manifest = format!(
            "files.edges = {prefix}_edges.csv\nfiles.features = {prefix}_features.csv\nfiles.labels = {prefix}_labels.csv\ndataset.level = node\ndataset.tau = {}\n",
            cfg.tau_node
        );
        std::fs::write(out_dir.join(format!("{prefix}_manifest.cfg")), manifest)
            .map_err(|e| CliError::runtime(format!("write manifest: {e}")))?;
        let mut metrics = BTreeMap::new();
        metrics.insert("nodes".to_string(), g.n() as f64);
        metrics.insert("edges".to_string(), g.num_edges() as f64);
        Ok(SeedRecord { seed, metrics })
    })?;
    Ok(Report::new("synth", &cfg.digest(), records))
}
