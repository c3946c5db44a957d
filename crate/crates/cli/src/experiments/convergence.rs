use std::collections::BTreeMap;

use graphprompt_core::backbone::Encoder;
use graphprompt_core::graph::{Graph, Level};
use graphprompt_core::meta::{tune_model, HeadParams, ScoringModel, TuneOptimizer};

use crate::config::Settings;
use crate::error::{CliError, Result};
use crate::experiments::common::{mix_seed, prepare, run_seeds, train_prompt_pipeline};
use crate::report::{Report, SeedRecord};

/// Convergence comparison on one node-level task: how many full-batch
/// epochs the prompt pipeline (meta-trained initialization, frozen
/// backbone) needs to push the training loss under a fixed threshold,
/// against supervised training from scratch with the same budget and
/// optimizer. Curves that never reach the threshold count as max + 1.
pub fn run_convergence(cfg: &Settings) -> Result<Report> {
    let records = run_seeds(&cfg.seeds, cfg.jobs, |seed| seed_run(cfg, seed))?;
    Ok(Report::new("convergence", &cfg.digest(), records))
}

fn epochs_to_threshold(curve: &[f64], threshold: f64, cap: usize) -> usize {
    curve
        .iter()
        .position(|&l| l < threshold)
        .map(|i| i + 1)
        .unwrap_or(cap + 1)
}

fn seed_run(cfg: &Settings, seed: u64) -> Result<SeedRecord> {
    let prepared = prepare(cfg, seed)?;
    let node_tasks = prepared.test_tasks_at(Level::Node);
    let &tid = node_tasks
        .first()
        .ok_or_else(|| CliError::runtime("convergence needs a node-level task"))?;
    let task = &prepared.tasks[tid];
    let samples: Vec<(&Graph, f64)> = task
        .support
        .iter()
        .map(|s| (&s.graph, s.target))
        .collect();

    // supervised from scratch
    let sup_encoder = Encoder::init(
        cfg.backbone,
        prepared.bundle.feature_dim(),
        cfg.hidden,
        cfg.heads,
        mix_seed(seed, 130),
    )?;
    let mut supervised = ScoringModel::supervised(
        sup_encoder,
        HeadParams::init(cfg.hidden, mix_seed(seed, 131)),
    )
    .with_readout(cfg.readout);
    let sup_curve = tune_model(
        &mut supervised,
        &samples,
        task.loss,
        cfg.conv_max_epochs,
        cfg.train_lr,
        TuneOptimizer::Adam,
    )?;

    // prompt tuning from the meta-learned initialization
    let (pipeline, _) = train_prompt_pipeline(cfg, &prepared, seed)?;
    let mut prompt_model = pipeline.model;
    let prompt_curve = tune_model(
        &mut prompt_model,
        &samples,
        task.loss,
        cfg.conv_max_epochs,
        cfg.train_lr,
        TuneOptimizer::Adam,
    )?;

    let mut metrics = BTreeMap::new();
    metrics.insert(
        "supervised.epochs_to_threshold".to_string(),
        epochs_to_threshold(&sup_curve, cfg.conv_threshold, cfg.conv_max_epochs) as f64,
    );
    metrics.insert(
        "prompt.epochs_to_threshold".to_string(),
        epochs_to_threshold(&prompt_curve, cfg.conv_threshold, cfg.conv_max_epochs) as f64,
    );
    metrics.insert("supervised.final_loss".to_string(), *sup_curve.last().unwrap());
    metrics.insert("prompt.final_loss".to_string(), *prompt_curve.last().unwrap());
    Ok(SeedRecord { seed, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_position_is_one_based_with_cap() {
        assert_eq!(epochs_to_threshold(&[0.9, 0.5, 0.3], 0.45, 10), 3);
        assert_eq!(epochs_to_threshold(&[0.9, 0.8], 0.45, 10), 11);
        assert_eq!(epochs_to_threshold(&[0.1], 0.45, 10), 1);
    }
}
