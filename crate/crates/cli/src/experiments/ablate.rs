use std::collections::BTreeMap;

use graphprompt_core::graph::{Graph, Level};
use graphprompt_core::meta::{headfree_tune, HeadFreeMetric, Task};
use graphprompt_core::prompt::{InsertionMode, StructureScheme};

use crate::config::Settings;
use crate::error::Result;
use crate::experiments::common::{
    adapt_and_eval, headfree_scores, make_prompt_model, mean_triple, mix_seed, prepare,
    run_seeds, train_prompt_pipeline, record_triple, Prepared,
};
use crate::metrics::{accuracy, auc, macro_f1};
use crate::report::{Report, SeedRecord};

/// Component ablations on node-level meta-test tasks: the complete pipeline
/// against w/o meta (no episodic training), w/o h (head-free answering),
/// w/o token structure (independent tokens), and w/o inserting (uniform
/// feature addition, no cross links).
pub fn run_ablation(cfg: &Settings) -> Result<Report> {
    let records = run_seeds(&cfg.seeds, cfg.jobs, |seed| seed_run(cfg, seed))?;
    Ok(Report::new("ablate", &cfg.digest(), records))
}

fn eval_variant(
    cfg: &Settings,
    prepared: &Prepared,
    seed: u64,
    tasks: &[usize],
    variant: &str,
) -> Result<(f64, f64, f64)> {
    let mut rows = Vec::new();
    match variant {
        "complete" | "wo_structure" | "wo_insert" => {
            let mut vcfg = cfg.clone();
            match variant {
                "wo_structure" => vcfg.scheme = StructureScheme::Independent,
                "wo_insert" => vcfg.insertion = InsertionMode::FeatureUniform,
                _ => {}
            }
            let (pipeline, _) = train_prompt_pipeline(&vcfg, prepared, seed)?;
            for &tid in tasks {
                rows.push(adapt_and_eval(
                    &pipeline.model,
                    &prepared.tasks[tid],
                    vcfg.eval_adapt_steps,
                    vcfg.eval_adapt_lr,
                )?);
            }
        }
        "wo_meta" => {
            // plain prompt tuning: fresh prompt + head, no episodic loop
            let model = make_prompt_model(cfg, prepared.encoder.clone(), mix_seed(seed, 70))?;
            for &tid in tasks {
                rows.push(adapt_and_eval(
                    &model,
                    &prepared.tasks[tid],
                    cfg.eval_adapt_steps,
                    cfg.eval_adapt_lr,
                )?);
            }
        }
        "wo_head" => {
            for &tid in tasks {
                rows.push(headfree_eval(cfg, prepared, seed, &prepared.tasks[tid])?);
            }
        }
        other => unreachable!("unknown variant {other}"),
    }
    Ok(mean_triple(&rows))
}

/// Head-free arm for one binary task: two sub-prompts (negative view,
/// positive view) tuned with the distance loss on the support, then scored
/// by which view sits closer.
fn headfree_eval(
    cfg: &Settings,
    prepared: &Prepared,
    seed: u64,
    task: &Task,
) -> Result<(f64, f64, f64)> {
    let mut vcfg = cfg.clone();
    vcfg.tokens = cfg.tokens.max(2);
    let mut model = make_prompt_model(&vcfg, prepared.encoder.clone(), mix_seed(seed, 80))?;
    if let Some(pg) = model.prompt.take() {
        model.prompt = Some(pg.with_subprompt_groups(2)?);
    }
    // zero head parameters are tuned: only the prompt tokens learn
    let samples: Vec<(&Graph, usize)> = task
        .support
        .iter()
        .map(|s| (&s.graph, s.target as usize))
        .collect();
    headfree_tune(
        &mut model,
        &samples,
        cfg.eval_adapt_steps,
        cfg.eval_adapt_lr,
        1.0,
    )?;
    let (scores, labels) = headfree_scores(&model, task, HeadFreeMetric::Euclidean)?;
    Ok((
        accuracy(&scores, &labels)?,
        macro_f1(&scores, &labels)?,
        auc(&scores, &labels)?,
    ))
}

fn seed_run(cfg: &Settings, seed: u64) -> Result<SeedRecord> {
    let prepared = prepare(cfg, seed)?;
    let tasks = prepared.test_tasks_at(Level::Node);
    let mut metrics = BTreeMap::new();
    for variant in ["complete", "wo_meta", "wo_head", "wo_structure", "wo_insert"] {
        let triple = eval_variant(cfg, &prepared, seed, &tasks, variant)?;
        record_triple(&mut metrics, variant, triple);
    }
    Ok(SeedRecord { seed, metrics })
}
