use std::collections::BTreeMap;
use std::path::Path;

use graphprompt_core::backbone::Encoder;
use graphprompt_core::graph::Level;
use graphprompt_core::meta::{HeadParams, ScoringModel};

use crate::config::Settings;
use crate::error::Result;
use crate::experiments::common::{
    adapt_and_eval, mean_triple, mix_seed, prepare, record_triple, run_seeds,
    train_prompt_pipeline, Prepared,
};
use crate::metrics::label_ratio;
use crate::report::{Report, SeedRecord};

/// Few-shot multi-task comparison: supervised / fine-tune / prompt arms per
/// task level, each adapted on the k-shot support of every meta-test task
/// and scored on its query pool.
pub fn run_fewshot(cfg: &Settings, out_dir: &Path) -> Result<Report> {
    let records = run_seeds(&cfg.seeds, cfg.jobs, |seed| seed_run(cfg, seed, out_dir))?;
    Ok(Report::new("fewshot", &cfg.digest(), records))
}

fn seed_run(cfg: &Settings, seed: u64, out_dir: &Path) -> Result<SeedRecord> {
    let prepared = prepare(cfg, seed)?;
    let mut metrics = BTreeMap::new();

    if let Some(node_ds) = &prepared.bundle.node {
        metrics.insert(
            "node.label_ratio".to_string(),
            label_ratio(cfg.shots, node_ds.num_classes(), prepared.bundle.graph.n()),
        );
    }

    // the prompt arm meta-trains once per seed across all levels
    let (pipeline, meta_curve) = train_prompt_pipeline(cfg, &prepared, seed)?;
    metrics.insert(
        "meta.final_loss".to_string(),
        meta_curve.last().map(|(_, l)| *l).unwrap_or(f64::NAN),
    );

    for level in [Level::Node, Level::Edge, Level::Graph] {
        let test_tasks = prepared.test_tasks_at(level);
        if test_tasks.is_empty() {
            continue;
        }
        let mut supervised_rows = Vec::new();
        let mut finetune_rows = Vec::new();
        let mut prompt_rows = Vec::new();
        for (i, &tid) in test_tasks.iter().enumerate() {
            let task = &prepared.tasks[tid];
            // supervised: fresh backbone + head trained on the support only
            let sup_encoder = Encoder::init(
                cfg.backbone,
                prepared.bundle.feature_dim(),
                cfg.hidden,
                cfg.heads,
                mix_seed(seed, 40 + i as u64),
            )?;
            let sup_head = HeadParams::init(cfg.hidden, mix_seed(seed, 50 + i as u64));
            let supervised = ScoringModel::supervised(sup_encoder, sup_head)
                .with_readout(cfg.readout);
            supervised_rows.push(adapt_and_eval(
                &supervised,
                task,
                cfg.train_steps,
                cfg.train_lr,
            )?);

            // fine-tune: frozen pre-trained backbone, fresh head
            let ft_head = HeadParams::init(cfg.hidden, mix_seed(seed, 60 + i as u64));
            let finetune = ScoringModel::head_only(prepared.encoder.clone(), ft_head)
                .with_readout(cfg.readout);
            finetune_rows.push(adapt_and_eval(
                &finetune,
                task,
                cfg.train_steps,
                cfg.train_lr,
            )?);

            // prompt: meta-trained initialization adapted on the support
            prompt_rows.push(adapt_and_eval(
                &pipeline.model,
                task,
                cfg.eval_adapt_steps,
                cfg.eval_adapt_lr,
            )?);
        }
        let lv = level.as_str();
        record_triple(&mut metrics, &format!("{lv}.supervised"), mean_triple(&supervised_rows));
        record_triple(&mut metrics, &format!("{lv}.finetune"), mean_triple(&finetune_rows));
        record_triple(&mut metrics, &format!("{lv}.prompt"), mean_triple(&prompt_rows));
    }

    if cfg.dump_embeddings {
        dump_embeddings(&prepared, &pipeline.model, out_dir, seed)?;
    }
    Ok(SeedRecord { seed, metrics })
}

/// Writes prompted query embeddings with labels for external plotting.
fn dump_embeddings(
    prepared: &Prepared,
    model: &ScoringModel,
    out_dir: &Path,
    seed: u64,
) -> Result<()> {
    let mut body = String::from("level,task,label,embedding\n");
    for &tid in &prepared.test_pool {
        let task = &prepared.tasks[tid];
        for sample in &task.query {
            let z = model.embedding(&sample.graph)?;
            let coords: Vec<String> = z.data().iter().map(|v| format!("{v}")).collect();
            body.push_str(&format!(
                "{},{},{},{}\n",
                task.level.as_str(),
                task.positive_class,
                sample.target,
                coords.join(";")
            ));
        }
    }
    let path = out_dir.join(format!("embeddings_seed{seed}.csv"));
    std::fs::create_dir_all(out_dir)
        .map_err(|e| crate::error::CliError::runtime(format!("mkdir: {e}")))?;
    std::fs::write(&path, body)
        .map_err(|e| crate::error::CliError::runtime(format!("write {}: {e}", path.display())))?;
    Ok(())
}
