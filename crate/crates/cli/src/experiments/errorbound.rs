use std::collections::BTreeMap;

use graphprompt_core::backbone::{readout, Encoder};
use graphprompt_core::diff::{Tape, Tensor};
use graphprompt_core::graph::Graph;
use graphprompt_core::optim::sgd_step;
use graphprompt_core::pretrain::{augment, Augmentation, AugmentationKind};
use graphprompt_core::prompt::{insert_tape, InsertionMode, PromptGraph, StructureScheme};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::config::Settings;
use crate::error::{CliError, Result};
use crate::experiments::common::{mix_seed, prepare, run_seeds};
use crate::report::{Report, SeedRecord};

/// Error-bound study: how closely a tuned prompt can make the frozen
/// backbone's embedding of the original graph imitate the embedding of a
/// manipulated graph. Compares the raw gap, a single uniformly-added token,
/// and full prompt graphs of growing token counts.
pub fn run_error_bound(cfg: &Settings) -> Result<Report> {
    let records = run_seeds(&cfg.seeds, cfg.jobs, |seed| seed_run(cfg, seed))?;
    Ok(Report::new("errorbound", &cfg.digest(), records))
}

struct TuneEval {
    loss: f64,
    mean_l2: f64,
    grads: graphprompt_core::diff::ParamSet,
}

fn eval_prompt_fit(
    encoder: &Encoder,
    prompt: &PromptGraph,
    params: &graphprompt_core::diff::ParamSet,
    insertion: InsertionMode,
    readout_mode: graphprompt_core::backbone::ReadoutMode,
    pairs: &[(&Graph, Tensor)],
) -> Result<TuneEval> {
    let mut tape = Tape::new();
    let ids = tape.register_params(params, true)?;
    let enc_ids = tape.register_params(encoder.params(), false)?;
    let mut prompt_now = prompt.clone();
    prompt_now.set_params(params)?;
    let mut sq_dists = Vec::with_capacity(pairs.len());
    for (g, target) in pairs {
        let inserted = insert_tape(&mut tape, g, &prompt_now, &ids, insertion)?;
        let h = encoder.encode(&mut tape, &enc_ids, inserted.adjacency, inserted.features)?;
        let z = readout(&mut tape, h, readout_mode, &inserted.original_mask)?;
        let t = tape.constant(target.clone());
        let diff = tape.sub(z, t)?;
        let sq = tape.mul(diff, diff)?;
        sq_dists.push(tape.sum(sq)?);
    }
    let stacked = tape.stack_rows(sq_dists.clone())?;
    let loss_id = tape.mean(stacked)?;
    let loss = tape.value(loss_id).value();
    if !loss.is_finite() {
        return Err(CliError::runtime("prompt tuning produced a non-finite loss"));
    }
    let mean_l2 = sq_dists
        .iter()
        .map(|&id| tape.value(id).value().sqrt())
        .sum::<f64>()
        / pairs.len() as f64;
    let grads = tape.backward(loss_id)?;
    Ok(TuneEval { loss, mean_l2, grads })
}

/// Mean L2 embedding distance between prompted originals and targets, plus
/// the tuned prompt. Tuning minimizes the mean squared distance with plain
/// fixed-rate gradient descent.
///
/// The zero prompt reproduces the original graph exactly, so a properly
/// optimized prompt can never lose to the raw error; the pretrained
/// encoder's curvature varies across seeds, though, and one fixed rate can
/// oscillate. An instance that fails to beat the zero-prompt baseline is
/// retried from scratch at a quarter of the rate; if no attempt clears the
/// bar the best attempt is returned.
pub fn tune_prompt_to_targets(
    encoder: &Encoder,
    prompt: PromptGraph,
    insertion: InsertionMode,
    readout_mode: graphprompt_core::backbone::ReadoutMode,
    pairs: &[(&Graph, Tensor)],
    steps: usize,
    lr: f64,
) -> Result<(PromptGraph, f64)> {
    // the do-nothing bar: zero parameters leave every graph untouched
    let zero_params = prompt.param_set().unflatten(&vec![
        0.0;
        prompt.param_set().count_scalars()
    ])?;
    let baseline = eval_prompt_fit(encoder, &prompt, &zero_params, insertion, readout_mode, pairs)?;
    let mut rate = lr;
    let mut best: Option<(PromptGraph, f64, f64)> = None;
    for _attempt in 0..8 {
        if let Some((tuned, loss, mean_l2)) =
            tune_at_rate(encoder, prompt.clone(), insertion, readout_mode, pairs, steps, rate)?
        {
            if best.as_ref().map_or(true, |(_, b, _)| loss < *b) {
                best = Some((tuned, loss, mean_l2));
            }
            if loss <= baseline.loss {
                break;
            }
        }
        rate /= 4.0;
    }
    match best {
        Some((tuned, _, mean_l2)) => Ok((tuned, mean_l2)),
        None => Err(CliError::runtime(
            "prompt tuning failed to descend at any retried rate",
        )),
    }
}

/// One fixed-rate descent. `Ok(None)` signals a blown-up run.
fn tune_at_rate(
    encoder: &Encoder,
    mut prompt: PromptGraph,
    insertion: InsertionMode,
    readout_mode: graphprompt_core::backbone::ReadoutMode,
    pairs: &[(&Graph, Tensor)],
    steps: usize,
    rate: f64,
) -> Result<Option<(PromptGraph, f64, f64)>> {
    let mut params = prompt.param_set();
    let initial = eval_prompt_fit(encoder, &prompt, &params, insertion, readout_mode, pairs)?;
    let initial_loss = initial.loss;
    let mut current = initial;
    for _ in 0..steps {
        let next_params = sgd_step(&params, &current.grads, rate)?;
        match eval_prompt_fit(encoder, &prompt, &next_params, insertion, readout_mode, pairs) {
            Ok(next) => {
                params = next_params;
                current = next;
            }
            Err(CliError::Runtime(_)) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    if !current.loss.is_finite() || current.loss > initial_loss {
        return Ok(None);
    }
    prompt.set_params(&params)?;
    Ok(Some((prompt, current.loss, current.mean_l2)))
}

/// Plain embedding (no prompt) of a graph under the frozen encoder.
fn plain_embedding(
    encoder: &Encoder,
    g: &Graph,
    readout_mode: graphprompt_core::backbone::ReadoutMode,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let ids = tape.register_params(encoder.params(), false)?;
    let z = encoder.embed_graph_with(&mut tape, &ids, g, readout_mode)?;
    Ok(tape.value(z).clone())
}

fn seed_run(cfg: &Settings, seed: u64) -> Result<SeedRecord> {
    let prepared = prepare(cfg, seed)?;
    let encoder = prepared.encoder;
    let ds = prepared
        .bundle
        .graph_level
        .as_ref()
        .ok_or_else(|| CliError::runtime("error bound needs graph-level samples"))?;
    let batch: Vec<&Graph> = ds
        .items
        .iter()
        .take(cfg.eb_graphs)
        .map(|it| &it.graph)
        .collect();
    if batch.is_empty() {
        return Err(CliError::runtime("error bound: empty graph batch"));
    }

    let mut metrics = BTreeMap::new();
    let mut orig_sum = 0.0;
    let mut naive_sum = 0.0;
    let mut count_sums: BTreeMap<usize, f64> = BTreeMap::new();

    for (kidx, kind) in AugmentationKind::ALL.iter().enumerate() {
        let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(seed, 90 + kidx as u64));
        let aug = Augmentation {
            kind: *kind,
            ratio: cfg.eb_ratio,
        };
        // one fixed manipulated target per graph
        let mut pairs: Vec<(&Graph, Tensor)> = Vec::with_capacity(batch.len());
        let mut orig_err = 0.0;
        for &g in &batch {
            let manipulated = augment(g, aug, &mut rng)
                .map_err(|e| CliError::runtime(format!("augment: {e}")))?;
            let target = plain_embedding(&encoder, &manipulated, cfg.readout)?;
            let original = plain_embedding(&encoder, g, cfg.readout)?;
            orig_err += original
                .data()
                .iter()
                .zip(target.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            pairs.push((g, target));
        }
        orig_err /= batch.len() as f64;
        let name = kind.as_str();
        metrics.insert(format!("{name}.original"), orig_err);
        orig_sum += orig_err;

        // a prompt is fitted per graph (one imitation problem each); the
        // reported error is the batch mean of the per-graph residuals
        let mut naive_err = 0.0;
        let mut count_errs: BTreeMap<usize, f64> = BTreeMap::new();
        for (gidx, (g, target)) in pairs.iter().enumerate() {
            let one = [(*g, target.clone())];
            // naive: a single token added uniformly to every node
            let naive = PromptGraph::init(
                1,
                prepared.bundle.feature_dim(),
                StructureScheme::Independent,
                mix_seed(seed, 100 + (kidx * 977 + gidx) as u64),
            )?;
            let (_, err) = tune_prompt_to_targets(
                &encoder,
                naive,
                InsertionMode::FeatureUniform,
                cfg.readout,
                &one,
                cfg.eb_steps,
                cfg.eb_lr,
            )?;
            naive_err += err;

            // full prompt graphs of growing size, inserted via the
            // configured pattern
            for &tokens in &cfg.eb_token_counts {
                let pg = PromptGraph::init(
                    tokens,
                    prepared.bundle.feature_dim(),
                    cfg.scheme,
                    mix_seed(seed, 200 + (kidx * 977 + gidx * 31 + tokens) as u64),
                )?
                .with_delta(cfg.delta)?
                .with_structure_cmp(cfg.structure_cmp);
                let (_, err) = tune_prompt_to_targets(
                    &encoder,
                    pg,
                    cfg.insertion,
                    cfg.readout,
                    &one,
                    cfg.eb_steps,
                    cfg.eb_lr,
                )?;
                *count_errs.entry(tokens).or_insert(0.0) += err;
            }
        }
        naive_err /= pairs.len() as f64;
        metrics.insert(format!("{name}.naive"), naive_err);
        naive_sum += naive_err;
        for (&tokens, &sum) in &count_errs {
            let err = sum / pairs.len() as f64;
            metrics.insert(format!("{name}.prompt{tokens}"), err);
            *count_sums.entry(tokens).or_insert(0.0) += err;
        }
    }

    // RED%: reduction of the summed errors against the summed original
    metrics.insert(
        "red.naive".to_string(),
        100.0 * (1.0 - naive_sum / orig_sum),
    );
    for (tokens, sum) in count_sums {
        metrics.insert(format!("red.prompt{tokens}"), 100.0 * (1.0 - sum / orig_sum));
    }
    Ok(SeedRecord { seed, metrics })
}
