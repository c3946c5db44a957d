use std::collections::BTreeMap;

use graphprompt_core::graph::{induced_edge_graph, Graph};
use graphprompt_core::meta::{tune_model, LossKind, TuneOptimizer};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::config::Settings;
use crate::data::source_graph;
use crate::error::{CliError, Result};
use crate::experiments::common::{
    contrastive_config, make_prompt_model, mix_seed, prune_thin_classes, run_seeds,
};
use crate::metrics::mrr_hits;
use crate::report::{Report, SeedRecord};

/// Link prediction protocol: 80% of the edges stay for message passing
/// only, 10% train the model and 10% are ranked at test time, each positive
/// against `linkpred.negatives_per_positive` sampled non-adjacent corruptions.
pub fn run_linkpred(cfg: &Settings) -> Result<Report> {
    let records = run_seeds(&cfg.seeds, cfg.jobs, |seed| seed_run(cfg, seed))?;
    Ok(Report::new("linkpred", &cfg.digest(), records))
}

/// The three disjoint edge sets of the protocol.
pub struct EdgeSplit {
    pub message_passing: Vec<(usize, usize, f64)>,
    pub train: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
}

pub fn split_edges(g: &Graph, seed: u64) -> Result<EdgeSplit> {
    let mut edges: Vec<(usize, usize, f64)> = g.edges().to_vec();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    edges.shuffle(&mut rng);
    let m = edges.len();
    let mp_count = (m as f64 * 0.8).floor() as usize;
    let train_count = (m as f64 * 0.1).floor() as usize;
    let test_count = m - mp_count - train_count;
    if train_count == 0 || test_count == 0 {
        return Err(CliError::runtime(format!(
            "graph too small for the 80/10/10 split ({m} edges)"
        )));
    }
    Ok(EdgeSplit {
        message_passing: edges[..mp_count].to_vec(),
        train: edges[mp_count..mp_count + train_count]
            .iter()
            .map(|&(u, v, _)| (u, v))
            .collect(),
        test: edges[mp_count + train_count..]
            .iter()
            .map(|&(u, v, _)| (u, v))
            .collect(),
    })
}

fn non_adjacent_partner(
    g: &Graph,
    u: usize,
    rng: &mut ChaCha20Rng,
) -> Result<usize> {
    for _ in 0..10_000 {
        let w = rng.gen_range(0..g.n());
        if w != u && !g.has_edge(u, w) {
            return Ok(w);
        }
    }
    Err(CliError::runtime("could not sample a non-adjacent partner"))
}

fn seed_run(cfg: &Settings, seed: u64) -> Result<SeedRecord> {
    let full = source_graph(cfg, seed)?;
    let split = split_edges(&full, mix_seed(seed, 120))?;

    // message-passing graph: same nodes and features, the 80% edge subset
    let mp_graph = Graph::new(
        full.n(),
        split.message_passing.clone(),
        full.features().clone(),
        full.node_labels().map(<[usize]>::to_vec),
    )
    .map_err(CliError::from)?;

    // the held-out splits never reappear as message-passing edges
    for (u, v) in split.train.iter().chain(&split.test) {
        if mp_graph.has_edge(*u, *v) {
            return Err(CliError::runtime("edge split leaked into message passing"));
        }
    }

    // frozen backbone pre-trained on ego-nets of the message-passing graph
    let pretrain_ds = prune_thin_classes(
        graphprompt_core::graph::graph_dataset(
            &mp_graph,
            cfg.tau_edge,
            cfg.graph_samples,
            mix_seed(seed, 121),
        )?,
        1,
    );
    let encoder = graphprompt_core::backbone::Encoder::init(
        cfg.backbone,
        full.feature_dim(),
        cfg.hidden,
        cfg.heads,
        mix_seed(seed, 122),
    )?;
    let encoder = graphprompt_core::pretrain::pretrain(
        &pretrain_ds,
        encoder,
        &contrastive_config(cfg),
        mix_seed(seed, 123),
    )?
    .encoder;

    // training task: sampled train positives plus equal negatives, induced
    // on the message-passing graph only
    let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(seed, 124));
    let mut train_pos = split.train.clone();
    train_pos.shuffle(&mut rng);
    train_pos.truncate(cfg.lp_train_positives);
    let mut samples: Vec<(Graph, f64)> = Vec::with_capacity(train_pos.len() * 2);
    for &(u, v) in &train_pos {
        let s = induced_edge_graph(&mp_graph, (u, v), cfg.tau_edge)?;
        samples.push((s.graph, 1.0));
        let w = non_adjacent_partner(&full, u, &mut rng)?;
        let s = induced_edge_graph(&mp_graph, (u, w), cfg.tau_edge)?;
        samples.push((s.graph, 0.0));
    }
    let mut model = make_prompt_model(cfg, encoder, seed)?;
    // prompt + head tuned on the 1:1 training pairs
    let refs: Vec<(&Graph, f64)> = samples.iter().map(|(g, y)| (g, *y)).collect();
    tune_model(
        &mut model,
        &refs,
        LossKind::BinaryCe,
        cfg.train_steps,
        cfg.train_lr,
        TuneOptimizer::Adam,
    )?;

    // ranking: each test positive against sampled corruptions
    let mut test_pos = split.test.clone();
    test_pos.shuffle(&mut rng);
    test_pos.truncate(cfg.lp_test_positives);
    let mut queries = Vec::with_capacity(test_pos.len());
    for &(u, v) in &test_pos {
        let mut scores = Vec::with_capacity(cfg.lp_negatives + 1);
        let pos_sample = induced_edge_graph(&mp_graph, (u, v), cfg.tau_edge)?;
        scores.push(model.score(&pos_sample.graph, LossKind::BinaryCe)?);
        for _ in 0..cfg.lp_negatives {
            let w = non_adjacent_partner(&full, u, &mut rng)?;
            let neg_sample = induced_edge_graph(&mp_graph, (u, w), cfg.tau_edge)?;
            scores.push(model.score(&neg_sample.graph, LossKind::BinaryCe)?);
        }
        queries.push((scores, 0usize));
    }
    let (mrr, hits) = mrr_hits(&queries, &[1, 5, 10])?;

    let mut metrics = BTreeMap::new();
    metrics.insert("mrr".to_string(), mrr);
    metrics.insert("hit1".to_string(), hits[0]);
    metrics.insert("hit5".to_string(), hits[1]);
    metrics.insert("hit10".to_string(), hits[2]);
    metrics.insert("test_queries".to_string(), queries.len() as f64);
    Ok(SeedRecord { seed, metrics })
}
