use std::collections::BTreeMap;

use graphprompt_core::backbone::{count_params, BackboneKind, Encoder};
use graphprompt_core::meta::HeadParams;

use crate::config::Settings;
use crate::data::source_graph;
use crate::error::Result;
use crate::experiments::common::{make_prompt, run_seeds};
use crate::report::{Report, SeedRecord};

/// Reference dimensions of a citation-network-sized input (features x
/// hidden) used for the headline parameter comparison.
pub const REFERENCE_D: usize = 1433;
pub const REFERENCE_H: usize = 100;

/// Tunable-parameter accounting: encoder sizes against the prompt's, plus
/// the complexity symbols of the narrative (token count n, token edges m,
/// input size N/M, layers L, width d, heads K).
pub fn run_params(cfg: &Settings) -> Result<Report> {
    let records = run_seeds(&cfg.seeds, cfg.jobs, |seed| seed_run(cfg, seed))?;
    let report = Report::new("params", &cfg.digest(), records);
    print_table(&report);
    Ok(report)
}

fn seed_run(cfg: &Settings, seed: u64) -> Result<SeedRecord> {
    let mut metrics = BTreeMap::new();

    // reference-scale encoders (encoder-only counts, no task head)
    let gcn_ref = Encoder::init(BackboneKind::Gcn, REFERENCE_D, REFERENCE_H, 1, seed)?;
    let gat_ref = Encoder::init(BackboneKind::Gat, REFERENCE_D, REFERENCE_H, cfg.heads, seed)?;
    metrics.insert("ref.gcn.params".into(), count_params(gcn_ref.params()) as f64);
    metrics.insert("ref.gat.params".into(), count_params(gat_ref.params()) as f64);

    // the default pipeline works on SVD-reduced 100-dimensional features
    let prompt_ref = make_prompt(cfg, REFERENCE_H, seed)?;
    let prompt_ref_count = count_params(&prompt_ref.param_set());
    let gcn_default = Encoder::init(BackboneKind::Gcn, REFERENCE_H, REFERENCE_H, 1, seed)?;
    metrics.insert("ref.prompt.params".into(), prompt_ref_count as f64);
    metrics.insert(
        "ref.ratio.prompt_vs_gcn".into(),
        prompt_ref_count as f64 / count_params(gcn_default.params()) as f64,
    );

    // configured dimensions
    let graph = source_graph(cfg, seed)?;
    let d = graph.feature_dim();
    let gcn = Encoder::init(BackboneKind::Gcn, d, cfg.hidden, 1, seed)?;
    let gat = Encoder::init(BackboneKind::Gat, d, cfg.hidden, cfg.heads, seed)?;
    let prompt = make_prompt(cfg, d, seed)?;
    let head = HeadParams::init(cfg.hidden, seed);
    let prompt_count = count_params(&prompt.param_set());
    let gcn_count = count_params(gcn.params());
    metrics.insert("gcn.params".into(), gcn_count as f64);
    metrics.insert("gat.params".into(), count_params(gat.params()) as f64);
    metrics.insert("prompt.params".into(), prompt_count as f64);
    metrics.insert("head.params".into(), count_params(&head.param_set()) as f64);
    metrics.insert(
        "ratio.prompt_vs_gcn".into(),
        prompt_count as f64 / gcn_count as f64,
    );
    metrics.insert(
        "red.prompt_vs_gcn_pct".into(),
        100.0 * (1.0 - prompt_count as f64 / gcn_count as f64),
    );

    // complexity symbols
    metrics.insert("sym.n".into(), cfg.tokens as f64);
    metrics.insert("sym.m".into(), prompt.token_edges().len() as f64);
    metrics.insert("sym.N".into(), graph.n() as f64);
    metrics.insert("sym.M".into(), graph.num_edges() as f64);
    metrics.insert("sym.L".into(), 2.0);
    metrics.insert("sym.d".into(), cfg.hidden as f64);
    metrics.insert("sym.K".into(), cfg.heads as f64);
    Ok(SeedRecord { seed, metrics })
}

fn print_table(report: &Report) {
    let get = |k: &str| report.mean(k).unwrap_or(f64::NAN);
    println!("tunable parameters");
    println!("  {:<28} {:>12} {:>10}", "method", "params", "RED (%)");
    let prompt = get("ref.prompt.params");
    for (label, key) in [
        ("GCN (reference dims)", "ref.gcn.params"),
        ("GAT (reference dims)", "ref.gat.params"),
    ] {
        let v = get(key);
        println!(
            "  {:<28} {:>12.0} {:>9.1}%",
            label,
            v,
            100.0 * (1.0 - prompt / v)
        );
    }
    let prompt_label = format!("prompt ({} tokens, d={REFERENCE_H})", get("sym.n"));
    println!("  {:<28} {:>12.0} {:>10}", prompt_label, prompt, "-");
    println!(
        "  prompt/backbone ratio at default dims: {:.4}",
        get("ref.ratio.prompt_vs_gcn")
    );
}
