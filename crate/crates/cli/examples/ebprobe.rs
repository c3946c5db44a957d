use graphprompt_cli::config::Settings;
use graphprompt_cli::experiments::common::{mix_seed, prepare};
use graphprompt_cli::experiments::errorbound::tune_prompt_to_targets;
use graphprompt_core::diff::{Tape, Tensor};
use graphprompt_core::graph::Graph;
use graphprompt_core::pretrain::{augment, Augmentation, AugmentationKind};
use graphprompt_core::prompt::{InsertionMode, PromptGraph, StructureScheme};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() {
    let mut cfg = Settings::default();
    for (k, v) in [
        ("dataset.blocks", "40,40"), ("dataset.p_in", "0.3"), ("dataset.p_out", "0.03"),
        ("dataset.feature_dim", "8"), ("dataset.feature_noise", "0.5"),
        ("dataset.tau_node", "1.0"), ("dataset.graph_samples", "24"),
        ("backbone.hidden", "12"), ("backbone.readout", "sum"), ("pretrain.epochs", "15"),
    ] { cfg.apply(k, v).unwrap(); }
    for seed in [0u64, 2] {
        let prepared = prepare(&cfg, seed).unwrap();
        let enc = prepared.encoder;
        let ds = prepared.bundle.graph_level.as_ref().unwrap();
        let batch: Vec<&Graph> = ds.items.iter().take(20).map(|it| &it.graph).collect();
        let mode = cfg.readout;
        let plain = |g: &Graph| -> Tensor {
            let mut tape = Tape::new();
            let ids = tape.register_params(enc.params(), false).unwrap();
            let z = enc.embed_graph_with(&mut tape, &ids, g, mode).unwrap();
            tape.value(z).clone()
        };
        let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(seed, 91));
        let aug = Augmentation { kind: AugmentationKind::DropEdges, ratio: 0.15 };
        print!("seed {seed} naive per-graph (orig->final): ");
        for (i, &g) in batch.iter().enumerate().take(8) {
            let m = augment(g, aug, &mut rng).unwrap_or_else(|_| g.clone());
            let t = plain(&m);
            let z = plain(g);
            let orig = z.data().iter().zip(t.data()).map(|(a,b)| (a-b)*(a-b)).sum::<f64>().sqrt();
            let naive = PromptGraph::init(1, 8, StructureScheme::Independent,
                mix_seed(seed, 100 + i as u64)).unwrap();
            let one = [(g, t)];
            let (_, e) = tune_prompt_to_targets(&enc, naive, InsertionMode::FeatureUniform, mode, &one, 2000, 0.01).unwrap();
            print!("{orig:.3}->{e:.3} ");
        }
        println!();
    }
}
