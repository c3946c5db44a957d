//! Central-difference gradient checks across the full differentiable
//! surface: encoders, prompt insertion in every mode, the contrastive loss,
//! and both task-head losses.

use std::collections::BTreeMap;

use graphprompt_core::backbone::{BackboneKind, Encoder};
use graphprompt_core::diff::{
    grad_check, NodeId, ParamSet, Tape, Tensor, GRAD_CHECK_EPS,
};
use graphprompt_core::graph::synth_sbm;
use graphprompt_core::meta::{HeadParams, LossKind, ScoringModel};
use graphprompt_core::pretrain::nt_xent_tape;
use graphprompt_core::prompt::{InsertionMode, PromptGraph, StructureScheme};

type Leaves = [(String, NodeId)];

fn to_map(leaves: &Leaves) -> BTreeMap<String, NodeId> {
    leaves.iter().cloned().collect()
}

/// Distance of the nearest relu/threshold input to its kink at this
/// parameter point; resampling keeps central differences trustworthy.
fn kink_distance<F>(build: &F, params: &ParamSet) -> f64
where
    F: Fn(&mut Tape, &Leaves) -> graphprompt_core::Result<NodeId>,
{
    let mut tape = Tape::new();
    let leaves = tape.leaves(params).unwrap();
    build(&mut tape, &leaves).unwrap();
    tape.min_kink_distance()
}

/// Runs grad_check on the first parameter draw whose forward pass stays
/// clear of piecewise-linear kinks.
fn checked_gradient<F, P>(build: F, mut draw: P, tol: f64, label: &str)
where
    F: Fn(&mut Tape, &Leaves) -> graphprompt_core::Result<NodeId>,
    P: FnMut(u64) -> ParamSet,
{
    for attempt in 0..20 {
        let params = draw(attempt);
        if kink_distance(&build, &params) < 1e-4 {
            continue;
        }
        let err = grad_check(&build, &params, GRAD_CHECK_EPS).unwrap();
        assert!(err < tol, "{label}: relative error {err} at attempt {attempt}");
        return;
    }
    panic!("{label}: no kink-free draw in 20 attempts");
}

#[test]
fn gcn_two_layer_loss_matches_central_differences() {
    let g = synth_sbm(&[3, 2], 0.8, 0.3, 4, 0.5, 7).unwrap();
    let build = move |tape: &mut Tape, leaves: &Leaves| {
        let ids = to_map(leaves);
        let enc = Encoder::init(BackboneKind::Gcn, 4, 6, 1, 0).unwrap();
        let adj = tape.constant(g.dense_adjacency());
        let x = tape.constant(g.features().clone());
        let h = enc.encode(tape, &ids, adj, x)?;
        let sq = tape.mul(h, h)?;
        tape.mean(sq)
    };
    checked_gradient(
        build,
        |seed| Encoder::init(BackboneKind::Gcn, 4, 6, 1, seed).unwrap().params().clone(),
        1e-5,
        "gcn",
    );
}

#[test]
fn gat_attention_loss_matches_central_differences() {
    let g = synth_sbm(&[3, 2], 0.8, 0.3, 4, 0.5, 11).unwrap();
    let build = move |tape: &mut Tape, leaves: &Leaves| {
        let ids = to_map(leaves);
        let enc = Encoder::init(BackboneKind::Gat, 4, 8, 2, 0).unwrap();
        let adj = tape.constant(g.dense_adjacency());
        let x = tape.constant(g.features().clone());
        let h = enc.encode(tape, &ids, adj, x)?;
        let sq = tape.mul(h, h)?;
        tape.mean(sq)
    };
    checked_gradient(
        build,
        |seed| Encoder::init(BackboneKind::Gat, 4, 8, 2, seed).unwrap().params().clone(),
        1e-5,
        "gat",
    );
}

#[test]
fn prompt_insertion_gradients_in_all_modes_and_schemes() {
    let g = synth_sbm(&[3, 3], 0.7, 0.2, 4, 0.4, 5).unwrap();
    for scheme in [
        StructureScheme::Learnable,
        StructureScheme::DotThreshold,
        StructureScheme::Independent,
    ] {
        for mode in [
            InsertionMode::GraphAugment,
            InsertionMode::FeatureWeighted,
            InsertionMode::FeatureUniform,
        ] {
            let g = g.clone();
            let build = move |tape: &mut Tape, leaves: &Leaves| {
                let ids = to_map(leaves);
                let enc = Encoder::init(BackboneKind::Gcn, 4, 6, 1, 1).unwrap();
                let enc_ids = tape.register_params(enc.params(), false)?;
                let pg = PromptGraph::init(3, 4, scheme, 0).unwrap();
                let inserted = graphprompt_core::prompt::insert_tape(tape, &g, &pg, &ids, mode)?;
                let h = enc.encode(tape, &enc_ids, inserted.adjacency, inserted.features)?;
                let z = graphprompt_core::backbone::readout(
                    tape,
                    h,
                    graphprompt_core::backbone::ReadoutMode::Mean,
                    &inserted.original_mask,
                )?;
                let sq = tape.mul(z, z)?;
                tape.mean(sq)
            };
            checked_gradient(
                build,
                |seed| PromptGraph::init(3, 4, scheme, 100 + seed).unwrap().param_set(),
                1e-5,
                &format!("insert {scheme:?} {mode:?}"),
            );
        }
    }
}

#[test]
fn nt_xent_gradients_match_central_differences() {
    let build = |tape: &mut Tape, leaves: &Leaves| {
        let ids = to_map(leaves);
        nt_xent_tape(tape, ids["z1"], ids["z2"], 0.5)
    };
    checked_gradient(
        build,
        |seed| {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let mut ps = ParamSet::new();
            ps.insert("z1", Tensor::uniform(vec![3, 4], 1.0, &mut rng)).unwrap();
            ps.insert("z2", Tensor::uniform(vec![3, 4], 1.0, &mut rng)).unwrap();
            ps
        },
        1e-5,
        "nt_xent",
    );
}

#[test]
fn head_losses_match_central_differences() {
    let g = synth_sbm(&[3, 3], 0.7, 0.2, 4, 0.4, 9).unwrap();
    for kind in [LossKind::BinaryCe, LossKind::Mse] {
        let g0 = g.clone();
        let build = move |tape: &mut Tape, leaves: &Leaves| {
            let ids = to_map(leaves);
            let enc = Encoder::init(BackboneKind::Gcn, 4, 6, 1, 2).unwrap();
            let pg = PromptGraph::init(3, 4, StructureScheme::Learnable, 3).unwrap();
            let model = ScoringModel::prompted(enc, pg, HeadParams::init(6, 4));
            let samples = vec![(&g0, 1.0), (&g0, 0.0)];
            model.batch_loss(tape, &ids, &samples, kind)
        };
        checked_gradient(
            build,
            |seed| {
                let pg = PromptGraph::init(3, 4, StructureScheme::Learnable, 200 + seed).unwrap();
                pg.param_set()
                    .merged(HeadParams::init(6, 300 + seed).param_set())
                    .unwrap()
            },
            1e-5,
            &format!("head {kind:?}"),
        );
    }
}
