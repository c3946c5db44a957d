//! Experiment drivers: few-shot comparison, transferability, ablations,
//! error-bound study, link prediction, convergence, parameter accounting,
//! and the pretrain/metatune/synth stages.

pub mod ablate;
pub mod common;
pub mod convergence;
pub mod efficiency;
pub mod errorbound;
pub mod fewshot;
pub mod linkpred;
pub mod stages;
pub mod transfer;

pub use ablate::run_ablation;
pub use convergence::run_convergence;
pub use efficiency::run_params;
pub use errorbound::run_error_bound;
pub use fewshot::run_fewshot;
pub use linkpred::run_linkpred;
pub use stages::{run_metatune, run_pretrain, run_synth};
pub use transfer::run_transfer;
