//! Multi-task episode construction, inner-loop adaptation, second-order
//! meta-updates via finite-difference Hessian-vector products, the full
//! prompt-tuning pipeline, and head-free answering.

mod adapt;
mod model;
mod pipeline;
mod task;

pub use adapt::{
    inner_adapt, meta_gradient, meta_train, meta_update, query_loss_and_grad,
    support_loss_and_grad, MetaConfig, MetaObjective, MetaOrder,
};
pub use model::{tune_model, HeadParams, LossKind, ScoringModel, TuneOptimizer};
pub use pipeline::{
    headfree_loss, headfree_predict, headfree_tune, HeadFreeMetric, Pipeline, TaskObjective,
};
pub use task::{build_episodes, build_tasks, split_tasks, Episode, Task, TaskBuildConfig, TaskSample};
