use std::collections::BTreeMap;

use crate::diff::{hvp_fd, NodeId, ParamSet, Tape};
use crate::error::{Error, Result};
use crate::optim::sgd_step;

/// Whether the outer update keeps the Hessian correction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaOrder {
    Second,
    First,
}

impl std::str::FromStr for MetaOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "second" => Ok(MetaOrder::Second),
            "first" => Ok(MetaOrder::First),
            other => Err(Error::invalid(format!("unknown meta order '{other}'"))),
        }
    }
}

/// Inner/outer loop settings.
#[derive(Debug, Clone, Copy)]
pub struct MetaConfig {
    /// Inner-loop step size.
    pub alpha: f64,
    /// Outer-loop step size.
    pub beta: f64,
    /// Inner full-batch gradient steps per task.
    pub inner_steps: usize,
    pub order: MetaOrder,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            alpha: 0.01,
            beta: 0.001,
            inner_steps: 1,
            order: MetaOrder::Second,
        }
    }
}

/// A task exposing a support and a query objective over one tunable
/// ParamSet. Each call receives a fresh tape with the parameters already
/// registered as leaves.
pub trait MetaObjective {
    fn support_loss(&self, tape: &mut Tape, ids: &BTreeMap<String, NodeId>) -> Result<NodeId>;
    fn query_loss(&self, tape: &mut Tape, ids: &BTreeMap<String, NodeId>) -> Result<NodeId>;
}

fn eval<M: MetaObjective + ?Sized>(
    obj: &M,
    params: &ParamSet,
    query: bool,
) -> Result<(f64, ParamSet)> {
    let mut tape = Tape::new();
    let ids = tape.register_params(params, true)?;
    let loss = if query {
        obj.query_loss(&mut tape, &ids)?
    } else {
        obj.support_loss(&mut tape, &ids)?
    };
    let value = tape.value(loss).value();
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "meta loss" });
    }
    let grads = tape.backward(loss)?;
    Ok((value, grads))
}

pub fn support_loss_and_grad<M: MetaObjective + ?Sized>(
    obj: &M,
    params: &ParamSet,
) -> Result<(f64, ParamSet)> {
    eval(obj, params, false)
}

pub fn query_loss_and_grad<M: MetaObjective + ?Sized>(
    obj: &M,
    params: &ParamSet,
) -> Result<(f64, ParamSet)> {
    eval(obj, params, true)
}

/// Task adaptation: `inner_steps` full-batch gradient-descent steps on the
/// support loss, starting from the shared initialization. alpha = 0 returns
/// the initialization unchanged.
pub fn inner_adapt<M: MetaObjective + ?Sized>(
    obj: &M,
    init: &ParamSet,
    alpha: f64,
    inner_steps: usize,
) -> Result<ParamSet> {
    if alpha < 0.0 {
        return Err(Error::invalid("inner_adapt: alpha must be >= 0"));
    }
    if inner_steps == 0 {
        return Err(Error::invalid("inner_adapt: need at least one step"));
    }
    let mut params = init.clone();
    for _ in 0..inner_steps {
        let (_, grads) = support_loss_and_grad(obj, &params)?;
        params = sgd_step(&params, &grads, alpha)?;
    }
    Ok(params)
}

/// Per-task outer gradient.
///
/// Second order evaluates the query gradient `q` at the adapted parameters
/// and multiplies by `(I - alpha H)` where `H` is the support-loss Hessian
/// at the shared initialization, realized as a single finite-difference
/// Hessian-vector product (two extra support-gradient evaluations, the full
/// Hessian is never materialized). First order returns `q` directly.
/// Also reports the query loss at the adapted parameters.
pub fn meta_gradient<M: MetaObjective + ?Sized>(
    obj: &M,
    shared: &ParamSet,
    adapted: &ParamSet,
    alpha: f64,
    order: MetaOrder,
) -> Result<(f64, Vec<f64>)> {
    let (query_loss, query_grads) = query_loss_and_grad(obj, adapted)?;
    let q = query_grads.flatten();
    match order {
        MetaOrder::First => Ok((query_loss, q)),
        MetaOrder::Second => {
            let grad_fn = |p: &ParamSet| -> Result<Vec<f64>> {
                let (_, g) = support_loss_and_grad(obj, p)?;
                Ok(g.flatten())
            };
            let hv = hvp_fd(&grad_fn, shared, &q, None)?;
            let g = q
                .iter()
                .zip(&hv)
                .map(|(qi, hvi)| qi - alpha * hvi)
                .collect();
            Ok((query_loss, g))
        }
    }
}

/// One outer update over an episode of already-adapted tasks: sums the
/// per-task meta-gradients and applies `shared <- shared - beta * g`.
/// Returns the new shared parameters and the mean query loss.
pub fn meta_update<M: MetaObjective + ?Sized>(
    tasks: &[(&M, &ParamSet)],
    shared: &ParamSet,
    cfg: &MetaConfig,
) -> Result<(ParamSet, f64)> {
    if tasks.is_empty() {
        return Err(Error::invalid("meta_update: empty episode"));
    }
    let mut total = vec![0.0; shared.count_scalars()];
    let mut loss_sum = 0.0;
    for (obj, adapted) in tasks {
        let (loss, g) = meta_gradient(*obj, shared, adapted, cfg.alpha, cfg.order)?;
        loss_sum += loss;
        for (t, gi) in total.iter_mut().zip(&g) {
            *t += gi;
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: "meta_gradient" });
        }
    }
    let flat = shared.flatten();
    let updated: Vec<f64> = flat
        .iter()
        .zip(&total)
        .map(|(p, g)| p - cfg.beta * g)
        .collect();
    Ok((shared.unflatten(&updated)?, loss_sum / tasks.len() as f64))
}

/// Episodic training: for every episode, adapt each task from the current
/// shared initialization, then apply one outer update on the query losses.
/// Returns the final shared parameters and a 1-based per-episode mean query
/// loss curve. Zero episodes return the initialization untouched.
pub fn meta_train<M: MetaObjective>(
    objectives: &[M],
    episodes: &[Vec<usize>],
    init: ParamSet,
    cfg: &MetaConfig,
) -> Result<(ParamSet, Vec<(usize, f64)>)> {
    let mut shared = init;
    let mut curve = Vec::with_capacity(episodes.len());
    for (i, episode) in episodes.iter().enumerate() {
        let mut adapted = Vec::with_capacity(episode.len());
        for &task_id in episode {
            let obj = objectives.get(task_id).ok_or_else(|| {
                Error::invalid(format!("episode references unknown task {task_id}"))
            })?;
            adapted.push(inner_adapt(obj, &shared, cfg.alpha, cfg.inner_steps.max(1))?);
        }
        let pairs: Vec<(&M, &ParamSet)> = episode
            .iter()
            .zip(&adapted)
            .map(|(&tid, pset)| (&objectives[tid], pset))
            .collect();
        let (next, mean_loss) = meta_update(&pairs, &shared, cfg)?;
        shared = next;
        curve.push((i + 1, mean_loss));
    }
    Ok((shared, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    /// 1-D oracle family: L_s = a/2 (x - c)^2, L_q = b/2 (x - e)^2.
    struct Quadratic {
        a: f64,
        b: f64,
        c: f64,
        e: f64,
    }

    impl Quadratic {
        fn loss(tape: &mut Tape, x: NodeId, coef: f64, center: f64) -> Result<NodeId> {
            let shift = tape.constant(Tensor::scalar(-center));
            let diff = tape.add_scalar(x, shift)?;
            let sq = tape.mul(diff, diff)?;
            let s = tape.sum(sq)?;
            tape.scale(s, coef / 2.0)
        }
    }

    impl MetaObjective for Quadratic {
        fn support_loss(&self, tape: &mut Tape, ids: &BTreeMap<String, NodeId>) -> Result<NodeId> {
            Self::loss(tape, ids["theta"], self.a, self.c)
        }
        fn query_loss(&self, tape: &mut Tape, ids: &BTreeMap<String, NodeId>) -> Result<NodeId> {
            Self::loss(tape, ids["theta"], self.b, self.e)
        }
    }

    fn theta_params(theta: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert("theta", Tensor::scalar(theta)).unwrap();
        ps
    }

    #[test]
    fn alpha_zero_keeps_initialization() {
        let obj = Quadratic { a: 2.0, b: 3.0, c: 1.0, e: 0.0 };
        let init = theta_params(0.5);
        let adapted = inner_adapt(&obj, &init, 0.0, 1).unwrap();
        assert_eq!(adapted, init);
    }

    #[test]
    fn single_step_matches_gradient_descent() {
        let obj = Quadratic { a: 2.0, b: 3.0, c: 1.0, e: 0.0 };
        let init = theta_params(0.5);
        let alpha = 0.1;
        let adapted = inner_adapt(&obj, &init, alpha, 1).unwrap();
        // theta - alpha a (theta - c) = 0.5 - 0.1*2*(-0.5) = 0.6
        let got = adapted.get("theta").unwrap().value();
        assert!((got - 0.6).abs() < 1e-12);
    }

    #[test]
    fn second_order_matches_analytic_composed_gradient() {
        // meta-gradient b (theta - alpha a (theta - c) - e)(1 - alpha a),
        // checked on the reference point and 50 random draws
        let check = |a: f64, b: f64, c: f64, e: f64, alpha: f64, theta: f64| {
            let obj = Quadratic { a, b, c, e };
            let shared = theta_params(theta);
            let adapted = inner_adapt(&obj, &shared, alpha, 1).unwrap();
            let (_, g) =
                meta_gradient(&obj, &shared, &adapted, alpha, MetaOrder::Second).unwrap();
            let theta_i = theta - alpha * a * (theta - c);
            let expect = b * (theta_i - e) * (1.0 - alpha * a);
            assert!(
                (g[0] - expect).abs() < 1e-6,
                "a={a} b={b}: got {} expected {expect}",
                g[0]
            );
        };
        check(2.0, 3.0, 1.0, 0.0, 0.1, 0.5);
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        for _ in 0..50 {
            let a = rng.gen_range(0.1..3.0);
            let b = rng.gen_range(0.1..3.0);
            let c = rng.gen_range(-2.0..2.0);
            let e = rng.gen_range(-2.0..2.0);
            let alpha = rng.gen_range(0.01..0.3);
            let theta = rng.gen_range(-2.0..2.0);
            check(a, b, c, e, alpha, theta);
        }
    }

    #[test]
    fn first_order_drops_the_hessian_factor() {
        let (a, b, c, e, alpha, theta) = (2.0, 3.0, 1.0, 0.0, 0.1, 0.5);
        let obj = Quadratic { a, b, c, e };
        let shared = theta_params(theta);
        let adapted = inner_adapt(&obj, &shared, alpha, 1).unwrap();
        let (_, g) = meta_gradient(&obj, &shared, &adapted, alpha, MetaOrder::First).unwrap();
        let theta_i = theta - alpha * a * (theta - c);
        let expect = b * (theta_i - e);
        assert!((g[0] - expect).abs() < 1e-9, "got {} expected {expect}", g[0]);
    }

    #[test]
    fn beta_zero_keeps_parameters() {
        let obj = Quadratic { a: 2.0, b: 3.0, c: 1.0, e: 0.0 };
        let shared = theta_params(0.5);
        let adapted = inner_adapt(&obj, &shared, 0.1, 1).unwrap();
        let cfg = MetaConfig {
            beta: 0.0,
            alpha: 0.1,
            ..Default::default()
        };
        let (next, _) = meta_update(&[(&obj, &adapted)], &shared, &cfg).unwrap();
        assert_eq!(next, shared);
    }

    #[test]
    fn zero_episodes_return_initialization() {
        let objs: Vec<Quadratic> = vec![];
        let init = theta_params(0.7);
        let (out, curve) = meta_train(&objs, &[], init.clone(), &MetaConfig::default()).unwrap();
        assert_eq!(out, init);
        assert!(curve.is_empty());
    }

    #[test]
    fn meta_training_is_deterministic() {
        let objs = vec![
            Quadratic { a: 1.0, b: 2.0, c: 0.5, e: -0.5 },
            Quadratic { a: 2.0, b: 1.0, c: -1.0, e: 1.0 },
        ];
        let episodes = vec![vec![0, 1], vec![1, 0], vec![0, 1]];
        let cfg = MetaConfig {
            alpha: 0.05,
            beta: 0.02,
            ..Default::default()
        };
        let run = || meta_train(&objs, &episodes, theta_params(0.3), &cfg).unwrap();
        let (pa, ca) = run();
        let (pb, cb) = run();
        assert_eq!(pa, pb);
        assert_eq!(ca, cb);
    }

    #[test]
    fn second_order_matches_on_2d_quadratic_family() {
        // diagonal 2-D case: per-coordinate composed gradients
        struct Quad2 {
            a: [f64; 2],
            b: [f64; 2],
            c: [f64; 2],
            e: [f64; 2],
        }
        impl Quad2 {
            fn build(
                tape: &mut Tape,
                x: NodeId,
                coef: [f64; 2],
                center: [f64; 2],
            ) -> Result<NodeId> {
                let cvec = tape.constant(Tensor::vector(vec![-center[0], -center[1]]));
                let diff = tape.add(x, cvec)?;
                let sq = tape.mul(diff, diff)?;
                let w = tape.constant(Tensor::vector(vec![coef[0] / 2.0, coef[1] / 2.0]));
                let weighted = tape.mul(sq, w)?;
                tape.sum(weighted)
            }
        }
        impl MetaObjective for Quad2 {
            fn support_loss(
                &self,
                tape: &mut Tape,
                ids: &BTreeMap<String, NodeId>,
            ) -> Result<NodeId> {
                Self::build(tape, ids["theta"], self.a, self.c)
            }
            fn query_loss(
                &self,
                tape: &mut Tape,
                ids: &BTreeMap<String, NodeId>,
            ) -> Result<NodeId> {
                Self::build(tape, ids["theta"], self.b, self.e)
            }
        }
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        for _ in 0..20 {
            let obj = Quad2 {
                a: [rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0)],
                b: [rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0)],
                c: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                e: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            };
            let theta = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let alpha = 0.1;
            let mut shared = ParamSet::new();
            shared
                .insert("theta", Tensor::vector(theta.to_vec()))
                .unwrap();
            let adapted = inner_adapt(&obj, &shared, alpha, 1).unwrap();
            let (_, g) =
                meta_gradient(&obj, &shared, &adapted, alpha, MetaOrder::Second).unwrap();
            for i in 0..2 {
                let ti = theta[i] - alpha * obj.a[i] * (theta[i] - obj.c[i]);
                let expect = obj.b[i] * (ti - obj.e[i]) * (1.0 - alpha * obj.a[i]);
                assert!((g[i] - expect).abs() < 1e-6, "coord {i}: {} vs {expect}", g[i]);
            }
        }
    }
}
