//! Parameter-space optimizers over [`ParamSet`]s.

use crate::diff::ParamSet;
use crate::error::Result;

/// Adaptive moment estimation with bias correction.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(lr: f64, param_count: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
        }
    }

    /// One update; gradients must be flattened in the ParamSet's name order.
    pub fn step(&mut self, params: &ParamSet, grads: &ParamSet) -> Result<ParamSet> {
        self.step += 1;
        let flat = params.flatten();
        let gflat = grads.flatten();
        let mut out = flat.clone();
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..flat.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * gflat[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * gflat[i] * gflat[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            out[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        params.unflatten(&out)
    }
}

/// Plain gradient descent: `p - lr * g`.
pub fn sgd_step(params: &ParamSet, grads: &ParamSet, lr: f64) -> Result<ParamSet> {
    params.axpy(-lr, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;

    #[test]
    fn adam_descends_a_quadratic() {
        let mut ps = ParamSet::new();
        ps.insert("x", Tensor::vector(vec![5.0, -3.0])).unwrap();
        let mut opt = Adam::new(0.1, 2);
        for _ in 0..500 {
            let grads: ParamSet = [(
                "x".to_string(),
                Tensor::vector(ps.get("x").unwrap().data().to_vec()),
            )]
            .into_iter()
            .collect();
            ps = opt.step(&ps, &grads).unwrap();
        }
        for v in ps.get("x").unwrap().data() {
            assert!(v.abs() < 1e-2, "not converged: {v}");
        }
    }

    #[test]
    fn sgd_matches_formula() {
        let mut ps = ParamSet::new();
        ps.insert("x", Tensor::vector(vec![1.0])).unwrap();
        let grads: ParamSet = [("x".to_string(), Tensor::vector(vec![2.0]))]
            .into_iter()
            .collect();
        let next = sgd_step(&ps, &grads, 0.5).unwrap();
        assert_eq!(next.get("x").unwrap().data(), &[0.0]);
    }
}
