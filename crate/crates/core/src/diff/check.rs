use crate::diff::{NodeId, ParamSet, Tape};
use crate::error::{Error, Result};

/// A differentiable scalar objective over a ParamSet.
///
/// Implementations receive a fresh tape with the parameters already
/// registered as leaves (name -> node id, in name order) and must return the
/// scalar loss node.
pub trait LossFn {
    fn build(&self, tape: &mut Tape, leaves: &[(String, NodeId)]) -> Result<NodeId>;
}

impl<F> LossFn for F
where
    F: Fn(&mut Tape, &[(String, NodeId)]) -> Result<NodeId>,
{
    fn build(&self, tape: &mut Tape, leaves: &[(String, NodeId)]) -> Result<NodeId> {
        self(tape, leaves)
    }
}

/// Evaluates the loss and its gradient at `params` in one tape pass.
pub fn loss_and_grad<L: LossFn + ?Sized>(loss_fn: &L, params: &ParamSet) -> Result<(f64, ParamSet)> {
    let mut tape = Tape::new();
    let leaves = tape.leaves(params)?;
    let loss = loss_fn.build(&mut tape, &leaves)?;
    let value = tape.value(loss).value();
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "loss" });
    }
    let grads = tape.backward(loss)?;
    Ok((value, grads))
}

/// Evaluates only the loss value at `params`.
pub fn loss_value<L: LossFn + ?Sized>(loss_fn: &L, params: &ParamSet) -> Result<f64> {
    let mut tape = Tape::new();
    let leaves = tape.leaves(params)?;
    let loss = loss_fn.build(&mut tape, &leaves)?;
    let value = tape.value(loss).value();
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "loss" });
    }
    Ok(value)
}

/// Default step size for [`grad_check`].
pub const GRAD_CHECK_EPS: f64 = 1e-6;

/// Compares reverse-mode gradients against central differences
/// `(f(p + eps e) - f(p - eps e)) / 2 eps` coordinate by coordinate and
/// returns the maximum relative error `|a - b| / max(1, |a|, |b|)`.
///
/// The caller is responsible for keeping relu-style kinks away from the
/// evaluation point; see `Tape::min_kink_distance`.
pub fn grad_check<L: LossFn + ?Sized>(loss_fn: &L, params: &ParamSet, eps: f64) -> Result<f64> {
    if eps <= 0.0 {
        return Err(Error::invalid("grad_check: eps must be positive"));
    }
    let (_, grads) = loss_and_grad(loss_fn, params)?;
    let analytic = grads.flatten();
    let flat = params.flatten();
    let mut max_err = 0.0f64;
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += eps;
        let mut minus = flat.clone();
        minus[i] -= eps;
        let fp = loss_value(loss_fn, &params.unflatten(&plus)?)?;
        let fm = loss_value(loss_fn, &params.unflatten(&minus)?)?;
        let numeric = (fp - fm) / (2.0 * eps);
        let denom = 1.0f64.max(analytic[i].abs()).max(numeric.abs());
        max_err = max_err.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(max_err)
}

/// Step size heuristic for [`hvp_fd`]: `1e-4 (1 + |theta|) / (1 + |v|)`.
pub fn hvp_default_eps(params: &ParamSet, v: &[f64]) -> f64 {
    let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    1e-4 * (1.0 + params.l2_norm()) / (1.0 + vnorm)
}

/// Hessian-vector product by central differences of the gradient:
/// `H v ~= (grad(p + eps v) - grad(p - eps v)) / 2 eps`.
///
/// `grad_fn` evaluates the flattened gradient at a parameter point. The
/// result is exact (up to rounding) for quadratic objectives.
pub fn hvp_fd<G>(grad_fn: &G, params: &ParamSet, v: &[f64], eps: Option<f64>) -> Result<Vec<f64>>
where
    G: Fn(&ParamSet) -> Result<Vec<f64>>,
{
    let n = params.count_scalars();
    if v.len() != n {
        return Err(Error::ShapeMismatch {
            op: "hvp_fd",
            detail: format!("v has {} entries, params have {n}", v.len()),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { op: "hvp_fd: v" });
    }
    let eps = eps.unwrap_or_else(|| hvp_default_eps(params, v));
    if eps <= 0.0 {
        return Err(Error::invalid("hvp_fd: eps must be positive"));
    }
    let flat = params.flatten();
    let plus: Vec<f64> = flat.iter().zip(v).map(|(p, d)| p + eps * d).collect();
    let minus: Vec<f64> = flat.iter().zip(v).map(|(p, d)| p - eps * d).collect();
    let gp = grad_fn(&params.unflatten(&plus)?)?;
    let gm = grad_fn(&params.unflatten(&minus)?)?;
    if gp.len() != n || gm.len() != n {
        return Err(Error::ShapeMismatch {
            op: "hvp_fd",
            detail: "gradient length differs from parameter count".into(),
        });
    }
    let out: Vec<f64> = gp
        .iter()
        .zip(&gm)
        .map(|(a, b)| (a - b) / (2.0 * eps))
        .collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { op: "hvp_fd" });
    }
    Ok(out)
}

/// Wraps a tape loss into a flat gradient function for [`hvp_fd`].
pub fn grad_fn_of<'a, L: LossFn + ?Sized>(
    loss_fn: &'a L,
) -> impl Fn(&ParamSet) -> Result<Vec<f64>> + 'a {
    move |p: &ParamSet| {
        let (_, grads) = loss_and_grad(loss_fn, p)?;
        Ok(grads.flatten())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn quadratic_params(dim: usize, seed: u64) -> ParamSet {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        ps.insert("theta", Tensor::uniform(vec![dim], 2.0, &mut rng)).unwrap();
        ps
    }

    #[test]
    fn grad_check_exact_on_quadratic() {
        // L = 0.5 theta^T theta
        let loss = |tape: &mut Tape, leaves: &[(String, NodeId)]| {
            let theta = leaves[0].1;
            let sq = tape.mul(theta, theta)?;
            let s = tape.sum(sq)?;
            tape.scale(s, 0.5)
        };
        let params = quadratic_params(6, 0);
        let err = grad_check(&loss, &params, GRAD_CHECK_EPS).unwrap();
        assert!(err < 1e-8, "err = {err}");
    }

    #[test]
    fn grad_check_sigmoid_composition() {
        // sigma(sigma(x)) summed
        let loss = |tape: &mut Tape, leaves: &[(String, NodeId)]| {
            let x = leaves[0].1;
            let s1 = tape.sigmoid(x)?;
            let s2 = tape.sigmoid(s1)?;
            tape.sum(s2)
        };
        let params = quadratic_params(5, 1);
        let err = grad_check(&loss, &params, GRAD_CHECK_EPS).unwrap();
        assert!(err < 1e-7, "err = {err}");
    }

    #[test]
    fn hvp_exact_on_diagonal_quadratic() {
        // L = 0.5 theta^T diag(1,2) theta, v = (1,1) -> H v = (1, 2)
        let mut ps = ParamSet::new();
        ps.insert("theta", Tensor::vector(vec![0.3, -0.8])).unwrap();
        let diag = [1.0, 2.0];
        let grad_fn = move |p: &ParamSet| -> Result<Vec<f64>> {
            let th = p.get("theta").unwrap().data();
            Ok(th.iter().zip(diag).map(|(t, d)| d * t).collect())
        };
        let hv = hvp_fd(&grad_fn, &ps, &[1.0, 1.0], None).unwrap();
        assert!((hv[0] - 1.0).abs() < 1e-10);
        assert!((hv[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn hvp_zero_vector_gives_zero() {
        let mut ps = ParamSet::new();
        ps.insert("theta", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let grad_fn = |p: &ParamSet| -> Result<Vec<f64>> { Ok(p.get("theta").unwrap().data().to_vec()) };
        let hv = hvp_fd(&grad_fn, &ps, &[0.0, 0.0], None).unwrap();
        assert_eq!(hv, vec![0.0, 0.0]);
    }

    #[test]
    fn hvp_cubic_within_fd_tolerance() {
        // L = theta^3 at theta = 2 has L'' = 6 theta = 12
        let mut ps = ParamSet::new();
        ps.insert("theta", Tensor::vector(vec![2.0])).unwrap();
        let grad_fn = |p: &ParamSet| -> Result<Vec<f64>> {
            let t = p.get("theta").unwrap().data()[0];
            Ok(vec![3.0 * t * t])
        };
        let hv = hvp_fd(&grad_fn, &ps, &[1.0], None).unwrap();
        assert!((hv[0] - 12.0).abs() < 1e-4, "hv = {}", hv[0]);
    }

    #[test]
    fn backward_matches_fd_on_random_compositions() {
        // mixed op chain over 100 seeds
        let loss = |tape: &mut Tape, leaves: &[(String, NodeId)]| {
            let w = leaves[0].1; // 3x3
            let x = leaves[1].1; // 3x3
            let h = tape.matmul(w, x)?;
            let s = tape.sigmoid(h)?;
            let e = tape.exp(s)?;
            let n = tape.row_normalize(e)?;
            let sm = tape.softmax_rows(n)?;
            let prod = tape.mul(sm, s)?;
            tape.mean(prod)
        };
        for seed in 0..100 {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut ps = ParamSet::new();
            ps.insert("a_w", Tensor::uniform(vec![3, 3], 1.0, &mut rng)).unwrap();
            ps.insert("b_x", Tensor::uniform(vec![3, 3], 1.0, &mut rng)).unwrap();
            let err = grad_check(&loss, &ps, GRAD_CHECK_EPS).unwrap();
            assert!(err < 1e-5, "seed {seed}: err = {err}");
        }
    }

    #[test]
    fn hvp_respects_explicit_eps() {
        let mut ps = ParamSet::new();
        ps.insert("theta", Tensor::vector(vec![1.0])).unwrap();
        let grad_fn = |p: &ParamSet| -> Result<Vec<f64>> { Ok(vec![p.get("theta").unwrap().data()[0]]) };
        let hv = hvp_fd(&grad_fn, &ps, &[2.0], Some(1e-3)).unwrap();
        assert!((hv[0] - 2.0).abs() < 1e-10);
    }
}
