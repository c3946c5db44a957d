use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Stochastic block model generator.
///
/// Nodes are grouped into blocks; each within-block pair is connected with
/// probability `p_in`, each cross-block pair with `p_out`, weight 1. Node
/// features put a one-hot block indicator in the first `blocks` dimensions
/// and add iid Gaussian noise with standard deviation `noise` everywhere.
/// Node labels are block ids.
pub fn synth_sbm(
    block_sizes: &[usize],
    p_in: f64,
    p_out: f64,
    d: usize,
    noise: f64,
    seed: u64,
) -> Result<Graph> {
    if block_sizes.is_empty() || block_sizes.iter().any(|&b| b == 0) {
        return Err(Error::invalid("synth_sbm: blocks must be non-empty"));
    }
    if !(0.0..=1.0).contains(&p_out) || !(0.0..=1.0).contains(&p_in) || p_out > p_in {
        return Err(Error::invalid("synth_sbm: need 0 <= p_out <= p_in <= 1"));
    }
    if d < block_sizes.len() {
        return Err(Error::invalid(format!(
            "synth_sbm: d = {d} too small for {} blocks",
            block_sizes.len()
        )));
    }
    let n: usize = block_sizes.iter().sum();
    let mut labels = Vec::with_capacity(n);
    for (block, &size) in block_sizes.iter().enumerate() {
        labels.extend(std::iter::repeat(block).take(size));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                edges.push((u, v, 1.0));
            }
        }
    }

    let mut fdata = Vec::with_capacity(n * d);
    for &label in &labels {
        for j in 0..d {
            let mean = if j == label { 1.0 } else { 0.0 };
            fdata.push(mean + noise * gaussian(&mut rng));
        }
    }
    let features = Tensor::matrix(n, d, fdata)?;
    Graph::new(n, edges, features, Some(labels))
}

/// Standard normal draw via Box-Muller.
pub fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
