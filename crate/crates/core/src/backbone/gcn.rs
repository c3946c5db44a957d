use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::diff::{NodeId, ParamSet, Tape, Tensor};
use crate::error::Result;

/// Two-layer GCN weights, no biases.
#[derive(Debug, Clone)]
pub struct GcnParams {
    pub w1: Tensor,
    pub w2: Tensor,
}

impl GcnParams {
    /// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization.
    pub fn init(d: usize, h: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let w1 = Tensor::uniform(vec![d, h], 1.0 / (d as f64).sqrt(), &mut rng);
        let w2 = Tensor::uniform(vec![h, h], 1.0 / (h as f64).sqrt(), &mut rng);
        GcnParams { w1, w2 }
    }

    pub fn into_param_set(self) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert("enc.w1", self.w1).expect("fresh set");
        ps.insert("enc.w2", self.w2).expect("fresh set");
        ps
    }
}

/// `H = A_hat relu(A_hat X W1) W2` with relu between the layers only.
pub fn gcn_forward(
    tape: &mut Tape,
    a_hat: NodeId,
    x: NodeId,
    w1: NodeId,
    w2: NodeId,
) -> Result<NodeId> {
    let ax = tape.matmul(a_hat, x)?;
    let pre = tape.matmul(ax, w1)?;
    let act = tape.relu(pre)?;
    let ah = tape.matmul(a_hat, act)?;
    tape.matmul(ah, w2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::normalized_adjacency;
    use crate::graph::Graph;

    #[test]
    fn zero_weights_give_zero_embedding() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::eye(2));
        let x = tape.constant(Tensor::matrix(2, 3, vec![1.0; 6]).unwrap());
        let w1 = tape.constant(Tensor::zeros(vec![3, 4]));
        let w2 = tape.constant(Tensor::zeros(vec![4, 4]));
        let h = gcn_forward(&mut tape, a, x, w1, w2).unwrap();
        assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_node_identity_weights_pass_through() {
        let g = Graph::new(1, vec![], Tensor::matrix(1, 2, vec![0.7, 0.2]).unwrap(), None).unwrap();
        let mut tape = Tape::new();
        let a = tape.constant(normalized_adjacency(&g).unwrap());
        let x = tape.constant(g.features().clone());
        let w1 = tape.constant(Tensor::eye(2));
        let w2 = tape.constant(Tensor::eye(2));
        let h = gcn_forward(&mut tape, a, x, w1, w2).unwrap();
        assert_eq!(tape.value(h).data(), &[0.7, 0.2]);
    }

    #[test]
    fn permutation_equivariance() {
        // permuting nodes permutes embedding rows identically
        let g = Graph::new(
            3,
            vec![(0, 1, 1.0), (1, 2, 1.0)],
            Tensor::matrix(3, 2, vec![0.1, 0.9, -0.4, 0.3, 0.8, -0.2]).unwrap(),
            None,
        )
        .unwrap();
        // permutation (0 1 2) -> (2 0 1)
        let perm = [2usize, 0, 1];
        let mut pf = Tensor::zeros(vec![3, 2]);
        for i in 0..3 {
            for j in 0..2 {
                pf.set2(perm[i], j, g.features().get2(i, j));
            }
        }
        let pg = Graph::new(3, vec![(perm[0], perm[1], 1.0), (perm[1], perm[2], 1.0)], pf, None)
            .unwrap();
        let params = GcnParams::init(2, 4, 3);

        let run = |graph: &Graph| {
            let mut tape = Tape::new();
            let a = tape.constant(normalized_adjacency(graph).unwrap());
            let x = tape.constant(graph.features().clone());
            let w1 = tape.constant(params.w1.clone());
            let w2 = tape.constant(params.w2.clone());
            let h = gcn_forward(&mut tape, a, x, w1, w2).unwrap();
            tape.value(h).clone()
        };
        let h = run(&g);
        let hp = run(&pg);
        for i in 0..3 {
            for j in 0..4 {
                assert!((h.get2(i, j) - hp.get2(perm[i], j)).abs() < 1e-12);
            }
        }
    }
}
