use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Stochastic graph transformation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentationKind {
    DropNodes,
    DropEdges,
    MaskFeatures,
}

impl AugmentationKind {
    pub const ALL: [AugmentationKind; 3] = [
        AugmentationKind::DropNodes,
        AugmentationKind::DropEdges,
        AugmentationKind::MaskFeatures,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AugmentationKind::DropNodes => "drop_nodes",
            AugmentationKind::DropEdges => "drop_edges",
            AugmentationKind::MaskFeatures => "mask_features",
        }
    }
}

impl std::str::FromStr for AugmentationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop_nodes" => Ok(AugmentationKind::DropNodes),
            "drop_edges" => Ok(AugmentationKind::DropEdges),
            "mask_features" => Ok(AugmentationKind::MaskFeatures),
            other => Err(Error::invalid(format!("unknown augmentation '{other}'"))),
        }
    }
}

/// An augmentation kind with its strength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub kind: AugmentationKind,
    pub ratio: f64,
}

impl Augmentation {
    pub fn new(kind: AugmentationKind, ratio: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::invalid(format!("augmentation ratio {ratio} not in [0, 1]")));
        }
        Ok(Augmentation { kind, ratio })
    }
}

/// Applies one augmentation:
/// - drop_nodes removes ceil(ratio * n) uniformly chosen nodes and relabels
///   the induced remainder (erroring if that would empty the graph),
/// - drop_edges removes ceil(ratio * M) uniformly chosen edges,
/// - mask_features zeroes the feature rows of ceil(ratio * n) nodes.
///
/// ratio = 0 returns the graph unchanged for every kind.
pub fn augment(g: &Graph, aug: Augmentation, rng: &mut ChaCha20Rng) -> Result<Graph> {
    if !(0.0..=1.0).contains(&aug.ratio) {
        return Err(Error::invalid(format!("augmentation ratio {} not in [0, 1]", aug.ratio)));
    }
    if aug.ratio == 0.0 {
        return Ok(g.clone());
    }
    match aug.kind {
        AugmentationKind::DropNodes => {
            let count = (aug.ratio * g.n() as f64).ceil() as usize;
            if count >= g.n() {
                return Err(Error::invalid(format!(
                    "drop_nodes would empty the graph (dropping {count} of {})",
                    g.n()
                )));
            }
            let mut ids: Vec<usize> = (0..g.n()).collect();
            ids.shuffle(rng);
            let mut kept: Vec<usize> = ids[count..].to_vec();
            kept.sort_unstable();
            let (mut sub, _) = crate::graph::induce::subgraph(g, &kept)?;
            if let Some(label) = g.graph_label() {
                sub = sub.with_graph_label(label.clone());
            }
            Ok(sub)
        }
        AugmentationKind::DropEdges => {
            let m = g.num_edges();
            let count = ((aug.ratio * m as f64).ceil() as usize).min(m);
            let mut ids: Vec<usize> = (0..m).collect();
            ids.shuffle(rng);
            let dropped: std::collections::BTreeSet<usize> = ids[..count].iter().copied().collect();
            let edges: Vec<(usize, usize, f64)> = g
                .edges()
                .iter()
                .enumerate()
                .filter(|(i, _)| !dropped.contains(i))
                .map(|(_, &e)| e)
                .collect();
            let mut out = Graph::new(
                g.n(),
                edges,
                g.features().clone(),
                g.node_labels().map(<[usize]>::to_vec),
            )?;
            if let Some(label) = g.graph_label() {
                out = out.with_graph_label(label.clone());
            }
            Ok(out)
        }
        AugmentationKind::MaskFeatures => {
            let count = ((aug.ratio * g.n() as f64).ceil() as usize).min(g.n());
            let mut ids: Vec<usize> = (0..g.n()).collect();
            ids.shuffle(rng);
            let masked: std::collections::BTreeSet<usize> = ids[..count].iter().copied().collect();
            let d = g.feature_dim();
            let mut data = g.features().data().to_vec();
            for &i in &masked {
                data[i * d..(i + 1) * d].iter_mut().for_each(|x| *x = 0.0);
            }
            let out = g.clone().with_features(Tensor::matrix(g.n(), d, data)?)?;
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synth_sbm;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    #[test]
    fn ratio_zero_is_identity() {
        let g = synth_sbm(&[4, 4], 0.8, 0.1, 4, 0.2, 0).unwrap();
        for kind in AugmentationKind::ALL {
            let out = augment(&g, Augmentation { kind, ratio: 0.0 }, &mut rng(1)).unwrap();
            assert_eq!(out, g);
        }
    }

    #[test]
    fn drop_half_the_nodes() {
        let g = synth_sbm(&[2, 2], 1.0, 1.0, 4, 0.0, 0).unwrap();
        let out = augment(
            &g,
            Augmentation {
                kind: AugmentationKind::DropNodes,
                ratio: 0.5,
            },
            &mut rng(2),
        )
        .unwrap();
        assert_eq!(out.n(), 2);
    }

    #[test]
    fn drop_all_nodes_is_error() {
        let g = synth_sbm(&[2], 1.0, 1.0, 4, 0.0, 0).unwrap();
        let res = augment(
            &g,
            Augmentation {
                kind: AugmentationKind::DropNodes,
                ratio: 1.0,
            },
            &mut rng(3),
        );
        assert!(res.is_err());
    }

    #[test]
    fn mask_everything_keeps_topology() {
        let g = synth_sbm(&[4, 4], 0.9, 0.2, 4, 0.5, 1).unwrap();
        let out = augment(
            &g,
            Augmentation {
                kind: AugmentationKind::MaskFeatures,
                ratio: 1.0,
            },
            &mut rng(4),
        )
        .unwrap();
        assert_eq!(out.edges(), g.edges());
        assert!(out.features().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_under_seed() {
        let g = synth_sbm(&[5, 5], 0.7, 0.2, 4, 0.3, 7).unwrap();
        for kind in AugmentationKind::ALL {
            let aug = Augmentation { kind, ratio: 0.3 };
            let a = augment(&g, aug, &mut rng(9)).unwrap();
            let b = augment(&g, aug, &mut rng(9)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn drop_edges_removes_expected_count() {
        let g = synth_sbm(&[6, 6], 1.0, 1.0, 4, 0.0, 0).unwrap();
        let m = g.num_edges();
        let out = augment(
            &g,
            Augmentation {
                kind: AugmentationKind::DropEdges,
                ratio: 0.25,
            },
            &mut rng(5),
        )
        .unwrap();
        let expect = m - (0.25 * m as f64).ceil() as usize;
        assert_eq!(out.num_edges(), expect);
    }
}
