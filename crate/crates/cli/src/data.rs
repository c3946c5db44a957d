use graphprompt_core::diff::svd_reduce;
use graphprompt_core::graph::{
    edge_class_dataset, graph_dataset, load_graph, node_dataset, synth_sbm, Dataset, Graph, Level,
};

use crate::config::{Manifest, Settings};
use crate::error::{CliError, Result};

/// Everything one experiment seed works with: the source graph and the
/// per-level datasets built from it.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub graph: Graph,
    pub node: Option<Dataset>,
    pub edge: Option<Dataset>,
    pub graph_level: Option<Dataset>,
}

impl DataBundle {
    pub fn dataset(&self, level: Level) -> Option<&Dataset> {
        match level {
            Level::Node => self.node.as_ref(),
            Level::Edge => self.edge.as_ref(),
            Level::Graph => self.graph_level.as_ref(),
        }
    }

    pub fn levels(&self) -> Vec<Level> {
        let mut out = Vec::new();
        if self.node.is_some() {
            out.push(Level::Node);
        }
        if self.edge.is_some() {
            out.push(Level::Edge);
        }
        if self.graph_level.is_some() {
            out.push(Level::Graph);
        }
        out
    }

    pub fn feature_dim(&self) -> usize {
        self.graph.feature_dim()
    }
}

/// Mixes the base dataset seed with the run seed so every seed sees its own
/// sampled graph while staying reproducible.
pub fn run_dataset_seed(cfg: &Settings, run_seed: u64) -> u64 {
    cfg.dataset_seed.wrapping_add(run_seed.wrapping_mul(9973))
}

/// Source graph for a run: synthesized SBM, or the manifest's files.
pub fn source_graph(cfg: &Settings, run_seed: u64) -> Result<Graph> {
    match &cfg.manifest {
        None => Ok(synth_sbm(
            &cfg.blocks,
            cfg.p_in,
            cfg.p_out,
            cfg.feature_dim,
            cfg.feature_noise,
            run_dataset_seed(cfg, run_seed),
        )?),
        Some(path) => {
            let manifest = Manifest::load(path)?;
            let g = load_graph(
                &manifest.edges,
                &manifest.features,
                manifest.labels.as_deref(),
            )?;
            Ok(g)
        }
    }
}

/// Builds the per-level datasets for one run.
///
/// Synthetic runs build all three levels; manifest runs build the manifest's
/// level with its tau (plus the graph level, which every pipeline needs for
/// pre-training samples).
pub fn build_bundle(cfg: &Settings, run_seed: u64) -> Result<DataBundle> {
    let ds_seed = run_dataset_seed(cfg, run_seed);
    let graph = source_graph(cfg, run_seed)?;
    match &cfg.manifest {
        None => {
            let node = node_dataset(&graph, cfg.tau_node, None)?;
            let edge = edge_class_dataset(&graph, cfg.tau_edge)?;
            let graph_level = graph_dataset(&graph, cfg.tau_node, cfg.graph_samples, ds_seed)?;
            Ok(DataBundle {
                graph,
                node: Some(node),
                edge: Some(edge),
                graph_level: Some(graph_level),
            })
        }
        Some(path) => {
            let manifest = Manifest::load(path)?;
            let level: Level = manifest
                .level
                .parse()
                .map_err(|e: graphprompt_core::Error| CliError::config(e.to_string()))?;
            let graph_level =
                graph_dataset(&graph, manifest.tau, cfg.graph_samples, ds_seed)?;
            let mut bundle = DataBundle {
                graph,
                node: None,
                edge: None,
                graph_level: Some(graph_level),
            };
            match level {
                Level::Node => bundle.node = Some(node_dataset(&bundle.graph, manifest.tau, None)?),
                Level::Edge => bundle.edge = Some(edge_class_dataset(&bundle.graph, manifest.tau)?),
                Level::Graph => {}
            }
            Ok(bundle)
        }
    }
}

/// Reduces a graph's features to `k` dimensions with the top-k right
/// singular directions (used to unify dimensions across domains).
pub fn reduce_features(g: &Graph, k: usize) -> Result<Graph> {
    let reduced = svd_reduce(g.features(), k)?;
    Ok(g.clone().with_features(reduced)?)
}
