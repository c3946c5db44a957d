use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use graphprompt_core::backbone::{BackboneKind, ReadoutMode};
use graphprompt_core::diff::Cmp;
use graphprompt_core::meta::{MetaConfig, MetaOrder};
use graphprompt_core::pretrain::Strategy;
use graphprompt_core::prompt::{InsertionMode, StructureScheme};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Experiment selector, one per CLI subcommand that consumes a config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Pretrain,
    Metatune,
    Fewshot,
    Transfer,
    Ablate,
    Errorbound,
    Linkpred,
    Synth,
    Params,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Pretrain => "pretrain",
            ExperimentKind::Metatune => "metatune",
            ExperimentKind::Fewshot => "fewshot",
            ExperimentKind::Transfer => "transfer",
            ExperimentKind::Ablate => "ablate",
            ExperimentKind::Errorbound => "errorbound",
            ExperimentKind::Linkpred => "linkpred",
            ExperimentKind::Synth => "synth",
            ExperimentKind::Params => "params",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "pretrain" => ExperimentKind::Pretrain,
            "metatune" => ExperimentKind::Metatune,
            "fewshot" => ExperimentKind::Fewshot,
            "transfer" => ExperimentKind::Transfer,
            "ablate" => ExperimentKind::Ablate,
            "errorbound" => ExperimentKind::Errorbound,
            "linkpred" => ExperimentKind::Linkpred,
            "synth" => ExperimentKind::Synth,
            "params" => ExperimentKind::Params,
            other => return Err(CliError::config(format!("unknown experiment kind '{other}'"))),
        })
    }
}

/// The full, typed experiment configuration with defaults. Every field maps
/// to one `section.key` in the config file; the canonical key list lives in
/// [`Settings::digest_lines`] and the README.
#[derive(Debug, Clone)]
pub struct Settings {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub jobs: usize,

    // dataset
    pub blocks: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub dataset_seed: u64,
    pub tau_node: f64,
    pub tau_edge: f64,
    pub graph_samples: usize,
    pub manifest: Option<PathBuf>,

    // backbone
    pub backbone: BackboneKind,
    pub hidden: usize,
    pub heads: usize,
    pub readout: ReadoutMode,
    pub backbone_checkpoint: Option<PathBuf>,

    // pretrain
    pub strategy: Strategy,
    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub temperature: f64,
    pub aug_ratio: f64,
    pub eta: f64,

    // prompt
    pub tokens: usize,
    pub scheme: StructureScheme,
    pub delta: f64,
    pub insertion: InsertionMode,
    pub structure_cmp: Cmp,

    // meta
    pub alpha: f64,
    pub beta: f64,
    pub inner_steps: usize,
    pub order: MetaOrder,
    pub episodes: usize,
    pub tasks_per_level: usize,
    pub eval_adapt_steps: usize,
    pub eval_adapt_lr: f64,

    // fewshot
    pub shots: usize,
    pub query_cap: usize,
    pub train_steps: usize,
    pub train_lr: f64,
    pub dump_embeddings: bool,

    // transfer
    pub source_level: String,
    pub target_level: String,
    pub cross_domain: bool,
    pub svd_dim: usize,

    // errorbound
    pub eb_graphs: usize,
    pub eb_ratio: f64,
    pub eb_steps: usize,
    pub eb_lr: f64,
    pub eb_token_counts: Vec<usize>,

    // linkpred
    pub lp_train_positives: usize,
    pub lp_negatives: usize,
    pub lp_test_positives: usize,

    // convergence
    pub conv_threshold: f64,
    pub conv_max_epochs: usize,

    // synth output
    pub synth_prefix: String,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            kind: ExperimentKind::Fewshot,
            seeds: vec![0],
            out: PathBuf::from("runs"),
            jobs: 1,
            blocks: vec![200, 200],
            p_in: 0.3,
            p_out: 0.02,
            feature_dim: 16,
            feature_noise: 1.0,
            dataset_seed: 7,
            tau_node: 2.0,
            tau_edge: 1.0,
            graph_samples: 64,
            manifest: None,
            backbone: BackboneKind::Gcn,
            hidden: 100,
            heads: 4,
            readout: ReadoutMode::Sum,
            backbone_checkpoint: None,
            strategy: Strategy::GraphCl,
            pretrain_epochs: 30,
            pretrain_batch: 8,
            pretrain_lr: 0.001,
            temperature: 0.5,
            aug_ratio: 0.15,
            eta: 1.0,
            tokens: 10,
            scheme: StructureScheme::Learnable,
            delta: 0.5,
            insertion: InsertionMode::GraphAugment,
            structure_cmp: Cmp::Gt,
            alpha: 0.01,
            beta: 0.001,
            inner_steps: 1,
            order: MetaOrder::Second,
            episodes: 60,
            tasks_per_level: 2,
            eval_adapt_steps: 50,
            eval_adapt_lr: 0.01,
            shots: 20,
            query_cap: 50,
            train_steps: 200,
            train_lr: 0.01,
            dump_embeddings: false,
            source_level: "graph".into(),
            target_level: "edge".into(),
            cross_domain: false,
            svd_dim: 8,
            eb_graphs: 20,
            eb_ratio: 0.15,
            eb_steps: 500,
            eb_lr: 0.01,
            eb_token_counts: vec![3, 5, 10],
            lp_train_positives: 100,
            lp_negatives: 100,
            lp_test_positives: 50,
            conv_threshold: 0.45,
            conv_max_epochs: 150,
            synth_prefix: "sbm".into(),
        }
    }
}

/// Parses `section.key = value` lines; `#` starts a comment. Returns pairs
/// in file order.
pub fn parse_kv(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("{origin}:{}: expected key = value", idx + 1)))?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || !key.contains('.') {
            return Err(CliError::config(format!(
                "{origin}:{}: key must look like section.name",
                idx + 1
            )));
        }
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CliError::config(format!("bad value '{value}' for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|tok| parse_num(key, tok.trim()))
        .collect()
}

impl Settings {
    /// Loads a config file on top of the defaults. Unknown keys are errors.
    pub fn load(path: &Path) -> Result<Settings> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let pairs = parse_kv(&text, &path.display().to_string())?;
        let mut s = Settings::default();
        for (key, value) in pairs {
            s.apply(&key, &value)?;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let core = |e: graphprompt_core::Error| CliError::config(e.to_string());
        match key {
            "experiment.kind" => self.kind = ExperimentKind::parse(value)?,
            "experiment.seeds" => self.seeds = parse_list(key, value)?,
            "experiment.out" => self.out = PathBuf::from(value),
            "experiment.jobs" => self.jobs = parse_num(key, value)?,
            "dataset.blocks" => self.blocks = parse_list(key, value)?,
            "dataset.p_in" => self.p_in = parse_num(key, value)?,
            "dataset.p_out" => self.p_out = parse_num(key, value)?,
            "dataset.feature_dim" => self.feature_dim = parse_num(key, value)?,
            "dataset.feature_noise" => self.feature_noise = parse_num(key, value)?,
            "dataset.seed" => self.dataset_seed = parse_num(key, value)?,
            "dataset.tau_node" => self.tau_node = parse_num(key, value)?,
            "dataset.tau_edge" => self.tau_edge = parse_num(key, value)?,
            "dataset.graph_samples" => self.graph_samples = parse_num(key, value)?,
            "dataset.manifest" => self.manifest = Some(PathBuf::from(value)),
            "backbone.kind" => self.backbone = value.parse().map_err(core)?,
            "backbone.hidden" => self.hidden = parse_num(key, value)?,
            "backbone.heads" => self.heads = parse_num(key, value)?,
            "backbone.readout" => self.readout = value.parse().map_err(core)?,
            "backbone.checkpoint" => self.backbone_checkpoint = Some(PathBuf::from(value)),
            "pretrain.strategy" => self.strategy = value.parse().map_err(core)?,
            "pretrain.epochs" => self.pretrain_epochs = parse_num(key, value)?,
            "pretrain.batch_size" => self.pretrain_batch = parse_num(key, value)?,
            "pretrain.lr" => self.pretrain_lr = parse_num(key, value)?,
            "pretrain.temperature" => self.temperature = parse_num(key, value)?,
            "pretrain.aug_ratio" => self.aug_ratio = parse_num(key, value)?,
            "pretrain.eta" => self.eta = parse_num(key, value)?,
            "prompt.tokens" => self.tokens = parse_num(key, value)?,
            "prompt.scheme" => self.scheme = value.parse().map_err(core)?,
            "prompt.delta" => self.delta = parse_num(key, value)?,
            "prompt.mode" => self.insertion = value.parse().map_err(core)?,
            "prompt.structure_cmp" => {
                self.structure_cmp = match value {
                    "gt" => Cmp::Gt,
                    "lt" => Cmp::Lt,
                    other => {
                        return Err(CliError::config(format!(
                            "bad value '{other}' for prompt.structure_cmp"
                        )))
                    }
                }
            }
            "meta.alpha" => self.alpha = parse_num(key, value)?,
            "meta.beta" => self.beta = parse_num(key, value)?,
            "meta.inner_steps" => self.inner_steps = parse_num(key, value)?,
            "meta.order" => self.order = value.parse().map_err(core)?,
            "meta.episodes" => self.episodes = parse_num(key, value)?,
            "meta.tasks_per_level" => self.tasks_per_level = parse_num(key, value)?,
            "meta.eval_adapt_steps" => self.eval_adapt_steps = parse_num(key, value)?,
            "meta.eval_adapt_lr" => self.eval_adapt_lr = parse_num(key, value)?,
            "fewshot.shots" => self.shots = parse_num(key, value)?,
            "fewshot.query_cap" => self.query_cap = parse_num(key, value)?,
            "fewshot.train_steps" => self.train_steps = parse_num(key, value)?,
            "fewshot.train_lr" => self.train_lr = parse_num(key, value)?,
            "fewshot.dump_embeddings" => self.dump_embeddings = parse_num(key, value)?,
            "transfer.source_level" => self.source_level = value.to_string(),
            "transfer.target_level" => self.target_level = value.to_string(),
            "transfer.cross_domain" => self.cross_domain = parse_num(key, value)?,
            "transfer.svd_dim" => self.svd_dim = parse_num(key, value)?,
            "errorbound.graphs" => self.eb_graphs = parse_num(key, value)?,
            "errorbound.ratio" => self.eb_ratio = parse_num(key, value)?,
            "errorbound.steps" => self.eb_steps = parse_num(key, value)?,
            "errorbound.lr" => self.eb_lr = parse_num(key, value)?,
            "errorbound.token_counts" => self.eb_token_counts = parse_list(key, value)?,
            "linkpred.train_positives" => self.lp_train_positives = parse_num(key, value)?,
            "linkpred.negatives_per_positive" => self.lp_negatives = parse_num(key, value)?,
            "linkpred.test_positives" => self.lp_test_positives = parse_num(key, value)?,
            "convergence.threshold" => self.conv_threshold = parse_num(key, value)?,
            "convergence.max_epochs" => self.conv_max_epochs = parse_num(key, value)?,
            "synth.out_prefix" => self.synth_prefix = value.to_string(),
            other => return Err(CliError::config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CliError::config("experiment.seeds must not be empty"));
        }
        if self.jobs == 0 {
            return Err(CliError::config("experiment.jobs must be >= 1"));
        }
        if let Some(path) = &self.manifest {
            if !path.exists() {
                return Err(CliError::config(format!(
                    "dataset.manifest {} does not exist",
                    path.display()
                )));
            }
        }
        if let Some(path) = &self.backbone_checkpoint {
            if !path.exists() {
                return Err(CliError::config(format!(
                    "backbone.checkpoint {} does not exist",
                    path.display()
                )));
            }
        }
        if !(0.0 < self.delta && self.delta < 1.0) {
            return Err(CliError::config("prompt.delta must be in (0, 1)"));
        }
        if self.tokens == 0 {
            return Err(CliError::config("prompt.tokens must be >= 1"));
        }
        Ok(())
    }

    /// Canonical serialization of every effective field, used for both the
    /// digest and documentation. One sorted `section.key = value` line per
    /// field; the digest changes exactly when some field changes.
    pub fn digest_lines(&self) -> Vec<String> {
        let join_usize = |v: &[usize]| {
            v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
        };
        let mut lines = vec![
            format!("backbone.checkpoint = {}", opt_path(&self.backbone_checkpoint)),
            format!("backbone.heads = {}", self.heads),
            format!("backbone.hidden = {}", self.hidden),
            format!("backbone.kind = {}", self.backbone.as_str()),
            format!(
                "backbone.readout = {}",
                match self.readout {
                    ReadoutMode::Sum => "sum",
                    ReadoutMode::Mean => "mean",
                }
            ),
            format!("convergence.max_epochs = {}", self.conv_max_epochs),
            format!("convergence.threshold = {}", self.conv_threshold),
            format!("dataset.blocks = {}", join_usize(&self.blocks)),
            format!("dataset.feature_dim = {}", self.feature_dim),
            format!("dataset.feature_noise = {}", self.feature_noise),
            format!("dataset.graph_samples = {}", self.graph_samples),
            format!("dataset.manifest = {}", opt_path(&self.manifest)),
            format!("dataset.p_in = {}", self.p_in),
            format!("dataset.p_out = {}", self.p_out),
            format!("dataset.seed = {}", self.dataset_seed),
            format!("dataset.tau_edge = {}", self.tau_edge),
            format!("dataset.tau_node = {}", self.tau_node),
            format!("errorbound.graphs = {}", self.eb_graphs),
            format!("errorbound.lr = {}", self.eb_lr),
            format!("errorbound.ratio = {}", self.eb_ratio),
            format!("errorbound.steps = {}", self.eb_steps),
            format!("errorbound.token_counts = {}", join_usize(&self.eb_token_counts)),
            format!("experiment.kind = {}", self.kind.as_str()),
            format!(
                "experiment.seeds = {}",
                self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
            ),
            format!("fewshot.dump_embeddings = {}", self.dump_embeddings),
            format!("fewshot.query_cap = {}", self.query_cap),
            format!("fewshot.shots = {}", self.shots),
            format!("fewshot.train_lr = {}", self.train_lr),
            format!("fewshot.train_steps = {}", self.train_steps),
            format!("linkpred.negatives_per_positive = {}", self.lp_negatives),
            format!("linkpred.test_positives = {}", self.lp_test_positives),
            format!("linkpred.train_positives = {}", self.lp_train_positives),
            format!("meta.alpha = {}", self.alpha),
            format!("meta.beta = {}", self.beta),
            format!("meta.episodes = {}", self.episodes),
            format!("meta.eval_adapt_lr = {}", self.eval_adapt_lr),
            format!("meta.eval_adapt_steps = {}", self.eval_adapt_steps),
            format!("meta.inner_steps = {}", self.inner_steps),
            format!(
                "meta.order = {}",
                match self.order {
                    MetaOrder::Second => "second",
                    MetaOrder::First => "first",
                }
            ),
            format!("meta.tasks_per_level = {}", self.tasks_per_level),
            format!("pretrain.aug_ratio = {}", self.aug_ratio),
            format!("pretrain.batch_size = {}", self.pretrain_batch),
            format!("pretrain.epochs = {}", self.pretrain_epochs),
            format!("pretrain.eta = {}", self.eta),
            format!("pretrain.lr = {}", self.pretrain_lr),
            format!("pretrain.strategy = {}", self.strategy.as_str()),
            format!("pretrain.temperature = {}", self.temperature),
            format!("prompt.delta = {}", self.delta),
            format!("prompt.mode = {}", self.insertion.as_str()),
            format!("prompt.scheme = {}", self.scheme.as_str()),
            format!(
                "prompt.structure_cmp = {}",
                match self.structure_cmp {
                    Cmp::Gt => "gt",
                    Cmp::Lt => "lt",
                }
            ),
            format!("prompt.tokens = {}", self.tokens),
            format!("synth.out_prefix = {}", self.synth_prefix),
            format!("transfer.cross_domain = {}", self.cross_domain),
            format!("transfer.source_level = {}", self.source_level),
            format!("transfer.target_level = {}", self.target_level),
        ];
        lines.sort();
        lines
    }

    /// SHA-256 hex digest of the canonical serialization.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for line in self.digest_lines() {
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn meta_config(&self) -> MetaConfig {
        MetaConfig {
            alpha: self.alpha,
            beta: self.beta,
            inner_steps: self.inner_steps,
            order: self.order,
        }
    }
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "-".to_string())
}

/// A dataset manifest: the three graph files plus level and tau.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: Option<PathBuf>,
    pub level: String,
    pub tau: f64,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let pairs = parse_kv(&text, &path.display().to_string())?;
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (k, v) in pairs {
            match k.as_str() {
                "files.edges" | "files.features" | "files.labels" | "dataset.level"
                | "dataset.tau" => {
                    map.insert(k, v);
                }
                other => {
                    return Err(CliError::config(format!("unknown manifest key '{other}'")))
                }
            }
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |v: &str| -> PathBuf {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let need = |k: &str| -> Result<String> {
            map.get(k)
                .cloned()
                .ok_or_else(|| CliError::config(format!("manifest missing '{k}'")))
        };
        Ok(Manifest {
            edges: resolve(&need("files.edges")?),
            features: resolve(&need("files.features")?),
            labels: map.get("files.labels").map(|v| resolve(v)),
            level: need("dataset.level")?,
            tau: parse_num("dataset.tau", &need("dataset.tau")?)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_digest() {
        let a = Settings::default();
        let b = Settings::default();
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn digest_changes_with_any_field() {
        let base = Settings::default().digest();
        let mut s = Settings::default();
        s.apply("meta.alpha", "0.5").unwrap();
        assert_ne!(s.digest(), base);
        let mut s = Settings::default();
        s.apply("prompt.tokens", "11").unwrap();
        assert_ne!(s.digest(), base);
    }

    #[test]
    fn unknown_key_is_config_error() {
        let mut s = Settings::default();
        let err = s.apply("prompt.tokenz", "10").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn parses_comments_and_whitespace() {
        let pairs = parse_kv("# hi\n a.b = 3 # trailing\n\n c.d = x\n", "mem").unwrap();
        assert_eq!(
            pairs,
            vec![
                ("a.b".to_string(), "3".to_string()),
                ("c.d".to_string(), "x".to_string())
            ]
        );
    }

    #[test]
    fn malformed_line_is_error() {
        assert!(parse_kv("novalue\n", "mem").is_err());
        assert!(parse_kv("nodot = 3\n", "mem").is_err());
    }
}
