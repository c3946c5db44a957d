use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Metric records of one seed run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SeedRecord {
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
}

/// Mean / population standard deviation of one metric across seeds.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

/// Structured experiment output. Serialized as JSON with fixed top-level
/// keys; two runs with identical config and seeds must produce byte-equal
/// bodies apart from `runtime_s`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedRecord>,
    pub aggregate: BTreeMap<String, Aggregate>,
    pub runtime_s: f64,
}

impl Report {
    pub fn new(experiment: &str, config_digest: &str, per_seed: Vec<SeedRecord>) -> Report {
        let seeds = per_seed.iter().map(|r| r.seed).collect();
        let aggregate = aggregate_of(&per_seed);
        Report {
            experiment: experiment.to_string(),
            config_digest: config_digest.to_string(),
            seeds,
            per_seed,
            aggregate,
            runtime_s: 0.0,
        }
    }

    pub fn with_runtime(mut self, runtime_s: f64) -> Report {
        self.runtime_s = runtime_s;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::runtime(format!("mkdir {}: {e}", dir.display())))?;
        }
        std::fs::write(path, self.to_json())
            .map_err(|e| CliError::runtime(format!("write {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Report> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::runtime(format!("read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::runtime(format!("parse {}: {e}", path.display())))
    }

    /// Mean of one aggregate metric, when present.
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.aggregate.get(metric).map(|a| a.mean)
    }
}

/// Recomputes aggregates from per-seed records; the union of metric keys is
/// aggregated over the seeds that carry each key.
pub fn aggregate_of(per_seed: &[SeedRecord]) -> BTreeMap<String, Aggregate> {
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for record in per_seed {
        for (k, v) in &record.metrics {
            values.entry(k.clone()).or_default().push(*v);
        }
    }
    values
        .into_iter()
        .map(|(k, vs)| {
            let n = vs.len() as f64;
            let mean = vs.iter().sum::<f64>() / n;
            let var = vs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (k, Aggregate { mean, std: var.sqrt() })
        })
        .collect()
}

/// Writes a `header\nx,y\n...` curve file.
pub fn write_curve(path: &Path, header: &str, rows: &[(usize, f64)]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::runtime(format!("mkdir {}: {e}", dir.display())))?;
    }
    let mut body = String::from(header);
    body.push('\n');
    for (x, y) in rows {
        body.push_str(&format!("{x},{y}\n"));
    }
    std::fs::write(path, body).map_err(|e| CliError::runtime(format!("write {}: {e}", path.display())))
}
