//! Cross-validation reports (JSON and a plain-text table) and run manifests.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::data::{Label, SparseSeries, Task};
use crate::dataio::SynthConfig;
use crate::error::Result;
use crate::metrics::{aggregate, EvalReport, MetricSummary};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub model: String,
    pub folds: Vec<EvalReport>,
    pub summary: Vec<MetricSummary>,
}

impl ModelResult {
    pub fn new(model: String, folds: Vec<EvalReport>) -> Self {
        let summary = aggregate(&folds);
        Self { model, folds, summary }
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.summary.iter().find(|s| s.metric == metric).map(|s| s.mean)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub format_version: u32,
    pub task: Task,
    pub folds: usize,
    pub seed: u64,
    pub n_cases: usize,
    pub models: Vec<ModelResult>,
}

fn metric_names(task: Task) -> &'static [&'static str] {
    match task {
        Task::Classification => &["auc", "auprc", "ce"],
        Task::Regression => &["medae_days", "ev"],
    }
}

impl CvReport {
    pub fn model(&self, name: &str) -> Option<&ModelResult> {
        self.models.iter().find(|m| m.model == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per fold and a `mean±std` row per model. Regression EV is in
    /// log-day space, MedAE in days.
    pub fn table(&self) -> String {
        let metrics = metric_names(self.task);
        let width = self.models.iter().map(|m| m.model.len()).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let _ = write!(s, "{:<width$}  {:>5}", "model", "fold");
        for m in metrics {
            let _ = write!(s, "  {m:>17}");
        }
        s.push('\n');
        for r in &self.models {
            for f in &r.folds {
                let fold = f.fold.map_or_else(|| "-".to_string(), |i| i.to_string());
                let _ = write!(s, "{:<width$}  {:>5}", r.model, fold);
                for m in metrics {
                    match f.get(m) {
                        Some(v) => {
                            let _ = write!(s, "  {v:>17.4}");
                        }
                        None => {
                            let _ = write!(s, "  {:>17}", "n/a");
                        }
                    }
                }
                s.push('\n');
            }
            let _ = write!(s, "{:<width$}  {:>5}", r.model, "mean");
            for m in metrics {
                match r.summary.iter().find(|x| x.metric == *m) {
                    Some(x) => {
                        let cell = format!("{:.4}±{:.4}", x.mean, x.std);
                        let _ = write!(s, "  {cell:>17}");
                    }
                    None => {
                        let _ = write!(s, "  {:>17}", "n/a");
                    }
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{stem}.json")), self.to_json()?)?;
        fs::write(dir.join(format!("{stem}.txt")), self.table())?;
        Ok(())
    }
}

/// Order-sensitive FNV-1a hash over ids, labels and every observation bit
/// pattern.
pub fn dataset_fingerprint(cases: &[SparseSeries]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for c in cases {
        eat(c.id.as_bytes());
        match c.label {
            Label::Class(k) => eat(&[0, k]),
            Label::Regression(y) => eat(&y.to_bits().to_le_bytes()),
        }
        for (d, obs) in c.dims.iter().enumerate() {
            eat(&(d as u64).to_le_bytes());
            for o in obs {
                eat(&o.time.to_bits().to_le_bytes());
                eat(&o.value.to_bits().to_le_bytes());
            }
        }
    }
    format!("{h:016x}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub source: String,
    pub n_cases: usize,
    pub dims: usize,
    pub fingerprint: String,
}

impl DatasetInfo {
    pub fn new(source: impl Into<String>, cases: &[SparseSeries]) -> Self {
        Self {
            source: source.into(),
            n_cases: cases.len(),
            dims: cases.first().map_or(0, |c| c.num_dims()),
            fingerprint: dataset_fingerprint(cases),
        }
    }
}

/// Everything needed to rerun a command exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub config: ExperimentConfig,
    pub config_kv: String,
    pub dataset: Option<DatasetInfo>,
    pub synth: Option<SynthConfig>,
    pub checkpoint_format_version: u32,
    pub report_format_version: u32,
    pub outputs: Vec<String>,
    pub elapsed_seconds: f64,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args: std::env::args().collect(),
            config: config.clone(),
            config_kv: config.to_kv(),
            dataset: None,
            synth: None,
            checkpoint_format_version: crate::checkpoint::FORMAT_VERSION,
            report_format_version: REPORT_FORMAT_VERSION,
            outputs: Vec::new(),
            elapsed_seconds: 0.0,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
