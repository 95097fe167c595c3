//! Flat experiment configuration. Values come from built-in defaults, then
//! an optional `key = value` file, then command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Task, DEFAULT_GRID_POINTS, DEFAULT_WINDOW_HOURS};
use crate::error::{Error, Result};
use crate::interp::{Channel, DEFAULT_KAPPA};
use crate::model::{ModelConfig, ModelKind, DEFAULT_HIDDEN};
use crate::objective::{LossConfig, DEFAULT_HOLDOUT_FRACTION};
use crate::optim::AdamConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub model: ModelKind,
    pub grid_points: usize,
    pub window: f64,
    pub kappa: f64,
    pub hidden: usize,
    pub delta: f64,
    pub lambda_i: f64,
    pub lambda_p: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// `None` disables early stopping.
    pub patience: Option<usize>,
    pub holdout_fraction: f64,
    pub folds: usize,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Classification,
            model: ModelKind::proposed(),
            grid_points: DEFAULT_GRID_POINTS,
            window: DEFAULT_WINDOW_HOURS,
            kappa: DEFAULT_KAPPA,
            hidden: DEFAULT_HIDDEN,
            delta: 1.0,
            lambda_i: 1e-4,
            lambda_p: 1e-4,
            lr: AdamConfig::default().lr,
            batch_size: 128,
            epochs: 30,
            patience: Some(5),
            holdout_fraction: DEFAULT_HOLDOUT_FRACTION,
            folds: 5,
            seed: 0,
            data: None,
            out: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "task",
    "model",
    "channels",
    "grid_points",
    "window",
    "kappa",
    "hidden",
    "delta",
    "lambda_i",
    "lambda_p",
    "lr",
    "batch_size",
    "epochs",
    "patience",
    "holdout_fraction",
    "folds",
    "seed",
    "data",
    "out",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = '{value}'")))
}

/// `SI,T` or `SI+T` into channels.
pub fn parse_channels(s: &str) -> Result<Vec<Channel>> {
    s.split([',', '+'])
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(Channel::parse)
        .collect()
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "task" => self.task = value.parse()?,
            "model" => self.model = value.parse()?,
            "channels" => {
                if !self.model.uses_interpolation() {
                    return Err(Error::Config(format!(
                        "channels only apply to ipn models, model is {}",
                        self.model
                    )));
                }
                self.model = ModelKind::with_channels(&parse_channels(value)?)?;
            }
            "grid_points" => self.grid_points = parse("grid_points", value)?,
            "window" => self.window = parse("window", value)?,
            "kappa" => self.kappa = parse("kappa", value)?,
            "hidden" => self.hidden = parse("hidden", value)?,
            "delta" => self.delta = parse("delta", value)?,
            "lambda_i" => self.lambda_i = parse("lambda_i", value)?,
            "lambda_p" => self.lambda_p = parse("lambda_p", value)?,
            "lr" => self.lr = parse("lr", value)?,
            "batch_size" => self.batch_size = parse("batch_size", value)?,
            "epochs" => self.epochs = parse("epochs", value)?,
            "patience" => {
                self.patience = match value {
                    "none" | "off" => None,
                    v => Some(parse("patience", v)?),
                }
            }
            "holdout_fraction" => self.holdout_fraction = parse("holdout_fraction", value)?,
            "folds" => self.folds = parse("folds", value)?,
            "seed" => self.seed = parse("seed", value)?,
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            other => {
                return Err(Error::Config(format!(
                    "unknown config key '{other}' (known: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                reason: format!("expected key = value, found '{line}'"),
            })?;
            self.set(k, v).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn model_config(&self, kind: &ModelKind, dims: usize) -> ModelConfig {
        ModelConfig {
            kind: kind.clone(),
            task: self.task,
            dims,
            hidden: self.hidden,
            grid_points: self.grid_points,
            window: self.window,
            kappa: self.kappa,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            loss: LossConfig {
                delta: self.delta,
                lambda_i: self.lambda_i,
                lambda_p: self.lambda_p,
                task: self.task,
            },
            holdout_fraction: self.holdout_fraction,
            patience: self.patience,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config(&self.model, 1).validate()?;
        self.train_config().validate()?;
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be >= 2, got {}", self.folds)));
        }
        Ok(())
    }

    /// Flat `key = value` rendering that [`apply_file`](Self::apply_file)
    /// reads back to the same configuration.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        put("task", self.task.to_string());
        put("model", self.model.to_string());
        put("grid_points", self.grid_points.to_string());
        put("window", self.window.to_string());
        put("kappa", self.kappa.to_string());
        put("hidden", self.hidden.to_string());
        put("delta", self.delta.to_string());
        put("lambda_i", self.lambda_i.to_string());
        put("lambda_p", self.lambda_p.to_string());
        put("lr", self.lr.to_string());
        put("batch_size", self.batch_size.to_string());
        put("epochs", self.epochs.to_string());
        put(
            "patience",
            self.patience.map_or_else(|| "none".to_string(), |p| p.to_string()),
        );
        put("holdout_fraction", self.holdout_fraction.to_string());
        put("folds", self.folds.to_string());
        put("seed", self.seed.to_string());
        if let Some(d) = &self.data {
            put("data", d.display().to_string());
        }
        if let Some(o) = &self.out {
            put("out", o.display().to_string());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.conf");
        fs::write(&path, "# comment\nlr = 0.01\nepochs=7  # inline\nmodel = gru-d\n").unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.apply_file(&path).unwrap();
        cfg.apply_overrides(&["lr=0.002".into()]).unwrap();
        assert_eq!(cfg.lr, 0.002);
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.model, "gru-d".parse().unwrap());
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_overrides(&["channels=I,SI".into(), "patience=none".into(), "lr=0.0031".into()])
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        fs::write(&path, cfg.to_kv()).unwrap();
        let mut back = ExperimentConfig::default();
        back.apply_file(&path).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_lines_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.conf");
        fs::write(&path, "lr = 0.1\nnonsense\n").unwrap();
        let err = ExperimentConfig::default().apply_file(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(ExperimentConfig::default().set("colour", "red").is_err());
        assert!(ExperimentConfig::default().set("channels", "").is_err());
    }
}
