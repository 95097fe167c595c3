//! Training, evaluation, cross-validation and channel ablation runs.

use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::report::{CvReport, ModelResult, REPORT_FORMAT_VERSION};
use crate::checkpoint::Checkpoint;
use crate::data::{Label, NormStats, SparseSeries, Task};
use crate::dataio::folds::{kfold_split, validation_split, VALIDATION_FRACTION};
use crate::error::{Error, Result};
use crate::interp::Channel;
use crate::metrics::EvalReport;
use crate::model::{Model, ModelKind};
use crate::train::{stream_rng, train, StepLog, TrainState};

pub const LOG_HEADER: &str = "step,supervised,reconstruction,reg_I,reg_P,total";
const SPLIT_STREAM: u64 = 4 << 40;

/// Model initialisation seed for fold `fold` of a run seeded with `seed`.
fn init_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(fold as u64 + 1)
}

fn check_task(cases: &[SparseSeries], task: Task) -> Result<()> {
    if let Some(c) = cases.iter().find(|c| c.label.task() != task) {
        return Err(Error::Config(format!(
            "case {} has a {} label but the task is {task}",
            c.id,
            c.label.task()
        )));
    }
    Ok(())
}

/// A fresh model with normalisation fitted on `train_cases`.
pub fn init_model(kind: &ModelKind, cfg: &ExperimentConfig, train_cases: &[SparseSeries], seed: u64) -> Result<Model> {
    let dims = train_cases
        .first()
        .map(SparseSeries::num_dims)
        .ok_or_else(|| Error::Config("no training cases".into()))?;
    let mut model = Model::new(cfg.model_config(kind, dims), NormStats::fit(train_cases), seed)?;
    if cfg.task == Task::Regression {
        let mean = train_cases.iter().map(|c| c.label.as_f64()).sum::<f64>() / train_cases.len() as f64;
        model.set_output_bias(mean);
    }
    Ok(model)
}

/// Trains `kind` on `fit_cases` with early stopping on `val_cases`.
pub fn fit(
    kind: &ModelKind,
    cfg: &ExperimentConfig,
    fit_cases: &[SparseSeries],
    val_cases: &[SparseSeries],
    seed: u64,
) -> Result<Model> {
    let mut model = init_model(kind, cfg, fit_cases, seed)?;
    let tr = model.prepare(fit_cases)?;
    let va = model.prepare(val_cases)?;
    let mut state = TrainState::new(&model);
    train(
        &mut model,
        &mut state,
        &tr,
        &va,
        &cfg.train_config(),
        &mut |_| Ok(()),
        &mut |_, _, _| Ok(()),
    )?;
    Ok(model)
}

fn select(cases: &[SparseSeries], idx: &[usize]) -> Vec<SparseSeries> {
    idx.iter().map(|&i| cases[i].clone()).collect()
}

/// k-fold cross-validation of every model in `kinds` on identical folds.
pub fn run_cv(cases: &[SparseSeries], kinds: &[ModelKind], cfg: &ExperimentConfig) -> Result<CvReport> {
    cfg.validate()?;
    check_task(cases, cfg.task)?;
    let folds = kfold_split(cases, cfg.folds, cfg.seed)?;
    let mut results = Vec::with_capacity(kinds.len());
    for kind in kinds {
        cfg.model_config(kind, 1).validate()?;
        let mut reports = Vec::with_capacity(folds.len());
        for (f, fold) in folds.iter().enumerate() {
            let started = Instant::now();
            let run = || -> Result<EvalReport> {
                let model = fit(
                    kind,
                    cfg,
                    &select(cases, &fold.train),
                    &select(cases, &fold.validation),
                    init_seed(cfg.seed, f),
                )?;
                model.evaluate(&select(cases, &fold.test), Some(f))
            };
            let report = run().map_err(|e| Error::Fold {
                fold: f,
                source: Box::new(e),
            })?;
            info!(
                "{kind} fold {f}: {} ({:.1}s)",
                report
                    .values()
                    .iter()
                    .map(|(n, v)| format!("{n}={v:.4}"))
                    .collect::<Vec<_>>()
                    .join(" "),
                started.elapsed().as_secs_f64()
            );
            reports.push(report);
        }
        results.push(ModelResult::new(kind.to_string(), reports));
    }
    Ok(CvReport {
        format_version: REPORT_FORMAT_VERSION,
        task: cfg.task,
        folds: cfg.folds,
        seed: cfg.seed,
        n_cases: cases.len(),
        models: results,
    })
}

/// Every non-empty channel subset, smallest first.
pub fn all_channel_subsets() -> Vec<Vec<Channel>> {
    let mut out: Vec<Vec<Channel>> = (1u8..8)
        .map(|mask| {
            Channel::ALL
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, c)| *c)
                .collect()
        })
        .collect();
    out.sort_by_key(Vec::len);
    out
}

/// Cross-validates the interpolation model once per channel subset.
pub fn run_ablation(cases: &[SparseSeries], subsets: &[Vec<Channel>], cfg: &ExperimentConfig) -> Result<CvReport> {
    if subsets.is_empty() {
        return Err(Error::Config("no channel subsets requested".into()));
    }
    let kinds = subsets
        .iter()
        .map(|s| ModelKind::with_channels(s))
        .collect::<Result<Vec<_>>>()?;
    run_cv(cases, &kinds, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub model: String,
    pub n_fit: usize,
    pub n_validation: usize,
    pub epochs_run: usize,
    pub steps: u64,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub stopped_early: bool,
}

/// Output files of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPaths {
    pub log: PathBuf,
    /// Latest state, rewritten after every epoch; resume from this.
    pub last: PathBuf,
    /// Best parameters, written when training ends.
    pub best: PathBuf,
}

impl TrainPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            log: dir.join("train_log.csv"),
            last: dir.join("last.ckpt"),
            best: dir.join("best.ckpt"),
        }
    }
}

/// Trains on all of `cases` minus a stratified validation subset, logging
/// every step and checkpointing every epoch. With `resume`, continues from
/// that checkpoint and appends to the log.
pub fn run_train(
    cases: &[SparseSeries],
    cfg: &ExperimentConfig,
    paths: &TrainPaths,
    resume: Option<&Path>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    check_task(cases, cfg.task)?;
    let labels: Vec<Label> = cases.iter().map(|c| c.label).collect();
    let all: Vec<usize> = (0..cases.len()).collect();
    let (fit_idx, val_idx) = validation_split(
        &all,
        &labels,
        VALIDATION_FRACTION,
        &mut stream_rng(cfg.seed, SPLIT_STREAM),
    );
    let fit_cases = select(cases, &fit_idx);
    let val_cases = select(cases, &val_idx);

    let (mut model, mut state) = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            let want = cfg.model_config(&cfg.model, ck.model.config.dims);
            if ck.model.config != want {
                return Err(Error::Config(format!(
                    "checkpoint {} was trained with a different model configuration",
                    p.display()
                )));
            }
            (ck.model, ck.state)
        }
        None => {
            let m = init_model(&cfg.model, cfg, &fit_cases, init_seed(cfg.seed, 0))?;
            let s = TrainState::new(&m);
            (m, s)
        }
    };
    let tr = model.prepare(&fit_cases)?;
    let va = model.prepare(&val_cases)?;

    if let Some(parent) = paths.log.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut log = BufWriter::new(if resume.is_some() && paths.log.exists() {
        OpenOptions::new().append(true).open(&paths.log)?
    } else {
        let mut f = fs::File::create(&paths.log)?;
        writeln!(f, "{LOG_HEADER}")?;
        f
    });
    let tcfg = cfg.train_config();
    let result = train(
        &mut model,
        &mut state,
        &tr,
        &va,
        &tcfg,
        &mut |s: &StepLog| {
            let l = &s.loss;
            writeln!(
                log,
                "{},{},{},{},{},{}",
                s.step, l.supervised, l.reconstruction, l.reg_i, l.reg_p, l.total
            )?;
            Ok(())
        },
        &mut |m, st, e| {
            info!(
                "epoch {}: train {:.5} validation {:.5}{}",
                e.epoch,
                e.train_loss,
                e.val_loss,
                if e.improved { " (best)" } else { "" }
            );
            Checkpoint::new(m.clone(), st.clone()).save(&paths.last)
        },
    );
    log.flush()?;
    result?;
    Checkpoint::new(model.clone(), state.clone()).save(&paths.best)?;
    Ok(TrainSummary {
        model: model.config.kind.to_string(),
        n_fit: fit_cases.len(),
        n_validation: val_cases.len(),
        epochs_run: state.epoch,
        steps: model.store.step,
        best_epoch: state.best_epoch,
        best_validation_loss: state.best_val,
        stopped_early: state.stopped,
    })
}

/// Evaluates a saved model on `cases`.
pub fn run_eval(checkpoint: &Path, cases: &[SparseSeries]) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    check_task(cases, ck.model.config.task)?;
    ck.model.evaluate(cases, None)
}
