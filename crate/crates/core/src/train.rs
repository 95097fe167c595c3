//! Doubly stochastic minibatch training: each step draws a minibatch and a
//! fresh set of reconstruction masks, then takes one Adam step on the
//! composite loss. Early stopping watches the validation composite loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, PreparedCase};
use crate::objective::{sample_from_counts, LossBreakdown, LossConfig, DEFAULT_HOLDOUT_FRACTION};
use crate::optim::{adam_step, compute_gradients, AdamConfig};

const SHUFFLE_STREAM: u64 = 1 << 40;
const MASK_STREAM: u64 = 2 << 40;
const VALIDATION_STREAM: u64 = 3 << 40;
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub holdout_fraction: f64,
    /// Non-improving epochs tolerated; training stops at the next one.
    /// `None` never stops early.
    pub patience: Option<usize>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(loss: LossConfig) -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            adam: AdamConfig::default(),
            loss,
            holdout_fraction: DEFAULT_HOLDOUT_FRACTION,
            patience: Some(5),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::Config(format!(
                "holdout fraction must lie in (0, 1), got {}",
                self.holdout_fraction
            )));
        }
        let a = &self.adam;
        if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::Config(format!(
                "invalid Adam settings lr={} beta1={} beta2={} eps={}",
                a.lr, a.beta1, a.beta2, a.eps
            )));
        }
        Ok(())
    }
}

/// Progress that must survive a checkpoint for training to resume exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Number of completed epochs.
    pub epoch: usize,
    pub best_val: f64,
    pub best_epoch: usize,
    pub bad_epochs: usize,
    pub stopped: bool,
    /// Parameter values at the best validation loss so far.
    pub best_params: Vec<Vec<f64>>,
}

impl TrainState {
    pub fn new(model: &Model) -> Self {
        Self {
            epoch: 0,
            best_val: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
            stopped: false,
            best_params: model.store.params().iter().map(|p| p.value.clone()).collect(),
        }
    }

    pub fn finished(&self, cfg: &TrainConfig) -> bool {
        self.stopped || self.epoch >= cfg.epochs
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub improved: bool,
}

/// A generator seeded from `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sample_masks(cases: &[&PreparedCase], fraction: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<Vec<usize>>> {
    cases
        .iter()
        .map(|c| sample_from_counts(&c.observation_counts(), fraction, rng))
        .collect()
}

/// Case-weighted mean composite loss with masks fixed by the seed.
pub fn mean_loss(model: &Model, cases: &[PreparedCase], cfg: &TrainConfig) -> Result<f64> {
    if cases.is_empty() {
        return Ok(f64::NAN);
    }
    let mut rng = stream_rng(cfg.seed, VALIDATION_STREAM);
    let mut total = 0.0;
    for chunk in cases.chunks(EVAL_CHUNK) {
        let refs: Vec<&PreparedCase> = chunk.iter().collect();
        let masks = sample_masks(&refs, cfg.holdout_fraction, &mut rng);
        let b = model.objective(refs, masks, cfg.loss).breakdown(&model.store)?;
        total += b.total * chunk.len() as f64;
    }
    Ok(total / cases.len() as f64)
}

fn diverged(step: u64, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Diverged {
            step,
            reason: format!("non-finite {what}"),
        },
        other => other,
    }
}

/// Runs epochs until `cfg.epochs` or early stopping, starting from `state`.
/// `on_step` sees every step, `on_epoch` runs after each completed epoch
/// (with `state` already updated). On return the model holds the best
/// parameters seen.
pub fn train(
    model: &mut Model,
    state: &mut TrainState,
    train_cases: &[PreparedCase],
    val_cases: &[PreparedCase],
    cfg: &TrainConfig,
    on_step: &mut dyn FnMut(&StepLog) -> Result<()>,
    on_epoch: &mut dyn FnMut(&Model, &TrainState, &EpochLog) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if train_cases.is_empty() {
        return Err(Error::Config("no training cases".into()));
    }
    while !state.finished(cfg) {
        let epoch = state.epoch;
        let mut order: Vec<usize> = (0..train_cases.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, SHUFFLE_STREAM + epoch as u64));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let step = model.store.step + 1;
            let refs: Vec<&PreparedCase> = batch.iter().map(|&i| &train_cases[i]).collect();
            let masks = sample_masks(
                &refs,
                cfg.holdout_fraction,
                &mut stream_rng(cfg.seed, MASK_STREAM + step),
            );
            let obj = model.objective(refs, masks, cfg.loss);
            let breakdown = obj.breakdown(&model.store).map_err(|e| diverged(step, e))?;
            breakdown.check_finite().map_err(|e| diverged(step, e))?;
            let mut store = model.store.clone();
            compute_gradients(&obj, &mut store).map_err(|e| diverged(step, e))?;
            drop(obj);
            model.store = store;
            adam_step(&mut model.store, &cfg.adam);
            if let Some(p) = model
                .store
                .params()
                .iter()
                .find(|p| p.value.iter().any(|v| !v.is_finite()))
            {
                return Err(Error::Diverged {
                    step,
                    reason: format!("parameter {} became non-finite", p.name),
                });
            }
            epoch_loss += breakdown.total * batch.len() as f64;
            on_step(&StepLog {
                step,
                epoch,
                loss: breakdown,
            })?;
        }
        let train_loss = epoch_loss / train_cases.len() as f64;
        let val_loss = if val_cases.is_empty() {
            train_loss
        } else {
            mean_loss(model, val_cases, cfg)?
        };
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                step: model.store.step,
                reason: "non-finite validation loss".into(),
            });
        }
        state.epoch += 1;
        let improved = val_loss < state.best_val;
        if improved {
            state.best_val = val_loss;
            state.best_epoch = state.epoch;
            state.bad_epochs = 0;
            state.best_params = model.store.params().iter().map(|p| p.value.clone()).collect();
        } else {
            state.bad_epochs += 1;
            if cfg.patience.is_some_and(|p| state.bad_epochs > p) {
                state.stopped = true;
            }
        }
        log::debug!(
            "epoch {} train {:.5} val {:.5}{}",
            state.epoch,
            train_loss,
            val_loss,
            if improved { " *" } else { "" }
        );
        on_epoch(
            model,
            state,
            &EpochLog {
                epoch: state.epoch,
                train_loss,
                val_loss,
                improved,
            },
        )?;
    }
    restore_best(model, state);
    Ok(())
}

pub fn restore_best(model: &mut Model, state: &TrainState) {
    for (p, best) in model.store.params_mut().iter_mut().zip(&state.best_params) {
        p.value.copy_from_slice(best);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{NormStats, Task};
    use crate::dataio::synth::{generate_synthetic, SynthConfig};
    use crate::model::{ModelConfig, ModelKind};

    fn setup(kind: ModelKind) -> (Model, Vec<PreparedCase>, Vec<PreparedCase>, TrainConfig) {
        let mut sc = SynthConfig::new(60, 2, 5);
        sc.window = 12.0;
        let data = generate_synthetic(&sc).unwrap();
        let (tr, va) = data.cases.split_at(48);
        let mut mc = ModelConfig::new(kind, Task::Classification, 2);
        mc.hidden = 6;
        mc.grid_points = 7;
        mc.window = 12.0;
        let model = Model::new(mc, NormStats::fit(tr), 1).unwrap();
        let ptr = model.prepare(tr).unwrap();
        let pva = model.prepare(va).unwrap();
        let mut cfg = TrainConfig::new(LossConfig::new(Task::Classification));
        cfg.epochs = 4;
        cfg.batch_size = 16;
        cfg.adam.lr = 1e-2;
        cfg.seed = 9;
        (model, ptr, pva, cfg)
    }

    #[test]
    fn training_reduces_loss() {
        let (mut model, tr, va, cfg) = setup(ModelKind::proposed());
        let before = mean_loss(&model, &tr, &cfg).unwrap();
        let mut state = TrainState::new(&model);
        let mut steps = 0;
        train(
            &mut model,
            &mut state,
            &tr,
            &va,
            &cfg,
            &mut |_| {
                steps += 1;
                Ok(())
            },
            &mut |_, _, _| Ok(()),
        )
        .unwrap();
        assert_eq!(steps, 4 * 3);
        assert!(mean_loss(&model, &tr, &cfg).unwrap() < before);
    }

    #[test]
    fn resuming_matches_uninterrupted_run() {
        let (mut a, tr, va, cfg) = setup(ModelKind::proposed());
        let mut b = a.clone();
        let mut sa = TrainState::new(&a);
        train(&mut a, &mut sa, &tr, &va, &cfg, &mut |_| Ok(()), &mut |_, _, _| Ok(())).unwrap();

        let mut short = cfg.clone();
        short.epochs = 2;
        let mut sb = TrainState::new(&b);
        let mut snapshot = None;
        train(&mut b, &mut sb, &tr, &va, &short, &mut |_| Ok(()), &mut |m, s, _| {
            snapshot = Some((m.clone(), s.clone()));
            Ok(())
        })
        .unwrap();
        let (mut b, mut sb) = snapshot.unwrap();
        train(&mut b, &mut sb, &tr, &va, &cfg, &mut |_| Ok(()), &mut |_, _, _| Ok(())).unwrap();
        assert_eq!(a.store, b.store);
        assert_eq!(sa, sb);
    }

    #[test]
    fn zero_patience_stops_at_first_non_improvement() {
        let (mut model, tr, va, mut cfg) = setup(ModelKind::Gru(crate::predict::BaselineVariant::F));
        cfg.epochs = 50;
        cfg.patience = Some(0);
        cfg.adam.lr = 0.3;
        let mut state = TrainState::new(&model);
        let mut vals = Vec::new();
        train(
            &mut model,
            &mut state,
            &tr,
            &va,
            &cfg,
            &mut |_| Ok(()),
            &mut |_, _, e| {
                vals.push(e.improved);
                Ok(())
            },
        )
        .unwrap();
        assert!(state.stopped);
        assert_eq!(vals.iter().filter(|&&i| !i).count(), 1);
        assert!(!vals.last().unwrap());
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let (mut model, tr, va, mut cfg) = setup(ModelKind::Gru(crate::predict::BaselineVariant::M));
        cfg.adam.lr = 1e300;
        let mut state = TrainState::new(&model);
        let err = train(
            &mut model,
            &mut state,
            &tr,
            &va,
            &cfg,
            &mut |_| Ok(()),
            &mut |_, _, _| Ok(()),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }
}
