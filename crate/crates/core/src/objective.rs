//! Masked-holdout reconstruction, supervised losses and the composite
//! training objective.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CaseView, DenseBatch, Observation, Task};
use crate::error::{Error, Result};
use crate::interp::{per_dim_observations, InterpForward, InterpGrad, InterpParams};

pub const DEFAULT_HOLDOUT_FRACTION: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the reconstruction term.
    pub delta: f64,
    pub lambda_i: f64,
    pub lambda_p: f64,
    pub task: Task,
}

impl LossConfig {
    pub fn new(task: Task) -> Self {
        Self {
            delta: 1.0,
            lambda_i: 1e-4,
            lambda_p: 1e-4,
            task,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("delta", self.delta),
            ("lambda_I", self.lambda_i),
            ("lambda_P", self.lambda_p),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Held-out observation indices: `held_out[case][dim]` lists positions in
/// that dimension's time-ordered observation list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskAssignment {
    pub held_out: Vec<Vec<Vec<usize>>>,
    pub holdout_fraction: f64,
    pub rng_seed: u64,
}

impl MaskAssignment {
    pub fn total_held_out(&self) -> usize {
        self.held_out.iter().flatten().map(Vec::len).sum()
    }

    pub fn case(&self, i: usize) -> &[Vec<usize>] {
        &self.held_out[i]
    }
}

/// Number of points held out of a case with `count` observations.
pub fn holdout_count(count: usize, fraction: f64) -> usize {
    ((count as f64) * fraction + 1e-9).floor() as usize
}

/// Holds out `floor(fraction * n)` observations per case, uniformly without
/// replacement, deterministically in `seed`.
pub fn sample_masks(batch: &DenseBatch, fraction: f64, seed: u64) -> Result<MaskAssignment> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "holdout fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let held_out = batch
        .cases()
        .map(|case| sample_case_mask(&case, fraction, &mut rng))
        .collect();
    Ok(MaskAssignment {
        held_out,
        holdout_fraction: fraction,
        rng_seed: seed,
    })
}

pub(crate) fn sample_case_mask(case: &CaseView<'_>, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let dims = case.num_dims();
    let counts: Vec<usize> = (0..dims)
        .map(|d| case.observed.row(d).iter().filter(|&&o| o).count())
        .collect();
    sample_from_counts(&counts, fraction, rng)
}

/// Held-out positions for a case whose dimensions hold `counts`
/// observations: `floor(fraction * total)` points drawn over the whole case.
pub fn sample_from_counts(counts: &[usize], fraction: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let total: usize = counts.iter().sum();
    let k = holdout_count(total, fraction);
    let mut held = vec![Vec::new(); counts.len()];
    if k == 0 {
        return held;
    }
    let mut picks = index::sample(rng, total, k).into_vec();
    picks.sort_unstable();
    // flat index -> (dim, position) in dim-major order
    let mut d = 0;
    let mut start = 0;
    for p in picks {
        while p >= start + counts[d] {
            start += counts[d];
            d += 1;
        }
        held[d].push(p - start);
    }
    held
}

/// Held-out points as `(dim, index within dim, observation)`.
pub(crate) type HeldOut = Vec<(usize, usize, Observation)>;

/// Splits per-dimension observations into (kept, held-out) lists.
pub(crate) fn split_heldout(obs: &[Vec<Observation>], held: &[Vec<usize>]) -> (Vec<Vec<Observation>>, HeldOut) {
    let mut kept = Vec::with_capacity(obs.len());
    let mut out = Vec::new();
    for (d, list) in obs.iter().enumerate() {
        let hd = held.get(d).map_or(&[][..], |v| &v[..]);
        let mut k = Vec::with_capacity(list.len());
        for (j, o) in list.iter().enumerate() {
            if hd.contains(&j) {
                out.push((j, d, *o));
            } else {
                k.push(*o);
            }
        }
        kept.push(k);
    }
    (kept, out)
}

/// Reconstruction of held-out points from the remaining observations.
#[derive(Clone, Debug)]
pub(crate) struct ReconPass {
    pub forward: InterpForward,
    /// (j, d, observation, index into the evaluation points).
    pub targets: Vec<(usize, usize, Observation, usize)>,
}

impl ReconPass {
    pub fn run(obs: &[Vec<Observation>], held: &[Vec<usize>], params: &InterpParams) -> Option<Self> {
        let (kept, heldout) = split_heldout(obs, held);
        if heldout.is_empty() {
            return None;
        }
        let mut points: Vec<f64> = heldout.iter().map(|(_, _, o)| o.time).collect();
        points.sort_by(f64::total_cmp);
        points.dedup();
        let targets = heldout
            .into_iter()
            .map(|(j, d, o)| {
                let p = points.partition_point(|&t| t < o.time);
                (j, d, o, p)
            })
            .collect();
        let forward = InterpForward::run(&kept, &points, params, false);
        Some(Self { forward, targets })
    }

    pub fn predictions(&self) -> Vec<(usize, usize, f64)> {
        let smooth = self.forward.smooth();
        self.targets
            .iter()
            .map(|&(j, d, _, p)| (j, d, smooth[[d, p]]))
            .collect()
    }

    /// Sum of squared errors; adds `scale * d(sse)` to `grad`.
    pub fn sse_and_backward(&self, scale: f64, grad: Option<&mut InterpGrad>) -> f64 {
        let smooth = self.forward.smooth();
        let mut g = ndarray::Array2::<f64>::zeros(smooth.dim());
        let mut sse = 0.0;
        for &(_, d, o, p) in &self.targets {
            let err = smooth[[d, p]] - o.value;
            sse += err * err;
            g[[d, p]] += scale * 2.0 * err;
        }
        if let Some(grad) = grad {
            self.forward.backward(Some(g.view()), None, None, grad);
        }
        sse
    }
}

/// Smooth-channel predictions at each held-out `(j, d)` computed with all
/// held-out points removed from the input.
pub fn reconstruct_heldout(
    case: &CaseView<'_>,
    held: &[Vec<usize>],
    params: &InterpParams,
) -> Vec<(usize, usize, f64)> {
    let obs = per_dim_observations(case);
    ReconPass::run(&obs, held, params).map_or_else(Vec::new, |r| r.predictions())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconTerm {
    pub target: f64,
    pub prediction: f64,
}

/// Loss components as logged per training step; `total` is their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub supervised: f64,
    pub reconstruction: f64,
    pub reg_i: f64,
    pub reg_p: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in [
            ("supervised loss", self.supervised),
            ("reconstruction loss", self.reconstruction),
            ("interpolation regulariser", self.reg_i),
            ("prediction regulariser", self.reg_p),
            ("total loss", self.total),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite(name.into()));
            }
        }
        Ok(())
    }
}

/// `pred_loss + lambda_I |theta|^2 + lambda_P |phi|^2 + delta * sse / n_cases`,
/// where `pred_loss` is already a per-case mean.
pub fn composite_loss(
    pred_loss: f64,
    recon_terms: &[ReconTerm],
    n_cases: usize,
    theta: &[f64],
    phi: &[f64],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    let sse: f64 = recon_terms.iter().map(|t| (t.target - t.prediction).powi(2)).sum();
    let reconstruction = if n_cases == 0 {
        0.0
    } else {
        cfg.delta * sse / n_cases as f64
    };
    let reg_i = cfg.lambda_i * theta.iter().map(|v| v * v).sum::<f64>();
    let reg_p = cfg.lambda_p * phi.iter().map(|v| v * v).sum::<f64>();
    let out = LossBreakdown {
        supervised: pred_loss,
        reconstruction,
        reg_i,
        reg_p,
        total: pred_loss + reconstruction + reg_i + reg_p,
    };
    out.check_finite()?;
    Ok(out)
}

/// Binary cross-entropy from a logit; returns (loss, d loss / d logit).
pub fn bce_with_logit(logit: f64, label: f64) -> (f64, f64) {
    // log(1 + e^s) - y s, evaluated without overflow
    let softplus = if logit > 0.0 {
        logit + (-logit).exp().ln_1p()
    } else {
        logit.exp().ln_1p()
    };
    let p = crate::predict::gru::sigmoid(logit);
    (softplus - label * logit, p - label)
}

pub fn squared_error(prediction: f64, target: f64) -> (f64, f64) {
    let e = prediction - target;
    (e * e, 2.0 * e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{densify, Label, SparseSeries};
    use ndarray::{arr2, Array2};

    fn dense(dims: Vec<Vec<(f64, f64)>>) -> DenseBatch {
        let dims = dims
            .into_iter()
            .map(|d| d.into_iter().map(|(t, x)| Observation::new(t, x)).collect())
            .collect();
        densify(&SparseSeries::new("c", dims, Label::Class(0), 48.0).unwrap(), 48.0).unwrap()
    }

    #[test]
    fn holdout_counts_floor() {
        let b = dense(vec![(0..10).map(|i| (i as f64, 0.0)).collect()]);
        let m = sample_masks(&b, 0.2, 1).unwrap();
        assert_eq!(m.total_held_out(), 2);
        assert_eq!(m, sample_masks(&b, 0.2, 1).unwrap());

        let one = dense(vec![vec![(1.0, 1.0)]]);
        assert_eq!(sample_masks(&one, 0.2, 1).unwrap().total_held_out(), 0);

        let empty = dense(vec![vec![]]);
        assert_eq!(sample_masks(&empty, 0.2, 1).unwrap().total_held_out(), 0);
        assert!(sample_masks(&b, 1.0, 1).is_err());
    }

    #[test]
    fn held_out_indices_are_valid_positions() {
        let b = dense(vec![
            (0..7).map(|i| (i as f64, 0.0)).collect(),
            vec![],
            (0..9).map(|i| (i as f64 + 0.5, 1.0)).collect(),
        ]);
        for seed in 0..50 {
            let m = sample_masks(&b, 0.3, seed).unwrap();
            assert_eq!(m.total_held_out(), 4);
            let h = m.case(0);
            assert!(h[0].iter().all(|&j| j < 7));
            assert!(h[1].is_empty());
            assert!(h[2].iter().all(|&j| j < 9));
        }
    }

    fn unit_params(d: usize) -> InterpParams {
        InterpParams::new(vec![0.0; d], 10.0, Array2::eye(d)).unwrap()
    }

    #[test]
    fn sole_observation_held_out_predicts_zero() {
        let b = dense(vec![vec![(5.0, 3.0)], vec![]]);
        let r = reconstruct_heldout(&b.case(0), &[vec![0], vec![]], &unit_params(2));
        assert_eq!(r, vec![(0, 0, 0.0)]);
    }

    #[test]
    fn constant_series_reconstructs_exactly() {
        let b = dense(vec![vec![(0.0, 1.0), (1.0, 1.0), (2.0, 1.0)]]);
        let r = reconstruct_heldout(&b.case(0), &[vec![1]], &unit_params(1));
        assert_eq!(r.len(), 1);
        assert!((r[0].2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_neighbours_give_midpoint() {
        let params = InterpParams::new(vec![0.0], 10.0, arr2(&[[1.0]])).unwrap();
        for y in [-4.0, 0.3, 100.0] {
            let b = dense(vec![vec![(0.0, 0.0), (1.0, y), (2.0, 2.0)]]);
            let r = reconstruct_heldout(&b.case(0), &[vec![1]], &params);
            // oracle: equal weights e^{-1} on both neighbours
            let w = (-1.0f64).exp();
            assert!((r[0].2 - (w * 0.0 + w * 2.0) / (2.0 * w)).abs() < 1e-15);
        }
    }

    #[test]
    fn composite_examples() {
        let cfg = LossConfig {
            delta: 0.0,
            lambda_i: 0.0,
            lambda_p: 0.0,
            task: Task::Classification,
        };
        let terms = [ReconTerm {
            target: 1.0,
            prediction: 0.7,
        }];
        let l = composite_loss(0.42, &terms, 1, &[3.0], &[1.0], &cfg).unwrap();
        assert_eq!(l.total, 0.42);

        let perfect = [ReconTerm {
            target: 2.0,
            prediction: 2.0,
        }];
        let cfg1 = LossConfig { delta: 1.0, ..cfg };
        assert_eq!(
            composite_loss(0.0, &perfect, 1, &[1.0], &[1.0], &cfg1).unwrap().total,
            0.0
        );

        let cfg2 = LossConfig {
            delta: 1.0,
            lambda_i: 0.1,
            lambda_p: 0.0,
            task: Task::Classification,
        };
        let l = composite_loss(0.5, &terms, 1, &[2.0], &[], &cfg2).unwrap();
        assert!((l.total - 0.99).abs() < 1e-12, "{}", l.total);
        assert!((l.reconstruction - 0.09).abs() < 1e-12);
        assert!((l.reg_i - 0.4).abs() < 1e-12);
    }

    #[test]
    fn non_finite_loss_names_term() {
        let cfg = LossConfig::new(Task::Regression);
        let err = composite_loss(f64::NAN, &[], 1, &[], &[], &cfg).unwrap_err();
        assert!(err.to_string().contains("supervised"), "{err}");
        let terms = [ReconTerm {
            target: f64::INFINITY,
            prediction: 0.0,
        }];
        let err = composite_loss(0.1, &terms, 1, &[], &[], &cfg).unwrap_err();
        assert!(err.to_string().contains("reconstruction"), "{err}");
    }

    #[test]
    fn bce_matches_direct_formula() {
        for &(s, y) in &[(0.3, 1.0), (-2.0, 0.0), (5.0, 0.0), (-30.0, 1.0)] {
            let (l, g) = bce_with_logit(s, y);
            let p = 1.0 / (1.0 + (-s).exp());
            let want = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            assert!((l - want).abs() < 1e-9 * want.max(1.0), "{s} {y}");
            assert!((g - (p - y)).abs() < 1e-15);
        }
    }
}
