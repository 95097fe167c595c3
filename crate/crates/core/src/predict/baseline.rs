//! Regular-grid inputs for the GRU baselines.
//!
//! Observations are binned to the nearest grid point (latest wins inside a
//! bin). The variants differ only in how empty bins are filled:
//!
//! * `M`: training mean of the dimension,
//! * `F`: last observed value, training mean before the first observation,
//! * `S`: `F` values plus the bin mask and hours since the last observation,
//! * `D`: like `S`, but the carried-forward value decays towards the mean
//!   with `gamma = exp(-max(0, w * dt + b))`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{CaseView, ReferenceGrid};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineVariant {
    M,
    F,
    S,
    D,
}

impl BaselineVariant {
    pub fn num_features(&self, dims: usize) -> usize {
        match self {
            BaselineVariant::M | BaselineVariant::F => dims,
            BaselineVariant::S | BaselineVariant::D => 3 * dims,
        }
    }
}

/// Per-dimension decay parameters of the `D` variant.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayParams {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineInput {
    /// T x F. For `S`/`D` the columns are `[values | mask | hours since last]`.
    pub sequence: Array2<f64>,
    pub variant: BaselineVariant,
}

impl BaselineInput {
    /// Copy with the elapsed-time block divided by `window` so every input
    /// column is O(1).
    pub fn scaled_for_network(&self, dims: usize, window: f64) -> Array2<f64> {
        let mut seq = self.sequence.clone();
        if matches!(self.variant, BaselineVariant::S | BaselineVariant::D) {
            seq.slice_mut(ndarray::s![.., 2 * dims..]).mapv_inplace(|v| v / window);
        }
        seq
    }
}

/// A case snapped onto the reference grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BinnedCase {
    /// T x D, zero where the bin is empty.
    pub value: Array2<f64>,
    pub observed: Array2<bool>,
    /// Most recent observed value at or before each bin.
    pub last: Array2<f64>,
    pub has_last: Array2<bool>,
    /// Hours since the last observation (zero inside an observed bin).
    pub delta: Array2<f64>,
}

pub fn bin_case(case: &CaseView<'_>, grid: &ReferenceGrid) -> BinnedCase {
    let t_len = grid.len();
    let dims = case.num_dims();
    let window = grid.window();
    let mut value = Array2::zeros((t_len, dims));
    let mut observed = Array2::from_elem((t_len, dims), false);
    for d in 0..dims {
        for o in case.observations(d) {
            let k = ((o.time / grid.spacing).round() as usize).min(t_len - 1);
            // observations arrive in time order, so overwriting keeps the latest
            value[[k, d]] = o.value;
            observed[[k, d]] = true;
        }
    }
    let mut last = Array2::zeros((t_len, dims));
    let mut has_last = Array2::from_elem((t_len, dims), false);
    let mut delta = Array2::zeros((t_len, dims));
    for d in 0..dims {
        let mut carried: Option<(f64, f64)> = None;
        for k in 0..t_len {
            if observed[[k, d]] {
                carried = Some((value[[k, d]], grid.points[k]));
            }
            match carried {
                Some((v, t)) => {
                    last[[k, d]] = v;
                    has_last[[k, d]] = true;
                    delta[[k, d]] = (grid.points[k] - t).min(window);
                }
                None => delta[[k, d]] = (grid.points[k] - grid.points[0]).min(window),
            }
        }
    }
    BinnedCase {
        value,
        observed,
        last,
        has_last,
        delta,
    }
}

/// Decay factor of the `D` variant; the raw pre-activation is also returned
/// for the backward pass.
fn decay_gamma(w: f64, b: f64, dt: f64) -> (f64, f64) {
    let pre = w * dt + b;
    ((-pre.max(0.0)).exp(), pre)
}

pub fn baseline_features(
    binned: &BinnedCase,
    variant: BaselineVariant,
    means: &[f64],
    decay: Option<&DecayParams>,
) -> Result<BaselineInput> {
    let (t_len, dims) = binned.value.dim();
    if means.len() != dims {
        return Err(Error::Shape(format!(
            "{} training means for {dims} dimensions",
            means.len()
        )));
    }
    let mut seq = Array2::zeros((t_len, variant.num_features(dims)));
    for k in 0..t_len {
        for d in 0..dims {
            let obs = binned.observed[[k, d]];
            let v = match variant {
                BaselineVariant::M => {
                    if obs {
                        binned.value[[k, d]]
                    } else {
                        means[d]
                    }
                }
                BaselineVariant::F | BaselineVariant::S => {
                    if binned.has_last[[k, d]] {
                        binned.last[[k, d]]
                    } else {
                        means[d]
                    }
                }
                BaselineVariant::D => {
                    let decay = decay.ok_or_else(|| Error::Config("the D baseline needs decay parameters".into()))?;
                    if obs {
                        binned.value[[k, d]]
                    } else if binned.has_last[[k, d]] {
                        let (g, _) = decay_gamma(decay.w[d], decay.b[d], binned.delta[[k, d]]);
                        g * binned.last[[k, d]] + (1.0 - g) * means[d]
                    } else {
                        means[d]
                    }
                }
            };
            seq[[k, d]] = v;
            if matches!(variant, BaselineVariant::S | BaselineVariant::D) {
                seq[[k, dims + d]] = if obs { 1.0 } else { 0.0 };
                seq[[k, 2 * dims + d]] = binned.delta[[k, d]];
            }
        }
    }
    Ok(BaselineInput { sequence: seq, variant })
}

/// Gradients of the `D` decay parameters given the gradient of the value
/// block (T x D) of the input sequence.
pub(crate) fn decay_backward(
    binned: &BinnedCase,
    means: &[f64],
    decay: &DecayParams,
    d_values: &Array2<f64>,
    g_w: &mut [f64],
    g_b: &mut [f64],
) {
    let (t_len, dims) = binned.value.dim();
    for k in 0..t_len {
        for d in 0..dims {
            if binned.observed[[k, d]] || !binned.has_last[[k, d]] {
                continue;
            }
            let dt = binned.delta[[k, d]];
            let (g, pre) = decay_gamma(decay.w[d], decay.b[d], dt);
            if pre <= 0.0 {
                continue;
            }
            let d_gamma = d_values[[k, d]] * (binned.last[[k, d]] - means[d]);
            g_w[d] -= d_gamma * g * dt;
            g_b[d] -= d_gamma * g;
        }
    }
}

pub fn build_baseline_input(
    case: &CaseView<'_>,
    grid: &ReferenceGrid,
    variant: BaselineVariant,
    means: &[f64],
    decay: Option<&DecayParams>,
) -> Result<BaselineInput> {
    baseline_features(&bin_case(case, grid), variant, means, decay)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{densify, make_grid, Label, Observation, SparseSeries};

    fn case(dims: Vec<Vec<(f64, f64)>>) -> crate::data::DenseBatch {
        let dims = dims
            .into_iter()
            .map(|d| d.into_iter().map(|(t, x)| Observation::new(t, x)).collect())
            .collect();
        densify(&SparseSeries::new("c", dims, Label::Class(0), 4.0).unwrap(), 4.0).unwrap()
    }

    fn decay() -> DecayParams {
        DecayParams {
            w: vec![0.5, 0.5],
            b: vec![0.1, 0.1],
        }
    }

    #[test]
    fn fully_observed_dimension_reproduces_bins() {
        let g = make_grid(4.0, 5).unwrap();
        let vals = [1.0, -1.0, 2.5, 0.0, 3.0];
        let b = case(vec![(0..5).map(|k| (k as f64, vals[k])).collect(), vec![]]);
        let means = [0.7, -0.2];
        for variant in [BaselineVariant::M, BaselineVariant::F, BaselineVariant::D] {
            let inp = build_baseline_input(&b.case(0), &g, variant, &means, Some(&decay())).unwrap();
            for (k, &v) in vals.iter().enumerate() {
                assert_eq!(inp.sequence[[k, 0]], v, "{variant:?}");
            }
        }
        let s = build_baseline_input(&b.case(0), &g, BaselineVariant::S, &means, None).unwrap();
        for (k, &v) in vals.iter().enumerate() {
            assert_eq!(s.sequence[[k, 0]], v);
            assert_eq!(s.sequence[[k, 2]], 1.0);
            assert_eq!(s.sequence[[k, 4]], 0.0);
        }
    }

    #[test]
    fn never_observed_dimension_uses_mean() {
        let g = make_grid(4.0, 5).unwrap();
        let b = case(vec![vec![(1.0, 9.0)], vec![]]);
        let means = [0.0, -0.4];
        for variant in [BaselineVariant::M, BaselineVariant::F, BaselineVariant::D] {
            let inp = build_baseline_input(&b.case(0), &g, variant, &means, Some(&decay())).unwrap();
            assert!((0..5).all(|k| inp.sequence[[k, 1]] == -0.4), "{variant:?}");
        }
        let s = build_baseline_input(&b.case(0), &g, BaselineVariant::S, &means, None).unwrap();
        for k in 0..5 {
            assert_eq!(s.sequence[[k, 3]], 0.0);
            assert_eq!(s.sequence[[k, 5]], k as f64);
        }
    }

    #[test]
    fn decay_scalar_oracle() {
        let g = make_grid(4.0, 5).unwrap();
        let b = case(vec![vec![(2.0, 2.0)]]);
        let decay = DecayParams {
            w: vec![1.0],
            b: vec![0.0],
        };
        let inp = build_baseline_input(&b.case(0), &g, BaselineVariant::D, &[0.0], Some(&decay)).unwrap();
        assert_eq!(inp.sequence[[2, 0]], 2.0);
        assert!((inp.sequence[[3, 0]] - 0.735_758_882_342_884_6).abs() < 1e-15);
        assert!((inp.sequence[[4, 0]] - 2.0 * (-2.0f64).exp()).abs() < 1e-15);
        // before the first observation: mean
        assert_eq!(inp.sequence[[1, 0]], 0.0);
    }

    #[test]
    fn latest_observation_wins_in_bin() {
        let g = make_grid(4.0, 5).unwrap();
        let b = case(vec![vec![(0.8, 1.0), (1.2, 5.0)]]);
        let inp = build_baseline_input(&b.case(0), &g, BaselineVariant::M, &[0.0], None).unwrap();
        assert_eq!(inp.sequence[[1, 0]], 5.0);
    }
}
