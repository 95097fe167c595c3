//! Two-layer semi-parametric interpolation network.
//!
//! Layer one is a per-dimension RBF smoother
//! `x1[k,d] = sum_j w x_j / sum_j w` with `w = exp(-alpha_d (r_k - t_j)^2)`;
//! its unnormalised denominator doubles as the intensity channel. Layer two
//! mixes the layer-one interpolants across dimensions, weighting each source
//! dimension by its local intensity. Three channels come out per case:
//!
//! * smooth: layer two applied to the `alpha_d` interpolant,
//! * transient: the `kappa * alpha_d` layer-one interpolant minus smooth,
//! * intensity: the `alpha_d` kernel sums.
//!
//! Whenever a denominator is exactly zero the output is defined as zero and
//! no gradient flows through that cell.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CaseView, DenseBatch, Observation, ReferenceGrid};
use crate::error::{Error, Result};

pub const DEFAULT_KAPPA: f64 = 10.0;

/// Learnable interpolation parameters plus the fixed bandwidth ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpParams {
    /// `alpha_d = exp(log_alpha[d])`, in 1/hours^2.
    pub log_alpha: Vec<f64>,
    pub kappa: f64,
    /// Cross-dimension mixing coefficients, unconstrained.
    pub rho: Array2<f64>,
}

impl InterpParams {
    pub fn new(log_alpha: Vec<f64>, kappa: f64, rho: Array2<f64>) -> Result<Self> {
        let p = Self { log_alpha, kappa, rho };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 1.0) || !self.kappa.is_finite() {
            return Err(Error::Config(format!(
                "kappa must be a finite value > 1, got {}",
                self.kappa
            )));
        }
        let d = self.log_alpha.len();
        if self.rho.dim() != (d, d) {
            return Err(Error::Shape(format!(
                "rho is {:?}, expected ({d}, {d})",
                self.rho.dim()
            )));
        }
        if self.log_alpha.iter().chain(self.rho.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("interpolation parameters".into()));
        }
        Ok(())
    }

    /// Kernel length scale of twice the grid spacing, `rho` near identity.
    pub fn init<R: Rng>(dims: usize, grid: &ReferenceGrid, kappa: f64, rng: &mut R) -> Result<Self> {
        let alpha = 1.0 / (2.0 * grid.spacing).powi(2);
        let mut rho = Array2::eye(dims);
        for v in rho.iter_mut() {
            *v += rng.random_range(-0.01..=0.01);
        }
        Self::new(vec![alpha.ln(); dims], kappa, rho)
    }

    pub fn num_dims(&self) -> usize {
        self.log_alpha.len()
    }

    pub fn smooth_alpha(&self) -> Vec<f64> {
        self.log_alpha.iter().map(|la| la.exp()).collect()
    }

    pub fn transient_alpha(&self) -> Vec<f64> {
        self.log_alpha.iter().map(|la| self.kappa * la.exp()).collect()
    }
}

/// Interpolation output for one case; every array is D x T.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelGrid {
    pub smooth: Array2<f64>,
    pub transient: Array2<f64>,
    pub intensity: Array2<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Smooth,
    Transient,
    Intensity,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Smooth, Channel::Transient, Channel::Intensity];

    pub fn short_name(&self) -> &'static str {
        match self {
            Channel::Smooth => "SI",
            Channel::Transient => "T",
            Channel::Intensity => "I",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "si" | "smooth" | "s" => Ok(Channel::Smooth),
            "t" | "transient" => Ok(Channel::Transient),
            "i" | "intensity" => Ok(Channel::Intensity),
            other => Err(Error::Config(format!("unknown channel '{other}'"))),
        }
    }
}

impl ChannelGrid {
    pub fn channel(&self, c: Channel) -> &Array2<f64> {
        match c {
            Channel::Smooth => &self.smooth,
            Channel::Transient => &self.transient,
            Channel::Intensity => &self.intensity,
        }
    }
}

/// Kernel sums of one dimension at a set of evaluation points, together with
/// their derivatives with respect to `log alpha`.
///
/// `weight` and `d_weight` are the raw sums. The normalised interpolant and
/// its derivative only depend on weight ratios, so they are computed from
/// weights rescaled by the largest kernel value at each point, which keeps
/// full precision when every raw weight is subnormal.
#[derive(Clone, Debug, Default)]
struct KernelSums {
    weight: Vec<f64>,
    d_weight: Vec<f64>,
    value: Vec<f64>,
    d_value: Vec<f64>,
}

fn kernel_sums(obs: &[Observation], points: &[f64], alpha: f64) -> KernelSums {
    let k = points.len();
    let mut out = KernelSums {
        weight: vec![0.0; k],
        d_weight: vec![0.0; k],
        value: vec![0.0; k],
        d_value: vec![0.0; k],
    };
    for (i, &r) in points.iter().enumerate() {
        let q_max = obs
            .iter()
            .map(|o| -alpha * (r - o.time) * (r - o.time))
            .fold(f64::NEG_INFINITY, f64::max);
        let (mut s, mut ds) = (0.0, 0.0);
        let (mut z, mut n, mut dz, mut dn) = (0.0, 0.0, 0.0, 0.0);
        for o in obs {
            let q = -alpha * (r - o.time) * (r - o.time);
            let w = q.exp();
            s += w;
            ds += w * q;
            let u = (q - q_max).exp();
            z += u;
            n += u * o.value;
            dz += u * q;
            dn += u * q * o.value;
        }
        out.weight[i] = s;
        out.d_weight[i] = ds;
        if s > 0.0 {
            let x = n / z;
            out.value[i] = x;
            out.d_value[i] = (dn - x * dz) / z;
        }
    }
    out
}

/// Layer-one RBF interpolation of every dimension at `points`.
pub fn layer1_interpolate(case: &CaseView<'_>, points: &[f64], alpha: &[f64]) -> Array2<f64> {
    let obs = per_dim_observations(case);
    layer1_from_obs(&obs, points, alpha)
}

fn layer1_from_obs(obs: &[Vec<Observation>], points: &[f64], alpha: &[f64]) -> Array2<f64> {
    let mut out = Array2::zeros((obs.len(), points.len()));
    for (d, o) in obs.iter().enumerate() {
        let sums = kernel_sums(o, points, alpha[d]);
        for k in 0..points.len() {
            out[[d, k]] = sums.value[k];
        }
    }
    out
}

/// Unnormalised kernel sum per dimension: local observation density.
pub fn intensity(case: &CaseView<'_>, points: &[f64], alpha: &[f64]) -> Array2<f64> {
    let obs = per_dim_observations(case);
    let mut out = Array2::zeros((obs.len(), points.len()));
    for (d, o) in obs.iter().enumerate() {
        let sums = kernel_sums(o, points, alpha[d]);
        for k in 0..points.len() {
            out[[d, k]] = sums.weight[k];
        }
    }
    out
}

/// Intensity-weighted cross-dimension merge of layer-one interpolants.
pub fn layer2_interpolate(
    layer1: ArrayView2<'_, f64>,
    intensities: ArrayView2<'_, f64>,
    rho: ArrayView2<'_, f64>,
) -> Array2<f64> {
    let (dims, points) = layer1.dim();
    let mut out = Array2::zeros((dims, points));
    for k in 0..points {
        // rescaled by the largest intensity so tiny intensities keep precision
        let top = intensities.column(k).fold(0.0f64, |m, &v| m.max(v));
        if top == 0.0 {
            continue;
        }
        let z: f64 = intensities.column(k).iter().map(|v| v / top).sum();
        for d in 0..dims {
            let mut acc = 0.0;
            for e in 0..dims {
                acc += rho[[d, e]] * (intensities[[e, k]] / top) * layer1[[e, k]];
            }
            out[[d, k]] = acc / z;
        }
    }
    out
}

pub fn transient_residual(nonsmooth_layer1: ArrayView2<'_, f64>, smooth_layer2: ArrayView2<'_, f64>) -> Array2<f64> {
    &nonsmooth_layer1 - &smooth_layer2
}

pub fn interpolate_case(case: &CaseView<'_>, grid: &ReferenceGrid, params: &InterpParams) -> ChannelGrid {
    let obs = per_dim_observations(case);
    InterpForward::run(&obs, &grid.points, params, true).channels()
}

pub fn interpolate_batch(batch: &DenseBatch, grid: &ReferenceGrid, params: &InterpParams) -> Result<Vec<ChannelGrid>> {
    params.validate()?;
    if batch.num_dims() != params.num_dims() {
        return Err(Error::Shape(format!(
            "batch has {} dimensions, parameters expect {}",
            batch.num_dims(),
            params.num_dims()
        )));
    }
    Ok(batch.cases().map(|c| interpolate_case(&c, grid, params)).collect())
}

pub(crate) fn per_dim_observations(case: &CaseView<'_>) -> Vec<Vec<Observation>> {
    (0..case.num_dims()).map(|d| case.observations(d)).collect()
}

/// Forward pass that keeps what the backward pass needs.
#[derive(Clone, Debug)]
pub(crate) struct InterpForward {
    smooth_sums: Vec<KernelSums>,
    transient_sums: Option<Vec<KernelSums>>,
    /// Layer-one interpolant at the smooth bandwidth.
    layer1: Array2<f64>,
    layer1_transient: Option<Array2<f64>>,
    intensity: Array2<f64>,
    total_intensity: Vec<f64>,
    smooth: Array2<f64>,
    rho: Array2<f64>,
}

/// Gradients with respect to the interpolation parameters.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct InterpGrad {
    pub log_alpha: Vec<f64>,
    pub rho: Array2<f64>,
}

impl InterpGrad {
    pub fn zeros(dims: usize) -> Self {
        Self {
            log_alpha: vec![0.0; dims],
            rho: Array2::zeros((dims, dims)),
        }
    }
}

impl InterpForward {
    pub fn run(obs: &[Vec<Observation>], points: &[f64], params: &InterpParams, with_transient: bool) -> Self {
        let dims = obs.len();
        let k = points.len();
        let alpha = params.smooth_alpha();
        let smooth_sums: Vec<KernelSums> = obs
            .iter()
            .enumerate()
            .map(|(d, o)| kernel_sums(o, points, alpha[d]))
            .collect();
        let mut layer1 = Array2::zeros((dims, k));
        let mut inten = Array2::zeros((dims, k));
        for (d, s) in smooth_sums.iter().enumerate() {
            for i in 0..k {
                layer1[[d, i]] = s.value[i];
                inten[[d, i]] = s.weight[i];
            }
        }
        let smooth = layer2_interpolate(layer1.view(), inten.view(), params.rho.view());
        let total_intensity = (0..k).map(|i| inten.column(i).sum()).collect();

        let (transient_sums, layer1_transient) = if with_transient {
            let alpha2 = params.transient_alpha();
            let sums: Vec<KernelSums> = obs
                .iter()
                .enumerate()
                .map(|(d, o)| kernel_sums(o, points, alpha2[d]))
                .collect();
            let mut x12 = Array2::zeros((dims, k));
            for (d, s) in sums.iter().enumerate() {
                for i in 0..k {
                    x12[[d, i]] = s.value[i];
                }
            }
            (Some(sums), Some(x12))
        } else {
            (None, None)
        };

        Self {
            smooth_sums,
            transient_sums,
            layer1,
            layer1_transient,
            intensity: inten,
            total_intensity,
            smooth,
            rho: params.rho.clone(),
        }
    }

    pub fn smooth(&self) -> &Array2<f64> {
        &self.smooth
    }

    pub fn channels(self) -> ChannelGrid {
        let transient = match &self.layer1_transient {
            Some(x12) => transient_residual(x12.view(), self.smooth.view()),
            None => Array2::zeros(self.smooth.dim()),
        };
        ChannelGrid {
            smooth: self.smooth,
            transient,
            intensity: self.intensity,
        }
    }

    pub fn channel_grid(&self) -> ChannelGrid {
        self.clone().channels()
    }

    /// Accumulates parameter gradients given upstream gradients of each
    /// output channel (any may be omitted).
    pub fn backward(
        &self,
        g_smooth: Option<ArrayView2<'_, f64>>,
        g_transient: Option<ArrayView2<'_, f64>>,
        g_intensity: Option<ArrayView2<'_, f64>>,
        grad: &mut InterpGrad,
    ) {
        let (dims, k) = self.smooth.dim();
        let mut g_out = match g_smooth {
            Some(g) => g.to_owned(),
            None => Array2::zeros((dims, k)),
        };

        if let (Some(gt), Some(sums)) = (g_transient, &self.transient_sums) {
            g_out -= &gt;
            // d log(kappa * alpha) / d log(alpha) = 1
            for d in 0..dims {
                let s = &sums[d];
                for i in 0..k {
                    if s.weight[i] == 0.0 {
                        continue;
                    }
                    let dx = s.d_value[i];
                    grad.log_alpha[d] += gt[[d, i]] * dx;
                }
            }
        }

        let mut g_int = match g_intensity {
            Some(g) => g.to_owned(),
            None => Array2::zeros((dims, k)),
        };
        let mut g_x1 = Array2::<f64>::zeros((dims, k));
        for i in 0..k {
            let z = self.total_intensity[i];
            if z == 0.0 {
                continue;
            }
            let mut g_z = 0.0;
            for d in 0..dims {
                g_z -= g_out[[d, i]] * self.smooth[[d, i]];
            }
            g_z /= z;
            for e in 0..dims {
                let a = self.intensity[[e, i]] * self.layer1[[e, i]];
                let mut g_a = 0.0;
                for d in 0..dims {
                    let go = g_out[[d, i]];
                    grad.rho[[d, e]] += go * a / z;
                    g_a += go * self.rho[[d, e]];
                }
                g_a /= z;
                g_int[[e, i]] += g_a * self.layer1[[e, i]] + g_z;
                g_x1[[e, i]] += g_a * self.intensity[[e, i]];
            }
        }

        for d in 0..dims {
            let s = &self.smooth_sums[d];
            for i in 0..k {
                if s.weight[i] == 0.0 {
                    continue;
                }
                let dx = s.d_value[i];
                grad.log_alpha[d] += g_x1[[d, i]] * dx + g_int[[d, i]] * s.d_weight[i];
            }
        }
    }
}
