//! Synthetic sparse clinical-style time series.
//!
//! Each case has a latent smooth trajectory per dimension (a shared factor
//! plus a per-dimension component, both low-frequency sinusoid mixtures).
//! Class membership can act through three independent knobs:
//!
//! * `trend_effect` shifts every latent trajectory,
//! * `transient_effect` adds short Gaussian bumps,
//! * `intensity_effect` scales the observation rate.
//!
//! Measurement events follow an inhomogeneous Poisson process with a daily
//! rhythm; each event observes every dimension independently with a
//! probability calibrated so that the missing fraction over the union of
//! timestamps hits the configured target.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::loader::{Dataset, Schema, ICU_VARIABLES};
use crate::data::{Label, Observation, SparseSeries, Task, DEFAULT_WINDOW_HOURS};
use crate::error::{Error, Result};

/// Missing fractions (over union timestamps) of the twelve ICU variables.
pub const ICU_MISSING: [f64; 12] = [
    0.3135, 0.2323, 0.5948, 0.4976, 0.4873, 0.8380, 0.8794, 0.9508, 0.8247, 0.9482, 0.9147, 0.9625,
];

/// Rate of measurement events per hour implied by the ICU sampling rates.
pub const ICU_EVENT_RATE: f64 = 1.17;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_cases: usize,
    pub dims: usize,
    pub window: f64,
    /// Measurement events per hour for class 0.
    pub event_rate: f64,
    /// Target missing fraction per dimension.
    pub missing: Vec<f64>,
    /// Probability of class 1.
    pub class_balance: f64,
    pub seed: u64,
    pub task: Task,
    /// Latent shift of class 1, in latent standard deviations.
    pub trend_effect: f64,
    /// Peak height of class-1 bumps, in latent standard deviations.
    pub transient_effect: f64,
    /// Expected number of bumps per class-1 case.
    pub bumps_per_case: f64,
    /// Bump width (standard deviation, hours).
    pub bump_width: f64,
    /// Relative increase of the observation rate for class 1.
    pub intensity_effect: f64,
    /// Measurement noise, in latent standard deviations.
    pub noise: f64,
    /// Regression target: `intercept + scale * mean_t latent_0(t) + N(0, noise^2)`.
    pub regression_intercept: f64,
    pub regression_scale: f64,
    pub regression_noise: f64,
}

impl SynthConfig {
    /// ICU-like sparsity with signal planted in every channel.
    pub fn new(n_cases: usize, dims: usize, seed: u64) -> Self {
        Self {
            n_cases,
            dims,
            window: DEFAULT_WINDOW_HOURS,
            event_rate: ICU_EVENT_RATE,
            missing: (0..dims).map(|d| ICU_MISSING[d % ICU_MISSING.len()]).collect(),
            class_balance: 0.5,
            seed,
            task: Task::Classification,
            trend_effect: 0.4,
            transient_effect: 2.0,
            bumps_per_case: 2.0,
            bump_width: 1.0,
            intensity_effect: 0.3,
            noise: 1.0,
            regression_intercept: 1.2,
            regression_scale: 0.6,
            regression_noise: 0.1,
        }
    }

    /// Same sampling regime with no class-dependent effect at all.
    pub fn null(mut self) -> Self {
        self.trend_effect = 0.0;
        self.transient_effect = 0.0;
        self.intensity_effect = 0.0;
        self
    }

    pub fn trend_only(mut self, effect: f64) -> Self {
        self = self.null();
        self.trend_effect = effect;
        self
    }

    pub fn intensity_only(mut self, effect: f64) -> Self {
        self = self.null();
        self.intensity_effect = effect;
        self
    }

    /// Overrides one field by name; the value is read as JSON, so numbers,
    /// `[..]` lists and quoted strings all work.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut obj = serde_json::to_value(&*self)?;
        let map = obj.as_object_mut().expect("struct serializes to an object");
        let key = key.trim();
        if !map.contains_key(key) {
            let known: Vec<&str> = map.keys().map(String::as_str).collect();
            return Err(Error::Config(format!(
                "unknown synthetic parameter '{key}' (known: {})",
                known.join(", ")
            )));
        }
        let v: serde_json::Value =
            serde_json::from_str(value.trim()).unwrap_or_else(|_| serde_json::Value::String(value.trim().to_string()));
        map.insert(key.to_string(), v);
        *self = serde_json::from_value(obj).map_err(|e| Error::Config(format!("bad value for {key}: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_cases == 0 || self.dims == 0 {
            return err("n_cases and dims must be positive".into());
        }
        if self.missing.len() != self.dims {
            return err(format!(
                "{} missing fractions for {} dims",
                self.missing.len(),
                self.dims
            ));
        }
        if self.missing.iter().any(|&m| !(0.0..1.0).contains(&m)) {
            return err("missing fractions must lie in [0, 1)".into());
        }
        if self.dims > 1 && self.missing.iter().map(|m| 1.0 - m).sum::<f64>() < 1.0 {
            return err(
                "every union timestamp observes some dimension, so the observed fractions must sum to at least 1"
                    .into(),
            );
        }
        if !(self.event_rate > 0.0) || !(self.window > 0.0) {
            return err("event rate and window must be positive".into());
        }
        if !(self.class_balance > 0.0 && self.class_balance < 1.0) {
            return err("class balance must lie in (0, 1)".into());
        }
        if self.intensity_effect <= -1.0 || self.noise < 0.0 || self.bump_width <= 0.0 {
            return err("intensity effect must exceed -1, noise >= 0, bump width > 0".into());
        }
        Ok(())
    }

    /// Per-event inclusion probability of each dimension.
    pub fn inclusion_probabilities(&self) -> Vec<f64> {
        calibrate_inclusion(&self.missing)
    }

    /// Expected observations per hour of each dimension for class 0.
    pub fn sampling_rates(&self) -> Vec<f64> {
        self.inclusion_probabilities()
            .iter()
            .map(|p| self.event_rate * p)
            .collect()
    }
}

/// Solves for inclusion probabilities `p` with
/// `(1 - p_d) (1 - Q_{-d}) / (1 - Q) = m_d`, `Q = prod (1 - p)`: the missing
/// fraction of `d` among events where at least one dimension is observed.
pub fn calibrate_inclusion(missing: &[f64]) -> Vec<f64> {
    if missing.len() == 1 {
        return vec![1.0];
    }
    let mut p: Vec<f64> = missing.iter().map(|m| 1.0 - m).collect();
    for _ in 0..500 {
        let q: f64 = p.iter().map(|x| 1.0 - x).product();
        let next: Vec<f64> = p
            .iter()
            .zip(missing)
            .map(|(&pd, &m)| {
                let q_other: f64 = if pd < 1.0 { q / (1.0 - pd) } else { 0.0 };
                let den = 1.0 - q_other;
                if den <= 0.0 {
                    1.0
                } else {
                    (1.0 - m * (1.0 - q) / den).clamp(1e-9, 1.0)
                }
            })
            .collect();
        let delta: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        p = next;
        if delta < 1e-14 {
            break;
        }
    }
    p
}

/// Random smooth function on the window: two sinusoids with periods between
/// 16 hours and two windows.
struct SmoothCurve {
    amp: [f64; 2],
    freq: [f64; 2],
    phase: [f64; 2],
}

impl SmoothCurve {
    fn sample<R: Rng>(rng: &mut R, window: f64, scale: f64) -> Self {
        let n = Normal::new(0.0, scale).expect("valid normal");
        let mut draw = || {
            (
                n.sample(rng),
                rng.random_range(0.5 / window..=3.0 / window),
                rng.random_range(0.0..2.0 * PI),
            )
        };
        let (a0, f0, p0) = draw();
        let (a1, f1, p1) = draw();
        Self {
            amp: [a0, a1],
            freq: [f0, f1],
            phase: [p0, p1],
        }
    }

    fn eval(&self, t: f64) -> f64 {
        (0..2)
            .map(|i| self.amp[i] * (2.0 * PI * self.freq[i] * t + self.phase[i]).sin())
            .sum()
    }
}

struct Bump {
    dim: usize,
    center: f64,
    height: f64,
}

struct Latent {
    shared: SmoothCurve,
    loading: Vec<f64>,
    own: Vec<SmoothCurve>,
    shift: f64,
    bumps: Vec<Bump>,
    width: f64,
}

impl Latent {
    fn eval(&self, d: usize, t: f64) -> f64 {
        let mut v = self.loading[d] * self.shared.eval(t) + self.own[d].eval(t) + self.shift;
        for b in self.bumps.iter().filter(|b| b.dim == d) {
            v += b.height * (-(t - b.center).powi(2) / (2.0 * self.width * self.width)).exp();
        }
        v
    }
}

/// Draws event times on `[0, window]` by thinning, with a daily rhythm of
/// +-50% around `rate`.
fn event_times<R: Rng>(rng: &mut R, rate: f64, window: f64) -> Vec<f64> {
    let phase = rng.random_range(0.0..2.0 * PI);
    let peak = 1.5 * rate;
    let gap = Exp::new(peak).expect("positive rate");
    let mut t = 0.0;
    let mut out = Vec::new();
    loop {
        t += gap.sample(rng);
        if t > window {
            break;
        }
        let lambda = rate * (1.0 + 0.5 * (2.0 * PI * t / 24.0 + phase).cos());
        if rng.random::<f64>() * peak < lambda {
            out.push(t);
        }
    }
    out
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inclusion = cfg.inclusion_probabilities();
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).expect("valid noise");
    let reg_noise = Normal::new(0.0, cfg.regression_noise.max(0.0)).expect("valid noise");
    // fixed per-dataset units so raw values look like mixed-unit vitals
    let offsets: Vec<f64> = (0..cfg.dims).map(|_| rng.random_range(-50.0..150.0)).collect();
    let scales: Vec<f64> = (0..cfg.dims).map(|_| rng.random_range(0.5..20.0)).collect();
    let width = cfg.n_cases.to_string().len();

    let mut cases = Vec::with_capacity(cfg.n_cases);
    for n in 0..cfg.n_cases {
        let class = u8::from(rng.random::<f64>() < cfg.class_balance);
        let c = class as f64;
        let mut bumps = Vec::new();
        if class == 1 && cfg.transient_effect != 0.0 {
            let count = if cfg.bumps_per_case > 0.0 {
                Poisson::new(cfg.bumps_per_case)
                    .expect("positive mean")
                    .sample(&mut rng) as usize
            } else {
                0
            };
            for _ in 0..count {
                bumps.push(Bump {
                    dim: rng.random_range(0..cfg.dims),
                    center: rng.random_range(0.0..cfg.window),
                    height: cfg.transient_effect,
                });
            }
        }
        let latent = Latent {
            shared: SmoothCurve::sample(&mut rng, cfg.window, 0.6),
            loading: (0..cfg.dims).map(|_| rng.random_range(0.5..1.0)).collect(),
            own: (0..cfg.dims)
                .map(|_| SmoothCurve::sample(&mut rng, cfg.window, 0.4))
                .collect(),
            shift: cfg.trend_effect * c,
            bumps,
            width: cfg.bump_width,
        };

        let rate = cfg.event_rate * (1.0 + cfg.intensity_effect * c);
        let mut dims = vec![Vec::new(); cfg.dims];
        for t in event_times(&mut rng, rate, cfg.window) {
            for (d, &p) in inclusion.iter().enumerate() {
                if rng.random::<f64>() < p {
                    let x = latent.eval(d, t) + noise.sample(&mut rng);
                    dims[d].push(Observation::new(t, offsets[d] + scales[d] * x));
                }
            }
        }

        let label = match cfg.task {
            Task::Classification => Label::Class(class),
            Task::Regression => {
                // time average of the noiseless latent of dim 0 on a fine grid
                let steps = 480;
                let avg = (0..=steps)
                    .map(|i| latent.eval(0, cfg.window * i as f64 / steps as f64))
                    .sum::<f64>()
                    / (steps + 1) as f64;
                Label::Regression(cfg.regression_intercept + cfg.regression_scale * avg + reg_noise.sample(&mut rng))
            }
        };
        cases.push(SparseSeries::new(format!("case{n:0width$}"), dims, label, cfg.window)?);
    }
    let names = (0..cfg.dims)
        .map(|d| {
            if cfg.dims <= ICU_VARIABLES.len() {
                ICU_VARIABLES[d].to_string()
            } else {
                format!("var{d}")
            }
        })
        .collect();
    Ok(Dataset {
        cases,
        schema: Schema::new(names, cfg.task, cfg.window),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_hits_targets_in_expectation() {
        let m = ICU_MISSING[..6].to_vec();
        let p = calibrate_inclusion(&m);
        let q: f64 = p.iter().map(|x| 1.0 - x).product();
        for d in 0..6 {
            let q_other = q / (1.0 - p[d]);
            let realised = (1.0 - p[d]) * (1.0 - q_other) / (1.0 - q);
            assert!((realised - m[d]).abs() < 1e-9, "dim {d}: {realised} vs {}", m[d]);
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let cfg = SynthConfig::new(20, 4, 9);
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SynthConfig::new(20, 4, 10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn set_overrides_named_fields() {
        let mut cfg = SynthConfig::new(10, 2, 1);
        cfg.set("noise", "1.5").unwrap();
        cfg.set("missing", "[0.2, 0.4]").unwrap();
        cfg.set("task", "regression").unwrap();
        assert_eq!(cfg.noise, 1.5);
        assert_eq!(cfg.missing, vec![0.2, 0.4]);
        assert_eq!(cfg.task, Task::Regression);
        assert!(cfg.set("nois", "1").is_err());
        assert!(cfg.set("noise", "loud").is_err());
    }

    #[test]
    fn rejects_infeasible_missingness() {
        let mut cfg = SynthConfig::new(10, 3, 1);
        cfg.missing = vec![0.9, 0.9, 0.9];
        assert!(cfg.validate().is_err());
    }
}
