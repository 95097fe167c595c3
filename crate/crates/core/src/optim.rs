//! Flat parameter storage, gradient bookkeeping, Adam and a central
//! finite-difference gradient checker.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which L2 penalty a parameter falls under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Interpolation network (`lambda_I`).
    Interp,
    /// Prediction network weights (`lambda_P`).
    Predict,
    /// Biases and other unpenalised parameters.
    Free,
}

impl ParamGroup {
    pub fn code(&self) -> u8 {
        match self {
            ParamGroup::Interp => 0,
            ParamGroup::Predict => 1,
            ParamGroup::Free => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(ParamGroup::Interp),
            1 => Some(ParamGroup::Predict),
            2 => Some(ParamGroup::Free),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    /// Adam first moment.
    pub m: Vec<f64>,
    /// Adam second moment.
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    pub step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], value: Vec<f64>, group: ParamGroup) -> ParamId {
        let n: usize = shape.iter().product();
        assert_eq!(n, value.len(), "parameter value does not match its shape");
        self.params.push(Param {
            name: name.into(),
            shape: shape.to_vec(),
            group,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].value
    }

    pub fn vector(&self, id: ParamId) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[id.0].value[..])
    }

    pub fn matrix(&self, id: ParamId) -> ArrayView2<'_, f64> {
        let p = &self.params[id.0];
        ArrayView2::from_shape((p.shape[0], p.shape[1]), &p.value).expect("matrix parameter")
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Sum of squares of every parameter in `group`.
    pub fn squared_norm(&self, group: ParamGroup) -> f64 {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .flat_map(|p| p.value.iter())
            .map(|v| v * v)
            .sum()
    }

    pub fn group_values(&self, group: ParamGroup) -> Vec<f64> {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .flat_map(|p| p.value.iter().copied())
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn set_grads(&mut self, grads: &Gradients) {
        for (p, g) in self.params.iter_mut().zip(&grads.slots) {
            p.grad.copy_from_slice(g);
        }
    }

    /// Copies parameter values (not moments) from `other`, which must share
    /// the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) {
        for (p, o) in self.params.iter_mut().zip(&other.params) {
            p.value.copy_from_slice(&o.value);
        }
    }
}

/// Gradient buffers laid out like a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    slots: Vec<Vec<f64>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            slots: store.params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            shapes: store.params.iter().map(|p| p.shape.clone()).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.slots[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.slots[id.0]
    }

    pub fn matrix_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, f64> {
        let shape = (self.shapes[id.0][0], self.shapes[id.0][1]);
        ArrayViewMut2::from_shape(shape, &mut self.slots[id.0]).expect("matrix gradient")
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.slots.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn slots(&self) -> &[Vec<f64>] {
        &self.slots
    }
}

/// A scalar loss over the parameters of a store.
pub trait Objective {
    fn loss(&self, store: &ParamStore) -> Result<f64>;

    /// Returns the loss and writes its gradient into `grads`, which arrives
    /// zeroed.
    fn loss_and_grad(&self, store: &ParamStore, grads: &mut Gradients) -> Result<f64>;
}

/// Evaluates the loss and fills the store's gradient slots.
pub fn compute_gradients<O: Objective + ?Sized>(objective: &O, store: &mut ParamStore) -> Result<f64> {
    let mut grads = Gradients::zeros_like(store);
    let loss = objective.loss_and_grad(store, &mut grads)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    for (p, g) in store.params.iter().zip(&grads.slots) {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {}[{i}]", p.name)));
        }
    }
    store.set_grads(&grads);
    Ok(loss)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update; clears the gradients afterwards.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) {
    store.step += 1;
    let t = store.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for p in &mut store.params {
        for i in 0..p.value.len() {
            let g = p.grad[i];
            p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
            p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = p.m[i] / c1;
            let v_hat = p.v[i] / c2;
            p.value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            p.grad[i] = 0.0;
        }
    }
}

/// Relative-error denominators never drop below this, so coordinates whose
/// true gradient is ~0 are judged on absolute error instead.
pub const FD_REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FdEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FdReport {
    /// Worst coordinate of every parameter.
    pub per_param: Vec<FdEntry>,
    pub worst: Option<FdEntry>,
    pub tol: f64,
    pub passed: bool,
}

impl std::fmt::Display for FdReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for e in &self.per_param {
            writeln!(
                f,
                "{:>16}[{}]  analytic={:+.6e}  numeric={:+.6e}  rel={:.2e}",
                e.param, e.index, e.analytic, e.numeric, e.rel_error
            )?;
        }
        match &self.worst {
            Some(w) => write!(
                f,
                "{} (tol {:.0e}); worst {}[{}] rel={:.2e}",
                if self.passed { "PASS" } else { "FAIL" },
                self.tol,
                w.param,
                w.index,
                w.rel_error
            ),
            None => write!(f, "PASS (no parameters)"),
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_REL_FLOOR)
}

/// Compares analytic gradients with central differences at step `h`.
pub fn finite_diff_check<O: Objective + ?Sized>(
    objective: &O,
    store: &ParamStore,
    h: f64,
    tol: f64,
) -> Result<FdReport> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut grads = Gradients::zeros_like(store);
    objective.loss_and_grad(store, &mut grads)?;
    let mut probe = store.clone();
    let mut per_param = Vec::with_capacity(store.len());
    for (pi, p) in store.params.iter().enumerate() {
        let mut worst: Option<FdEntry> = None;
        for i in 0..p.value.len() {
            let orig = p.value[i];
            probe.params[pi].value[i] = orig + h;
            let up = objective.loss(&probe)?;
            probe.params[pi].value[i] = orig - h;
            let down = objective.loss(&probe)?;
            probe.params[pi].value[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.slots[pi][i];
            let rel = relative_error(analytic, numeric);
            if worst.as_ref().is_none_or(|w| rel > w.rel_error || rel.is_nan()) {
                worst = Some(FdEntry {
                    param: p.name.clone(),
                    index: i,
                    analytic,
                    numeric,
                    rel_error: rel,
                });
            }
        }
        if let Some(w) = worst {
            per_param.push(w);
        }
    }
    let worst = per_param
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .cloned();
    let passed = per_param.iter().all(|e| e.rel_error <= tol);
    Ok(FdReport {
        per_param,
        worst,
        tol,
        passed,
    })
}
