//! Single-layer GRU, batched over cases.
//!
//! Gate layout along the `3H` axis is `[update | reset | candidate]`:
//!
//! ```text
//! z  = sigmoid(x Wz + h Uz + bz)
//! r  = sigmoid(x Wr + h Ur + br)
//! n  = tanh(x Wn + (r * h) Un + bn)
//! h' = (1 - z) * n + z * h
//! ```

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Owned GRU weights.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    /// F x 3H.
    pub w_input: Array2<f64>,
    /// H x 3H.
    pub w_hidden: Array2<f64>,
    /// 3H.
    pub bias: Array1<f64>,
}

impl GruParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            w_input: Array2::zeros((input_size, 3 * hidden_size)),
            w_hidden: Array2::zeros((hidden_size, 3 * hidden_size)),
            bias: Array1::zeros(3 * hidden_size),
        }
    }

    /// Uniform in `[-1/sqrt(H), 1/sqrt(H)]`, the usual recurrent default.
    pub fn init<R: Rng>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden_size as f64).sqrt();
        let mut p = Self::zeros(input_size, hidden_size);
        for v in p
            .w_input
            .iter_mut()
            .chain(p.w_hidden.iter_mut())
            .chain(p.bias.iter_mut())
        {
            *v = rng.random_range(-bound..=bound);
        }
        p
    }

    pub fn input_size(&self) -> usize {
        self.w_input.nrows()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hidden.nrows()
    }

    pub fn view(&self) -> GruWeights<'_> {
        GruWeights {
            w_input: self.w_input.view(),
            w_hidden: self.w_hidden.view(),
            bias: self.bias.view(),
        }
    }
}

/// Borrowed GRU weights, e.g. straight out of a parameter store.
#[derive(Clone, Copy, Debug)]
pub struct GruWeights<'a> {
    pub w_input: ArrayView2<'a, f64>,
    pub w_hidden: ArrayView2<'a, f64>,
    pub bias: ArrayView1<'a, f64>,
}

impl GruWeights<'_> {
    pub fn hidden_size(&self) -> usize {
        self.w_hidden.nrows()
    }

    pub fn input_size(&self) -> usize {
        self.w_input.nrows()
    }
}

/// Gradient buffers matching [`GruWeights`].
pub struct GruGradsMut<'a> {
    pub w_input: ArrayViewMut2<'a, f64>,
    pub w_hidden: ArrayViewMut2<'a, f64>,
    pub bias: ArrayViewMut1<'a, f64>,
}

#[derive(Clone, Debug)]
struct StepCache {
    h_prev: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    n: Array2<f64>,
}

/// Forward activations of a batched run, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct GruTrace {
    steps: Vec<StepCache>,
    /// Hidden state after each step, each B x H.
    pub hidden: Vec<Array2<f64>>,
}

impl GruTrace {
    pub fn final_hidden(&self) -> &Array2<f64> {
        self.hidden.last().expect("GRU run over an empty sequence")
    }
}

/// Runs the recurrence over `inputs` (one B x F matrix per time step) from a
/// zero initial state.
pub fn gru_forward_batch(inputs: &[Array2<f64>], w: &GruWeights<'_>) -> Result<GruTrace> {
    let h_size = w.hidden_size();
    let batch = inputs.first().map_or(0, |x| x.nrows());
    if inputs.is_empty() {
        return Err(Error::Shape("GRU input sequence is empty".into()));
    }
    let u_zr = w.w_hidden.slice(s![.., ..2 * h_size]);
    let u_n = w.w_hidden.slice(s![.., 2 * h_size..]);
    let mut h = Array2::<f64>::zeros((batch, h_size));
    let mut steps = Vec::with_capacity(inputs.len());
    let mut hidden = Vec::with_capacity(inputs.len());
    for (t, x) in inputs.iter().enumerate() {
        if x.ncols() != w.input_size() || x.nrows() != batch {
            return Err(Error::Shape(format!(
                "GRU step {t}: input is {:?}, expected ({batch}, {})",
                x.dim(),
                w.input_size()
            )));
        }
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite(format!("GRU input at step {t}")));
        }
        let gx = x.dot(&w.w_input) + w.bias;
        let gh = h.dot(&u_zr);
        let mut z = Array2::zeros((batch, h_size));
        let mut r = Array2::zeros((batch, h_size));
        for b in 0..batch {
            for j in 0..h_size {
                z[[b, j]] = sigmoid(gx[[b, j]] + gh[[b, j]]);
                r[[b, j]] = sigmoid(gx[[b, h_size + j]] + gh[[b, h_size + j]]);
            }
        }
        let rh = &r * &h;
        let gn = rh.dot(&u_n);
        let mut n = Array2::zeros((batch, h_size));
        let mut h_next = Array2::zeros((batch, h_size));
        for b in 0..batch {
            for j in 0..h_size {
                let nv = (gx[[b, 2 * h_size + j]] + gn[[b, j]]).tanh();
                n[[b, j]] = nv;
                h_next[[b, j]] = (1.0 - z[[b, j]]) * nv + z[[b, j]] * h[[b, j]];
            }
        }
        steps.push(StepCache { h_prev: h, z, r, n });
        hidden.push(h_next.clone());
        h = h_next;
    }
    Ok(GruTrace { steps, hidden })
}

/// Backpropagates through time. `d_hidden` maps a step index to the
/// gradient arriving at that step's output (only the last is usual).
/// Accumulates weight gradients and returns input gradients per step.
pub fn gru_backward_batch(
    inputs: &[Array2<f64>],
    w: &GruWeights<'_>,
    trace: &GruTrace,
    d_final: &Array2<f64>,
    grads: &mut GruGradsMut<'_>,
) -> Vec<Array2<f64>> {
    let h_size = w.hidden_size();
    let u_zr = w.w_hidden.slice(s![.., ..2 * h_size]);
    let u_n = w.w_hidden.slice(s![.., 2 * h_size..]);
    let batch = d_final.nrows();
    let mut dh = d_final.clone();
    let mut d_inputs = vec![Array2::zeros((0, 0)); inputs.len()];
    for t in (0..inputs.len()).rev() {
        let c = &trace.steps[t];
        let mut d_pre = Array2::<f64>::zeros((batch, 3 * h_size));
        let mut dh_prev = Array2::<f64>::zeros((batch, h_size));
        for b in 0..batch {
            for j in 0..h_size {
                let g = dh[[b, j]];
                let (z, n, hp) = (c.z[[b, j]], c.n[[b, j]], c.h_prev[[b, j]]);
                d_pre[[b, j]] = g * (hp - n) * z * (1.0 - z);
                d_pre[[b, 2 * h_size + j]] = g * (1.0 - z) * (1.0 - n * n);
                dh_prev[[b, j]] = g * z;
            }
        }
        let dn_pre = d_pre.slice(s![.., 2 * h_size..]).to_owned();
        let d_rh = dn_pre.dot(&u_n.t());
        let rh = &c.r * &c.h_prev;
        grads
            .w_hidden
            .slice_mut(s![.., 2 * h_size..])
            .scaled_add(1.0, &rh.t().dot(&dn_pre));
        for b in 0..batch {
            for j in 0..h_size {
                let r = c.r[[b, j]];
                d_pre[[b, h_size + j]] = d_rh[[b, j]] * c.h_prev[[b, j]] * r * (1.0 - r);
                dh_prev[[b, j]] += d_rh[[b, j]] * r;
            }
        }
        let d_zr = d_pre.slice(s![.., ..2 * h_size]);
        grads
            .w_hidden
            .slice_mut(s![.., ..2 * h_size])
            .scaled_add(1.0, &c.h_prev.t().dot(&d_zr));
        dh_prev += &d_zr.dot(&u_zr.t());
        grads.w_input.scaled_add(1.0, &inputs[t].t().dot(&d_pre));
        grads.bias.scaled_add(1.0, &d_pre.sum_axis(Axis(0)));
        d_inputs[t] = d_pre.dot(&w.w_input.t());
        dh = dh_prev;
    }
    d_inputs
}

/// Runs one sequence (T x F); returns the T x H hidden states and the final
/// hidden vector.
pub fn gru_forward(seq: ArrayView2<'_, f64>, params: &GruParams) -> Result<(Array2<f64>, Array1<f64>)> {
    let inputs: Vec<Array2<f64>> = seq
        .outer_iter()
        .map(|row| row.to_owned().insert_axis(Axis(0)))
        .collect();
    let trace = gru_forward_batch(&inputs, &params.view())?;
    let h = params.hidden_size();
    let mut states = Array2::zeros((inputs.len(), h));
    for (t, hs) in trace.hidden.iter().enumerate() {
        states.row_mut(t).assign(&hs.row(0));
    }
    let last = trace.final_hidden().row(0).to_owned();
    Ok((states, last))
}
