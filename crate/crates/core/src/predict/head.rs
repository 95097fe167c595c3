//! Output heads on top of the final GRU state.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;

use super::gru::sigmoid;
use crate::data::Task;

/// Width of the dense layer in the regression head.
pub const REGRESSION_HIDDEN: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub enum HeadParams {
    /// Logistic layer: `p = sigmoid(h . w + b)`.
    Classification { w: Array1<f64>, b: f64 },
    /// `y = tanh(h W1 + b1) . w2 + b2`.
    Regression {
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array1<f64>,
        b2: f64,
    },
}

impl HeadParams {
    pub fn zeros(task: Task, hidden: usize) -> Self {
        match task {
            Task::Classification => HeadParams::Classification {
                w: Array1::zeros(hidden),
                b: 0.0,
            },
            Task::Regression => HeadParams::Regression {
                w1: Array2::zeros((hidden, REGRESSION_HIDDEN)),
                b1: Array1::zeros(REGRESSION_HIDDEN),
                w2: Array1::zeros(REGRESSION_HIDDEN),
                b2: 0.0,
            },
        }
    }

    pub fn init<R: Rng>(task: Task, hidden: usize, rng: &mut R) -> Self {
        let mut head = Self::zeros(task, hidden);
        let b_in = 1.0 / (hidden as f64).sqrt();
        match &mut head {
            HeadParams::Classification { w, .. } => {
                w.iter_mut().for_each(|v| *v = rng.random_range(-b_in..=b_in));
            }
            HeadParams::Regression { w1, w2, .. } => {
                w1.iter_mut().for_each(|v| *v = rng.random_range(-b_in..=b_in));
                let b_mid = 1.0 / (REGRESSION_HIDDEN as f64).sqrt();
                w2.iter_mut().for_each(|v| *v = rng.random_range(-b_mid..=b_mid));
            }
        }
        head
    }

    pub fn task(&self) -> Task {
        match self {
            HeadParams::Classification { .. } => Task::Classification,
            HeadParams::Regression { .. } => Task::Regression,
        }
    }

    pub fn view(&self) -> HeadWeights<'_> {
        match self {
            HeadParams::Classification { w, b } => HeadWeights::Classification { w: w.view(), b: *b },
            HeadParams::Regression { w1, b1, w2, b2 } => HeadWeights::Regression {
                w1: w1.view(),
                b1: b1.view(),
                w2: w2.view(),
                b2: *b2,
            },
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum HeadWeights<'a> {
    Classification {
        w: ArrayView1<'a, f64>,
        b: f64,
    },
    Regression {
        w1: ArrayView2<'a, f64>,
        b1: ArrayView1<'a, f64>,
        w2: ArrayView1<'a, f64>,
        b2: f64,
    },
}

pub enum HeadGradsMut<'a> {
    Classification {
        w: ArrayViewMut1<'a, f64>,
        b: &'a mut f64,
    },
    Regression {
        w1: ArrayViewMut2<'a, f64>,
        b1: ArrayViewMut1<'a, f64>,
        w2: ArrayViewMut1<'a, f64>,
        b2: &'a mut f64,
    },
}

/// Batched head output: logits for classification, predictions for
/// regression, plus the dense activations when present.
#[derive(Clone, Debug)]
pub struct HeadTrace {
    pub output: Array1<f64>,
    dense: Option<Array2<f64>>,
}

pub fn head_forward_batch(hidden: &Array2<f64>, head: &HeadWeights<'_>) -> HeadTrace {
    match head {
        HeadWeights::Classification { w, b } => HeadTrace {
            output: hidden.dot(w) + *b,
            dense: None,
        },
        HeadWeights::Regression { w1, b1, w2, b2 } => {
            let dense = (hidden.dot(w1) + b1).mapv(f64::tanh);
            HeadTrace {
                output: dense.dot(w2) + *b2,
                dense: Some(dense),
            }
        }
    }
}

/// Accumulates head gradients from `d_output` and returns the gradient with
/// respect to `hidden`.
pub fn head_backward_batch(
    hidden: &Array2<f64>,
    head: &HeadWeights<'_>,
    trace: &HeadTrace,
    d_output: &Array1<f64>,
    grads: &mut HeadGradsMut<'_>,
) -> Array2<f64> {
    match (head, grads) {
        (HeadWeights::Classification { w, .. }, HeadGradsMut::Classification { w: gw, b: gb }) => {
            gw.scaled_add(1.0, &hidden.t().dot(d_output));
            **gb += d_output.sum();
            let d_out = d_output.view().insert_axis(Axis(1));
            d_out.dot(&w.view().insert_axis(Axis(0)))
        }
        (
            HeadWeights::Regression { w1, w2, .. },
            HeadGradsMut::Regression {
                w1: gw1,
                b1: gb1,
                w2: gw2,
                b2: gb2,
            },
        ) => {
            let dense = trace.dense.as_ref().expect("regression trace");
            gw2.scaled_add(1.0, &dense.t().dot(d_output));
            **gb2 += d_output.sum();
            let d_out = d_output.view().insert_axis(Axis(1));
            let mut d_pre = d_out.dot(&w2.view().insert_axis(Axis(0)));
            d_pre.zip_mut_with(dense, |g, a| *g *= 1.0 - a * a);
            gw1.scaled_add(1.0, &hidden.t().dot(&d_pre));
            gb1.scaled_add(1.0, &d_pre.sum_axis(Axis(0)));
            d_pre.dot(&w1.t())
        }
        _ => panic!("head weights and gradients disagree on task"),
    }
}

/// Probability for classification, log-days for regression.
pub fn head_forward(hidden: ArrayView1<'_, f64>, head: &HeadParams, task: Task) -> f64 {
    assert_eq!(task, head.task(), "head does not match task");
    let h = hidden.to_owned().insert_axis(Axis(0));
    let out = head_forward_batch(&h, &head.view()).output[0];
    match task {
        Task::Classification => sigmoid(out),
        Task::Regression => out,
    }
}
