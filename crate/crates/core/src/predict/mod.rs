//! Prediction networks: a GRU over the grid-aligned input, a task head, and
//! the input builders for the GRU baselines.

pub mod baseline;
pub mod gru;
pub mod head;

pub use baseline::{
    baseline_features, bin_case, build_baseline_input, BaselineInput, BaselineVariant, BinnedCase, DecayParams,
};
pub use gru::{gru_forward, GruParams, GruWeights};
pub use head::{head_forward, HeadParams, REGRESSION_HIDDEN};
