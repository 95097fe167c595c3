//! Interpolation-prediction networks for sparse, irregularly sampled
//! multivariate time series.
//!
//! A semi-parametric RBF interpolation network ([`interp`]) maps each case
//! onto a regular reference grid as three channels (smooth, transient,
//! intensity); a GRU prediction network ([`predict`]) consumes the grid.
//! Both are trained end to end on a supervised loss plus a masked
//! reconstruction loss ([`objective`]).

pub mod checkpoint;
pub mod data;
pub mod dataio;
pub mod error;
pub mod harness;
pub mod interp;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod optim;
pub mod predict;
pub mod train;

pub use error::{Error, Result};
