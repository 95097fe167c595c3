//! Experiment configuration, runners and reports behind the command-line
//! interface.

pub mod config;
pub mod experiment;
pub mod report;

pub use config::ExperimentConfig;
pub use experiment::{
    all_channel_subsets, fit, init_model, run_ablation, run_cv, run_eval, run_train, TrainPaths, TrainSummary,
};
pub use report::{CvReport, DatasetInfo, Manifest, ModelResult};
