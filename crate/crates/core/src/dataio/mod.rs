//! Dataset files, the synthetic generator and fold splitting.

pub mod folds;
pub mod loader;
pub mod synth;

pub use folds::{kfold_split, kfold_split_labels, Fold};
pub use loader::{
    load_dataset, load_from_paths, summarize, write_dataset, Dataset, DatasetPaths, DatasetSummary, LoadReport, Schema,
};
pub use synth::{generate_synthetic, SynthConfig};
