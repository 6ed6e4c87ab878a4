//! Gradient boosted regression trees with quantile histograms.
//!
//! The trainer grows trees leaf-wise under an L2 loss. Every feature is
//! discretised once into at most `max_bin` equal-frequency bins, and split
//! search runs over per-leaf gradient histograms (the larger child of a split
//! is obtained by subtracting the smaller child from its parent).
//!
//! Models carry the fingerprint of the feature schema they were trained on,
//! and the text serialisation in [`io`] round-trips every float bit-exactly.

pub mod binning;
pub mod io;
mod model;
mod tree;

pub use binning::BinMapper;
pub use model::{train, train_with_validation, GbdtModel, GbdtParams, TrainReport};
pub use tree::{Node, Tree};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GbdtError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("row {row} has {found} features, expected {expected}")]
    InconsistentRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("need at least {needed} rows (2 x min_data_in_leaf), got {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("input has {found} features, model expects {expected}")]
    FeatureCount { expected: usize, found: usize },
    #[error("schema fingerprint {found:016x} does not match model {expected:016x}")]
    SchemaMismatch { expected: u64, found: u64 },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GbdtError>;

/// Row-major feature matrix with targets.
#[derive(Debug, Clone)]
pub struct TrainSet {
    n_features: usize,
    values: Vec<f64>,
    targets: Vec<f64>,
}

impl TrainSet {
    pub fn new(n_features: usize) -> Self {
        TrainSet {
            n_features,
            values: Vec::new(),
            targets: Vec::new(),
        }
    }

    /// Builds a set from rows, rejecting rows whose length differs from the first.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], targets: &[f64]) -> Result<Self> {
        let first = rows.first().ok_or(GbdtError::EmptyDataset)?;
        let mut set = TrainSet::new(first.as_ref().len());
        if rows.len() != targets.len() {
            return Err(GbdtError::InvalidParams(format!(
                "{} rows but {} targets",
                rows.len(),
                targets.len()
            )));
        }
        for (row, &y) in rows.iter().zip(targets) {
            set.push(row.as_ref(), y)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, row: &[f64], target: f64) -> Result<()> {
        if row.len() != self.n_features {
            return Err(GbdtError::InconsistentRow {
                row: self.targets.len(),
                expected: self.n_features,
                found: row.len(),
            });
        }
        self.values.extend_from_slice(row);
        self.targets.push(target);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    fn column(&self, f: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(f).step_by(self.n_features).copied()
    }
}
