use crate::binning::BinMapper;
use crate::tree::{grow, GrowConfig, Node, Tree};
use crate::{GbdtError, Result, TrainSet};

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtParams {
    pub learning_rate: f64,
    pub n_iterations: usize,
    pub num_leaves: usize,
    pub min_data_in_leaf: usize,
    pub max_bin: usize,
    /// When set, must exceed log2(num_leaves).
    pub max_depth: Option<usize>,
    /// Stop after this many rounds without validation improvement. Only
    /// consulted by [`train_with_validation`].
    pub early_stopping_rounds: Option<usize>,
    /// Recorded for reproducibility; training itself uses no randomness.
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            learning_rate: 0.1,
            n_iterations: 500,
            num_leaves: 40,
            min_data_in_leaf: 20,
            max_bin: 100,
            max_depth: None,
            early_stopping_rounds: None,
            seed: 0,
        }
    }
}

impl GbdtParams {
    /// Settings reported for the full-size experiment (5000 rounds).
    pub fn reference() -> Self {
        GbdtParams {
            n_iterations: 5000,
            ..GbdtParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GbdtError::InvalidParams(m));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate {} not in (0, 1]", self.learning_rate));
        }
        if self.num_leaves < 2 {
            return bad(format!("num_leaves {} < 2", self.num_leaves));
        }
        if !(2..=256).contains(&self.max_bin) {
            return bad(format!("max_bin {} not in [2, 256]", self.max_bin));
        }
        if let Some(d) = self.max_depth {
            if (d as f64) <= (self.num_leaves as f64).log2() {
                return bad(format!(
                    "max_depth {d} must exceed log2(num_leaves = {})",
                    self.num_leaves
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    pub(crate) base_score: f64,
    pub(crate) learning_rate: f64,
    pub(crate) trees: Vec<Tree>,
    pub(crate) mapper: BinMapper,
    pub(crate) fingerprint: u64,
    pub(crate) params: GbdtParams,
}

/// Per-iteration training diagnostics.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Training RMSE before the first tree and after each tree.
    pub train_rmse: Vec<f64>,
    pub valid_rmse: Vec<f64>,
    pub best_iteration: Option<usize>,
}

impl GbdtModel {
    /// An ensemble without trees; predicts `base_score` everywhere.
    pub fn constant(base_score: f64, n_features: usize, fingerprint: u64) -> Self {
        GbdtModel {
            base_score,
            learning_rate: 0.1,
            trees: Vec::new(),
            mapper: BinMapper::from_bounds(vec![Vec::new(); n_features]),
            fingerprint,
            params: GbdtParams::default(),
        }
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn params(&self) -> &GbdtParams {
        &self.params
    }

    pub fn mapper(&self) -> &BinMapper {
        &self.mapper
    }

    pub fn n_features(&self) -> usize {
        self.mapper.n_features()
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn with_fingerprint(mut self, fingerprint: u64) -> Self {
        self.fingerprint = fingerprint;
        self
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features() {
            return Err(GbdtError::FeatureCount {
                expected: self.n_features(),
                found: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    /// Prediction guarded by the feature-schema fingerprint.
    pub fn predict_with_schema(&self, fingerprint: u64, x: &[f64]) -> Result<f64> {
        if fingerprint != self.fingerprint {
            return Err(GbdtError::SchemaMismatch {
                expected: self.fingerprint,
                found: fingerprint,
            });
        }
        self.predict(x)
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        self.base_score + self.learning_rate * sum
    }

    /// Total split gain per feature divided by its maximum. All zeros when the
    /// ensemble never split.
    pub fn feature_importance(&self) -> Vec<f64> {
        let mut gain = vec![0.0; self.n_features()];
        for tree in &self.trees {
            for node in tree.nodes() {
                if let Node::Split { feature, gain: g, .. } = node {
                    gain[*feature] += g;
                }
            }
        }
        let max = gain.iter().cloned().fold(0.0, f64::max);
        if max > 0.0 {
            gain.iter_mut().for_each(|g| *g /= max);
        }
        gain
    }
}

pub fn train(data: &TrainSet, params: &GbdtParams) -> Result<(GbdtModel, TrainReport)> {
    fit(data, None, params)
}

/// Trains with a held-out set; with `early_stopping_rounds` set, the ensemble
/// is truncated to the best validation iteration.
pub fn train_with_validation(
    data: &TrainSet,
    valid: &TrainSet,
    params: &GbdtParams,
) -> Result<(GbdtModel, TrainReport)> {
    if valid.n_features() != data.n_features() {
        return Err(GbdtError::FeatureCount {
            expected: data.n_features(),
            found: valid.n_features(),
        });
    }
    fit(data, Some(valid), params)
}

fn fit(
    data: &TrainSet,
    valid: Option<&TrainSet>,
    params: &GbdtParams,
) -> Result<(GbdtModel, TrainReport)> {
    params.validate()?;
    if data.is_empty() {
        return Err(GbdtError::EmptyDataset);
    }
    let needed = 2 * params.min_data_in_leaf;
    if data.len() < needed {
        return Err(GbdtError::TooFewRows {
            needed,
            found: data.len(),
        });
    }
    let n = data.len();
    let n_features = data.n_features();
    let mapper = BinMapper::fit((0..n_features).map(|f| data.column(f)), params.max_bin);
    let bins: Vec<Vec<u8>> = (0..n_features)
        .map(|f| data.column(f).map(|v| mapper.bin(f, v) as u8).collect())
        .collect();

    let y = data.targets();
    let base_score = if y.iter().all(|&v| v == y[0]) {
        y[0]
    } else {
        y.iter().sum::<f64>() / n as f64
    };
    let mut pred = vec![base_score; n];
    let mut resid: Vec<f64> = y.iter().map(|&v| v - base_score).collect();
    let mut valid_pred: Vec<f64> = valid.map_or(Vec::new(), |v| vec![base_score; v.len()]);

    let cfg = GrowConfig {
        num_leaves: params.num_leaves,
        min_data_in_leaf: params.min_data_in_leaf,
        max_depth: params.max_depth,
    };
    let mut report = TrainReport::default();
    report.train_rmse.push(rms(&resid));
    if let Some(v) = valid {
        report.valid_rmse.push(rmse(&valid_pred, v.targets()));
    }
    let mut trees = Vec::with_capacity(params.n_iterations);
    let mut best = (f64::INFINITY, 0usize);
    for iter in 0..params.n_iterations {
        let grown = grow(&bins, &mapper, &resid, &cfg);
        for &(start, end, value) in &grown.row_values {
            let step = params.learning_rate * value;
            for &r in &grown.order[start..end] {
                pred[r] += step;
                resid[r] = y[r] - pred[r];
            }
        }
        report.train_rmse.push(rms(&resid));
        if let Some(v) = valid {
            for (i, p) in valid_pred.iter_mut().enumerate() {
                *p += params.learning_rate * grown.tree.predict(v.row(i));
            }
            let score = rmse(&valid_pred, v.targets());
            report.valid_rmse.push(score);
            if score < best.0 {
                best = (score, iter + 1);
            }
        }
        trees.push(grown.tree);
        if let (Some(_), Some(rounds)) = (valid, params.early_stopping_rounds) {
            if iter + 1 - best.1 >= rounds {
                break;
            }
        }
    }
    if valid.is_some() && params.early_stopping_rounds.is_some() {
        trees.truncate(best.1);
        report.best_iteration = Some(best.1);
    }

    Ok((
        GbdtModel {
            base_score,
            learning_rate: params.learning_rate,
            trees,
            mapper,
            fingerprint: 0,
            params: params.clone(),
        },
        report,
    ))
}

fn rms(r: &[f64]) -> f64 {
    (r.iter().map(|v| v * v).sum::<f64>() / r.len().max(1) as f64).sqrt()
}

fn rmse(pred: &[f64], y: &[f64]) -> f64 {
    let sq: f64 = pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum();
    (sq / y.len().max(1) as f64).sqrt()
}
