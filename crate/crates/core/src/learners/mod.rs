//! Prediction heads fitted on augmented factor designs.
//!
//! The built-in menu covers ridge and lasso with unpenalized intercepts, a
//! small feedforward network for regression or binary targets, and an adapter
//! that delegates training to an external command for models that live
//! outside this crate. [`cross_validate`] selects hyperparameters from a grid
//! by k-fold validation loss.

pub mod external;
pub mod fnn;
pub mod linear;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use external::ExternalModel;
pub use fnn::{Mlp, Task, TrainReport};
pub use linear::{LassoFit, LinearModel};

/// Which learner to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Ridge,
    Lasso,
    Fnn,
    External,
}

/// Full learner configuration. One flat struct covers every kind; fields
/// irrelevant to the chosen kind are ignored, and [`LearnerSpec::validate`]
/// rejects incoherent values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    /// Lasso l1 penalty.
    pub gamma1: f64,
    /// Ridge l2 penalty.
    pub gamma2: f64,
    /// Hidden-layer widths of the network.
    pub widths: Vec<usize>,
    /// Dropout rate on hidden activations, in `[0, 1)`.
    pub dropout: f64,
    pub epochs: usize,
    pub learn_rate: f64,
    pub batch: usize,
    /// Sweep cap for lasso coordinate descent.
    pub max_iter: usize,
    /// External learner command and fixed arguments; data paths are appended.
    pub command: Vec<String>,
    pub timeout_secs: u64,
}

impl Default for LearnerSpec {
    fn default() -> Self {
        LearnerSpec {
            kind: LearnerKind::Ridge,
            gamma1: 1e-4,
            gamma2: 1.0,
            widths: vec![16, 4],
            dropout: 0.2,
            epochs: 40,
            learn_rate: 0.01,
            batch: 64,
            max_iter: 100,
            command: Vec::new(),
            timeout_secs: 60,
        }
    }
}

impl LearnerSpec {
    pub fn ridge(gamma2: f64) -> Self {
        LearnerSpec { kind: LearnerKind::Ridge, gamma2, ..Default::default() }
    }

    pub fn lasso(gamma1: f64) -> Self {
        LearnerSpec { kind: LearnerKind::Lasso, gamma1, ..Default::default() }
    }

    pub fn fnn(widths: Vec<usize>, dropout: f64, epochs: usize, learn_rate: f64) -> Self {
        LearnerSpec { kind: LearnerKind::Fnn, widths, dropout, epochs, learn_rate, ..Default::default() }
    }

    pub fn external(command: Vec<String>, timeout_secs: u64) -> Self {
        LearnerSpec { kind: LearnerKind::External, command, timeout_secs, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma1.is_finite() || self.gamma1 < 0.0 {
            return Err(Error::config(format!("gamma1 = {} must be finite and >= 0", self.gamma1)));
        }
        if !self.gamma2.is_finite() || self.gamma2 < 0.0 {
            return Err(Error::config(format!("gamma2 = {} must be finite and >= 0", self.gamma2)));
        }
        if self.max_iter == 0 {
            return Err(Error::config("max_iter must be at least 1".to_string()));
        }
        if self.kind == LearnerKind::Fnn {
            if self.widths.is_empty() || self.widths.iter().any(|&w| w == 0) {
                return Err(Error::config("network widths must be nonempty and >= 1".to_string()));
            }
            if !(0.0..1.0).contains(&self.dropout) {
                return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
            }
            if self.epochs == 0 || self.batch == 0 {
                return Err(Error::config("epochs and batch must be at least 1".to_string()));
            }
            if !self.learn_rate.is_finite() || self.learn_rate <= 0.0 {
                return Err(Error::config(format!("learn_rate {} must be positive", self.learn_rate)));
            }
        }
        if self.kind == LearnerKind::External && self.command.is_empty() {
            return Err(Error::config("external learner needs a command".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug)]
enum FittedModel {
    Linear(LinearModel),
    Net(Mlp),
    External(ExternalModel),
}

/// A trained learner ready to predict on new designs of the same width.
#[derive(Debug)]
pub struct FittedLearner {
    pub spec: LearnerSpec,
    pub task: Task,
    pub converged: bool,
    /// Training-set task loss after fitting: mean squared error for
    /// regression, misclassification rate for binary. NaN for external
    /// models, whose protocol runs fit and predict in one subprocess call.
    pub final_loss: f64,
    model: FittedModel,
}

impl FittedLearner {
    /// Design width this model expects at prediction time.
    pub fn input_width(&self) -> usize {
        match &self.model {
            FittedModel::Linear(m) => m.coefs.len(),
            FittedModel::Net(net) => net.input_dim(),
            FittedModel::External(ext) => ext.input_width(),
        }
    }

    /// Predictions for each row: raw values for linear models, positive-class
    /// probabilities for binary networks.
    pub fn predict(&self, q: &Matrix) -> Result<Vec<f64>> {
        if q.ncols() != self.input_width() {
            return Err(Error::data(format!(
                "design width {} does not match the fitted width {}",
                q.ncols(),
                self.input_width()
            )));
        }
        match &self.model {
            FittedModel::Linear(m) => (0..q.nrows()).map(|i| m.predict_row(q.row(i))).collect(),
            FittedModel::Net(net) => (0..q.nrows()).map(|i| net.predict_row(q.row(i))).collect(),
            FittedModel::External(ext) => ext.predict(q),
        }
    }

    /// Linear coefficients as `[intercept, slopes...]`; None for networks and
    /// external models.
    pub fn coefficients(&self) -> Option<Vec<f64>> {
        match &self.model {
            FittedModel::Linear(m) => {
                let mut out = Vec::with_capacity(m.coefs.len() + 1);
                out.push(m.intercept);
                out.extend_from_slice(&m.coefs);
                Some(out)
            }
            _ => None,
        }
    }
}

/// Fits the learner described by `spec` on design `q` and labels `y`.
///
/// Binary tasks require labels in `{0, 1}`. The seed drives network
/// initialization and batch shuffling; linear fits are deterministic anyway.
pub fn fit(spec: &LearnerSpec, q: &Matrix, y: &[f64], task: Task, seed: u64) -> Result<FittedLearner> {
    spec.validate()?;
    if task == Task::Binary && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::data("binary task labels must be exactly 0 or 1".to_string()));
    }
    let (model, converged) = match spec.kind {
        LearnerKind::Ridge => (FittedModel::Linear(linear::ridge_fit(q, y, spec.gamma2)?), true),
        LearnerKind::Lasso => {
            let f = linear::lasso_fit(q, y, spec.gamma1, spec.max_iter)?;
            (FittedModel::Linear(f.model), f.converged)
        }
        LearnerKind::Fnn => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = Mlp::init(q.ncols(), &spec.widths, task, spec.dropout, &mut rng)?;
            net.train(q, y, spec.epochs, spec.learn_rate, spec.batch, &mut rng)?;
            (FittedModel::Net(net), true)
        }
        LearnerKind::External => {
            let ext = external::external_fit(&spec.command, spec.timeout_secs, q, y)?;
            (FittedModel::External(ext), true)
        }
    };
    let mut fitted = FittedLearner { spec: spec.clone(), task, converged, final_loss: f64::NAN, model };
    if !matches!(fitted.model, FittedModel::External(_)) {
        let preds = fitted.predict(q)?;
        fitted.final_loss = task_loss(task, y, &preds);
    }
    Ok(fitted)
}

/// Mean task loss: squared error for regression, misclassification rate at
/// the 0.5 threshold for binary.
pub(crate) fn task_loss(task: Task, truth: &[f64], preds: &[f64]) -> f64 {
    let n = truth.len().max(1) as f64;
    match task {
        Task::Regression => {
            truth.iter().zip(preds).map(|(t, p)| (t - p) * (t - p)).sum::<f64>() / n
        }
        Task::Binary => {
            truth
                .iter()
                .zip(preds)
                .filter(|(t, p)| (**t >= 0.5) != (**p >= 0.5))
                .count() as f64
                / n
        }
    }
}

/// How rows are assigned to validation folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldScheme {
    /// Contiguous blocks in row order, for time-ordered data.
    Contiguous,
    /// A seeded random permutation before blocking.
    Shuffled { seed: u64 },
}

/// Validation losses of one grid entry.
#[derive(Debug, Clone)]
pub struct CvEntry {
    pub spec: LearnerSpec,
    pub fold_losses: Vec<f64>,
    pub mean_loss: f64,
}

/// Cross-validation outcome: the chosen spec and the full loss table.
#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub best_index: usize,
    pub best: LearnerSpec,
    pub table: Vec<CvEntry>,
}

/// K-fold cross-validation over a grid of learner specs.
///
/// The winner minimizes mean validation loss; ties go to the earlier grid
/// entry. Every fold must hold at least two rows.
pub fn cross_validate(
    q: &Matrix,
    y: &[f64],
    grid: &[LearnerSpec],
    folds: usize,
    task: Task,
    scheme: FoldScheme,
    seed: u64,
) -> Result<CvOutcome> {
    if grid.is_empty() {
        return Err(Error::config("empty hyperparameter grid".to_string()));
    }
    if folds < 2 {
        return Err(Error::config(format!("{folds} folds; cross-validation needs at least 2")));
    }
    let n = q.nrows();
    if y.len() != n {
        return Err(Error::data(format!("{} labels for {} design rows", y.len(), n)));
    }
    if n / folds < 2 {
        return Err(Error::data(format!(
            "a fold would hold fewer than 2 samples (n = {n}, folds = {folds})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if let FoldScheme::Shuffled { seed } = scheme {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let sizes = fold_sizes(n, folds);
    let mut splits: Vec<(Vec<usize>, Vec<usize>)> = Vec::with_capacity(folds);
    let mut start = 0;
    for &size in &sizes {
        let val: Vec<usize> = order[start..start + size].to_vec();
        let train: Vec<usize> =
            order[..start].iter().chain(&order[start + size..]).copied().collect();
        splits.push((train, val));
        start += size;
    }

    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|gi| (0..folds).map(move |fi| (gi, fi)))
        .collect();
    let eval = |&(gi, fi): &(usize, usize)| -> Result<f64> {
        let (train_idx, val_idx) = &splits[fi];
        let qt = q.rows_subset(train_idx)?;
        let yt: Vec<f64> = train_idx.iter().map(|&i| y[i]).collect();
        let qv = q.rows_subset(val_idx)?;
        let yv: Vec<f64> = val_idx.iter().map(|&i| y[i]).collect();
        let fitted = fit(&grid[gi], &qt, &yt, task, seed.wrapping_add((gi * folds + fi) as u64))?;
        let preds = fitted.predict(&qv)?;
        Ok(task_loss(task, &yv, &preds))
    };
    #[cfg(feature = "parallel")]
    let losses: Vec<f64> = {
        use rayon::prelude::*;
        jobs.par_iter().map(eval).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let losses: Vec<f64> = jobs.iter().map(eval).collect::<Result<_>>()?;

    let mut table = Vec::with_capacity(grid.len());
    for (gi, spec) in grid.iter().enumerate() {
        let fold_losses: Vec<f64> = losses[gi * folds..(gi + 1) * folds].to_vec();
        let mean_loss = fold_losses.iter().sum::<f64>() / folds as f64;
        table.push(CvEntry { spec: spec.clone(), fold_losses, mean_loss });
    }
    let mut best_index = 0;
    for (i, entry) in table.iter().enumerate() {
        if entry.mean_loss < table[best_index].mean_loss {
            best_index = i;
        }
    }
    Ok(CvOutcome { best_index, best: grid[best_index].clone(), table })
}

fn fold_sizes(n: usize, folds: usize) -> Vec<usize> {
    let base = n / folds;
    let rem = n % folds;
    (0..folds).map(|i| base + usize::from(i < rem)).collect()
}

/// `count` points from `lo` to `hi`, evenly spaced in log10 with both
/// endpoints exact. Requires `0 < lo < hi` and `count >= 2`.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && count >= 2, "log_space({lo}, {hi}, {count})");
    let l0 = lo.log10();
    let step = (hi.log10() - l0) / (count - 1) as f64;
    (0..count)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == count - 1 {
                hi
            } else {
                10f64.powf(l0 + step * i as f64)
            }
        })
        .collect()
}

/// Default lasso penalty grid: 15 log-even points from 1e-10 to 1e-3.
pub fn default_gamma1_grid() -> Vec<f64> {
    log_space(1e-10, 1e-3, 15)
}

/// Default ridge penalty grid: 10 log-even points from 1e-3 to 1e3.
pub fn default_gamma2_grid() -> Vec<f64> {
    log_space(1e-3, 1e3, 10)
}
