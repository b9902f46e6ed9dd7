//! Decorrelated variable screening.
//!
//! Each residual column is scored by the coefficient it earns in a
//! low-dimensional fit alongside the factor block: regress the response on
//! the factors plus that single standardized column, and record the column's
//! coefficient. Ranking columns by the absolute coefficient and keeping the
//! top `m` discards features whose signal is already explained by the
//! factors, which is what makes the screen "decorrelated" rather than a
//! plain marginal correlation sort.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::fnn::sigmoid;
use crate::learners::Task;
use crate::linalg::{lstsq, to_dmatrix};
use crate::matrix::Matrix;

/// Loss under which marginal coefficients are fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Squared,
    Logistic,
}

impl From<Task> for LossKind {
    fn from(task: Task) -> Self {
        match task {
            Task::Regression => LossKind::Squared,
            Task::Binary => LossKind::Logistic,
        }
    }
}

/// One column's marginal fit: the coefficient and whether the optimizer
/// reached its convergence criterion (always true under squared loss).
#[derive(Debug, Clone, Copy)]
pub struct MarginalFit {
    pub theta: f64,
    pub converged: bool,
}

/// Outcome of screening a residual block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScreenResult {
    /// `|theta_hat_j|` for every column, in input order.
    pub theta_abs: Vec<f64>,
    /// Indices of the `m` largest entries of `theta_abs` (ties keep the
    /// lower index), sorted ascending.
    pub kept: Vec<usize>,
    pub loss_kind: LossKind,
    /// Columns whose logistic fit stopped before meeting the gradient
    /// criterion; empty under squared loss.
    pub non_converged: Vec<usize>,
}

const LOGISTIC_MAX_ITER: usize = 200;
const LOGISTIC_GRAD_TOL: f64 = 1e-8;

/// Fits the response on `[F | u_j]` and returns the coefficient of `u_j`.
///
/// The column is standardized internally (mean 0, unit sample sd); a
/// zero-variance column scores exactly 0. Squared loss solves the
/// `(k + 1)`-variable least squares problem; logistic loss runs Newton
/// iterations until the mean gradient norm drops below 1e-8 or 200
/// iterations pass, in which case the last iterate is returned flagged as
/// non-converged rather than treated as an error.
pub fn marginal_theta(
    y: &[f64],
    f: &Matrix,
    u_j: &[f64],
    loss_kind: LossKind,
) -> Result<MarginalFit> {
    let n = y.len();
    if f.nrows() != n || u_j.len() != n {
        return Err(Error::config(format!(
            "marginal fit with {n} responses, {} factor rows, {} column entries",
            f.nrows(),
            u_j.len()
        )));
    }
    if n < f.ncols() + 2 {
        return Err(Error::data(format!(
            "{n} rows cannot support a {}-variable marginal fit",
            f.ncols() + 1
        )));
    }
    let Some(col) = standardize_column(u_j) else {
        return Ok(MarginalFit { theta: 0.0, converged: true });
    };
    let design = design_with_column(f, &col);
    match loss_kind {
        LossKind::Squared => {
            let rhs = DMatrix::from_column_slice(n, 1, y);
            let coef = lstsq(&design, &rhs)?;
            Ok(MarginalFit { theta: coef[(f.ncols(), 0)], converged: true })
        }
        LossKind::Logistic => {
            check_binary(y)?;
            let (beta, converged) = logistic_newton(&design, y, LOGISTIC_MAX_ITER);
            Ok(MarginalFit { theta: beta[f.ncols()], converged })
        }
    }
}

/// Scores every column of `u`, keeps the `m` with the largest absolute
/// coefficients, and reports the full score vector alongside the kept set.
pub fn screen(
    y: &[f64],
    f: &Matrix,
    u: &Matrix,
    m: usize,
    loss_kind: LossKind,
) -> Result<ScreenResult> {
    let p = u.ncols();
    if m > p {
        return Err(Error::config(format!("cannot keep {m} of {p} columns")));
    }
    if u.nrows() != y.len() {
        return Err(Error::config(format!(
            "{} residual rows vs {} responses",
            u.nrows(),
            y.len()
        )));
    }
    let fit_col = |j: usize| -> Result<MarginalFit> { marginal_theta(y, f, &u.col(j), loss_kind) };
    #[cfg(feature = "parallel")]
    let fits: Result<Vec<MarginalFit>> = {
        use rayon::prelude::*;
        (0..p).into_par_iter().map(fit_col).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let fits: Result<Vec<MarginalFit>> = (0..p).map(fit_col).collect();
    let fits = fits?;

    let theta_abs: Vec<f64> = fits.iter().map(|r| r.theta.abs()).collect();
    let non_converged: Vec<usize> =
        fits.iter().enumerate().filter(|(_, r)| !r.converged).map(|(j, _)| j).collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| theta_abs[b].total_cmp(&theta_abs[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = order[..m].to_vec();
    kept.sort_unstable();
    Ok(ScreenResult { theta_abs, kept, loss_kind, non_converged })
}

/// Centers and scales to unit sample sd; `None` marks a zero-variance column.
fn standardize_column(u: &[f64]) -> Option<Vec<f64>> {
    let n = u.len() as f64;
    let mean = u.iter().sum::<f64>() / n;
    let ss: f64 = u.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss <= 0.0 {
        return None;
    }
    let sd = (ss / (n - 1.0)).sqrt();
    Some(u.iter().map(|v| (v - mean) / sd).collect())
}

fn design_with_column(f: &Matrix, col: &[f64]) -> DMatrix<f64> {
    let n = f.nrows();
    let k = f.ncols();
    let mut design = DMatrix::zeros(n, k + 1);
    let fd = to_dmatrix(f);
    design.view_mut((0, 0), (n, k)).copy_from(&fd);
    for (i, &v) in col.iter().enumerate() {
        design[(i, k)] = v;
    }
    design
}

fn check_binary(y: &[f64]) -> Result<()> {
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::data(
            "logistic screening needs responses coded exactly 0 or 1".to_string(),
        ));
    }
    Ok(())
}

/// Newton iterations for the mean logistic loss. Returns the last iterate
/// and whether the gradient criterion was met within `max_iter` steps; a
/// singular Hessian or non-finite step also stops with `false`.
fn logistic_newton(x: &DMatrix<f64>, y: &[f64], max_iter: usize) -> (DVector<f64>, bool) {
    let n = x.nrows();
    let d = x.ncols();
    let mut beta = DVector::zeros(d);
    for _ in 0..max_iter {
        let eta = x * &beta;
        let probs: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let grad = mean_gradient(x, &probs, y);
        if grad.norm() < LOGISTIC_GRAD_TOL {
            return (beta, true);
        }
        let mut hess = DMatrix::zeros(d, d);
        for i in 0..n {
            let w = probs[i] * (1.0 - probs[i]);
            for a in 0..d {
                let xa = x[(i, a)] * w;
                for b in a..d {
                    hess[(a, b)] += xa * x[(i, b)];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        hess /= n as f64;
        let Some(chol) = hess.cholesky() else {
            return (beta, false);
        };
        let step = chol.solve(&grad);
        beta -= step;
        if beta.iter().any(|v| !v.is_finite()) {
            return (beta, false);
        }
    }
    let eta = x * &beta;
    let probs: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
    let converged = mean_gradient(x, &probs, y).norm() < LOGISTIC_GRAD_TOL;
    (beta, converged)
}

fn mean_gradient(x: &DMatrix<f64>, probs: &[f64], y: &[f64]) -> DVector<f64> {
    let n = x.nrows();
    let d = x.ncols();
    let mut grad = DVector::zeros(d);
    for i in 0..n {
        let r = probs[i] - y[i];
        for a in 0..d {
            grad[a] += x[(i, a)] * r;
        }
    }
    grad / n as f64
}
