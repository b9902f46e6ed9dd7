//! Penalized linear models with an unpenalized intercept.
//!
//! Both fits solve their stated objectives on the design exactly as given,
//! with no internal rescaling of columns. Ridge solves the intercept-augmented
//! normal equations; lasso runs cyclic coordinate descent on mean-centered
//! columns and restores the intercept afterwards.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{dot, sym_eigen_desc};
use crate::matrix::Matrix;

/// Linear predictor `intercept + q' coefs` over a design row `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefs: Vec<f64>,
}

impl LinearModel {
    pub fn predict_row(&self, q: &[f64]) -> Result<f64> {
        if q.len() != self.coefs.len() {
            return Err(Error::data(format!(
                "row has {} entries, model expects {}",
                q.len(),
                self.coefs.len()
            )));
        }
        Ok(self.intercept + dot(q, &self.coefs))
    }
}

/// Lasso output: the model plus convergence metadata from coordinate descent.
#[derive(Debug, Clone)]
pub struct LassoFit {
    pub model: LinearModel,
    pub converged: bool,
    /// Sweeps actually performed (including the one that met the tolerance).
    pub sweeps: usize,
    /// Objective value at the returned coefficients.
    pub objective: f64,
}

/// Ridge regression: minimizes `||y - b0 - Q theta||^2 + gamma2 ||theta||^2`
/// with the intercept `b0` left out of the penalty.
///
/// Solved through the intercept-augmented normal equations, so the returned
/// coefficients satisfy the stationarity system to near machine precision.
/// A rank-deficient design at `gamma2 = 0` is an error.
pub fn ridge_fit(q: &Matrix, y: &[f64], gamma2: f64) -> Result<LinearModel> {
    if !gamma2.is_finite() || gamma2 < 0.0 {
        return Err(Error::config(format!("ridge penalty {gamma2} must be finite and >= 0")));
    }
    check_xy(q, y)?;
    let n = q.nrows();
    let d = q.ncols();
    let (a, rhs) = ridge_system(q, y, gamma2);
    let msg = if gamma2 == 0.0 {
        "design is rank deficient; ridge needs gamma2 > 0 here".to_string()
    } else {
        format!("ridge system of size {} is numerically singular", d + 1)
    };
    let sol = solve_symmetric(&a, &rhs, &msg)?;
    let rel = system_residual(&a, &rhs, &sol);
    if rel > 1e-10 {
        return Err(Error::numerical(format!(
            "ridge normal equations solved to relative residual {rel:.2e} only \
             (n = {n}, width = {d}, gamma2 = {gamma2})"
        )));
    }
    Ok(LinearModel { intercept: sol[0], coefs: sol.as_slice()[1..].to_vec() })
}

/// Relative residual of the intercept-augmented ridge normal equations at a
/// fitted model. Diagnostic used by tests; near zero for a correct solve.
pub fn ridge_system_residual(q: &Matrix, y: &[f64], gamma2: f64, model: &LinearModel) -> f64 {
    let (a, rhs) = ridge_system(q, y, gamma2);
    let mut sol = DVector::zeros(q.ncols() + 1);
    sol[0] = model.intercept;
    for (j, &c) in model.coefs.iter().enumerate() {
        sol[j + 1] = c;
    }
    system_residual(&a, &rhs, &sol)
}

/// Ridge objective `||y - b0 - Q theta||^2 + gamma2 ||theta||^2` (intercept
/// unpenalized), exposed for minimizer checks.
pub fn ridge_objective(q: &Matrix, y: &[f64], gamma2: f64, model: &LinearModel) -> f64 {
    let mut rss = 0.0;
    for i in 0..q.nrows() {
        let r = y[i] - model.intercept - dot(q.row(i), &model.coefs);
        rss += r * r;
    }
    rss + gamma2 * model.coefs.iter().map(|c| c * c).sum::<f64>()
}

fn ridge_system(q: &Matrix, y: &[f64], gamma2: f64) -> (DMatrix<f64>, DVector<f64>) {
    let n = q.nrows();
    let d = q.ncols();
    let mut a = DMatrix::zeros(d + 1, d + 1);
    let mut rhs = DVector::zeros(d + 1);
    a[(0, 0)] = n as f64;
    rhs[0] = y.iter().sum();
    for i in 0..n {
        let row = q.row(i);
        for j in 0..d {
            a[(0, j + 1)] += row[j];
            rhs[j + 1] += row[j] * y[i];
            for k in j..d {
                a[(j + 1, k + 1)] += row[j] * row[k];
            }
        }
    }
    for j in 0..d {
        a[(j + 1, 0)] = a[(0, j + 1)];
        a[(j + 1, j + 1)] += gamma2;
        for k in j + 1..d {
            a[(k + 1, j + 1)] = a[(j + 1, k + 1)];
        }
    }
    (a, rhs)
}

/// Cholesky with one refinement step, falling back to an eigendecomposition
/// with a rank guard when the factorization fails.
fn solve_symmetric(a: &DMatrix<f64>, rhs: &DVector<f64>, singular_msg: &str) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        let mut x = ch.solve(rhs);
        let r = rhs - a * &x;
        x += ch.solve(&r);
        if system_residual(a, rhs, &x) <= 1e-10 {
            return Ok(x);
        }
    }
    let (vals, vecs) = sym_eigen_desc(a.clone());
    let max = vals.first().copied().unwrap_or(0.0);
    let min = vals.last().copied().unwrap_or(0.0);
    if max <= 0.0 || min <= 1e-12 * max {
        return Err(Error::numerical(singular_msg.to_string()));
    }
    let vt_rhs = vecs.transpose() * rhs;
    let mut scaled = vt_rhs;
    for (i, v) in scaled.iter_mut().enumerate() {
        *v /= vals[i];
    }
    Ok(&vecs * scaled)
}

fn system_residual(a: &DMatrix<f64>, rhs: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let r = rhs - a * x;
    r.norm() / rhs.norm().max(1e-300)
}

/// Lasso: minimizes `(1/n) ||y - b0 - Q theta||^2 + gamma1 ||theta||_1` with
/// an unpenalized intercept, by cyclic coordinate descent on mean-centered
/// columns. Stops when the largest coefficient change in a sweep drops below
/// `1e-7` or after `max_iter` sweeps; running out of sweeps is not an error,
/// it just clears the `converged` flag.
pub fn lasso_fit(q: &Matrix, y: &[f64], gamma1: f64, max_iter: usize) -> Result<LassoFit> {
    if !gamma1.is_finite() || gamma1 < 0.0 {
        return Err(Error::config(format!("lasso penalty {gamma1} must be finite and >= 0")));
    }
    if max_iter == 0 {
        return Err(Error::config("lasso needs at least one sweep".to_string()));
    }
    check_xy(q, y)?;
    let n = q.nrows();
    let d = q.ncols();
    let inv_n = 1.0 / n as f64;

    let y_mean = y.iter().sum::<f64>() * inv_n;
    let col_means: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| q.get(i, j)).sum::<f64>() * inv_n)
        .collect();
    // Centered columns stored contiguously for the inner loops.
    let mut cols = vec![0.0; d * n];
    for j in 0..d {
        for i in 0..n {
            cols[j * n + i] = q.get(i, j) - col_means[j];
        }
    }
    let scale: Vec<f64> = (0..d)
        .map(|j| 2.0 * inv_n * dot(&cols[j * n..(j + 1) * n], &cols[j * n..(j + 1) * n]))
        .collect();

    let mut theta = vec![0.0; d];
    let mut resid: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let mut converged = false;
    let mut sweeps = 0;
    for _ in 0..max_iter {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..d {
            if scale[j] == 0.0 {
                continue;
            }
            let col = &cols[j * n..(j + 1) * n];
            let rho = 2.0 * inv_n * dot(col, &resid) + scale[j] * theta[j];
            let new = soft_threshold(rho, gamma1) / scale[j];
            let delta = new - theta[j];
            if delta != 0.0 {
                for (r, c) in resid.iter_mut().zip(col) {
                    *r -= delta * c;
                }
                theta[j] = new;
            }
            max_change = max_change.max(delta.abs());
        }
        if max_change < 1e-7 {
            converged = true;
            break;
        }
    }
    let intercept = y_mean - dot(&col_means, &theta);
    let model = LinearModel { intercept, coefs: theta };
    let objective = lasso_objective(q, y, gamma1, &model);
    Ok(LassoFit { model, converged, sweeps, objective })
}

/// Lasso objective `(1/n) ||y - b0 - Q theta||^2 + gamma1 ||theta||_1` at a
/// given model, exposed so tests can compare against brute-force oracles.
pub fn lasso_objective(q: &Matrix, y: &[f64], gamma1: f64, model: &LinearModel) -> f64 {
    let n = q.nrows();
    let mut rss = 0.0;
    for i in 0..n {
        let r = y[i] - model.intercept - dot(q.row(i), &model.coefs);
        rss += r * r;
    }
    rss / n as f64 + gamma1 * model.coefs.iter().map(|c| c.abs()).sum::<f64>()
}

/// Largest violation of the lasso stationarity conditions at a model:
/// zero coefficients need `|(2/n) qc_j' r| <= gamma1`, active ones need the
/// centered gradient to equal `gamma1 * sign(theta_j)`. Near zero at an
/// exact solution.
pub fn lasso_kkt_violation(q: &Matrix, y: &[f64], gamma1: f64, model: &LinearModel) -> f64 {
    let n = q.nrows();
    let inv_n = 1.0 / n as f64;
    let d = q.ncols();
    let col_means: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| q.get(i, j)).sum::<f64>() * inv_n)
        .collect();
    let resid: Vec<f64> = (0..n)
        .map(|i| y[i] - model.intercept - dot(q.row(i), &model.coefs))
        .collect();
    let mut worst: f64 = 0.0;
    for j in 0..d {
        let mut g = 0.0;
        for i in 0..n {
            g += (q.get(i, j) - col_means[j]) * resid[i];
        }
        g *= 2.0 * inv_n;
        let viol = if model.coefs[j] == 0.0 {
            (g.abs() - gamma1).max(0.0)
        } else {
            (g - gamma1 * model.coefs[j].signum()).abs()
        };
        worst = worst.max(viol);
    }
    worst
}

fn soft_threshold(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

fn check_xy(q: &Matrix, y: &[f64]) -> Result<()> {
    if q.nrows() == 0 {
        return Err(Error::data("empty design".to_string()));
    }
    if y.len() != q.nrows() {
        return Err(Error::data(format!(
            "{} labels for a design of {} rows",
            y.len(),
            q.nrows()
        )));
    }
    q.check_finite("design")?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("labels contain a non-finite value".to_string()));
    }
    Ok(())
}
