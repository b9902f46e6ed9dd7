//! Bridges between the row-major [`Matrix`](crate::matrix::Matrix) and
//! `nalgebra`, plus the small set of decompositions the crate relies on.
//!
//! Hot products (Gram matrices, tall-times-thin multiplies) are written
//! directly over the row-major storage; factorizations are delegated to
//! `nalgebra` on the converted copies, which are small by construction.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Condition number above which least squares leaves the normal equations
/// for an orthogonal decomposition.
pub(crate) const COND_QR_SWITCH: f64 = 1e6;
/// Condition number above which least squares refuses to proceed.
pub(crate) const COND_FAIL: f64 = 1e10;

pub(crate) fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.nrows(), m.ncols(), m.data())
}

pub(crate) fn from_dmatrix(d: &DMatrix<f64>) -> Matrix {
    let (n, p) = d.shape();
    let mut data = Vec::with_capacity(n * p);
    for i in 0..n {
        for j in 0..p {
            data.push(d[(i, j)]);
        }
    }
    Matrix::new(n, p, data).expect("shape preserved")
}

/// `A' A / n` over the columns of a row-major matrix, accumulated row by row
/// so the inner loops stay contiguous.
pub(crate) fn gram_cols(m: &Matrix) -> DMatrix<f64> {
    let (n, p) = (m.nrows(), m.ncols());
    let mut g = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let row = m.row(i);
        for a in 0..p {
            let va = row[a];
            if va != 0.0 {
                for b in a..p {
                    g[(a, b)] += va * row[b];
                }
            }
        }
    }
    let scale = 1.0 / n as f64;
    for a in 0..p {
        for b in a..p {
            let v = g[(a, b)] * scale;
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    g
}

/// `A A' / n`, i.e. pairwise row inner products.
pub(crate) fn gram_rows(m: &Matrix) -> DMatrix<f64> {
    let n = m.nrows();
    let mut g = DMatrix::<f64>::zeros(n, n);
    let scale = 1.0 / n as f64;
    for i in 0..n {
        let ri = m.row(i);
        for j in i..n {
            let d = dot(ri, m.row(j)) * scale;
            g[(i, j)] = d;
            g[(j, i)] = d;
        }
    }
    g
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Plain row-major product `A B`.
pub(crate) fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.ncols() != b.nrows() {
        return Err(Error::config(format!(
            "matmul shape mismatch: {}x{} times {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let (n, k, p) = (a.nrows(), a.ncols(), b.ncols());
    let mut out = Matrix::zeros(n, p);
    for i in 0..n {
        let arow = a.row(i);
        for (l, &ail) in arow.iter().enumerate().take(k) {
            if ail == 0.0 {
                continue;
            }
            let brow = b.row(l);
            let orow = out.row_mut(i);
            for j in 0..p {
                orow[j] += ail * brow[j];
            }
        }
    }
    Ok(out)
}

/// Eigenvalues and eigenvectors of a symmetric matrix, sorted by descending
/// eigenvalue. Eigenvectors are the columns of the returned matrix.
pub(crate) fn sym_eigen_desc(g: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let dim = g.nrows();
    let eig = nalgebra::SymmetricEigen::new(g);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::<f64>::zeros(dim, dim);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Two-norm condition number of a design, estimated from the eigenvalues of
/// its Gram matrix. Returns infinity when the Gram matrix is singular to
/// working precision.
pub(crate) fn cond_from_gram(g: &DMatrix<f64>) -> f64 {
    let eig = nalgebra::SymmetricEigen::new(g.clone());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi <= 0.0 {
        return f64::INFINITY;
    }
    if lo <= hi * f64::EPSILON {
        return f64::INFINITY;
    }
    (hi / lo).sqrt()
}

/// Multi-right-hand-side least squares `argmin ||F C - B||_F`.
///
/// Solves the normal equations while the design is well conditioned,
/// switches to an orthogonal decomposition past a condition number of 1e6,
/// and errors past 1e10.
pub(crate) fn lstsq(f: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if f.nrows() != b.nrows() {
        return Err(Error::config(format!(
            "least squares shape mismatch: {} rows vs {}",
            f.nrows(),
            b.nrows()
        )));
    }
    if f.nrows() < f.ncols() {
        return Err(Error::config(format!(
            "least squares needs at least as many rows as columns ({} x {})",
            f.nrows(),
            f.ncols()
        )));
    }
    let ftf = f.tr_mul(f);
    let cond = cond_from_gram(&ftf);
    if cond > COND_FAIL {
        return Err(Error::numerical(format!(
            "design condition number {cond:.3e} exceeds 1e10; columns are numerically dependent"
        )));
    }
    let ftb = f.tr_mul(b);
    if cond <= COND_QR_SWITCH {
        if let Some(chol) = nalgebra::Cholesky::new(ftf.clone()) {
            return Ok(chol.solve(&ftb));
        }
    }
    let svd = f.clone().svd(true, true);
    svd.solve(b, COND_FAIL.recip())
        .map_err(|e| Error::numerical(format!("least squares failed: {e}")))
}

/// OLS coefficients for a single response; the design is used as given, so
/// callers wanting an intercept must include a constant column.
pub fn ols_coefs(x: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    if x.nrows() != y.len() {
        return Err(Error::config(format!(
            "design has {} rows but response has {}",
            x.nrows(),
            y.len()
        )));
    }
    let xd = to_dmatrix(x);
    let yd = DMatrix::from_column_slice(y.len(), 1, y);
    let c = lstsq(&xd, &yd)?;
    Ok(c.column(0).iter().copied().collect())
}

/// Residual sum of squares of OLS on the given design.
pub fn ols_rss(x: &Matrix, y: &[f64]) -> Result<f64> {
    let coefs = ols_coefs(x, y)?;
    let mut rss = 0.0;
    for i in 0..x.nrows() {
        let fit = dot(x.row(i), &coefs);
        let r = y[i] - fit;
        rss += r * r;
    }
    Ok(rss)
}

/// Principal angles (radians, ascending) between the column spans of two
/// matrices with the same number of rows. The count equals the smaller
/// column count; angle zero means the corresponding direction is shared.
pub fn principal_angles(a: &Matrix, b: &Matrix) -> Result<Vec<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::config(format!(
            "principal angles need matching row counts, got {} and {}",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.ncols() == 0 || b.ncols() == 0 {
        return Err(Error::config("principal angles need at least one column".to_string()));
    }
    let qa = orthonormal_basis(&to_dmatrix(a))?;
    let qb = orthonormal_basis(&to_dmatrix(b))?;
    let m = qa.tr_mul(&qb);
    let svd = m.svd(false, false);
    let mut cosines: Vec<f64> = svd.singular_values.iter().map(|&s| s.clamp(-1.0, 1.0)).collect();
    cosines.sort_by(|x, y| y.partial_cmp(x).unwrap());
    Ok(cosines.into_iter().map(f64::acos).collect())
}

fn orthonormal_basis(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(true, false);
    let u = svd.u.as_ref().expect("requested U");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if smax <= 0.0 {
        return Err(Error::numerical("zero matrix has no column span".to_string()));
    }
    let tol = smax * 1e-12;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    Ok(u.columns(0, rank).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gram_matches_direct_product() {
        let m = Matrix::new(3, 2, vec![1.0, 2.0, 0.0, -1.0, 2.0, 3.0]).unwrap();
        let d = to_dmatrix(&m);
        let gc = gram_cols(&m);
        let gr = gram_rows(&m);
        let gc_ref = d.tr_mul(&d) / 3.0;
        let gr_ref = &d * d.transpose() / 3.0;
        assert_abs_diff_eq!(gc, gc_ref, epsilon = 1e-14);
        assert_abs_diff_eq!(gr, gr_ref, epsilon = 1e-14);
    }

    #[test]
    fn matmul_matches_nalgebra() {
        let a = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Matrix::new(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        let c_ref = to_dmatrix(&a) * to_dmatrix(&b);
        assert_abs_diff_eq!(to_dmatrix(&c), c_ref, epsilon = 1e-14);
        assert!(matmul(&a, &a).is_err());
    }

    #[test]
    fn eigen_sorted_descending() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (vals, vecs) = sym_eigen_desc(g.clone());
        assert_abs_diff_eq!(vals[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vals[1], 1.0, epsilon = 1e-12);
        // Residual check: G v = lambda v.
        for k in 0..2 {
            let v = vecs.column(k).into_owned();
            let gv = &g * &v;
            assert_abs_diff_eq!(gv, v * vals[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn lstsq_recovers_exact_coefficients() {
        let x = Matrix::new(4, 2, vec![1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]).unwrap();
        let y = [1.0, 3.0, 5.0, 7.0]; // intercept 1, slope 2
        let c = ols_coefs(&x, &y).unwrap();
        assert_abs_diff_eq!(c[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ols_rss(&x, &y).unwrap(), 0.0, epsilon = 1e-20);
    }

    #[test]
    fn lstsq_rejects_dependent_columns() {
        // Second column is an exact copy: condition number is infinite.
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let y = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let err = lstsq(&x, &y).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)), "{err}");
    }

    #[test]
    fn lstsq_survives_moderate_ill_conditioning() {
        // Columns nearly parallel: condition number around 2/1e-7 = 2e7,
        // inside the orthogonal-decomposition band.
        let eps = 1e-7;
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0 + eps, 1.0, 1.0, 1.0, 1.0 - eps]);
        let y = DMatrix::from_column_slice(3, 1, &[3.0, 2.0, 1.0]);
        let c = lstsq(&x, &y).unwrap();
        let fit = &x * &c;
        // The span contains y exactly here (3 points, rank 2 plus residual),
        // so just check the residual is the OLS one via the normal equations.
        let grad = x.tr_mul(&(&fit - &y));
        assert!(grad.amax() < 1e-6, "gradient {grad}");
    }

    #[test]
    fn principal_angles_detect_shared_and_orthogonal_spans() {
        let a = Matrix::new(4, 1, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let b = Matrix::new(4, 1, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let same = principal_angles(&a, &a).unwrap();
        assert!(same[0].abs() < 1e-8);
        let orth = principal_angles(&a, &b).unwrap();
        assert_abs_diff_eq!(orth[0], std::f64::consts::FRAC_PI_2, epsilon = 1e-12);

        // A one-dimensional span inside a two-dimensional one: angle zero.
        let wide =
            Matrix::new(4, 2, vec![1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let inside = principal_angles(&a, &wide).unwrap();
        assert!(inside[0].abs() < 1e-8);
    }
}
