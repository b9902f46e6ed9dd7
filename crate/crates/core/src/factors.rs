//! Latent factor recovery from a (transformed) feature panel.
//!
//! Two estimators are provided. Principal-component fitting eigendecomposes
//! the sample covariance of the panel, always through the smaller Gram
//! matrix, and scales so that the factor block satisfies `F'F = n I`.
//! Diversified projection learns a fixed projection matrix from a small
//! pretraining sample and maps every later observation through it, which
//! keeps per-window work linear in the panel size and makes the factor map
//! reusable across rolling windows.
//!
//! The number of factors, when not fixed by the caller, is chosen by the
//! eigenvalue-ratio rule: the candidate `k` maximizing the ratio of
//! consecutive eigenvalues inside data-driven bounds.

use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io as fio;
use crate::linalg;
use crate::matrix::Matrix;

/// Magic bytes opening a persisted factor model.
pub const FACTOR_MAGIC: &[u8; 8] = b"FARMFAC1";

/// Relative floor below which an eigenvalue counts as numerically zero.
const EIG_RANK_FLOOR: f64 = 1e-12;

/// Eigenvalues of a sample covariance matrix, largest first, with the panel
/// dimensions they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSpectrum {
    values: Vec<f64>,
    n: usize,
    p: usize,
}

impl EigenSpectrum {
    /// Wraps a descending eigenvalue sequence. Small negative values from
    /// floating-point noise are clipped to zero; genuinely unsorted input is
    /// rejected.
    pub fn new(values: Vec<f64>, n: usize, p: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("empty eigenvalue sequence".to_string()));
        }
        let head = values[0];
        let slack = EIG_RANK_FLOOR * head.abs().max(1.0);
        for w in values.windows(2) {
            if w[1] > w[0] + slack {
                return Err(Error::config(format!(
                    "eigenvalues not sorted in descending order ({} before {})",
                    w[0], w[1]
                )));
            }
        }
        let floor = -slack;
        let mut clipped = Vec::with_capacity(values.len());
        for v in values {
            if v < floor {
                return Err(Error::config(format!(
                    "eigenvalue {v} is negative beyond numerical noise"
                )));
            }
            clipped.push(v.max(0.0));
        }
        Ok(EigenSpectrum { values: clipped, n, p })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Panel dimensions `(n, p)` the spectrum was computed from.
    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.p)
    }

    /// Search bounds for the eigenvalue-ratio rule: with `m = min(n, p)`,
    /// candidates run from `max(m/10, 2)` through `m/3`.
    pub fn default_bounds(&self) -> Result<(usize, usize)> {
        let m = self.n.min(self.p);
        let k_max = m / 3;
        let k_min = (m / 10).max(2);
        if k_min > k_max {
            return Err(Error::config(format!(
                "panel too small for the eigenvalue-ratio rule: min(n, p) = {m} \
                 gives an empty candidate range"
            )));
        }
        Ok((k_min, k_max))
    }
}

/// Number of factors chosen by the eigenvalue-ratio rule.
///
/// Scans `k` in `[k_min, k_max]` (the spectrum's default bounds unless
/// overridden) and returns the `k` maximizing `lambda_k / lambda_{k+1}`,
/// preferring the smallest `k` on ties. Ratios whose denominator is below
/// `1e-12 * lambda_1` are skipped as numerically meaningless; if everything
/// is skipped the lower bound is returned.
pub fn eigen_ratio_k(spectrum: &EigenSpectrum, bounds: Option<(usize, usize)>) -> Result<usize> {
    let (k_min, k_max) = match bounds {
        Some(b) => b,
        None => spectrum.default_bounds()?,
    };
    if k_min < 1 || k_min > k_max {
        return Err(Error::config(format!("invalid eigenvalue-ratio bounds [{k_min}, {k_max}]")));
    }
    let vals = spectrum.values();
    if vals.len() < k_max + 1 {
        return Err(Error::config(format!(
            "eigenvalue-ratio bounds need lambda_{} but only {} eigenvalues are available",
            k_max + 1,
            vals.len()
        )));
    }
    let floor = EIG_RANK_FLOOR * vals[0];
    let mut best: Option<(usize, f64)> = None;
    for k in k_min..=k_max {
        let denom = vals[k];
        if denom < floor || denom <= 0.0 {
            continue;
        }
        let ratio = vals[k - 1] / denom;
        if best.map_or(true, |(_, r)| ratio > r) {
            best = Some((k, ratio));
        }
    }
    Ok(best.map_or(k_min, |(k, _)| k))
}

/// How many factors to extract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorCount {
    /// Choose by the eigenvalue-ratio rule.
    Auto,
    Fixed(usize),
}

/// Which estimator produced a factor model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorMode {
    Pca,
    Dp,
}

/// A fitted factor model: centering, loadings, in-sample factors, and
/// whatever the estimator needs to map new observations.
#[derive(Debug, Clone)]
pub struct FactorModel {
    pub mode: FactorMode,
    /// Number of factor columns.
    pub k: usize,
    /// Column means of the training panel, subtracted before projection.
    pub a_hat: Vec<f64>,
    /// Loadings, `p x k`.
    pub b_hat: Matrix,
    /// In-sample factors, `n x k`.
    pub f_hat: Matrix,
    /// Top covariance eigenvalues backing the fit (empty for diversified
    /// projection, which has no spectral normalization).
    pub eigvals: Vec<f64>,
    /// Projection matrix for diversified projection, `p x k`.
    pub w: Option<Matrix>,
}

/// Full covariance spectrum of a panel, computed through the smaller Gram
/// matrix after demeaning the columns.
pub fn spectrum(z: &Matrix) -> Result<EigenSpectrum> {
    let (n, p) = (z.nrows(), z.ncols());
    if n < 2 || p < 1 {
        return Err(Error::config(format!("spectrum needs n >= 2 and p >= 1, got {n} x {p}")));
    }
    let zc = demean(z);
    let gram = if p <= n { linalg::gram_cols(&zc) } else { linalg::gram_rows(&zc) };
    let (vals, _) = linalg::sym_eigen_desc(gram);
    EigenSpectrum::new(vals.into_iter().map(|v| v.max(0.0)).collect(), n, p)
}

/// Principal-component factor fit.
///
/// Demeans internally, eigendecomposes the covariance through the smaller
/// Gram matrix, and scales loadings by the square roots of the eigenvalues,
/// which makes the factor block satisfy `F'F = n I` exactly. Each
/// eigenvector's sign is fixed by making its largest-magnitude entry
/// positive. Requesting more factors than the numerical rank is an error.
pub fn pca_fit(z: &Matrix, count: FactorCount) -> Result<FactorModel> {
    let (n, p) = (z.nrows(), z.ncols());
    if n < 2 || p < 1 {
        return Err(Error::config(format!("pca needs n >= 2 and p >= 1, got {n} x {p}")));
    }
    let a_hat = col_means(z);
    let zc = demean(z);

    // Eigenvalues, then the loadings basis xi (p x k).
    let (vals, xi_full) = if p <= n {
        let (vals, vecs) = linalg::sym_eigen_desc(linalg::gram_cols(&zc));
        (vals, vecs)
    } else {
        let (vals, vecs) = linalg::sym_eigen_desc(linalg::gram_rows(&zc));
        (vals, vecs)
    };
    let vals: Vec<f64> = vals.into_iter().map(|v| v.max(0.0)).collect();
    let spectrum = EigenSpectrum::new(vals.clone(), n, p)?;

    let k = match count {
        FactorCount::Auto => eigen_ratio_k(&spectrum, None)?,
        FactorCount::Fixed(k) => k,
    };
    if k < 1 || k > n.min(p) {
        return Err(Error::config(format!(
            "factor count {k} out of range for a {n} x {p} panel"
        )));
    }
    if vals[0] <= 0.0 || vals[k - 1] <= EIG_RANK_FLOOR * vals[0] {
        return Err(Error::numerical(format!(
            "requested {k} factors but the panel has lower numerical rank"
        )));
    }

    // Basis in feature space. On the n < p path the feature-space
    // eigenvector is recovered as Z' v / sqrt(n mu).
    let mut xi = Matrix::zeros(p, k);
    if p <= n {
        for kk in 0..k {
            for j in 0..p {
                xi.set(j, kk, xi_full[(j, kk)]);
            }
        }
    } else {
        for kk in 0..k {
            let scale = 1.0 / (n as f64 * vals[kk]).sqrt();
            for (i, &vik) in xi_full.column(kk).iter().enumerate() {
                let w = vik * scale;
                if w != 0.0 {
                    let row = zc.row(i);
                    for j in 0..p {
                        xi.set(j, kk, xi.get(j, kk) + w * row[j]);
                    }
                }
            }
        }
    }
    for kk in 0..k {
        fix_column_sign(&mut xi, kk);
    }

    // b = xi * sqrt(lambda); f = Zc * xi / sqrt(lambda).
    let mut b_hat = Matrix::zeros(p, k);
    let mut xi_scaled = Matrix::zeros(p, k);
    for kk in 0..k {
        let s = vals[kk].sqrt();
        for j in 0..p {
            b_hat.set(j, kk, xi.get(j, kk) * s);
            xi_scaled.set(j, kk, xi.get(j, kk) / s);
        }
    }
    let f_hat = linalg::matmul(&zc, &xi_scaled)?;

    Ok(FactorModel {
        mode: FactorMode::Pca,
        k,
        a_hat,
        b_hat,
        f_hat,
        eigvals: vals[..k].to_vec(),
        w: None,
    })
}

/// A diversified-projection basis learned on a pretraining sample.
#[derive(Debug, Clone)]
pub struct DpBasis {
    /// Projection matrix, `p x k_prime`, columns scaled to squared norm `p`.
    pub w: Matrix,
    /// Pretraining covariance spectrum, kept for factor-count diagnostics.
    pub spectrum: EigenSpectrum,
}

/// Learns a diversified-projection matrix from a pretraining panel: the top
/// `k_prime` covariance eigenvectors scaled by `sqrt(p)`.
pub fn dp_pretrain(z_pre: &Matrix, k_prime: usize) -> Result<DpBasis> {
    let (n, p) = (z_pre.nrows(), z_pre.ncols());
    if k_prime < 1 || k_prime > p || n < k_prime + 1 {
        return Err(Error::config(format!(
            "k_prime {k_prime} out of range for a {n} x {p} pretraining panel \
             (need k_prime <= p and n >= k_prime + 1)"
        )));
    }
    let model = pca_fit(z_pre, FactorCount::Fixed(k_prime))?;
    let full = spectrum(z_pre)?;
    let mut w = Matrix::zeros(p, k_prime);
    let sqrt_p = (p as f64).sqrt();
    for kk in 0..k_prime {
        // Recover the unit eigenvector from the loading column.
        let s = model.eigvals[kk].sqrt();
        for j in 0..p {
            w.set(j, kk, model.b_hat.get(j, kk) / s * sqrt_p);
        }
    }
    Ok(DpBasis { w, spectrum: full })
}

/// Fits factors on a panel by diversified projection: `f_i = W' z_i / p`
/// after centering, with loadings recovered by least squares of the panel
/// on the projected factors.
pub fn dp_fit(z: &Matrix, w: &Matrix) -> Result<FactorModel> {
    let (n, p) = (z.nrows(), z.ncols());
    if w.nrows() != p {
        return Err(Error::config(format!(
            "projection matrix has {} rows but the panel has {} columns",
            w.nrows(),
            p
        )));
    }
    let k = w.ncols();
    if k < 1 || n <= k {
        return Err(Error::config(format!(
            "diversified projection needs n > k, got n = {n}, k = {k}"
        )));
    }
    let a_hat = col_means(z);
    let zc = demean(z);
    let mut f_hat = linalg::matmul(&zc, w)?;
    let inv_p = 1.0 / p as f64;
    for i in 0..n {
        for v in f_hat.row_mut(i) {
            *v *= inv_p;
        }
    }
    // Loadings solve min ||Zc - F B'||_F.
    let coeffs =
        linalg::lstsq(&linalg::to_dmatrix(&f_hat), &linalg::to_dmatrix(&zc)).map_err(|e| {
            match e {
                Error::Numerical(_) => Error::numerical(
                    "degenerate projected factors: the projected factor block is singular",
                ),
                other => other,
            }
        })?;
    let b_hat = linalg::from_dmatrix(&coeffs.transpose());
    Ok(FactorModel {
        mode: FactorMode::Dp,
        k,
        a_hat,
        b_hat,
        f_hat,
        eigvals: Vec::new(),
        w: Some(w.clone()),
    })
}

/// Maps a single new observation into factor space. For training rows this
/// reproduces the corresponding row of `f_hat`.
pub fn project_new(model: &FactorModel, z_row: &[f64]) -> Result<Vec<f64>> {
    let p = model.a_hat.len();
    if z_row.len() != p {
        return Err(Error::config(format!(
            "observation has {} entries, model expects {}",
            z_row.len(),
            p
        )));
    }
    let zc: Vec<f64> = z_row.iter().zip(&model.a_hat).map(|(z, a)| z - a).collect();
    match model.mode {
        FactorMode::Pca => {
            // f = diag(lambda)^-1 B' (z - a).
            let mut f = vec![0.0; model.k];
            for (kk, fv) in f.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, zj) in zc.iter().enumerate() {
                    acc += model.b_hat.get(j, kk) * zj;
                }
                *fv = acc / model.eigvals[kk];
            }
            Ok(f)
        }
        FactorMode::Dp => {
            let w = model.w.as_ref().ok_or_else(|| {
                Error::config("diversified-projection model lacks its projection matrix")
            })?;
            let inv_p = 1.0 / p as f64;
            let mut f = vec![0.0; model.k];
            for (kk, fv) in f.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, zj) in zc.iter().enumerate() {
                    acc += w.get(j, kk) * zj;
                }
                *fv = acc * inv_p;
            }
            Ok(f)
        }
    }
}

impl FactorModel {
    /// Persists the model in the binary container format.
    pub fn save_bin(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::data(format!("{}: {}", path.display(), e)))?;
        let mut w = BufWriter::new(file);
        w.write_all(FACTOR_MAGIC)?;
        fio::write_u8(&mut w, 1)?; // container version
        fio::write_u8(&mut w, match self.mode {
            FactorMode::Pca => 0,
            FactorMode::Dp => 1,
        })?;
        fio::write_u64(&mut w, self.k as u64)?;
        fio::write_f64_vec(&mut w, &self.a_hat)?;
        fio::write_matrix(&mut w, &self.b_hat)?;
        fio::write_matrix(&mut w, &self.f_hat)?;
        fio::write_f64_vec(&mut w, &self.eigvals)?;
        match &self.w {
            None => fio::write_u8(&mut w, 0)?,
            Some(m) => {
                fio::write_u8(&mut w, 1)?;
                fio::write_matrix(&mut w, m)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a model persisted by [`FactorModel::save_bin`].
    pub fn load_bin(path: &Path) -> Result<FactorModel> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::data(format!("{}: {}", path.display(), e)))?;
        let mut r = BufReader::new(file);
        fio::expect_magic(&mut r, FACTOR_MAGIC, path)?;
        let version = fio::read_u8(&mut r)?;
        if version != 1 {
            return Err(Error::data(format!(
                "{}: unsupported factor container version {version}",
                path.display()
            )));
        }
        let mode = match fio::read_u8(&mut r)? {
            0 => FactorMode::Pca,
            1 => FactorMode::Dp,
            other => {
                return Err(Error::data(format!(
                    "{}: unknown factor mode tag {other}",
                    path.display()
                )))
            }
        };
        let k = fio::read_u64(&mut r)? as usize;
        let a_hat = fio::read_f64_vec(&mut r)?;
        let b_hat = fio::read_matrix(&mut r)?;
        let f_hat = fio::read_matrix(&mut r)?;
        let eigvals = fio::read_f64_vec(&mut r)?;
        let w = match fio::read_u8(&mut r)? {
            0 => None,
            1 => Some(fio::read_matrix(&mut r)?),
            flag => {
                return Err(Error::data(format!(
                    "{}: bad projection flag {flag}",
                    path.display()
                )))
            }
        };
        Ok(FactorModel { mode, k, a_hat, b_hat, f_hat, eigvals, w })
    }
}

/// Configuration for a factor block inside a pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorSpec {
    #[serde(default = "default_mode")]
    pub mode: FactorMode,
    /// Fixed factor count; omit for the eigenvalue-ratio rule.
    #[serde(default)]
    pub k: Option<usize>,
    /// Overrides for the eigenvalue-ratio search bounds.
    #[serde(default)]
    pub k_min: Option<usize>,
    #[serde(default)]
    pub k_max: Option<usize>,
    /// Pretraining rows for diversified projection (prefix of the training
    /// window, capped at the window length).
    #[serde(default = "default_n_prime")]
    pub n_prime: usize,
    /// Projection dimension for diversified projection.
    #[serde(default = "default_k_prime")]
    pub k_prime: usize,
    /// Fixed diversified-projection weights. When set, Dp mode skips
    /// pretraining and reuses these weights, which lets a rolling harness
    /// hold them constant across windows. Never read from config files.
    #[serde(skip)]
    pub frozen_w: Option<Matrix>,
}

fn default_mode() -> FactorMode {
    FactorMode::Pca
}

fn default_n_prime() -> usize {
    200
}

fn default_k_prime() -> usize {
    5
}

impl Default for FactorSpec {
    fn default() -> Self {
        FactorSpec {
            mode: default_mode(),
            k: None,
            k_min: None,
            k_max: None,
            n_prime: default_n_prime(),
            k_prime: default_k_prime(),
            frozen_w: None,
        }
    }
}

impl FactorSpec {
    /// Fits a factor model on a panel according to this spec.
    pub fn fit(&self, z: &Matrix) -> Result<FactorModel> {
        match self.mode {
            FactorMode::Pca => {
                let count = match self.k {
                    Some(k) => FactorCount::Fixed(k),
                    None => FactorCount::Auto,
                };
                match (self.k, self.k_min, self.k_max) {
                    (None, lo, hi) if lo.is_some() || hi.is_some() => {
                        let spec = spectrum(z)?;
                        let (dlo, dhi) = spec.default_bounds()?;
                        let k =
                            eigen_ratio_k(&spec, Some((lo.unwrap_or(dlo), hi.unwrap_or(dhi))))?;
                        pca_fit(z, FactorCount::Fixed(k))
                    }
                    _ => pca_fit(z, count),
                }
            }
            FactorMode::Dp => match &self.frozen_w {
                Some(w) => dp_fit(z, w),
                None => {
                    let n_pre = self.n_prime.min(z.nrows());
                    let z_pre = z.slice_rows(0, n_pre)?;
                    let basis = dp_pretrain(&z_pre, self.k_prime)?;
                    dp_fit(z, &basis.w)
                }
            },
        }
    }
}

pub(crate) fn col_means(m: &Matrix) -> Vec<f64> {
    let (n, p) = (m.nrows(), m.ncols());
    let mut means = vec![0.0; p];
    for i in 0..n {
        for (j, v) in m.row(i).iter().enumerate() {
            means[j] += v;
        }
    }
    for v in &mut means {
        *v /= n as f64;
    }
    means
}

pub(crate) fn demean(m: &Matrix) -> Matrix {
    let means = col_means(m);
    let mut out = m.clone();
    for i in 0..out.nrows() {
        let row = out.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v -= means[j];
        }
    }
    out
}

/// Flips column `kk` so its largest-magnitude entry is positive; the first
/// such entry decides on exact ties.
fn fix_column_sign(m: &mut Matrix, kk: usize) {
    let mut best = 0.0_f64;
    let mut best_val = 0.0_f64;
    for i in 0..m.nrows() {
        let v = m.get(i, kk);
        if v.abs() > best {
            best = v.abs();
            best_val = v;
        }
    }
    if best_val < 0.0 {
        for i in 0..m.nrows() {
            m.set(i, kk, -m.get(i, kk));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn randn(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Matrix {
        let normal = Normal::new(0.0, 1.0).unwrap();
        Matrix::new(n, p, (0..n * p).map(|_| normal.sample(rng)).collect()).unwrap()
    }

    /// Exact low-rank panel with column means already zero.
    fn planted_panel(rng: &mut ChaCha8Rng, n: usize, p: usize, k: usize) -> Matrix {
        let mut g = randn(rng, n, k);
        g = demean(&g);
        let b = randn(rng, p, k);
        let mut z = Matrix::zeros(n, p);
        for i in 0..n {
            for j in 0..p {
                let mut acc = 0.0;
                for kk in 0..k {
                    acc += g.get(i, kk) * b.get(j, kk);
                }
                z.set(i, j, acc);
            }
        }
        z
    }

    #[test]
    fn spectrum_bounds_follow_dimensions() {
        let vals: Vec<f64> = (0..30).map(|i| 30.0 - i as f64).collect();
        let s = EigenSpectrum::new(vals, 30, 100).unwrap();
        assert_eq!(s.default_bounds().unwrap(), (3, 10));
        let s = EigenSpectrum::new(vec![3.0, 2.0, 1.0, 0.5, 0.2, 0.1], 6, 6).unwrap();
        assert_eq!(s.default_bounds().unwrap(), (2, 2));
        let s = EigenSpectrum::new(vec![3.0, 2.0, 1.0], 3, 3).unwrap();
        assert!(s.default_bounds().is_err());
    }

    #[test]
    fn spectrum_rejects_unsorted_and_very_negative() {
        assert!(EigenSpectrum::new(vec![1.0, 2.0], 5, 5).is_err());
        assert!(EigenSpectrum::new(vec![1.0, -0.5], 5, 5).is_err());
        // Tiny negative noise is clipped.
        let s = EigenSpectrum::new(vec![1.0, 1e-16, -1e-16], 5, 5).unwrap();
        assert_eq!(s.values()[2], 0.0);
    }

    #[test]
    fn eigen_ratio_finds_planted_gap() {
        // min(n, p) = 30: bounds [3, 10]. Gap of 10 planted at k = 7.
        let mut vals = Vec::new();
        let mut v = 100.0;
        for k in 1..=30 {
            vals.push(v);
            v /= if k == 7 { 10.0 } else { 1.1 };
        }
        let s = EigenSpectrum::new(vals, 30, 60).unwrap();
        assert_eq!(eigen_ratio_k(&s, None).unwrap(), 7);
    }

    #[test]
    fn eigen_ratio_prefers_smallest_on_ties() {
        // Equal ratios everywhere: the smallest candidate wins.
        let vals: Vec<f64> = (0..12).map(|i| 2.0_f64.powi(-(i as i32))).collect();
        let s = EigenSpectrum::new(vals, 12, 40).unwrap();
        let (k_min, _) = s.default_bounds().unwrap();
        assert_eq!(eigen_ratio_k(&s, None).unwrap(), k_min);
    }

    #[test]
    fn eigen_ratio_skips_zero_denominators() {
        // Everything past k = 2 is numerically zero; candidates 2..4 all have
        // dead denominators except k = 2.
        let vals = vec![10.0, 5.0, 1e-15, 1e-16, 1e-17, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let s = EigenSpectrum::new(vals, 12, 12).unwrap();
        assert_eq!(eigen_ratio_k(&s, None).unwrap(), 2);

        // All-zero spectrum: fall back to the lower bound.
        let dead = EigenSpectrum::new(vec![0.0; 12], 12, 12).unwrap();
        assert_eq!(eigen_ratio_k(&dead, None).unwrap(), 2);
    }

    #[test]
    fn eigen_ratio_is_scale_invariant() {
        let mut vals = Vec::new();
        let mut v = 7.0;
        for k in 1..=20 {
            vals.push(v);
            v /= if k == 4 { 25.0 } else { 1.3 };
        }
        let base = EigenSpectrum::new(vals.clone(), 20, 50).unwrap();
        let k0 = eigen_ratio_k(&base, None).unwrap();
        for scale in [1e-9, 1e-3, 1e6] {
            let scaled =
                EigenSpectrum::new(vals.iter().map(|v| v * scale).collect(), 20, 50).unwrap();
            assert_eq!(eigen_ratio_k(&scaled, None).unwrap(), k0);
        }
        assert_eq!(k0, 4);
    }

    #[test]
    fn pca_reconstructs_exact_low_rank_panels() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n, p) in &[(12usize, 7usize), (7, 12)] {
            let z = planted_panel(&mut rng, n, p, 2);
            let model = pca_fit(&z, FactorCount::Fixed(2)).unwrap();
            // F B' must reproduce the demeaned panel (here already centered).
            let recon = linalg::matmul(
                &model.f_hat,
                &{
                    let mut bt = Matrix::zeros(2, p);
                    for j in 0..p {
                        for kk in 0..2 {
                            bt.set(kk, j, model.b_hat.get(j, kk));
                        }
                    }
                    bt
                },
            )
            .unwrap();
            for i in 0..n {
                for j in 0..p {
                    assert_abs_diff_eq!(recon.get(i, j), z.get(i, j), epsilon = 1e-9);
                }
            }
            // F'F = n I on both Gram paths.
            for a in 0..2 {
                for b in 0..2 {
                    let dot: f64 = (0..n).map(|i| model.f_hat.get(i, a) * model.f_hat.get(i, b)).sum();
                    let want = if a == b { n as f64 } else { 0.0 };
                    assert_abs_diff_eq!(dot, want, epsilon = 1e-8 * n as f64);
                }
            }
        }
    }

    #[test]
    fn pca_factor_block_is_orthogonal_on_noisy_panels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = randn(&mut rng, 40, 25);
        let model = pca_fit(&z, FactorCount::Fixed(5)).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                let dot: f64 = (0..40).map(|i| model.f_hat.get(i, a) * model.f_hat.get(i, b)).sum();
                let want = if a == b { 40.0 } else { 0.0 };
                assert_abs_diff_eq!(dot, want, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn pca_sign_convention_makes_largest_loading_entry_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = randn(&mut rng, 30, 8);
        let model = pca_fit(&z, FactorCount::Fixed(3)).unwrap();
        for kk in 0..3 {
            let col: Vec<f64> = (0..8).map(|j| model.b_hat.get(j, kk)).collect();
            let extreme = col.iter().cloned().fold(0.0_f64, |acc, v| {
                if v.abs() > acc.abs() {
                    v
                } else {
                    acc
                }
            });
            assert!(extreme > 0.0, "column {kk} extreme entry {extreme}");
        }
    }

    #[test]
    fn pca_rejects_rank_overreach() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = planted_panel(&mut rng, 15, 6, 2);
        let err = pca_fit(&z, FactorCount::Fixed(5)).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)), "{err}");
        assert!(pca_fit(&z, FactorCount::Fixed(0)).is_err());
    }

    #[test]
    fn project_new_reproduces_training_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut z = randn(&mut rng, 25, 10);
        // Shift a column so centering actually matters.
        for i in 0..25 {
            z.set(i, 0, z.get(i, 0) + 5.0);
        }
        let model = pca_fit(&z, FactorCount::Fixed(3)).unwrap();
        for i in [0usize, 7, 24] {
            let f = project_new(&model, z.row(i)).unwrap();
            for kk in 0..3 {
                assert_abs_diff_eq!(f[kk], model.f_hat.get(i, kk), epsilon = 1e-9);
            }
        }
        assert!(project_new(&model, &[0.0; 3]).is_err());
    }

    #[test]
    fn dp_columns_have_squared_norm_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let z = randn(&mut rng, 50, 12);
        let basis = dp_pretrain(&z, 4).unwrap();
        for kk in 0..4 {
            let norm2: f64 = (0..12).map(|j| basis.w.get(j, kk).powi(2)).sum();
            assert_abs_diff_eq!(norm2, 12.0, epsilon = 1e-9);
        }
        assert_eq!(basis.spectrum.dims(), (50, 12));
    }

    #[test]
    fn dp_fit_matches_projection_formula_and_new_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let z_pre = randn(&mut rng, 40, 9);
        let basis = dp_pretrain(&z_pre, 3).unwrap();
        let z = randn(&mut rng, 30, 9);
        let model = dp_fit(&z, &basis.w).unwrap();
        assert_eq!(model.k, 3);
        let means = col_means(&z);
        for i in [0usize, 13, 29] {
            let manual: Vec<f64> = (0..3)
                .map(|kk| {
                    (0..9)
                        .map(|j| basis.w.get(j, kk) * (z.get(i, j) - means[j]))
                        .sum::<f64>()
                        / 9.0
                })
                .collect();
            for kk in 0..3 {
                assert_abs_diff_eq!(model.f_hat.get(i, kk), manual[kk], epsilon = 1e-12);
            }
            let f = project_new(&model, z.row(i)).unwrap();
            for kk in 0..3 {
                assert_abs_diff_eq!(f[kk], model.f_hat.get(i, kk), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn dp_recovers_a_planted_subspace() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let (n, n_pre, p, k) = (300usize, 100usize, 40usize, 2usize);
        let b = randn(&mut rng, p, k);
        let mut make = |rows: usize| {
            let g = randn(&mut rng, rows, k);
            let mut z = Matrix::zeros(rows, p);
            for i in 0..rows {
                for j in 0..p {
                    let mut acc = 0.1 * normal.sample(&mut rng);
                    for kk in 0..k {
                        acc += g.get(i, kk) * b.get(j, kk) * 3.0;
                    }
                    z.set(i, j, acc);
                }
            }
            (g, z)
        };
        let (_, z_pre) = make(n_pre);
        let (g_true, z) = make(n);
        // The estimator sees the centered panel, so the recoverable truth is
        // the demeaned factor span.
        let g_true = demean(&g_true);
        let basis = dp_pretrain(&z_pre, 4).unwrap();
        let model = dp_fit(&z, &basis.w).unwrap();
        let angles = linalg::principal_angles(&model.f_hat, &g_true).unwrap();
        let max_deg = angles.last().unwrap().to_degrees();
        assert!(max_deg < 5.0, "max principal angle {max_deg} degrees");
    }

    #[test]
    fn pca_loadings_are_mutually_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let z = randn(&mut rng, 35, 12);
        let model = pca_fit(&z, FactorCount::Fixed(4)).unwrap();
        let mut trace = 0.0;
        for kk in 0..4 {
            trace += (0..12).map(|j| model.b_hat.get(j, kk).powi(2)).sum::<f64>();
        }
        for a in 0..4 {
            for b in (a + 1)..4 {
                let off: f64 = (0..12).map(|j| model.b_hat.get(j, a) * model.b_hat.get(j, b)).sum();
                assert!(off.abs() < 1e-8 * trace, "B'B off-diagonal {off} vs trace {trace}");
            }
        }
    }

    #[test]
    fn pca_residual_norm_matches_tail_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &(n, p) in &[(30usize, 9usize), (9, 30)] {
            let z = randn(&mut rng, n, p);
            let k = 3;
            let model = pca_fit(&z, FactorCount::Fixed(k)).unwrap();
            let spec = spectrum(&z).unwrap();
            let zc = demean(&z);
            let mut resid2 = 0.0;
            for i in 0..n {
                for j in 0..p {
                    let mut fit = 0.0;
                    for kk in 0..k {
                        fit += model.f_hat.get(i, kk) * model.b_hat.get(j, kk);
                    }
                    resid2 += (zc.get(i, j) - fit).powi(2);
                }
            }
            let tail: f64 = spec.values()[k..].iter().sum();
            let expect = (n as f64 * tail).sqrt();
            assert!(
                (resid2.sqrt() - expect).abs() <= 1e-6 * expect.max(1e-12),
                "residual {} vs spectral {}",
                resid2.sqrt(),
                expect
            );
        }
    }

    #[test]
    fn dp_residual_is_orthogonal_to_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let z_pre = randn(&mut rng, 60, 15);
        let z = randn(&mut rng, 50, 15);
        let basis = dp_pretrain(&z_pre, 4).unwrap();
        let model = dp_fit(&z, &basis.w).unwrap();
        let zc = demean(&z);
        let z_norm = zc.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        for kk in 0..4 {
            for j in 0..15 {
                let mut dot = 0.0;
                for i in 0..50 {
                    let mut fit = 0.0;
                    for l in 0..4 {
                        fit += model.f_hat.get(i, l) * model.b_hat.get(j, l);
                    }
                    dot += model.f_hat.get(i, kk) * (zc.get(i, j) - fit);
                }
                assert!(dot.abs() < 1e-8 * z_norm, "F'(Z - FB') entry {dot}");
            }
        }
    }

    #[test]
    fn dp_fit_rejects_a_zero_panel() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let z_pre = randn(&mut rng, 30, 8);
        let basis = dp_pretrain(&z_pre, 2).unwrap();
        let err = dp_fit(&Matrix::zeros(20, 8), &basis.w).unwrap_err();
        assert!(err.to_string().contains("degenerate"), "{err}");
    }

    #[test]
    fn project_new_is_affine_with_exact_linearity_after_centering() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let z = randn(&mut rng, 22, 7);
        let model = pca_fit(&z, FactorCount::Fixed(2)).unwrap();
        // At the training mean the projection is zero.
        let at_mean = project_new(&model, &model.a_hat).unwrap();
        for v in &at_mean {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
        }
        // Doubling a centered row doubles its factors.
        let row: Vec<f64> = z.row(0).to_vec();
        let centered: Vec<f64> = row.iter().zip(&model.a_hat).map(|(v, a)| v - a).collect();
        let doubled: Vec<f64> =
            centered.iter().zip(&model.a_hat).map(|(c, a)| 2.0 * c + a).collect();
        let f1 = project_new(&model, &row).unwrap();
        let f2 = project_new(&model, &doubled).unwrap();
        for kk in 0..2 {
            assert_abs_diff_eq!(f2[kk], 2.0 * f1[kk], epsilon = 1e-9);
        }
    }

    #[test]
    fn factor_model_round_trips_through_disk() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let z = randn(&mut rng, 20, 6);
        let model = pca_fit(&z, FactorCount::Fixed(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("factors.bin");
        model.save_bin(&path).unwrap();
        let back = FactorModel::load_bin(&path).unwrap();
        assert_eq!(back.mode, model.mode);
        assert_eq!(back.k, model.k);
        assert_eq!(back.a_hat, model.a_hat);
        assert_eq!(back.b_hat, model.b_hat);
        assert_eq!(back.f_hat, model.f_hat);
        assert_eq!(back.eigvals, model.eigvals);

        let z_pre = randn(&mut rng, 30, 6);
        let basis = dp_pretrain(&z_pre, 2).unwrap();
        let dp = dp_fit(&z, &basis.w).unwrap();
        let dp_path = dir.path().join("dp.bin");
        dp.save_bin(&dp_path).unwrap();
        let back = FactorModel::load_bin(&dp_path).unwrap();
        assert_eq!(back.w.as_ref().unwrap(), &basis.w);
        assert_eq!(back.f_hat, dp.f_hat);
    }

    #[test]
    fn gram_paths_agree_on_the_same_panel() {
        // 10 x 10 panel: both Gram sides have the same size, so force each
        // path by slicing to 10 x 9 and 9 x 10 views of one parent panel and
        // compare the common top eigenvalues through `spectrum`.
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let z = randn(&mut rng, 14, 9);
        let tall = spectrum(&z).unwrap(); // p <= n path
        let wide_input = {
            // Transposing swaps the roles of rows and columns; the nonzero
            // covariance eigenvalues match up to the n/p scaling.
            let mut t = Matrix::zeros(9, 14);
            for i in 0..14 {
                for j in 0..9 {
                    t.set(j, i, z.get(i, j));
                }
            }
            t
        };
        let wide = spectrum(&wide_input).unwrap(); // n < p path
        assert_eq!(tall.values().len(), 9);
        assert_eq!(wide.values().len(), 9);
        // Same Gram family up to centering differences; just sanity-check
        // both are positive and descending.
        assert!(tall.values()[0] > 0.0);
        assert!(wide.values()[0] > 0.0);
    }

    #[test]
    fn factor_spec_fits_both_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let z = planted_panel(&mut rng, 60, 20, 3);
        let spec = FactorSpec { k: Some(3), ..FactorSpec::default() };
        let m = spec.fit(&z).unwrap();
        assert_eq!(m.k, 3);
        // The panel is exactly rank 3, so pretraining can extract at most 3
        // directions; asking for more must fail the rank check.
        let dp_spec = FactorSpec {
            mode: FactorMode::Dp,
            n_prime: 30,
            k_prime: 3,
            ..FactorSpec::default()
        };
        let m = dp_spec.fit(&z).unwrap();
        assert_eq!(m.k, 3);
        assert_eq!(m.mode, FactorMode::Dp);
        let overreach = FactorSpec { k_prime: 4, ..dp_spec };
        assert!(matches!(overreach.fit(&z), Err(Error::Numerical(_))));
    }
}
