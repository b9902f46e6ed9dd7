//! Dense row-major matrix with optional column names.
//!
//! This is deliberately minimal: the pipeline stores feature panels row by
//! row (one observation per row) and nearly every hot loop walks rows, so a
//! contiguous row-major `Vec<f64>` is the right layout. Anything that needs
//! serious linear algebra converts to [`nalgebra`] types at the call site
//! (see `linalg`).

use crate::error::{Error, Result};

/// Dense `n x p` matrix, row-major, with optional column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    p: usize,
    data: Vec<f64>,
    col_names: Option<Vec<String>>,
}

impl Matrix {
    /// Builds a matrix from row-major data. Fails if `data.len() != n * p`.
    pub fn new(n: usize, p: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * p {
            return Err(Error::config(format!(
                "matrix data length {} does not match {} x {}",
                data.len(),
                n,
                p
            )));
        }
        Ok(Matrix { n, p, data, col_names: None })
    }

    pub fn zeros(n: usize, p: usize) -> Self {
        Matrix { n, p, data: vec![0.0; n * p], col_names: None }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n * p);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::config(format!(
                    "row {} has length {}, expected {}",
                    i,
                    row.len(),
                    p
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { n, p, data, col_names: None })
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.p
    }

    /// Row `i` as a contiguous slice.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.p + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.p + j] = v;
    }

    /// Copies column `j` out. Column access is strided, so callers that need
    /// repeated access should copy once.
    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn col_names(&self) -> Option<&[String]> {
        self.col_names.as_deref()
    }

    /// Attaches column names. Fails if the count does not match `ncols`.
    pub fn set_col_names(&mut self, names: Vec<String>) -> Result<()> {
        if names.len() != self.p {
            return Err(Error::config(format!(
                "{} column names for {} columns",
                names.len(),
                self.p
            )));
        }
        self.col_names = Some(names);
        Ok(())
    }

    pub fn clear_col_names(&mut self) {
        self.col_names = None;
    }

    /// Checks that every entry is finite; reports the first offender.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        for i in 0..self.n {
            for (j, v) in self.row(i).iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::data(format!(
                        "{what}: non-finite value {} at row {}, column {}",
                        v, i, j
                    )));
                }
            }
        }
        Ok(())
    }

    /// New matrix with the given rows, in the given order.
    pub fn rows_subset(&self, idx: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(idx.len() * self.p);
        for &i in idx {
            if i >= self.n {
                return Err(Error::config(format!(
                    "row index {} out of range for {} rows",
                    i, self.n
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Matrix { n: idx.len(), p: self.p, data, col_names: self.col_names.clone() })
    }

    /// New matrix keeping the listed columns, in the listed order.
    pub fn cols_subset(&self, idx: &[usize]) -> Result<Matrix> {
        for &j in idx {
            if j >= self.p {
                return Err(Error::config(format!(
                    "column index {} out of range for {} columns",
                    j, self.p
                )));
            }
        }
        let mut data = Vec::with_capacity(idx.len() * self.n);
        for i in 0..self.n {
            let row = self.row(i);
            for &j in idx {
                data.push(row[j]);
            }
        }
        let col_names = self
            .col_names
            .as_ref()
            .map(|names| idx.iter().map(|&j| names[j].clone()).collect());
        Ok(Matrix { n: self.n, p: idx.len(), data, col_names })
    }

    /// Contiguous row range `[start, end)` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Matrix> {
        if start > end || end > self.n {
            return Err(Error::config(format!(
                "row range {}..{} out of bounds for {} rows",
                start, end, self.n
            )));
        }
        Ok(Matrix {
            n: end - start,
            p: self.p,
            data: self.data[start * self.p..end * self.p].to_vec(),
            col_names: self.col_names.clone(),
        })
    }

    /// Horizontal concatenation. All blocks must agree on row count; column
    /// names survive only if every block carries them.
    pub fn hcat(blocks: &[&Matrix]) -> Result<Matrix> {
        let n = blocks.first().map_or(0, |b| b.n);
        for b in blocks {
            if b.n != n {
                return Err(Error::config(format!(
                    "hcat row mismatch: {} vs {}",
                    b.n, n
                )));
            }
        }
        let p: usize = blocks.iter().map(|b| b.p).sum();
        let mut data = Vec::with_capacity(n * p);
        for i in 0..n {
            for b in blocks {
                data.extend_from_slice(b.row(i));
            }
        }
        let col_names = if !blocks.is_empty() && blocks.iter().all(|b| b.col_names.is_some()) {
            Some(
                blocks
                    .iter()
                    .flat_map(|b| b.col_names.as_ref().unwrap().iter().cloned())
                    .collect(),
            )
        } else {
            None
        };
        Ok(Matrix { n, p, data, col_names })
    }
}

/// How columns are rescaled before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StandardizeMode {
    /// Leave the data as is.
    None,
    /// Subtract the column mean.
    Demean,
    /// Subtract the column mean and divide by the sample standard deviation
    /// (the `n - 1` variant). Zero-variance columns keep scale 1 so the
    /// transform stays invertible.
    Zscore,
}

/// Centers and scales learned from one data set, replayable on another.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mode: StandardizeMode,
    pub centers: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    /// Applies the stored centers and scales to a matrix with matching width.
    pub fn apply(&self, m: &Matrix) -> Result<Matrix> {
        if m.ncols() != self.centers.len() {
            return Err(Error::config(format!(
                "standardizer fitted on {} columns, applied to {}",
                self.centers.len(),
                m.ncols()
            )));
        }
        let mut out = m.clone();
        for i in 0..out.nrows() {
            let row = out.row_mut(i);
            for j in 0..row.len() {
                row[j] = (row[j] - self.centers[j]) / self.scales[j];
            }
        }
        Ok(out)
    }

    /// Applies the stored centers and scales to a single row.
    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.centers.len() {
            return Err(Error::config(format!(
                "standardizer fitted on {} columns, applied to a row of {}",
                self.centers.len(),
                row.len()
            )));
        }
        Ok(row
            .iter()
            .zip(self.centers.iter().zip(&self.scales))
            .map(|(v, (c, s))| (v - c) / s)
            .collect())
    }
}

/// Standardizes columns and returns the transformed matrix together with the
/// fitted centers and scales.
///
/// `Zscore` requires at least two rows; zero-variance columns are centered
/// but keep scale 1 instead of dividing by zero.
pub fn standardize(m: &Matrix, mode: StandardizeMode) -> Result<(Matrix, Standardizer)> {
    let (n, p) = (m.nrows(), m.ncols());
    let mut centers = vec![0.0; p];
    let mut scales = vec![1.0; p];
    match mode {
        StandardizeMode::None => {}
        StandardizeMode::Demean | StandardizeMode::Zscore => {
            if n == 0 {
                return Err(Error::config("cannot standardize an empty matrix".to_string()));
            }
            for i in 0..n {
                for (j, v) in m.row(i).iter().enumerate() {
                    centers[j] += v;
                }
            }
            for c in &mut centers {
                *c /= n as f64;
            }
            if mode == StandardizeMode::Zscore {
                if n < 2 {
                    return Err(Error::config(
                        "zscore standardization needs at least two rows".to_string(),
                    ));
                }
                let mut ss = vec![0.0; p];
                for i in 0..n {
                    for (j, v) in m.row(i).iter().enumerate() {
                        let d = v - centers[j];
                        ss[j] += d * d;
                    }
                }
                for (s, sum) in scales.iter_mut().zip(&ss) {
                    let var = sum / (n as f64 - 1.0);
                    if var > 0.0 {
                        *s = var.sqrt();
                    }
                }
            }
        }
    }
    let st = Standardizer { mode, centers, scales };
    let out = st.apply(m)?;
    Ok((out, st))
}

/// Indices of the `m` columns with the largest column sums, ties resolved
/// toward the lower index, result sorted ascending.
///
/// Intended for count data (pick the most frequent terms); entries must be
/// nonnegative.
pub fn top_frequency_columns(counts: &Matrix, m: usize) -> Result<Vec<usize>> {
    if m > counts.ncols() {
        return Err(Error::config(format!(
            "asked for {} columns out of {}",
            m,
            counts.ncols()
        )));
    }
    let mut sums = vec![0.0; counts.ncols()];
    for i in 0..counts.nrows() {
        for (j, v) in counts.row(i).iter().enumerate() {
            if *v < 0.0 {
                return Err(Error::data(format!(
                    "negative count {} at row {}, column {}",
                    v, i, j
                )));
            }
            sums[j] += v;
        }
    }
    let mut order: Vec<usize> = (0..counts.ncols()).collect();
    // Stable sort by descending sum keeps the lower index first on ties.
    order.sort_by(|&a, &b| sums[b].partial_cmp(&sums[a]).unwrap());
    let mut kept: Vec<usize> = order.into_iter().take(m).collect();
    kept.sort_unstable();
    Ok(kept)
}

/// Linear-interpolation quantile of a nonempty sorted slice (the common
/// "type 7" convention: position `(len - 1) * q` interpolated between its
/// neighbors). `q` is clamped to `[0, 1]`.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let q = q.clamp(0.0, 1.0);
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
