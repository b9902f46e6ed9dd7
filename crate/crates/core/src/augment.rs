//! Assembly of augmented feature designs from factors and residuals.
//!
//! A learner never sees the raw panel directly: it sees a column-concatenated
//! design built from some of the blocks F0 (factors of the raw features),
//! F (factors of the transformed features), a residual block U (features
//! with the factor component regressed out) or Utilde (U additionally
//! decorrelated from F0), the raw features X themselves, and LR
//! likelihood-ratio columns. [`AugmentModel`] freezes every training-window
//! regression so the same map applies to rows that arrive later.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{project_new, FactorModel, FactorSpec};
use crate::linalg::{from_dmatrix, lstsq, to_dmatrix};
use crate::matrix::Matrix;
use crate::transforms::FittedTransform;

/// Origin tag of a design block (and of each of its columns).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockLabel {
    F0,
    F,
    U,
    Utilde,
    X,
    #[serde(rename = "LR")]
    Lr,
}

impl BlockLabel {
    pub fn tag(self) -> &'static str {
        match self {
            BlockLabel::F0 => "F0",
            BlockLabel::F => "F",
            BlockLabel::U => "U",
            BlockLabel::Utilde => "Utilde",
            BlockLabel::X => "X",
            BlockLabel::Lr => "LR",
        }
    }

    fn rank(self) -> usize {
        match self {
            BlockLabel::F0 => 0,
            BlockLabel::F => 1,
            BlockLabel::U | BlockLabel::Utilde => 2,
            BlockLabel::X => 3,
            BlockLabel::Lr => 4,
        }
    }
}

/// Which residual block the design carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualMode {
    U,
    Utilde,
    None,
}

/// Labeled blocks plus their column concatenation and per-column provenance.
#[derive(Debug, Clone)]
pub struct AugmentedDesign {
    pub blocks: Vec<(BlockLabel, Matrix)>,
    pub assembled: Matrix,
    pub provenance: Vec<BlockLabel>,
}

impl AugmentedDesign {
    /// Provenance sidecar: a JSON array with one tag per assembled column.
    pub fn provenance_json(&self) -> String {
        let tags: Vec<&str> = self.provenance.iter().map(|l| l.tag()).collect();
        serde_json::to_string(&tags).expect("static strings serialize")
    }
}

/// Concatenates labeled blocks in the canonical order
/// F0 | F | residual | X | LR, tagging every column with its origin.
///
/// Blocks may arrive in any order; each label may appear at most once, and U
/// excludes Utilde.
pub fn assemble(blocks: Vec<(BlockLabel, Matrix)>) -> Result<AugmentedDesign> {
    if blocks.is_empty() {
        return Err(Error::config("cannot assemble an empty design".to_string()));
    }
    let n = blocks[0].1.nrows();
    for (label, m) in &blocks {
        if m.nrows() != n {
            return Err(Error::data(format!(
                "block {} has {} rows, expected {n}",
                label.tag(),
                m.nrows()
            )));
        }
    }
    let mut seen = Vec::new();
    for (label, _) in &blocks {
        if seen.contains(label) {
            return Err(Error::config(format!("block {} appears twice", label.tag())));
        }
        seen.push(*label);
    }
    if seen.contains(&BlockLabel::U) && seen.contains(&BlockLabel::Utilde) {
        return Err(Error::config("a design carries one residual block, not both".to_string()));
    }
    let mut ordered = blocks;
    ordered.sort_by_key(|(label, _)| label.rank());
    let refs: Vec<&Matrix> = ordered.iter().map(|(_, m)| m).collect();
    let assembled = Matrix::hcat(&refs)?;
    let mut provenance = Vec::with_capacity(assembled.ncols());
    for (label, m) in &ordered {
        provenance.extend(std::iter::repeat(*label).take(m.ncols()));
    }
    Ok(AugmentedDesign { blocks: ordered, assembled, provenance })
}

/// Regresses every column of `x` on the factor block `f` and returns the
/// loadings `b_hat` (p x k) together with the residual `u = x - f b_hat'`.
///
/// `f` must have full column rank; a condition number past 1e10 is an error.
pub fn regress_out(x: &Matrix, f: &Matrix) -> Result<(Matrix, Matrix)> {
    if x.nrows() != f.nrows() {
        return Err(Error::config(format!(
            "{} feature rows vs {} factor rows",
            x.nrows(),
            f.nrows()
        )));
    }
    if f.ncols() == 0 {
        return Err(Error::config("regressing out needs at least one factor column".to_string()));
    }
    let fd = to_dmatrix(f);
    let xd = to_dmatrix(x);
    let coef = lstsq(&fd, &xd)?; // k x p
    let resid = &xd - &fd * &coef;
    Ok((from_dmatrix(&coef.transpose()), from_dmatrix(&resid)))
}

/// Removes the `f0` component from a residual block, reusing the same
/// projection machinery as [`regress_out`].
pub fn decorrelate_residual(u: &Matrix, f0: &Matrix) -> Result<Matrix> {
    let (_, utilde) = regress_out(u, f0)?;
    Ok(utilde)
}

/// Everything needed to map a new raw feature row into the training design's
/// column space: the fitted transform, both factor models, and the frozen
/// training-window regression coefficients.
#[derive(Debug)]
pub struct AugmentModel {
    pub transform: FittedTransform,
    pub factor: FactorModel,
    pub factor0: Option<FactorModel>,
    pub residual: ResidualMode,
    pub include_x: bool,
    /// Loadings of the raw features on F, `p x k` (absent when the design is
    /// residual-free).
    b_x_on_f: Option<Matrix>,
    /// Loadings of U on F0, `p x k0`, for the Utilde correction.
    u_on_f0: Option<Matrix>,
}

/// Fits the factor models and residual regressions on a training window and
/// assembles its design.
///
/// `x` is the (already standardized) raw feature block; the transform must
/// have been fitted on the same rows. `factor_spec` is fitted on the
/// transform output, `factor0_spec` on `x` itself.
pub fn fit_augment(
    x: &Matrix,
    transform: FittedTransform,
    factor_spec: &FactorSpec,
    factor0_spec: Option<&FactorSpec>,
    residual: ResidualMode,
    include_x: bool,
) -> Result<(AugmentModel, AugmentedDesign)> {
    if residual == ResidualMode::Utilde && factor0_spec.is_none() {
        return Err(Error::config(
            "the Utilde residual needs a factor model of the raw features".to_string(),
        ));
    }
    let z = transform.apply(x)?;
    let factor = factor_spec.fit(&z)?;
    let factor0 = match factor0_spec {
        Some(spec) => Some(spec.fit(x)?),
        None => None,
    };

    let mut blocks = Vec::new();
    if let Some(f0) = &factor0 {
        blocks.push((BlockLabel::F0, f0.f_hat.clone()));
    }
    blocks.push((BlockLabel::F, factor.f_hat.clone()));

    let mut b_x_on_f = None;
    let mut u_on_f0 = None;
    match residual {
        ResidualMode::None => {}
        ResidualMode::U => {
            let (b, u) = regress_out(x, &factor.f_hat)?;
            b_x_on_f = Some(b);
            blocks.push((BlockLabel::U, u));
        }
        ResidualMode::Utilde => {
            let (b, u) = regress_out(x, &factor.f_hat)?;
            b_x_on_f = Some(b);
            let f0 = factor0.as_ref().expect("checked above");
            let (c, utilde) = regress_out(&u, &f0.f_hat)?;
            u_on_f0 = Some(c);
            blocks.push((BlockLabel::Utilde, utilde));
        }
    }
    if include_x {
        blocks.push((BlockLabel::X, x.clone()));
    }
    let design = assemble(blocks)?;
    let model =
        AugmentModel { transform, factor, factor0, residual, include_x, b_x_on_f, u_on_f0 };
    Ok((model, design))
}

impl AugmentModel {
    /// Width of the designs this model produces.
    pub fn output_dim(&self) -> usize {
        let p = self.transform.input_dim();
        let mut w = self.factor.k + self.factor0.as_ref().map_or(0, |m| m.k);
        if self.residual != ResidualMode::None {
            w += p;
        }
        if self.include_x {
            w += p;
        }
        w
    }

    /// Maps one raw (standardized) feature row into the design columns, in
    /// the same order as the training design.
    pub fn augment_row(&self, x_new: &[f64]) -> Result<Vec<f64>> {
        let z_new = self.transform.apply_row(x_new)?;
        let f_new = project_new(&self.factor, &z_new)?;
        let f0_new = match &self.factor0 {
            Some(m) => Some(project_new(m, x_new)?),
            None => None,
        };
        let mut row = Vec::with_capacity(self.output_dim());
        if let Some(f0) = &f0_new {
            row.extend_from_slice(f0);
        }
        row.extend_from_slice(&f_new);
        if self.residual != ResidualMode::None {
            let b = self.b_x_on_f.as_ref().expect("residual designs store loadings");
            let mut u: Vec<f64> = x_new.to_vec();
            for (j, uj) in u.iter_mut().enumerate() {
                let brow = b.row(j);
                for (k, &fk) in f_new.iter().enumerate() {
                    *uj -= brow[k] * fk;
                }
            }
            if self.residual == ResidualMode::Utilde {
                let c = self.u_on_f0.as_ref().expect("Utilde stores F0 loadings");
                let f0 = f0_new.as_ref().expect("Utilde requires factor0");
                for (j, uj) in u.iter_mut().enumerate() {
                    let crow = c.row(j);
                    for (k, &fk) in f0.iter().enumerate() {
                        *uj -= crow[k] * fk;
                    }
                }
            }
            row.extend_from_slice(&u);
        }
        if self.include_x {
            row.extend_from_slice(x_new);
        }
        Ok(row)
    }
}

/// Largest `|f' u|` entry, the orthogonality defect between a factor block
/// and a residual block.
pub fn orthogonality_defect(f: &Matrix, u: &Matrix) -> f64 {
    let fd = to_dmatrix(f);
    let ud = to_dmatrix(u);
    let prod: DMatrix<f64> = fd.tr_mul(&ud);
    prod.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}
