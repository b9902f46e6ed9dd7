//! Nonlinear feature transforms applied before factor extraction.
//!
//! Five families share one fitted interface: pairwise interactions, Gaussian
//! and polynomial kernel features against sampled landmark rows, the hidden
//! layer of a small supervised network, and per-feature log likelihood
//! ratios from class-conditional kernel density estimates. An identity
//! transform is included so pipelines can run factor extraction on the raw
//! design through the same plumbing.
//!
//! A [`FittedTransform`] freezes everything learned from the training window
//! (landmarks, weights, density estimates) and applies row-locally and
//! deterministically afterwards, including on rows it has never seen.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{
    expect_magic, read_f64_vec, read_matrix, read_string, read_u64, read_u8, write_f64_vec,
    write_matrix, write_string, write_u64, write_u8,
};
use crate::learners::fnn::{Mlp, Task, TrainReport};
use crate::matrix::{quantile_sorted, Matrix};

const TRANSFORM_MAGIC: &[u8; 8] = b"FARMTFM1";

/// Which transform family to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    /// Pass the design through unchanged.
    Identity,
    /// All pairwise products `x_i x_j` with `i <= j` (squares included).
    Interactions,
    /// Gaussian kernel features against sampled landmark rows.
    Rbf,
    /// Polynomial kernel features against sampled landmark rows.
    Poly,
    /// Hidden-layer activations of a small supervised network.
    Fnn,
    /// Per-feature log likelihood ratios between the two classes.
    Lr,
}

/// Transform configuration. One flat struct covers every kind; fields
/// irrelevant to the chosen kind are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformSpec {
    pub kind: TransformKind,
    /// Landmark count for kernel transforms; defaults to `min(500, n)`.
    pub n0: Option<usize>,
    /// Gaussian kernel width; defaults to `1 / (p * mean column variance)`.
    pub gamma: Option<f64>,
    pub degree: usize,
    pub coef0: f64,
    pub hidden_width: usize,
    pub epochs: usize,
    pub learn_rate: f64,
    /// Density floor for likelihood ratios.
    pub epsilon_floor: f64,
    /// Overrides the pipeline seed for landmark sampling and network init.
    pub seed: Option<u64>,
}

impl Default for TransformSpec {
    fn default() -> Self {
        TransformSpec {
            kind: TransformKind::Interactions,
            n0: None,
            gamma: None,
            degree: 2,
            coef0: 1.0,
            hidden_width: 128,
            epochs: 20,
            learn_rate: 1e-3,
            epsilon_floor: 1e-2,
            seed: None,
        }
    }
}

impl TransformSpec {
    pub fn of_kind(kind: TransformKind) -> Self {
        TransformSpec { kind, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(n0) = self.n0 {
            if n0 == 0 {
                return Err(Error::config("kernel transforms need n0 >= 1".to_string()));
            }
        }
        if let Some(g) = self.gamma {
            if !g.is_finite() || g <= 0.0 {
                return Err(Error::config(format!("gamma = {g} must be finite and > 0")));
            }
        }
        if self.degree == 0 {
            return Err(Error::config("polynomial degree must be >= 1".to_string()));
        }
        if !self.coef0.is_finite() {
            return Err(Error::config(format!("coef0 = {} must be finite", self.coef0)));
        }
        if self.hidden_width == 0 {
            return Err(Error::config("hidden_width must be >= 1".to_string()));
        }
        if !self.learn_rate.is_finite() || self.learn_rate <= 0.0 {
            return Err(Error::config(format!("learn_rate {} must be positive", self.learn_rate)));
        }
        if !self.epsilon_floor.is_finite() || self.epsilon_floor <= 0.0 {
            return Err(Error::config(format!(
                "epsilon_floor {} must be positive",
                self.epsilon_floor
            )));
        }
        Ok(())
    }
}

/// Kernel evaluated against landmark rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    Rbf { gamma: f64 },
    Poly { degree: usize, coef0: f64 },
}

/// All pairwise products `x_i x_j` for `i <= j` in lexicographic `(i, j)`
/// order, squares included; output length `p (p + 1) / 2`.
pub fn interactions(x: &[f64]) -> Vec<f64> {
    let p = x.len();
    let mut out = Vec::with_capacity(p * (p + 1) / 2);
    for i in 0..p {
        for j in i..p {
            out.push(x[i] * x[j]);
        }
    }
    out
}

/// `n0` distinct row indices drawn uniformly without replacement,
/// deterministic given the seed.
pub fn select_landmarks(x: &Matrix, n0: usize, seed: u64) -> Result<Vec<usize>> {
    let n = x.nrows();
    if n0 > n {
        return Err(Error::data(format!("cannot select {n0} landmarks from {n} rows")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n0);
    Ok(idx)
}

/// Kernel features of one row against every landmark row: entry `j` is
/// `exp(-gamma ||x - l_j||^2)` for the Gaussian kernel and
/// `(x' l_j + coef0)^degree` for the polynomial kernel.
pub fn kernel_features(x: &[f64], landmarks: &Matrix, kernel: &Kernel) -> Result<Vec<f64>> {
    if x.len() != landmarks.ncols() {
        return Err(Error::data(format!(
            "row has {} entries, landmarks have {}",
            x.len(),
            landmarks.ncols()
        )));
    }
    let mut out = Vec::with_capacity(landmarks.nrows());
    for j in 0..landmarks.nrows() {
        let l = landmarks.row(j);
        let v = match kernel {
            Kernel::Rbf { gamma } => {
                let d2: f64 = x.iter().zip(l).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * d2).exp()
            }
            Kernel::Poly { degree, coef0 } => {
                let ip: f64 = x.iter().zip(l).map(|(a, b)| a * b).sum();
                (ip + coef0).powi(*degree as i32)
            }
        };
        out.push(v);
    }
    Ok(out)
}

/// Per-class kernel density estimates: one Gaussian KDE per feature, with
/// Silverman bandwidths computed from that class's training rows.
#[derive(Debug, Clone)]
struct ClassKde {
    samples: Matrix,
    bandwidths: Vec<f64>,
}

impl ClassKde {
    fn new(samples: Matrix) -> ClassKde {
        let n = samples.nrows();
        let bandwidths = (0..samples.ncols())
            .map(|j| {
                let mut col = samples.col(j);
                col.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mean = col.iter().sum::<f64>() / n as f64;
                let var =
                    col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
                let iqr = quantile_sorted(&col, 0.75) - quantile_sorted(&col, 0.25);
                let mut scale = var.sqrt().min(iqr / 1.34);
                if !(scale > 0.0) {
                    // Degenerate spread (constant feature or a single
                    // sample): fall back to unit scale.
                    scale = 1.0;
                }
                0.9 * scale * (n as f64).powf(-0.2)
            })
            .collect();
        ClassKde { samples, bandwidths }
    }

    fn density(&self, j: usize, v: f64) -> f64 {
        let h = self.bandwidths[j];
        let n = self.samples.nrows();
        let mut sum = 0.0;
        for i in 0..n {
            let z = (v - self.samples.get(i, j)) / h;
            sum += (-0.5 * z * z).exp();
        }
        sum / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt())
    }
}

#[derive(Debug)]
enum State {
    Identity,
    Interactions,
    Kernel { landmarks: Matrix, kernel: Kernel },
    Net { w1: Matrix, b1: Vec<f64> },
    Lr { class1: ClassKde, class2: ClassKde, floor: f64 },
}

/// A transform frozen after fitting: landmarks, network weights, or density
/// estimates, plus the dimensions it maps between.
#[derive(Debug)]
pub struct FittedTransform {
    pub spec: TransformSpec,
    state: State,
    input_dim: usize,
    output_dim: usize,
    /// Training losses of the network fit (None for other kinds and for
    /// transforms loaded from disk).
    pub train_report: Option<TrainReport>,
}

/// Fits a transform on a training design. `y` is required for the supervised
/// kinds: network responses, or two-class labels for likelihood ratios
/// (the smaller label value is class 1). `default_seed` drives landmark
/// sampling and network initialization unless `TransformSpec::seed` is set.
pub fn fit_transform(
    spec: &TransformSpec,
    x: &Matrix,
    y: Option<&[f64]>,
    task: Task,
    default_seed: u64,
) -> Result<FittedTransform> {
    spec.validate()?;
    let n = x.nrows();
    let p = x.ncols();
    if n == 0 || p == 0 {
        return Err(Error::data(format!("cannot fit a transform on a {n} x {p} matrix")));
    }
    x.check_finite("transform input")?;
    let seed = spec.seed.unwrap_or(default_seed);
    let (state, output_dim, train_report) = match spec.kind {
        TransformKind::Identity => (State::Identity, p, None),
        TransformKind::Interactions => (State::Interactions, p * (p + 1) / 2, None),
        TransformKind::Rbf | TransformKind::Poly => {
            let n0 = spec.n0.unwrap_or(n.min(500));
            let idx = select_landmarks(x, n0, seed)?;
            let landmarks = x.rows_subset(&idx)?;
            let kernel = match spec.kind {
                TransformKind::Rbf => {
                    Kernel::Rbf { gamma: spec.gamma.unwrap_or_else(|| default_gamma(x)) }
                }
                _ => Kernel::Poly { degree: spec.degree, coef0: spec.coef0 },
            };
            (State::Kernel { landmarks, kernel }, n0, None)
        }
        TransformKind::Fnn => {
            let y = y.ok_or_else(|| {
                Error::config("the network transform needs training responses".to_string())
            })?;
            if task == Task::Binary && y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::data("binary task labels must be exactly 0 or 1".to_string()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = Mlp::init(p, &[spec.hidden_width], task, 0.0, &mut rng)?;
            let report = if spec.epochs > 0 {
                net.train(x, y, spec.epochs, spec.learn_rate, 64, &mut rng)?
            } else {
                let loss = net.loss(x, y)?;
                TrainReport { initial_loss: loss, final_loss: loss }
            };
            let w1 = net.layers[0].w.clone();
            let b1 = net.layers[0].b.clone();
            (State::Net { w1, b1 }, spec.hidden_width, Some(report))
        }
        TransformKind::Lr => {
            let y = y.ok_or_else(|| {
                Error::config("the likelihood-ratio transform needs class labels".to_string())
            })?;
            if y.len() != n {
                return Err(Error::data(format!("{} labels for {n} rows", y.len())));
            }
            let mut levels: Vec<f64> = y.to_vec();
            levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
            levels.dedup();
            if levels.len() != 2 {
                return Err(Error::data(format!(
                    "likelihood ratios need exactly two classes, found {}",
                    levels.len()
                )));
            }
            let rows_of = |label: f64| -> Vec<usize> {
                (0..n).filter(|&i| y[i] == label).collect()
            };
            let class1 = ClassKde::new(x.rows_subset(&rows_of(levels[0]))?);
            let class2 = ClassKde::new(x.rows_subset(&rows_of(levels[1]))?);
            (State::Lr { class1, class2, floor: spec.epsilon_floor }, p, None)
        }
    };
    Ok(FittedTransform { spec: spec.clone(), state, input_dim: p, output_dim, train_report })
}

/// Default Gaussian kernel width: `1 / (p * mean sample column variance)`,
/// falling back to 1 when the matrix has no spread at all.
fn default_gamma(x: &Matrix) -> f64 {
    let n = x.nrows();
    let p = x.ncols();
    if n < 2 {
        return 1.0;
    }
    let mut total_var = 0.0;
    for j in 0..p {
        let col = x.col(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        total_var += col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    }
    let mean_var = total_var / p as f64;
    if mean_var > 0.0 {
        1.0 / (p as f64 * mean_var)
    } else {
        1.0
    }
}

impl FittedTransform {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Transforms one row; length must match the training width.
    pub fn apply_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::data(format!(
                "row has {} entries, transform expects {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(match &self.state {
            State::Identity => x.to_vec(),
            State::Interactions => interactions(x),
            State::Kernel { landmarks, kernel } => kernel_features(x, landmarks, kernel)?,
            State::Net { w1, b1 } => {
                let mut out = b1.clone();
                for (u, o) in out.iter_mut().enumerate() {
                    let row = w1.row(u);
                    for (j, &xj) in x.iter().enumerate() {
                        *o += row[j] * xj;
                    }
                    *o = o.max(0.0);
                }
                out
            }
            State::Lr { class1, class2, floor } => (0..x.len())
                .map(|j| {
                    let f2 = class2.density(j, x[j]).max(*floor);
                    let f1 = class1.density(j, x[j]).max(*floor);
                    f2.ln() - f1.ln()
                })
                .collect(),
        })
    }

    /// Row-wise application to a whole matrix.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut data = Vec::with_capacity(x.nrows() * self.output_dim);
        for i in 0..x.nrows() {
            data.extend(self.apply_row(x.row(i))?);
        }
        Matrix::new(x.nrows(), self.output_dim, data)
    }

    /// Writes the fitted state to the binary container.
    pub fn save_bin(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        w.write_all(TRANSFORM_MAGIC)?;
        write_u8(&mut w, 1)?;
        let spec_json = serde_json::to_string(&self.spec)
            .map_err(|e| Error::data(format!("cannot encode transform spec: {e}")))?;
        write_string(&mut w, &spec_json)?;
        write_u64(&mut w, self.input_dim as u64)?;
        write_u64(&mut w, self.output_dim as u64)?;
        match &self.state {
            State::Identity => write_u8(&mut w, 0)?,
            State::Interactions => write_u8(&mut w, 1)?,
            State::Kernel { landmarks, kernel: Kernel::Rbf { gamma } } => {
                write_u8(&mut w, 2)?;
                write_f64_vec(&mut w, &[*gamma])?;
                write_matrix(&mut w, landmarks)?;
            }
            State::Kernel { landmarks, kernel: Kernel::Poly { degree, coef0 } } => {
                write_u8(&mut w, 3)?;
                write_u64(&mut w, *degree as u64)?;
                write_f64_vec(&mut w, &[*coef0])?;
                write_matrix(&mut w, landmarks)?;
            }
            State::Net { w1, b1 } => {
                write_u8(&mut w, 4)?;
                write_f64_vec(&mut w, b1)?;
                write_matrix(&mut w, w1)?;
            }
            State::Lr { class1, class2, floor } => {
                write_u8(&mut w, 5)?;
                write_f64_vec(&mut w, &[*floor])?;
                write_f64_vec(&mut w, &class1.bandwidths)?;
                write_f64_vec(&mut w, &class2.bandwidths)?;
                write_matrix(&mut w, &class1.samples)?;
                write_matrix(&mut w, &class2.samples)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a fitted state saved by [`FittedTransform::save_bin`].
    pub fn load_bin(path: &Path) -> Result<FittedTransform> {
        let file = File::open(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let mut r = BufReader::new(file);
        expect_magic(&mut r, TRANSFORM_MAGIC, path)?;
        let version = read_u8(&mut r)?;
        if version != 1 {
            return Err(Error::data(format!("unsupported transform container version {version}")));
        }
        let spec: TransformSpec = serde_json::from_str(&read_string(&mut r)?)
            .map_err(|e| Error::data(format!("{}: bad transform spec: {e}", path.display())))?;
        let input_dim = read_u64(&mut r)? as usize;
        let output_dim = read_u64(&mut r)? as usize;
        let state = match read_u8(&mut r)? {
            0 => State::Identity,
            1 => State::Interactions,
            2 => {
                let gamma = read_scalar(&mut r)?;
                let landmarks = read_matrix(&mut r)?;
                State::Kernel { landmarks, kernel: Kernel::Rbf { gamma } }
            }
            3 => {
                let degree = read_u64(&mut r)? as usize;
                let coef0 = read_scalar(&mut r)?;
                let landmarks = read_matrix(&mut r)?;
                State::Kernel { landmarks, kernel: Kernel::Poly { degree, coef0 } }
            }
            4 => {
                let b1 = read_f64_vec(&mut r)?;
                let w1 = read_matrix(&mut r)?;
                State::Net { w1, b1 }
            }
            5 => {
                let floor = read_scalar(&mut r)?;
                let h1 = read_f64_vec(&mut r)?;
                let h2 = read_f64_vec(&mut r)?;
                let s1 = read_matrix(&mut r)?;
                let s2 = read_matrix(&mut r)?;
                State::Lr {
                    class1: ClassKde { samples: s1, bandwidths: h1 },
                    class2: ClassKde { samples: s2, bandwidths: h2 },
                    floor,
                }
            }
            tag => return Err(Error::data(format!("bad transform state tag {tag}"))),
        };
        Ok(FittedTransform { spec, state, input_dim, output_dim, train_report: None })
    }
}

fn read_scalar(r: &mut impl Read) -> Result<f64> {
    let v = read_f64_vec(r)?;
    if v.len() != 1 {
        return Err(Error::data(format!("expected one scalar, found {}", v.len())));
    }
    Ok(v[0])
}
