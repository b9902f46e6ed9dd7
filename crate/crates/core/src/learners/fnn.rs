//! Small fully-connected network trained by mini-batch gradient descent.
//!
//! The network is deliberately plain: ReLU hidden layers, a scalar head
//! (linear for regression, sigmoid for binary classification), optional
//! dropout on hidden activations, and constant-step mini-batch gradient
//! descent. Dropout follows the classic convention: units are dropped at
//! training time without rescaling, and inference multiplies hidden
//! activations by the keep probability.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Prediction target semantics shared across learners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Binary,
}

/// One dense layer, `w` laid out as `out_dim x in_dim`.
#[derive(Debug, Clone)]
pub struct Layer {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer { w: Matrix::zeros(self.w.nrows(), self.w.ncols()), b: vec![0.0; self.b.len()] }
    }
}

/// Loss summary of a training run, measured on the full training set with
/// dropout disabled, before the first step and after the last.
#[derive(Debug, Clone, Copy)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Multi-layer perceptron with a scalar head.
#[derive(Debug, Clone)]
pub struct Mlp {
    /// Hidden layers followed by the output layer.
    pub layers: Vec<Layer>,
    /// Dropout rate on hidden activations, in `[0, 1)`.
    pub dropout: f64,
    pub task: Task,
}

impl Mlp {
    /// Random initialization: He-scaled normal weights for ReLU layers,
    /// Xavier-scaled for the head, zero biases.
    pub fn init<R: Rng>(
        input_dim: usize,
        hidden: &[usize],
        task: Task,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Mlp> {
        if input_dim == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(Error::config("network layers need at least one unit".to_string()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::config(format!("dropout rate {dropout} outside [0, 1)")));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for &h in hidden {
            layers.push(random_layer(h, fan_in, (2.0 / fan_in as f64).sqrt(), rng));
            fan_in = h;
        }
        layers.push(random_layer(1, fan_in, (1.0 / fan_in as f64).sqrt(), rng));
        Ok(Mlp { layers, dropout, task })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    /// Hidden activations of the last hidden layer at inference time
    /// (dropout replaced by expectation scaling).
    pub fn last_hidden(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (hidden, _) = self.forward_inference(x)?;
        Ok(hidden.into_iter().last().unwrap_or_else(|| x.to_vec()))
    }

    /// Raw head output at inference time (before the sigmoid for binary).
    pub fn raw_output(&self, x: &[f64]) -> Result<f64> {
        let (_, out) = self.forward_inference(x)?;
        Ok(out)
    }

    /// Model prediction: the raw head for regression, the positive-class
    /// probability for binary classification.
    pub fn predict_row(&self, x: &[f64]) -> Result<f64> {
        let out = self.raw_output(x)?;
        Ok(match self.task {
            Task::Regression => out,
            Task::Binary => sigmoid(out),
        })
    }

    fn forward_inference(&self, x: &[f64]) -> Result<(Vec<Vec<f64>>, f64)> {
        if x.len() != self.input_dim() {
            return Err(Error::config(format!(
                "input has {} entries, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let keep = 1.0 - self.dropout;
        let n_hidden = self.layers.len() - 1;
        let mut hidden = Vec::with_capacity(n_hidden);
        let mut a: Vec<f64> = x.to_vec();
        for layer in &self.layers[..n_hidden] {
            let mut h = affine(layer, &a);
            for v in &mut h {
                *v = v.max(0.0) * keep;
            }
            hidden.push(h.clone());
            a = h;
        }
        let out = affine(&self.layers[n_hidden], &a)[0];
        Ok((hidden, out))
    }

    /// Mean loss over a batch and the gradient with respect to every layer.
    ///
    /// `masks`, when given, supplies one dropout mask per example per hidden
    /// layer (entries 0 or 1, applied without rescaling, the training-time
    /// convention). Exposing the masks keeps the function deterministic so
    /// finite-difference checks can pin the analytic gradient.
    pub fn loss_and_grad(
        &self,
        x: &Matrix,
        y: &[f64],
        masks: Option<&[Vec<Vec<f64>>]>,
    ) -> Result<(f64, Vec<Layer>)> {
        if x.nrows() != y.len() || x.nrows() == 0 {
            return Err(Error::config(format!(
                "batch of {} rows with {} labels",
                x.nrows(),
                y.len()
            )));
        }
        let n_hidden = self.layers.len() - 1;
        let mut grads: Vec<Layer> = self.layers.iter().map(Layer::zeros_like).collect();
        let mut total_loss = 0.0;
        let inv_b = 1.0 / x.nrows() as f64;

        for i in 0..x.nrows() {
            // Forward pass, keeping pre-activations and masked activations.
            let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_hidden + 1);
            acts.push(x.row(i).to_vec());
            let mut relu_alive: Vec<Vec<bool>> = Vec::with_capacity(n_hidden);
            for (l, layer) in self.layers[..n_hidden].iter().enumerate() {
                let z = affine(layer, &acts[l]);
                let mut h = Vec::with_capacity(z.len());
                let mut alive = Vec::with_capacity(z.len());
                for (u, &zv) in z.iter().enumerate() {
                    let mut v = zv.max(0.0);
                    let mut on = zv > 0.0;
                    if let Some(all) = masks {
                        let m = all[i][l][u];
                        v *= m;
                        on = on && m != 0.0;
                    }
                    h.push(v);
                    alive.push(on);
                }
                relu_alive.push(alive);
                acts.push(h);
            }
            let out = affine(&self.layers[n_hidden], &acts[n_hidden])[0];

            // Loss and output-gradient.
            let (loss_i, dout) = match self.task {
                Task::Regression => {
                    let r = out - y[i];
                    (0.5 * r * r, r)
                }
                Task::Binary => {
                    let p = sigmoid(out);
                    let pc = p.clamp(1e-12, 1.0 - 1e-12);
                    let loss = -(y[i] * pc.ln() + (1.0 - y[i]) * (1.0 - pc).ln());
                    (loss, p - y[i])
                }
            };
            total_loss += loss_i;

            // Backward pass.
            let mut delta = vec![dout];
            for l in (0..self.layers.len()).rev() {
                let input = &acts[l];
                {
                    let g = &mut grads[l];
                    for (u, &du) in delta.iter().enumerate() {
                        g.b[u] += du * inv_b;
                        let grow = g.w.row_mut(u);
                        for (j, &aj) in input.iter().enumerate() {
                            grow[j] += du * aj * inv_b;
                        }
                    }
                }
                if l == 0 {
                    break;
                }
                // Propagate through the layer's weights, then the previous
                // layer's ReLU/dropout gate.
                let layer = &self.layers[l];
                let mut prev = vec![0.0; layer.w.ncols()];
                for (u, &du) in delta.iter().enumerate() {
                    let wrow = layer.w.row(u);
                    for (j, pv) in prev.iter_mut().enumerate() {
                        *pv += du * wrow[j];
                    }
                }
                for (j, pv) in prev.iter_mut().enumerate() {
                    if !relu_alive[l - 1][j] {
                        *pv = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok((total_loss * inv_b, grads))
    }

    /// Mean loss on a data set with dropout disabled.
    pub fn loss(&self, x: &Matrix, y: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..x.nrows() {
            let out = self.raw_output(x.row(i))?;
            total += match self.task {
                Task::Regression => {
                    let r = out - y[i];
                    0.5 * r * r
                }
                Task::Binary => {
                    let p = sigmoid(out).clamp(1e-12, 1.0 - 1e-12);
                    -(y[i] * p.ln() + (1.0 - y[i]) * (1.0 - p).ln())
                }
            };
        }
        Ok(total / x.nrows().max(1) as f64)
    }

    /// Trains in place with constant-step mini-batch gradient descent,
    /// reshuffling every epoch. Fails with the epoch number if the loss
    /// stops being finite.
    pub fn train<R: Rng>(
        &mut self,
        x: &Matrix,
        y: &[f64],
        epochs: usize,
        learn_rate: f64,
        batch: usize,
        rng: &mut R,
    ) -> Result<TrainReport> {
        if x.nrows() != y.len() || x.nrows() == 0 {
            return Err(Error::config(format!(
                "training set of {} rows with {} labels",
                x.nrows(),
                y.len()
            )));
        }
        if batch == 0 || learn_rate <= 0.0 {
            return Err(Error::config("batch size and learning rate must be positive".to_string()));
        }
        let initial_loss = self.loss(x, y)?;
        let n = x.nrows();
        let n_hidden = self.layers.len() - 1;
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 0..epochs {
            order.shuffle(rng);
            let mut epoch_loss = 0.0;
            let mut batches = 0.0f64;
            for chunk in order.chunks(batch) {
                let xb = x.rows_subset(chunk)?;
                let yb: Vec<f64> = chunk.iter().map(|&i| y[i]).collect();
                let masks = if self.dropout > 0.0 {
                    Some(sample_masks(&self.layers[..n_hidden], chunk.len(), self.dropout, rng))
                } else {
                    None
                };
                let (loss, grads) = self.loss_and_grad(&xb, &yb, masks.as_deref())?;
                epoch_loss += loss;
                batches += 1.0;
                for (layer, grad) in self.layers.iter_mut().zip(&grads) {
                    for u in 0..layer.w.nrows() {
                        let wrow = layer.w.row_mut(u);
                        let grow = grad.w.row(u);
                        for (wv, gv) in wrow.iter_mut().zip(grow) {
                            *wv -= learn_rate * gv;
                        }
                        layer.b[u] -= learn_rate * grad.b[u];
                    }
                }
            }
            if !(epoch_loss / batches.max(1.0)).is_finite() {
                return Err(Error::numerical(format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
        }
        let final_loss = self.loss(x, y)?;
        if !final_loss.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite training loss at epoch {}",
                epochs.saturating_sub(1)
            )));
        }
        Ok(TrainReport { initial_loss, final_loss })
    }
}

/// Dropout masks for a batch: `masks[example][hidden_layer][unit]`.
fn sample_masks<R: Rng>(
    hidden_layers: &[Layer],
    batch_len: usize,
    rate: f64,
    rng: &mut R,
) -> Vec<Vec<Vec<f64>>> {
    (0..batch_len)
        .map(|_| {
            hidden_layers
                .iter()
                .map(|l| {
                    (0..l.b.len())
                        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn random_layer<R: Rng>(out_dim: usize, in_dim: usize, sd: f64, rng: &mut R) -> Layer {
    let normal = Normal::new(0.0, sd).expect("positive sd");
    let data: Vec<f64> = (0..out_dim * in_dim).map(|_| normal.sample(rng)).collect();
    Layer { w: Matrix::new(out_dim, in_dim, data).expect("shape"), b: vec![0.0; out_dim] }
}

fn affine(layer: &Layer, x: &[f64]) -> Vec<f64> {
    let mut out = layer.b.clone();
    for (u, ov) in out.iter_mut().enumerate() {
        let wrow = layer.w.row(u);
        for (j, &xj) in x.iter().enumerate() {
            *ov += wrow[j] * xj;
        }
    }
    out
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
