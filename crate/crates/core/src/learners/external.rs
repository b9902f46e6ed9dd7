//! Subprocess adapter for learners implemented outside this crate.
//!
//! The protocol is file-based: the configured command is invoked with four
//! extra arguments, the paths of the training design, training labels
//! (an n x 1 matrix), and test design, all in the binary matrix container,
//! followed by the path where the command must write its predictions as an
//! n_test x 1 matrix in the same container. Fitting and predicting happen in
//! a single invocation, so the adapter keeps the training data and replays it
//! for every predict call.

use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::io::{load_bin, save_bin};
use crate::matrix::Matrix;

/// A configured external learner bound to its training data.
#[derive(Debug)]
pub struct ExternalModel {
    command: Vec<String>,
    timeout: Duration,
    train_q: Matrix,
    train_y: Vec<f64>,
}

/// Captures the command and training data; nothing runs until predict time.
pub fn external_fit(
    command: &[String],
    timeout_secs: u64,
    q: &Matrix,
    y: &[f64],
) -> Result<ExternalModel> {
    if command.is_empty() {
        return Err(Error::config("external learner needs a nonempty command".to_string()));
    }
    if y.len() != q.nrows() || q.nrows() == 0 {
        return Err(Error::data(format!(
            "{} labels for a training design of {} rows",
            y.len(),
            q.nrows()
        )));
    }
    Ok(ExternalModel {
        command: command.to_vec(),
        timeout: Duration::from_secs(timeout_secs),
        train_q: q.clone(),
        train_y: y.to_vec(),
    })
}

impl ExternalModel {
    pub fn input_width(&self) -> usize {
        self.train_q.ncols()
    }

    /// Runs the command on (train, labels, test) and reads the predictions
    /// back. Timeouts, nonzero exits, and malformed outputs are errors.
    pub fn predict(&self, q_new: &Matrix) -> Result<Vec<f64>> {
        if q_new.ncols() != self.train_q.ncols() {
            return Err(Error::data(format!(
                "design width {} does not match the fitted width {}",
                q_new.ncols(),
                self.train_q.ncols()
            )));
        }
        let dir = ScratchDir::create()?;
        let train_path = dir.0.join("train_design.bin");
        let labels_path = dir.0.join("train_labels.bin");
        let test_path = dir.0.join("test_design.bin");
        let pred_path = dir.0.join("predictions.bin");
        save_bin(&self.train_q, &train_path)?;
        let labels = Matrix::new(self.train_y.len(), 1, self.train_y.clone())?;
        save_bin(&labels, &labels_path)?;
        save_bin(q_new, &test_path)?;

        let mut cmd = Command::new(&self.command[0]);
        cmd.args(&self.command[1..])
            .arg(&train_path)
            .arg(&labels_path)
            .arg(&test_path)
            .arg(&pred_path)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null());
        let mut child = cmd
            .spawn()
            .map_err(|e| Error::config(format!("cannot launch {:?}: {e}", self.command[0])))?;
        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait()? {
                Some(status) => break status,
                None if Instant::now() >= deadline => {
                    child.kill().ok();
                    child.wait().ok();
                    return Err(Error::numerical(format!(
                        "external learner timed out after {} s",
                        self.timeout.as_secs()
                    )));
                }
                None => std::thread::sleep(Duration::from_millis(10)),
            }
        };
        if !status.success() {
            return Err(Error::numerical(format!("external learner exited with {status}")));
        }
        let preds = load_bin(&pred_path)?;
        if preds.ncols() != 1 || preds.nrows() != q_new.nrows() {
            return Err(Error::data(format!(
                "external learner returned a {} x {} predictions matrix for {} test rows",
                preds.nrows(),
                preds.ncols(),
                q_new.nrows()
            )));
        }
        Ok(preds.col(0))
    }
}

/// Unique scratch directory removed on drop.
struct ScratchDir(PathBuf);

impl ScratchDir {
    fn create() -> Result<ScratchDir> {
        static COUNTER: AtomicU64 = AtomicU64::new(0);
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        let dir = std::env::temp_dir().join(format!(
            "farmaug-ext-{}-{}-{}",
            std::process::id(),
            nanos,
            COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::create_dir_all(&dir)?;
        Ok(ScratchDir(dir))
    }
}

impl Drop for ScratchDir {
    fn drop(&mut self) {
        std::fs::remove_dir_all(&self.0).ok();
    }
}
