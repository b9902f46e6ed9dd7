//! Window planning and out-of-sample metrics.
//!
//! A rolling evaluation walks a window of `m` consecutive training rows
//! through the data, refitting once every `h` predictions; a static
//! evaluation splits once. Regression quality is scored by out-of-sample
//! R-squared against the training-mean baseline (so a score of zero means
//! "no better than quoting the training mean"), classification by the plain
//! error rate.

use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::error::{Error, Result};

/// One evaluation step: fit on `train`, predict `test`. Ranges are
/// half-open row indices into the full panel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub train: Range<usize>,
    pub test: Range<usize>,
}

/// The full sequence of rolling windows over a panel.
#[derive(Debug, Clone)]
pub struct WindowPlan {
    pub n_total: usize,
    pub m: usize,
    pub h: usize,
    pub windows: Vec<Window>,
}

/// Plans a rolling evaluation: training windows of `m` rows, refit every
/// `h` predictions, test blocks tiling rows `m..n_total` exactly (the last
/// block may be shorter than `h`).
pub fn plan_windows(n_total: usize, m: usize, h: usize) -> Result<WindowPlan> {
    if m < 2 {
        return Err(Error::config(format!("window size {m} is below the minimum of 2")));
    }
    if h < 1 {
        return Err(Error::config("refit stride must be at least 1".to_string()));
    }
    if m >= n_total {
        return Err(Error::config(format!(
            "window size {m} leaves no test rows out of {n_total}"
        )));
    }
    let mut windows = Vec::new();
    let mut t = m;
    while t < n_total {
        let end = (t + h).min(n_total);
        windows.push(Window { train: t - m..t, test: t..end });
        t = end;
    }
    Ok(WindowPlan { n_total, m, h, windows })
}

/// Which score an evaluation reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "oos_r2_rolling")]
    OosR2Rolling,
    #[serde(rename = "oos_r2")]
    OosR2,
    #[serde(rename = "err")]
    Err,
}

/// Evaluation outcome carrying enough raw material (predictions, truths,
/// and per-time baselines) to recompute `value` exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: MetricKind,
    pub value: f64,
    /// Per-window metric values; `None` marks a window where the metric is
    /// degenerate (for example a constant-baseline R-squared denominator).
    pub per_window: Vec<Option<f64>>,
    pub predictions: Vec<f64>,
    pub truths: Vec<f64>,
    /// Training-mean baseline aligned with each prediction.
    pub baselines: Vec<f64>,
}

impl EvalReport {
    /// Recomputes `value` from the stored vectors; used to prove the report
    /// is self-consistent.
    pub fn recompute(&self) -> Result<f64> {
        match self.metric {
            MetricKind::OosR2Rolling | MetricKind::OosR2 => {
                oos_r2_rolling(&self.truths, &self.predictions, &self.baselines)
            }
            MetricKind::Err => {
                let labels: Vec<f64> =
                    self.predictions.iter().map(|&p| if p > 0.5 { 1.0 } else { 0.0 }).collect();
                classification_error(&self.truths, &labels)
            }
        }
    }
}

fn check_lengths(y_true: &[f64], y_pred: &[f64]) -> Result<()> {
    if y_true.len() != y_pred.len() {
        return Err(Error::config(format!(
            "{} truths vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::data("cannot score an empty prediction set".to_string()));
    }
    Ok(())
}

/// Out-of-sample R-squared with a per-time baseline: one minus the ratio of
/// prediction squared error to baseline squared error. May be negative.
pub fn oos_r2_rolling(y_true: &[f64], y_pred: &[f64], y_bar: &[f64]) -> Result<f64> {
    check_lengths(y_true, y_pred)?;
    if y_bar.len() != y_true.len() {
        return Err(Error::config(format!(
            "{} baselines vs {} truths",
            y_bar.len(),
            y_true.len()
        )));
    }
    let num: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p) * (t - p)).sum();
    let den: f64 = y_true.iter().zip(y_bar).map(|(t, b)| (t - b) * (t - b)).sum();
    if den <= 0.0 {
        return Err(Error::data(
            "constant-baseline degenerate: baseline squared error is zero".to_string(),
        ));
    }
    Ok(1.0 - num / den)
}

/// Out-of-sample R-squared against a single training-mean baseline.
pub fn oos_r2_static(y_true: &[f64], y_pred: &[f64], train_mean: f64) -> Result<f64> {
    let baseline = vec![train_mean; y_true.len()];
    oos_r2_rolling(y_true, y_pred, &baseline)
}

/// Fraction of mismatched labels.
pub fn classification_error(labels_true: &[f64], labels_pred: &[f64]) -> Result<f64> {
    check_lengths(labels_true, labels_pred)?;
    let wrong = labels_true.iter().zip(labels_pred).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / labels_true.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rolling_plan_matches_hand_enumeration() {
        let plan = plan_windows(10, 6, 2).unwrap();
        assert_eq!(plan.windows.len(), 2);
        assert_eq!(plan.windows[0], Window { train: 0..6, test: 6..8 });
        assert_eq!(plan.windows[1], Window { train: 2..8, test: 8..10 });
    }

    #[test]
    fn ragged_tail_is_kept_as_a_short_block() {
        let plan = plan_windows(10, 6, 3).unwrap();
        assert_eq!(plan.windows.len(), 2);
        assert_eq!(plan.windows[0].test, 6..9);
        assert_eq!(plan.windows[1].test, 9..10);
        assert_eq!(plan.windows[1].train, 3..9);
    }

    #[test]
    fn unit_stride_gives_one_window_per_test_point() {
        let plan = plan_windows(10, 6, 1).unwrap();
        assert_eq!(plan.windows.len(), 4);
        for (i, w) in plan.windows.iter().enumerate() {
            assert_eq!(w.test, 6 + i..7 + i);
            assert_eq!(w.train.len(), 6);
        }
    }

    #[test]
    fn degenerate_plans_are_rejected() {
        assert!(plan_windows(10, 10, 2).is_err());
        assert!(plan_windows(10, 12, 2).is_err());
        assert!(plan_windows(10, 1, 2).is_err());
        assert!(plan_windows(10, 6, 0).is_err());
    }

    proptest! {
        #[test]
        fn test_blocks_tile_the_post_window_rows(
            n in 3usize..200,
            m in 2usize..50,
            h in 1usize..20,
        ) {
            prop_assume!(m < n);
            let plan = plan_windows(n, m, h).unwrap();
            let mut covered = Vec::new();
            for w in &plan.windows {
                prop_assert_eq!(w.train.len(), m);
                prop_assert_eq!(w.train.end, w.test.start);
                prop_assert!(w.test.len() <= h);
                covered.extend(w.test.clone());
            }
            let expect: Vec<usize> = (m..n).collect();
            prop_assert_eq!(covered, expect);
        }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let y = [1.0, 2.0, 3.0];
        let bar = [0.0, 0.0, 0.0];
        assert_eq!(oos_r2_rolling(&y, &y, &bar).unwrap(), 1.0);
    }

    #[test]
    fn baseline_parity_scores_zero() {
        let y = [1.0, 2.0, 3.0];
        let bar = [1.5, 1.5, 1.5];
        assert_eq!(oos_r2_rolling(&y, &bar, &bar).unwrap(), 0.0);
    }

    #[test]
    fn rolling_r2_matches_hand_arithmetic() {
        let v = oos_r2_rolling(&[1.0, 2.0], &[2.0, 2.0], &[0.0, 0.0]).unwrap();
        assert!((v - 0.8).abs() < 1e-15);
    }

    #[test]
    fn constant_baseline_is_a_degenerate_error() {
        let err = oos_r2_rolling(&[1.0, 1.0], &[0.5, 0.5], &[1.0, 1.0]).unwrap_err();
        assert!(err.to_string().contains("constant-baseline degenerate"));
    }

    #[test]
    fn static_r2_matches_hand_arithmetic() {
        assert_eq!(oos_r2_static(&[0.0, 2.0], &[1.0, 1.0], 1.0).unwrap(), 0.0);
        assert_eq!(oos_r2_static(&[0.0, 2.0], &[0.0, 2.0], 1.0).unwrap(), 1.0);
    }

    #[test]
    fn classification_error_counts_mismatches() {
        let a = [1.0, 0.0, 1.0, 1.0];
        assert_eq!(classification_error(&a, &a).unwrap(), 0.0);
        let flipped: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
        assert_eq!(classification_error(&a, &flipped).unwrap(), 1.0);
        let mut ten = vec![0.0; 10];
        let mut pred = vec![0.0; 10];
        ten[0] = 1.0;
        pred[1] = 1.0;
        pred[2] = 1.0;
        // Truth and prediction disagree at indices 0, 1, 2.
        assert_eq!(classification_error(&ten, &pred).unwrap(), 0.3);
        assert!(classification_error(&[], &[]).is_err());
        assert!(classification_error(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn reports_recompute_their_own_value() {
        let truths = vec![1.0, 2.0, 3.0, 4.0];
        let preds = vec![1.1, 1.8, 3.3, 3.7];
        let bars = vec![2.0, 2.0, 2.5, 2.5];
        let value = oos_r2_rolling(&truths, &preds, &bars).unwrap();
        let report = EvalReport {
            metric: MetricKind::OosR2Rolling,
            value,
            per_window: vec![Some(value)],
            predictions: preds,
            truths,
            baselines: bars,
        };
        assert_eq!(report.recompute().unwrap(), report.value);
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"oos_r2_rolling\""));
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.value, report.value);
    }
}
