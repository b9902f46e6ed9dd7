//! End-to-end evaluation runs.
//!
//! [`run_pipeline`] walks the window plan and, inside each window, performs
//! the full fit sequence on training rows only: standardize, fit the
//! nonlinear transform, extract factors, form residual blocks, append the
//! optional likelihood-ratio block, screen the residual columns, select a
//! learner by cross-validation when a grid is given, fit, and predict the
//! window's test rows. Nothing fitted in a window ever sees rows outside
//! that window's training range, which is what makes the reported metrics
//! honest out-of-sample numbers.

use crate::augment::{assemble, fit_augment, AugmentModel, BlockLabel, ResidualMode};
use crate::error::{Error, Result};
use crate::evaluate::{
    classification_error, oos_r2_rolling, plan_windows, EvalReport, MetricKind, Window,
    WindowPlan,
};
use crate::factors::{dp_pretrain, FactorMode, FactorSpec};
use crate::learners::{cross_validate, fit, FittedLearner, FoldScheme, LearnerSpec, Task};
use crate::matrix::{standardize, Matrix, StandardizeMode, Standardizer};
use crate::screening::{screen, LossKind, ScreenResult};
use crate::transforms::{fit_transform, FittedTransform, TransformKind, TransformSpec};

/// How the panel is split for evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowScheme {
    /// Training window of `m` rows, refit every `h` predictions.
    Rolling { m: usize, h: usize },
    /// One split: the first `train_fraction` of rows train, the rest test.
    Static { train_fraction: f64 },
}

/// A fully resolved evaluation job: every stage's configuration plus the
/// window scheme and base seed.
#[derive(Debug, Clone)]
pub struct PipelineSpec {
    pub task: Task,
    pub standardize_mode: StandardizeMode,
    pub transform: TransformSpec,
    pub factor: FactorSpec,
    /// Factor model of the raw features (the F0 block), when wanted.
    pub factor0: Option<FactorSpec>,
    pub residual: ResidualMode,
    pub include_x: bool,
    /// Per-feature likelihood-ratio block appended to the design;
    /// binary tasks only.
    pub lr_block: Option<TransformSpec>,
    /// Keep only this many residual-block columns, ranked by screening.
    pub screen_m: Option<usize>,
    /// Candidate learners; a single entry is fit directly, several are
    /// cross-validated per window.
    pub learners: Vec<LearnerSpec>,
    pub cv_folds: usize,
    pub window: WindowScheme,
    /// Pretrain diversified-projection weights once on the first window and
    /// reuse them in every later window.
    pub freeze_dp_weights: bool,
    pub seed: u64,
    /// Retain per-window fitted models in the outcome.
    pub keep_models: bool,
}

impl PipelineSpec {
    /// A minimal spec: one learner, no F0 block, residual U, no screening.
    pub fn basic(
        task: Task,
        transform: TransformSpec,
        factor: FactorSpec,
        learner: LearnerSpec,
        window: WindowScheme,
    ) -> Self {
        PipelineSpec {
            task,
            standardize_mode: StandardizeMode::Zscore,
            transform,
            factor,
            factor0: None,
            residual: ResidualMode::U,
            include_x: false,
            lr_block: None,
            screen_m: None,
            learners: vec![learner],
            cv_folds: 5,
            window,
            freeze_dp_weights: false,
            seed: 0,
            keep_models: false,
        }
    }
}

/// Everything fitted inside one window, retained when `keep_models` is set.
#[derive(Debug)]
pub struct WindowModel {
    pub window_index: usize,
    pub standardizer: Standardizer,
    pub augment: AugmentModel,
    pub lr_block: Option<FittedTransform>,
    pub screen: Option<ScreenResult>,
    pub learner: FittedLearner,
    pub train_mean: f64,
}

/// Result of a full pipeline run.
#[derive(Debug)]
pub struct RunOutcome {
    pub report: EvalReport,
    pub plan: WindowPlan,
    /// Learner spec chosen in each window (after cross-validation).
    pub chosen: Vec<LearnerSpec>,
    /// Per-window models; empty unless `keep_models` was set.
    pub models: Vec<WindowModel>,
}

struct WindowOutput {
    preds: Vec<f64>,
    truths: Vec<f64>,
    baseline: f64,
    chosen: LearnerSpec,
    model: Option<WindowModel>,
}

/// Runs the configured evaluation over a feature panel and response vector.
///
/// `x` rows are time-ordered; `y[i]` is the response for row `i`. Any stage
/// failure is reported with its window index and stage name.
pub fn run_pipeline(x: &Matrix, y: &[f64], spec: &PipelineSpec) -> Result<RunOutcome> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::config(format!("{n} feature rows vs {} responses", y.len())));
    }
    if spec.learners.is_empty() {
        return Err(Error::config("at least one learner spec is required".to_string()));
    }
    for l in &spec.learners {
        l.validate()?;
    }
    if spec.learners.len() > 1 && spec.cv_folds < 2 {
        return Err(Error::config("cross-validation needs at least 2 folds".to_string()));
    }
    if let Some(lr) = &spec.lr_block {
        if lr.kind != TransformKind::Lr {
            return Err(Error::config(format!(
                "the extra likelihood-ratio block must use the lr transform, got {:?}",
                lr.kind
            )));
        }
        if spec.task != Task::Binary {
            return Err(Error::config(
                "the likelihood-ratio block needs a binary task".to_string(),
            ));
        }
    }
    if spec.screen_m.is_some() && spec.residual == ResidualMode::None && !spec.include_x {
        return Err(Error::config(
            "screening needs a residual block or the raw features in the design".to_string(),
        ));
    }

    let plan = build_plan(n, spec.window)?;

    let mut factor = spec.factor.clone();
    let mut factor0 = spec.factor0.clone();
    if spec.freeze_dp_weights {
        freeze_weights(x, y, spec, &plan.windows[0], &mut factor, &mut factor0)?;
    }

    let eval_one = |wi: usize, win: &Window| -> Result<WindowOutput> {
        eval_window(x, y, spec, &factor, factor0.as_ref(), wi, win)
    };

    #[cfg(feature = "parallel")]
    let outputs: Result<Vec<WindowOutput>> = {
        use rayon::prelude::*;
        plan.windows.par_iter().enumerate().map(|(wi, win)| eval_one(wi, win)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outputs: Result<Vec<WindowOutput>> =
        plan.windows.iter().enumerate().map(|(wi, win)| eval_one(wi, win)).collect();
    let outputs = outputs?;

    let mut predictions = Vec::new();
    let mut truths = Vec::new();
    let mut baselines = Vec::new();
    let mut per_window = Vec::new();
    let mut chosen = Vec::new();
    let mut models = Vec::new();
    let metric = metric_kind(spec);
    for out in outputs {
        per_window.push(window_metric(metric, &out));
        baselines.extend(std::iter::repeat(out.baseline).take(out.preds.len()));
        predictions.extend(out.preds);
        truths.extend(out.truths);
        chosen.push(out.chosen);
        if let Some(m) = out.model {
            models.push(m);
        }
    }

    let value = match metric {
        MetricKind::OosR2Rolling | MetricKind::OosR2 => {
            oos_r2_rolling(&truths, &predictions, &baselines)?
        }
        MetricKind::Err => {
            let labels: Vec<f64> =
                predictions.iter().map(|&p| if p > 0.5 { 1.0 } else { 0.0 }).collect();
            classification_error(&truths, &labels)?
        }
    };
    let report = EvalReport { metric, value, per_window, predictions, truths, baselines };
    Ok(RunOutcome { report, plan, chosen, models })
}

fn build_plan(n: usize, scheme: WindowScheme) -> Result<WindowPlan> {
    match scheme {
        WindowScheme::Rolling { m, h } => plan_windows(n, m, h),
        WindowScheme::Static { train_fraction } => {
            if !(train_fraction > 0.0 && train_fraction < 1.0) {
                return Err(Error::config(format!(
                    "train fraction {train_fraction} must lie strictly between 0 and 1"
                )));
            }
            let m = (n as f64 * train_fraction).floor() as usize;
            if m < 2 || m >= n {
                return Err(Error::config(format!(
                    "static split of {n} rows at fraction {train_fraction} leaves {m} \
                     training rows"
                )));
            }
            Ok(WindowPlan {
                n_total: n,
                m,
                h: n - m,
                windows: vec![Window { train: 0..m, test: m..n }],
            })
        }
    }
}

fn metric_kind(spec: &PipelineSpec) -> MetricKind {
    match (spec.task, spec.window) {
        (Task::Binary, _) => MetricKind::Err,
        (Task::Regression, WindowScheme::Rolling { .. }) => MetricKind::OosR2Rolling,
        (Task::Regression, WindowScheme::Static { .. }) => MetricKind::OosR2,
    }
}

fn window_metric(metric: MetricKind, out: &WindowOutput) -> Option<f64> {
    match metric {
        MetricKind::OosR2Rolling | MetricKind::OosR2 => {
            let baseline = vec![out.baseline; out.preds.len()];
            oos_r2_rolling(&out.truths, &out.preds, &baseline).ok()
        }
        MetricKind::Err => {
            let labels: Vec<f64> =
                out.preds.iter().map(|&p| if p > 0.5 { 1.0 } else { 0.0 }).collect();
            classification_error(&out.truths, &labels).ok()
        }
    }
}

/// Pretrains diversified-projection weights on the first window and pins
/// them into the local factor specs, so later windows reuse them.
fn freeze_weights(
    x: &Matrix,
    y: &[f64],
    spec: &PipelineSpec,
    first: &Window,
    factor: &mut FactorSpec,
    factor0: &mut Option<FactorSpec>,
) -> Result<()> {
    let ctx = "window 0, weight pretraining";
    let xw = x.slice_rows(first.train.start, first.train.end).map_err(|e| e.with_context(ctx))?;
    let yw = &y[first.train.clone()];
    let (xs, _) = standardize(&xw, spec.standardize_mode).map_err(|e| e.with_context(ctx))?;
    if factor.mode == FactorMode::Dp {
        let tf = fit_transform(&spec.transform, &xs, Some(yw), spec.task, spec.seed)
            .map_err(|e| e.with_context(ctx))?;
        let z = tf.apply(&xs).map_err(|e| e.with_context(ctx))?;
        let n_pre = factor.n_prime.min(z.nrows());
        let z_pre = z.slice_rows(0, n_pre).map_err(|e| e.with_context(ctx))?;
        let basis = dp_pretrain(&z_pre, factor.k_prime).map_err(|e| e.with_context(ctx))?;
        factor.frozen_w = Some(basis.w);
    }
    if let Some(f0) = factor0 {
        if f0.mode == FactorMode::Dp {
            let n_pre = f0.n_prime.min(xs.nrows());
            let x_pre = xs.slice_rows(0, n_pre).map_err(|e| e.with_context(ctx))?;
            let basis = dp_pretrain(&x_pre, f0.k_prime).map_err(|e| e.with_context(ctx))?;
            f0.frozen_w = Some(basis.w);
        }
    }
    Ok(())
}

/// Which design block screening trims: the residual block when present,
/// otherwise the raw features.
fn screen_target(spec: &PipelineSpec) -> Option<BlockLabel> {
    spec.screen_m?;
    match spec.residual {
        ResidualMode::U => Some(BlockLabel::U),
        ResidualMode::Utilde => Some(BlockLabel::Utilde),
        ResidualMode::None if spec.include_x => Some(BlockLabel::X),
        ResidualMode::None => None,
    }
}

fn eval_window(
    x: &Matrix,
    y: &[f64],
    spec: &PipelineSpec,
    factor: &FactorSpec,
    factor0: Option<&FactorSpec>,
    wi: usize,
    win: &Window,
) -> Result<WindowOutput> {
    let stage = |name: &str| format!("window {wi}, {name}");
    let wseed = spec.seed.wrapping_add((wi as u64).wrapping_mul(9973));

    let xw = x
        .slice_rows(win.train.start, win.train.end)
        .map_err(|e| e.with_context(&stage("data")))?;
    let yw = &y[win.train.clone()];
    let (xs, standardizer) = standardize(&xw, spec.standardize_mode)
        .map_err(|e| e.with_context(&stage("standardize")))?;

    let tf = fit_transform(&spec.transform, &xs, Some(yw), spec.task, wseed)
        .map_err(|e| e.with_context(&stage("transform")))?;
    let (amodel, design) =
        fit_augment(&xs, tf, factor, factor0, spec.residual, spec.include_x)
            .map_err(|e| e.with_context(&stage("factors")))?;
    let mut blocks = design.blocks;

    let lr_fit = match &spec.lr_block {
        Some(lrspec) => {
            let f = fit_transform(lrspec, &xs, Some(yw), spec.task, wseed)
                .map_err(|e| e.with_context(&stage("likelihood ratio")))?;
            let cols = f.apply(&xs).map_err(|e| e.with_context(&stage("likelihood ratio")))?;
            blocks.push((BlockLabel::Lr, cols));
            Some(f)
        }
        None => None,
    };

    let mut screen_res = None;
    let mut kept: Option<(BlockLabel, Vec<usize>)> = None;
    if let Some(m) = spec.screen_m {
        let target = screen_target(spec).expect("validated before the window loop");
        let factor_blocks: Vec<&Matrix> = blocks
            .iter()
            .filter(|(l, _)| matches!(l, BlockLabel::F0 | BlockLabel::F))
            .map(|(_, b)| b)
            .collect();
        let f_all =
            Matrix::hcat(&factor_blocks).map_err(|e| e.with_context(&stage("screening")))?;
        let idx = blocks
            .iter()
            .position(|(l, _)| *l == target)
            .expect("target block present by construction");
        let sr = screen(yw, &f_all, &blocks[idx].1, m, LossKind::from(spec.task))
            .map_err(|e| e.with_context(&stage("screening")))?;
        blocks[idx].1 = blocks[idx]
            .1
            .cols_subset(&sr.kept)
            .map_err(|e| e.with_context(&stage("screening")))?;
        kept = Some((target, sr.kept.clone()));
        screen_res = Some(sr);
    }

    let design = assemble(blocks).map_err(|e| e.with_context(&stage("assembly")))?;
    let q = design.assembled;

    let chosen = if spec.learners.len() == 1 {
        spec.learners[0].clone()
    } else {
        let cv = cross_validate(
            &q,
            yw,
            &spec.learners,
            spec.cv_folds,
            spec.task,
            FoldScheme::Contiguous,
            wseed,
        )
        .map_err(|e| e.with_context(&stage("model selection")))?;
        cv.best
    };
    let fitted =
        fit(&chosen, &q, yw, spec.task, wseed).map_err(|e| e.with_context(&stage("fit")))?;

    let mut test_rows = Vec::with_capacity(win.test.len() * q.ncols());
    for t in win.test.clone() {
        let xrow = standardizer
            .apply_row(x.row(t))
            .map_err(|e| e.with_context(&stage("prediction")))?;
        let row = design_row(&amodel, lr_fit.as_ref(), kept.as_ref(), &xrow)
            .map_err(|e| e.with_context(&stage("prediction")))?;
        test_rows.extend(row);
    }
    let q_test = Matrix::new(win.test.len(), q.ncols(), test_rows)
        .map_err(|e| e.with_context(&stage("prediction")))?;
    let preds =
        fitted.predict(&q_test).map_err(|e| e.with_context(&stage("prediction")))?;

    let train_mean = yw.iter().sum::<f64>() / yw.len() as f64;
    let model = spec.keep_models.then(|| WindowModel {
        window_index: wi,
        standardizer,
        augment: amodel,
        lr_block: lr_fit,
        screen: screen_res,
        learner: fitted,
        train_mean,
    });
    Ok(WindowOutput {
        preds,
        truths: y[win.test.clone()].to_vec(),
        baseline: train_mean,
        chosen,
        model,
    })
}

/// Maps one standardized raw row to the design columns of its window,
/// applying the screen's column selection and appending the
/// likelihood-ratio block, in the same canonical order as training.
fn design_row(
    model: &AugmentModel,
    lr: Option<&FittedTransform>,
    kept: Option<&(BlockLabel, Vec<usize>)>,
    x_std: &[f64],
) -> Result<Vec<f64>> {
    let full = model.augment_row(x_std)?;
    let p = x_std.len();
    let k0 = model.factor0.as_ref().map_or(0, |m| m.k);
    let k = model.factor.k;
    let mut out: Vec<f64> = full[..k0 + k].to_vec();
    let mut pos = k0 + k;
    if model.residual != ResidualMode::None {
        let block = &full[pos..pos + p];
        push_block(&mut out, block, model.residual_label(), kept);
        pos += p;
    }
    if model.include_x {
        let block = &full[pos..pos + p];
        push_block(&mut out, block, BlockLabel::X, kept);
    }
    if let Some(lrf) = lr {
        out.extend(lrf.apply_row(x_std)?);
    }
    Ok(out)
}

fn push_block(
    out: &mut Vec<f64>,
    block: &[f64],
    label: BlockLabel,
    kept: Option<&(BlockLabel, Vec<usize>)>,
) {
    match kept {
        Some((target, idx)) if *target == label => out.extend(idx.iter().map(|&j| block[j])),
        _ => out.extend_from_slice(block),
    }
}

impl AugmentModel {
    fn residual_label(&self) -> BlockLabel {
        match self.residual {
            ResidualMode::Utilde => BlockLabel::Utilde,
            _ => BlockLabel::U,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Low-rank panel whose response depends on the common component.
    fn factor_panel(n: usize, p: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let k = 2;
        let f: Vec<Vec<f64>> =
            (0..n).map(|_| (0..k).map(|_| normal.sample(&mut rng)).collect()).collect();
        let b: Vec<Vec<f64>> =
            (0..p).map(|_| (0..k).map(|_| normal.sample(&mut rng)).collect()).collect();
        let mut data = Vec::with_capacity(n * p);
        for fi in &f {
            for bj in &b {
                let common: f64 = fi.iter().zip(bj).map(|(a, c)| a * c).sum();
                data.push(common + 0.3 * normal.sample(&mut rng));
            }
        }
        let y: Vec<f64> =
            f.iter().map(|fi| 1.5 * fi[0] - fi[1] + 0.1 * normal.sample(&mut rng)).collect();
        (Matrix::new(n, p, data).unwrap(), y)
    }

    fn ridge() -> LearnerSpec {
        LearnerSpec::ridge(1.0)
    }

    fn pca(k: usize) -> FactorSpec {
        FactorSpec { k: Some(k), ..FactorSpec::default() }
    }

    fn identity() -> TransformSpec {
        TransformSpec::of_kind(TransformKind::Identity)
    }

    #[test]
    fn rolling_run_completes_and_recomputes_its_metric() {
        let (x, y) = factor_panel(60, 6, 1);
        let spec = PipelineSpec::basic(
            Task::Regression,
            identity(),
            pca(2),
            ridge(),
            WindowScheme::Rolling { m: 40, h: 10 },
        );
        let out = run_pipeline(&x, &y, &spec).unwrap();
        assert_eq!(out.report.metric, MetricKind::OosR2Rolling);
        assert_eq!(out.report.predictions.len(), 20);
        assert_eq!(out.plan.windows.len(), 2);
        assert_eq!(out.chosen.len(), 2);
        assert!(out.models.is_empty());
        assert!(out.report.value.is_finite());
        assert_eq!(out.report.recompute().unwrap(), out.report.value);
        // The response is driven by the factors, so the factor design should
        // beat the training-mean baseline comfortably.
        assert!(out.report.value > 0.5, "oos r2 {}", out.report.value);
    }

    #[test]
    fn identical_seeds_reproduce_reports_bit_for_bit() {
        let (x, y) = factor_panel(50, 5, 2);
        let mut spec = PipelineSpec::basic(
            Task::Regression,
            TransformSpec::of_kind(TransformKind::Interactions),
            pca(2),
            ridge(),
            WindowScheme::Rolling { m: 35, h: 5 },
        );
        spec.seed = 42;
        let a = run_pipeline(&x, &y, &spec).unwrap();
        let b = run_pipeline(&x, &y, &spec).unwrap();
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
    }

    #[test]
    fn corrupting_future_rows_leaves_earlier_predictions_unchanged() {
        let (x, y) = factor_panel(60, 6, 3);
        let spec = PipelineSpec::basic(
            Task::Regression,
            identity(),
            pca(2),
            ridge(),
            WindowScheme::Rolling { m: 40, h: 10 },
        );
        let clean = run_pipeline(&x, &y, &spec).unwrap();
        // Rows 50.. are after the first window's training and test ranges.
        let mut corrupted = x.clone();
        let mut y2 = y.clone();
        for i in 50..60 {
            for j in 0..corrupted.ncols() {
                corrupted.set(i, j, 1e6 + (i * j) as f64);
            }
            y2[i] = -1e6;
        }
        let dirty = run_pipeline(&corrupted, &y2, &spec).unwrap();
        assert_eq!(
            &clean.report.predictions[..10],
            &dirty.report.predictions[..10],
            "first-window predictions must depend only on rows before them"
        );
    }

    #[test]
    fn static_split_reports_the_static_metric() {
        let (x, y) = factor_panel(50, 5, 4);
        let spec = PipelineSpec::basic(
            Task::Regression,
            identity(),
            pca(2),
            ridge(),
            WindowScheme::Static { train_fraction: 0.7 },
        );
        let out = run_pipeline(&x, &y, &spec).unwrap();
        assert_eq!(out.report.metric, MetricKind::OosR2);
        assert_eq!(out.plan.windows.len(), 1);
        assert_eq!(out.plan.m, 35);
        assert_eq!(out.report.predictions.len(), 15);
        assert_eq!(out.report.per_window.len(), 1);
    }

    #[test]
    fn binary_tasks_report_an_error_rate() {
        let n = 80;
        let (x, _) = factor_panel(n, 5, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let s = x.row(i).iter().sum::<f64>();
                let noisy = s + 0.1 * (rng.random::<f64>() - 0.5);
                if noisy > 0.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let spec = PipelineSpec::basic(
            Task::Binary,
            identity(),
            pca(2),
            ridge(),
            WindowScheme::Rolling { m: 50, h: 15 },
        );
        let out = run_pipeline(&x, &y, &spec).unwrap();
        assert_eq!(out.report.metric, MetricKind::Err);
        assert!(out.report.value >= 0.0 && out.report.value <= 1.0);
        assert_eq!(out.report.recompute().unwrap(), out.report.value);
    }

    #[test]
    fn screening_trims_the_residual_block() {
        let (x, y) = factor_panel(60, 20, 7);
        let mut spec = PipelineSpec::basic(
            Task::Regression,
            identity(),
            pca(2),
            ridge(),
            WindowScheme::Rolling { m: 45, h: 15 },
        );
        spec.screen_m = Some(5);
        spec.keep_models = true;
        let out = run_pipeline(&x, &y, &spec).unwrap();
        assert_eq!(out.models.len(), 1);
        let model = &out.models[0];
        let sr = model.screen.as_ref().unwrap();
        assert_eq!(sr.kept.len(), 5);
        // Design width: 2 factors plus the 5 surviving residual columns.
        assert_eq!(model.learner.input_width(), 7);
        assert_eq!(out.report.predictions.len(), 15);
    }

    #[test]
    fn cross_validation_chooses_the_same_spec_on_reruns() {
        let (x, y) = factor_panel(60, 5, 8);
        let mut spec = PipelineSpec::basic(
            Task::Regression,
            identity(),
            pca(2),
            ridge(),
            WindowScheme::Rolling { m: 45, h: 15 },
        );
        spec.learners = vec![
            LearnerSpec::ridge(1e-4),
            LearnerSpec::ridge(1.0),
            LearnerSpec::ridge(1e4),
        ];
        let a = run_pipeline(&x, &y, &spec).unwrap();
        let b = run_pipeline(&x, &y, &spec).unwrap();
        assert_eq!(a.chosen.len(), 1);
        assert_eq!(a.chosen[0].gamma2, b.chosen[0].gamma2);
        // The heavily over-regularized candidate should not win on a panel
        // with real signal.
        assert!(a.chosen[0].gamma2 < 1e4);
    }

    #[test]
    fn likelihood_ratio_block_extends_the_design() {
        let n = 90;
        let p = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut data = Vec::with_capacity(n * p);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let label = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
            for j in 0..p {
                let shift = if label > 0.5 && j == 0 { 1.0 } else { 0.0 };
                data.push(normal.sample(&mut rng) + shift);
            }
            y.push(label);
        }
        let x = Matrix::new(n, p, data).unwrap();
        let mut spec = PipelineSpec::basic(
            Task::Binary,
            identity(),
            pca(1),
            ridge(),
            WindowScheme::Rolling { m: 60, h: 30 },
        );
        spec.lr_block = Some(TransformSpec::of_kind(TransformKind::Lr));
        spec.keep_models = true;
        let out = run_pipeline(&x, &y, &spec).unwrap();
        // 1 factor + 4 residual columns + 4 likelihood-ratio columns.
        assert_eq!(out.models[0].learner.input_width(), 9);
        assert!(out.models[0].lr_block.is_some());
    }

    #[test]
    fn stage_failures_name_the_window_and_stage() {
        let (x, y) = factor_panel(50, 5, 10);
        let mut spec = PipelineSpec::basic(
            Task::Regression,
            TransformSpec::of_kind(TransformKind::Rbf),
            pca(2),
            ridge(),
            WindowScheme::Rolling { m: 40, h: 10 },
        );
        spec.transform.n0 = Some(10_000);
        let err = run_pipeline(&x, &y, &spec).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("window 0") && msg.contains("transform"), "{msg}");
    }

    #[test]
    fn kept_models_cover_every_window_in_order() {
        let (x, y) = factor_panel(60, 5, 11);
        let mut spec = PipelineSpec::basic(
            Task::Regression,
            identity(),
            pca(2),
            ridge(),
            WindowScheme::Rolling { m: 40, h: 5 },
        );
        spec.keep_models = true;
        let out = run_pipeline(&x, &y, &spec).unwrap();
        assert_eq!(out.models.len(), out.plan.windows.len());
        for (i, m) in out.models.iter().enumerate() {
            assert_eq!(m.window_index, i);
        }
    }

    #[test]
    fn frozen_projection_weights_are_reused_across_windows() {
        let (x, y) = factor_panel(120, 30, 12);
        let mut spec = PipelineSpec::basic(
            Task::Regression,
            identity(),
            FactorSpec {
                mode: FactorMode::Dp,
                k: Some(2),
                n_prime: 40,
                k_prime: 4,
                ..FactorSpec::default()
            },
            ridge(),
            WindowScheme::Rolling { m: 80, h: 20 },
        );
        spec.freeze_dp_weights = true;
        spec.keep_models = true;
        let out = run_pipeline(&x, &y, &spec).unwrap();
        assert_eq!(out.models.len(), 2);
        let w0 = out.models[0].augment.factor.w.as_ref().unwrap();
        let w1 = out.models[1].augment.factor.w.as_ref().unwrap();
        assert_eq!(w0.data(), w1.data(), "frozen weights must match across windows");
        // Without freezing, the second window pretrains on different rows
        // and gets different weights.
        spec.freeze_dp_weights = false;
        let thawed = run_pipeline(&x, &y, &spec).unwrap();
        let t0 = thawed.models[0].augment.factor.w.as_ref().unwrap();
        let t1 = thawed.models[1].augment.factor.w.as_ref().unwrap();
        assert_ne!(t0.data(), t1.data());
    }
}
