//! TOML run configuration: one file binds data paths to pipeline jobs.
//!
//! A configuration names the data, a grid of transform kinds and factor
//! modes (their cross product becomes the job list), the augmentation
//! layout, optional screening, a learner with an optional penalty grid for
//! cross-validation, and the window plan. Unknown keys are rejected so
//! typos fail loudly, and the raw file bytes are hashed so every output can
//! state exactly which configuration produced it.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::augment::ResidualMode;
use crate::error::{Error, Result};
use crate::factors::{FactorMode, FactorSpec};
use crate::finance::BacktestConfig;
use crate::learners::{LearnerKind, LearnerSpec, Task};
use crate::matrix::StandardizeMode;
use crate::pipeline::{PipelineSpec, WindowScheme};
use crate::transforms::{TransformKind, TransformSpec};

/// Hex-encoded SHA-256 of raw bytes; the configuration fingerprint stamped
/// into every output.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn default_true() -> bool {
    true
}

fn default_repetitions() -> usize {
    1
}

fn default_cv_folds() -> usize {
    5
}

fn default_h() -> usize {
    1
}

fn default_quantile() -> f64 {
    0.05
}

fn default_top_n() -> usize {
    BacktestConfig::default().top_n
}

fn default_threshold() -> f64 {
    BacktestConfig::default().threshold
}

fn default_cost_bps() -> f64 {
    BacktestConfig::default().cost_bps
}

/// The parsed configuration file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub task: Task,
    /// Times each job is repeated with seeds `seed, seed+1, ...`.
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Default output directory; the command line `--out` flag wins.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub data: DataSection,
    #[serde(default)]
    pub standardize: StandardizeSection,
    pub transform: TransformSection,
    pub factor: FactorSection,
    #[serde(default)]
    pub factor0: Option<Factor0Section>,
    #[serde(default)]
    pub layout: LayoutSection,
    #[serde(default)]
    pub screen: Option<ScreenSection>,
    pub learner: LearnerSection,
    pub window: WindowSection,
    #[serde(default)]
    pub backtest: Option<BacktestSection>,
    #[serde(default)]
    pub event_study: Option<EventStudySection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub x: PathBuf,
    pub y: PathBuf,
    #[serde(default = "default_true")]
    pub has_header: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StandardizeSection {
    pub mode: StandardizeMode,
}

impl Default for StandardizeSection {
    fn default() -> Self {
        StandardizeSection { mode: StandardizeMode::Zscore }
    }
}

/// Transform grid plus shared knobs. Every kind listed in `kinds` becomes
/// one job per factor mode.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformSection {
    pub kinds: Vec<TransformKind>,
    #[serde(default)]
    pub n0: Option<usize>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub degree: Option<usize>,
    #[serde(default)]
    pub coef0: Option<f64>,
    #[serde(default)]
    pub hidden_width: Option<usize>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub learn_rate: Option<f64>,
    #[serde(default)]
    pub epsilon_floor: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl TransformSection {
    fn spec(&self, kind: TransformKind) -> TransformSpec {
        let d = TransformSpec::default();
        TransformSpec {
            kind,
            n0: self.n0,
            gamma: self.gamma,
            degree: self.degree.unwrap_or(d.degree),
            coef0: self.coef0.unwrap_or(d.coef0),
            hidden_width: self.hidden_width.unwrap_or(d.hidden_width),
            epochs: self.epochs.unwrap_or(d.epochs),
            learn_rate: self.learn_rate.unwrap_or(d.learn_rate),
            epsilon_floor: self.epsilon_floor.unwrap_or(d.epsilon_floor),
            seed: self.seed,
        }
    }
}

/// Factor mode grid plus estimator knobs.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorSection {
    pub modes: Vec<FactorMode>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub k_min: Option<usize>,
    #[serde(default)]
    pub k_max: Option<usize>,
    #[serde(default)]
    pub n_prime: Option<usize>,
    #[serde(default)]
    pub k_prime: Option<usize>,
    /// Reuse the first window's diversified projection weights everywhere.
    #[serde(default)]
    pub freeze_weights: bool,
}

impl FactorSection {
    fn spec(&self, mode: FactorMode) -> FactorSpec {
        let d = FactorSpec::default();
        FactorSpec {
            mode,
            k: self.k,
            k_min: self.k_min,
            k_max: self.k_max,
            n_prime: self.n_prime.unwrap_or(d.n_prime),
            k_prime: self.k_prime.unwrap_or(d.k_prime),
            ..FactorSpec::default()
        }
    }
}

/// Factors of the raw (untransformed) design, used to decorrelate the
/// residual block.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Factor0Section {
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub k_min: Option<usize>,
    #[serde(default)]
    pub k_max: Option<usize>,
}

impl Factor0Section {
    fn spec(&self) -> FactorSpec {
        FactorSpec {
            mode: FactorMode::Pca,
            k: self.k,
            k_min: self.k_min,
            k_max: self.k_max,
            ..FactorSpec::default()
        }
    }
}

/// Which blocks enter the augmented design beyond the factors.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutSection {
    pub residual: ResidualMode,
    pub include_x: bool,
    /// Append per-feature likelihood-ratio columns (binary task only).
    pub lr_block: bool,
}

impl Default for LayoutSection {
    fn default() -> Self {
        LayoutSection { residual: ResidualMode::U, include_x: false, lr_block: false }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreenSection {
    /// Residual columns kept by marginal screening.
    pub m: usize,
}

/// A scalar or a list; lists become cross-validation grids.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(vs) => vs.clone(),
        }
    }
}

/// Learner choice, penalty grid, and cross-validation folds.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSection {
    pub kind: LearnerKind,
    #[serde(default)]
    pub gamma1: Option<OneOrMany>,
    #[serde(default)]
    pub gamma2: Option<OneOrMany>,
    #[serde(default)]
    pub widths: Option<Vec<usize>>,
    #[serde(default)]
    pub dropout: Option<f64>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub learn_rate: Option<f64>,
    #[serde(default)]
    pub batch: Option<usize>,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub command: Option<Vec<String>>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
    #[serde(default = "default_cv_folds")]
    pub cv_folds: usize,
}

impl LearnerSection {
    /// Expands the gamma lists into a grid of learner specs (cartesian
    /// product, gamma1 outermost).
    fn grid(&self) -> Vec<LearnerSpec> {
        let d = LearnerSpec::default();
        let g1s = self.gamma1.as_ref().map_or(vec![d.gamma1], |g| g.values());
        let g2s = self.gamma2.as_ref().map_or(vec![d.gamma2], |g| g.values());
        let mut grid = Vec::with_capacity(g1s.len() * g2s.len());
        for &g1 in &g1s {
            for &g2 in &g2s {
                grid.push(LearnerSpec {
                    kind: self.kind,
                    gamma1: g1,
                    gamma2: g2,
                    widths: self.widths.clone().unwrap_or_else(|| d.widths.clone()),
                    dropout: self.dropout.unwrap_or(d.dropout),
                    epochs: self.epochs.unwrap_or(d.epochs),
                    learn_rate: self.learn_rate.unwrap_or(d.learn_rate),
                    batch: self.batch.unwrap_or(d.batch),
                    max_iter: self.max_iter.unwrap_or(d.max_iter),
                    command: self.command.clone().unwrap_or_default(),
                    timeout_secs: self.timeout_secs.unwrap_or(d.timeout_secs),
                });
            }
        }
        grid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Rolling,
    Static,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    pub scheme: SchemeName,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default = "default_h")]
    pub h: usize,
    #[serde(default)]
    pub train_fraction: Option<f64>,
}

impl WindowSection {
    fn scheme(&self) -> Result<WindowScheme> {
        match self.scheme {
            SchemeName::Rolling => {
                let m = self.m.ok_or_else(|| {
                    Error::config(
                        "window.m is required for the rolling scheme".to_string(),
                    )
                })?;
                Ok(WindowScheme::Rolling { m, h: self.h })
            }
            SchemeName::Static => {
                let f = self.train_fraction.ok_or_else(|| {
                    Error::config(
                        "window.train_fraction is required for the static scheme".to_string(),
                    )
                })?;
                Ok(WindowScheme::Static { train_fraction: f })
            }
        }
    }
}

/// Inputs and knobs for the backtest command.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestSection {
    pub scores: PathBuf,
    pub returns: PathBuf,
    pub caps: PathBuf,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_cost_bps")]
    pub cost_bps: f64,
}

impl BacktestSection {
    pub fn config(&self) -> BacktestConfig {
        BacktestConfig {
            top_n: self.top_n,
            threshold: self.threshold,
            cost_bps: self.cost_bps,
        }
    }
}

/// Inputs for the event-study command: a return panel plus either a ready
/// event list or scores to select events from.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventStudySection {
    pub returns: PathBuf,
    #[serde(default)]
    pub events: Option<PathBuf>,
    #[serde(default)]
    pub scores: Option<PathBuf>,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
}

impl EventStudySection {
    pub fn validate(&self) -> Result<()> {
        match (&self.events, &self.scores) {
            (Some(_), Some(_)) => Err(Error::config(
                "event_study: give either `events` or `scores`, not both".to_string(),
            )),
            (None, None) => Err(Error::config(
                "event_study: one of `events` or `scores` is required".to_string(),
            )),
            _ => Ok(()),
        }
    }
}

/// One pipeline run produced by the configuration grid.
#[derive(Debug, Clone)]
pub struct ResolvedJob {
    /// `<transform-kind>-<factor-mode>`, used in output file names.
    pub name: String,
    pub spec: PipelineSpec,
}

fn kind_name(kind: TransformKind) -> &'static str {
    match kind {
        TransformKind::Identity => "identity",
        TransformKind::Interactions => "interactions",
        TransformKind::Rbf => "rbf",
        TransformKind::Poly => "poly",
        TransformKind::Fnn => "fnn",
        TransformKind::Lr => "lr",
    }
}

fn mode_name(mode: FactorMode) -> &'static str {
    match mode {
        FactorMode::Pca => "pca",
        FactorMode::Dp => "dp",
    }
}

impl RunConfig {
    /// Parses and validates a configuration from TOML text.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| Error::config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, hashes, and parses a configuration file. The hash covers the
    /// raw bytes, so formatting changes change the fingerprint.
    pub fn from_path(path: &Path) -> Result<(RunConfig, String)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let cfg = Self::parse(&text)?;
        Ok((cfg, sha256_hex(text.as_bytes())))
    }

    fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::config("repetitions must be at least 1".to_string()));
        }
        if self.transform.kinds.is_empty() {
            return Err(Error::config("transform.kinds must name at least one kind".to_string()));
        }
        if self.factor.modes.is_empty() {
            return Err(Error::config("factor.modes must name at least one mode".to_string()));
        }
        let needs_binary = self.layout.lr_block
            || self.transform.kinds.contains(&TransformKind::Lr);
        if needs_binary && self.task != Task::Binary {
            return Err(Error::config(
                "likelihood-ratio columns need task = \"binary\"".to_string(),
            ));
        }
        if let Some(es) = &self.event_study {
            es.validate()?;
            if !(es.quantile > 0.0 && es.quantile < 1.0) {
                return Err(Error::config(format!(
                    "event_study.quantile {} must lie strictly between 0 and 1",
                    es.quantile
                )));
            }
        }
        self.window.scheme()?;
        for kind in &self.transform.kinds {
            self.transform.spec(*kind).validate()?;
        }
        for spec in self.learner.grid() {
            spec.validate()?;
        }
        Ok(())
    }

    /// Expands the transform-kind x factor-mode grid into pipeline jobs.
    /// `seed_override` replaces the configured seed (the `--seed` flag).
    pub fn jobs(&self, seed_override: Option<u64>) -> Result<Vec<ResolvedJob>> {
        let seed = seed_override.unwrap_or(self.seed);
        let window = self.window.scheme()?;
        let learners = self.learner.grid();
        let mut jobs = Vec::with_capacity(self.transform.kinds.len() * self.factor.modes.len());
        for &kind in &self.transform.kinds {
            for &mode in &self.factor.modes {
                let spec = PipelineSpec {
                    task: self.task,
                    standardize_mode: self.standardize.mode,
                    transform: self.transform.spec(kind),
                    factor: self.factor.spec(mode),
                    factor0: self.factor0.as_ref().map(|s| s.spec()),
                    residual: self.layout.residual,
                    include_x: self.layout.include_x,
                    lr_block: self
                        .layout
                        .lr_block
                        .then(|| self.transform.spec(TransformKind::Lr)),
                    screen_m: self.screen.as_ref().map(|s| s.m),
                    learners: learners.clone(),
                    cv_folds: self.learner.cv_folds,
                    window,
                    freeze_dp_weights: self.factor.freeze_weights,
                    seed,
                    keep_models: false,
                };
                jobs.push(ResolvedJob {
                    name: format!("{}-{}", kind_name(kind), mode_name(mode)),
                    spec,
                });
            }
        }
        Ok(jobs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
seed = 42
task = "binary"

[data]
x = "data/x.csv"
y = "data/y_bin.csv"

[standardize]
mode = "zscore"

[transform]
kinds = ["identity", "interactions", "rbf", "poly", "fnn", "lr"]
n0 = 200
gamma = 0.25

[factor]
modes = ["pca", "dp"]
k = 3
n_prime = 400
k_prime = 6

[layout]
residual = "u"

[screen]
m = 50

[learner]
kind = "ridge"
gamma2 = [0.01, 1.0]

[window]
scheme = "static"
train_fraction = 0.25
"#;

    #[test]
    fn the_grid_expands_to_kind_times_mode_jobs() {
        let cfg = RunConfig::parse(FULL).unwrap();
        let jobs = cfg.jobs(None).unwrap();
        assert_eq!(jobs.len(), 12);
        assert_eq!(jobs[0].name, "identity-pca");
        assert_eq!(jobs[1].name, "identity-dp");
        assert_eq!(jobs[11].name, "lr-dp");
        let spec = &jobs[4].spec;
        assert_eq!(spec.seed, 42);
        assert_eq!(spec.screen_m, Some(50));
        assert_eq!(spec.learners.len(), 2);
        assert_eq!(spec.learners[0].gamma2, 0.01);
        assert_eq!(spec.factor.n_prime, 400);
        assert_eq!(spec.transform.n0, Some(200));
        assert_eq!(spec.window, WindowScheme::Static { train_fraction: 0.25 });
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_key_name() {
        let bad = FULL.replace("[screen]\nm = 50", "[screen]\nm = 50\ntypo_key = 1");
        let err = RunConfig::parse(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("typo_key"), "{msg}");
        assert!(msg.contains("line"), "missing line diagnostics: {msg}");
    }

    #[test]
    fn minimal_config_fills_documented_defaults() {
        let text = r#"
task = "regression"

[data]
x = "x.csv"
y = "y.csv"

[transform]
kinds = ["interactions"]

[factor]
modes = ["pca"]

[learner]
kind = "ridge"

[window]
scheme = "rolling"
m = 100
"#;
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.repetitions, 1);
        assert!(cfg.data.has_header);
        assert_eq!(cfg.learner.cv_folds, 5);
        let jobs = cfg.jobs(None).unwrap();
        assert_eq!(jobs.len(), 1);
        assert_eq!(jobs[0].spec.window, WindowScheme::Rolling { m: 100, h: 1 });
        assert_eq!(jobs[0].spec.residual, ResidualMode::U);
        assert!(!jobs[0].spec.include_x);
        assert!(jobs[0].spec.lr_block.is_none());
        assert_eq!(jobs[0].spec.standardize_mode, StandardizeMode::Zscore);
    }

    #[test]
    fn seed_flag_overrides_the_configured_seed() {
        let cfg = RunConfig::parse(FULL).unwrap();
        let jobs = cfg.jobs(Some(7)).unwrap();
        assert!(jobs.iter().all(|j| j.spec.seed == 7));
    }

    #[test]
    fn rolling_needs_m_and_static_needs_a_fraction() {
        let text = FULL.replace("scheme = \"static\"\ntrain_fraction = 0.25", "scheme = \"rolling\"");
        let err = RunConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("window.m"), "{err}");
        let text = FULL.replace("train_fraction = 0.25", "");
        let err = RunConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("train_fraction"), "{err}");
    }

    #[test]
    fn likelihood_ratio_columns_require_the_binary_task() {
        let text = FULL.replace("task = \"binary\"", "task = \"regression\"");
        let err = RunConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("binary"), "{err}");
    }

    #[test]
    fn penalty_lists_become_a_cartesian_grid() {
        let text = FULL
            .replace("kind = \"ridge\"", "kind = \"lasso\"")
            .replace("gamma2 = [0.01, 1.0]", "gamma1 = [0.001, 0.01, 0.1]\ngamma2 = [0.5, 2.0]");
        let cfg = RunConfig::parse(&text).unwrap();
        let grid = cfg.learner.grid();
        assert_eq!(grid.len(), 6);
        assert_eq!(grid[0].gamma1, 0.001);
        assert_eq!(grid[0].gamma2, 0.5);
        assert_eq!(grid[5].gamma1, 0.1);
        assert_eq!(grid[5].gamma2, 2.0);
    }

    #[test]
    fn event_study_needs_exactly_one_event_source() {
        let both = format!(
            "{FULL}\n[event_study]\nreturns = \"r.csv\"\nevents = \"e.csv\"\nscores = \"s.csv\"\n"
        );
        assert!(RunConfig::parse(&both).unwrap_err().to_string().contains("not both"));
        let neither = format!("{FULL}\n[event_study]\nreturns = \"r.csv\"\n");
        assert!(RunConfig::parse(&neither).unwrap_err().to_string().contains("required"));
        let ok = format!("{FULL}\n[event_study]\nreturns = \"r.csv\"\nevents = \"e.csv\"\n");
        assert!(RunConfig::parse(&ok).is_ok());
    }

    #[test]
    fn the_fingerprint_tracks_raw_bytes() {
        assert_eq!(sha256_hex(FULL.as_bytes()), sha256_hex(FULL.as_bytes()));
        assert_ne!(sha256_hex(FULL.as_bytes()), sha256_hex(b"other"));
        assert_eq!(sha256_hex(b"").len(), 64);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, FULL).unwrap();
        let (cfg, hash) = RunConfig::from_path(&path).unwrap();
        assert_eq!(hash, sha256_hex(FULL.as_bytes()));
        assert_eq!(cfg.seed, 42);
    }

    #[test]
    fn frozen_weights_and_backtest_defaults_flow_through() {
        let text = FULL.replace("k_prime = 6", "k_prime = 6\nfreeze_weights = true");
        let cfg = RunConfig::parse(&text).unwrap();
        assert!(cfg.jobs(None).unwrap()[0].spec.freeze_dp_weights);

        let with_bt = format!(
            "{FULL}\n[backtest]\nscores = \"s.csv\"\nreturns = \"r.csv\"\ncaps = \"c.csv\"\n"
        );
        let cfg = RunConfig::parse(&with_bt).unwrap();
        let bt = cfg.backtest.unwrap().config();
        assert_eq!(bt.cost_bps, 13.0);
        assert_eq!(bt.top_n, 50);
        assert_eq!(bt.threshold, 0.5);
    }

    #[test]
    fn malformed_toml_reports_the_line() {
        let err = RunConfig::parse("task = \"regression\"\nnot toml ===\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }
}
