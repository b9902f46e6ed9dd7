//! Deterministic synthetic dataset generators.
//!
//! Five generators cover the main workflows: a linear factor regression, a
//! pure interaction signal that defeats linear models on raw features, a
//! sparse idiosyncratic signal for screening, a return panel with planted
//! event-day jumps, and a tiny hand-checkable backtest fixture. Every
//! generator is a pure function of its seed, and `generate` writes CSV
//! files plus a `manifest.json` describing the draw.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::finance::{
    save_events_csv, save_series_csv, BacktestConfig, EventRow, SentimentScore, SeriesRow,
    OFFSET_MAX, OFFSET_MIN,
};
use crate::io::save_csv;
use crate::matrix::Matrix;

/// The available synthetic dataset kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    FactorRegression,
    InteractionSignal,
    ScreeningSparse,
    EventPanel,
    PortfolioFixture,
}

impl SynthKind {
    pub const ALL: [SynthKind; 5] = [
        SynthKind::FactorRegression,
        SynthKind::InteractionSignal,
        SynthKind::ScreeningSparse,
        SynthKind::EventPanel,
        SynthKind::PortfolioFixture,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SynthKind::FactorRegression => "factor-regression",
            SynthKind::InteractionSignal => "interaction-signal",
            SynthKind::ScreeningSparse => "screening-sparse",
            SynthKind::EventPanel => "event-panel",
            SynthKind::PortfolioFixture => "portfolio-fixture",
        }
    }

    /// Default `(n, p)` for the kind; for `EventPanel` these are assets
    /// and days.
    pub fn default_dims(&self) -> (usize, usize) {
        match self {
            SynthKind::FactorRegression => (400, 50),
            SynthKind::InteractionSignal => (600, 40),
            SynthKind::ScreeningSparse => (500, 200),
            SynthKind::EventPanel => (200, 300),
            SynthKind::PortfolioFixture => (3, 2),
        }
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = SynthKind::ALL.iter().map(|k| k.as_str()).collect();
                Error::config(format!(
                    "unknown synthetic kind {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

fn fill_normal(rng: &mut ChaCha8Rng, dist: &Normal<f64>, n: usize, p: usize) -> Matrix {
    let mut m = Matrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            m.set(i, j, dist.sample(rng));
        }
    }
    m
}

fn named(mut m: Matrix, prefix: &str) -> Matrix {
    let names: Vec<String> = (0..m.ncols()).map(|j| format!("{prefix}{j:03}")).collect();
    m.set_col_names(names).expect("name count matches column count");
    m
}

fn vector_matrix(v: &[f64], name: &str) -> Matrix {
    let rows: Vec<Vec<f64>> = v.iter().map(|&x| vec![x]).collect();
    let mut m = Matrix::from_rows(&rows).expect("nonempty single column");
    m.set_col_names(vec![name.to_string()]).expect("one name");
    m
}

/// Linear factor regression: three latent factors drive both the feature
/// panel and the response.
#[derive(Debug, Clone)]
pub struct FactorRegressionData {
    pub x: Matrix,
    pub y: Vec<f64>,
    /// Binary labels: indicator that the noisy factor score is positive.
    pub y_bin: Vec<f64>,
    pub f_true: Matrix,
    pub gamma: Vec<f64>,
    pub x_noise_sd: f64,
    pub y_noise_sd: f64,
}

/// Draws `x = f b' + noise`, `y = f gamma + noise` with three factors.
pub fn factor_regression(n: usize, p: usize, seed: u64) -> Result<FactorRegressionData> {
    if n < 20 || p < 5 {
        return Err(Error::config(format!(
            "factor-regression needs n >= 20 and p >= 5, got n={n}, p={p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let gamma = vec![1.5, -1.0, 0.5];
    let x_noise_sd = 0.5;
    let y_noise_sd = 0.1;
    let f = fill_normal(&mut rng, &std_normal, n, 3);
    let b = fill_normal(&mut rng, &std_normal, p, 3);
    let mut x = Matrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            let mut v = 0.0;
            for k in 0..3 {
                v += f.get(i, k) * b.get(j, k);
            }
            x.set(i, j, v + x_noise_sd * std_normal.sample(&mut rng));
        }
    }
    let mut y = Vec::with_capacity(n);
    let mut y_bin = Vec::with_capacity(n);
    for i in 0..n {
        let signal: f64 = (0..3).map(|k| f.get(i, k) * gamma[k]).sum();
        y.push(signal + y_noise_sd * std_normal.sample(&mut rng));
        let noisy = signal + 0.25 * std_normal.sample(&mut rng);
        y_bin.push(if noisy > 0.0 { 1.0 } else { 0.0 });
    }
    Ok(FactorRegressionData {
        x: named(x, "x"),
        y,
        y_bin,
        f_true: named(f, "f"),
        gamma,
        x_noise_sd,
        y_noise_sd,
    })
}

/// Pure interaction signal: the response is a quadratic form of two latent
/// factors, so it is invisible to linear fits on the raw features but
/// becomes linear in factors extracted from squared-and-crossed features.
#[derive(Debug, Clone)]
pub struct InteractionSignalData {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub f_true: Matrix,
    /// Coefficients of `f1^2`, `f1*f2`, `f2^2`.
    pub quad: [f64; 3],
    pub x_noise_sd: f64,
    pub y_noise_sd: f64,
}

/// Draws `x = f b' + noise`, `y = quadratic(f) + noise` with two factors.
pub fn interaction_signal(n: usize, p: usize, seed: u64) -> Result<InteractionSignalData> {
    if n < 20 || p < 4 {
        return Err(Error::config(format!(
            "interaction-signal needs n >= 20 and p >= 4, got n={n}, p={p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let quad = [1.0, 0.8, -0.6];
    let x_noise_sd = 0.3;
    let y_noise_sd = 0.1;
    let f = fill_normal(&mut rng, &std_normal, n, 2);
    let b = fill_normal(&mut rng, &std_normal, p, 2);
    let mut x = Matrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            let v = f.get(i, 0) * b.get(j, 0) + f.get(i, 1) * b.get(j, 1);
            x.set(i, j, v + x_noise_sd * std_normal.sample(&mut rng));
        }
    }
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let (f1, f2) = (f.get(i, 0), f.get(i, 1));
        let signal = quad[0] * f1 * f1 + quad[1] * f1 * f2 + quad[2] * f2 * f2;
        y.push(signal + y_noise_sd * std_normal.sample(&mut rng));
    }
    Ok(InteractionSignalData {
        x: named(x, "x"),
        y,
        f_true: named(f, "f"),
        quad,
        x_noise_sd,
        y_noise_sd,
    })
}

/// Sparse idiosyncratic signal: a handful of feature residuals carry the
/// response beyond the common factors.
#[derive(Debug, Clone)]
pub struct ScreeningSparseData {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub f_true: Matrix,
    pub u_true: Matrix,
    pub actives: Vec<usize>,
    pub coefs: Vec<f64>,
    pub gamma: Vec<f64>,
    pub y_noise_sd: f64,
}

/// Draws `x = f b' + u`, `y = f gamma + sum coef_j u_j + noise`, with the
/// active residual columns listed in `actives`.
pub fn screening_sparse(n: usize, p: usize, seed: u64) -> Result<ScreeningSparseData> {
    if n < 50 || p < 10 {
        return Err(Error::config(format!(
            "screening-sparse needs n >= 50 and p >= 10, got n={n}, p={p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let gamma = vec![1.0, -1.0, 0.5];
    let coefs = vec![2.0, -2.0, 2.5, -3.0, 2.2];
    let actives: Vec<usize> = if p > 150 {
        vec![5, 17, 42, 91, 150]
    } else {
        // Spread five distinct indices across the available columns.
        let mut idx: Vec<usize> = (0..5).map(|j| (2 * j + 1) * p / 10).collect();
        idx.dedup();
        if idx.len() < 5 {
            return Err(Error::config(format!(
                "screening-sparse cannot place 5 distinct active columns in p={p}"
            )));
        }
        idx
    };
    let y_noise_sd = 0.1;
    let f = fill_normal(&mut rng, &std_normal, n, 3);
    let b = fill_normal(&mut rng, &std_normal, p, 3);
    let u = fill_normal(&mut rng, &std_normal, n, p);
    let mut x = Matrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            let mut v = u.get(i, j);
            for k in 0..3 {
                v += f.get(i, k) * b.get(j, k);
            }
            x.set(i, j, v);
        }
    }
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let mut v: f64 = (0..3).map(|k| f.get(i, k) * gamma[k]).sum();
        for (&j, &c) in actives.iter().zip(&coefs) {
            v += c * u.get(i, j);
        }
        y.push(v + y_noise_sd * std_normal.sample(&mut rng));
    }
    Ok(ScreeningSparseData {
        x: named(x, "x"),
        y,
        f_true: named(f, "f"),
        u_true: named(u, "u"),
        actives,
        coefs,
        gamma,
        y_noise_sd,
    })
}

/// A return panel with asset and date effects plus planted event-day jumps.
#[derive(Debug, Clone)]
pub struct EventPanelSynth {
    pub returns: Vec<SeriesRow>,
    pub events: Vec<EventRow>,
    /// Jump added to the return on the event day itself (offset 0).
    pub beta0: f64,
    pub noise_sd: f64,
}

/// Draws a complete `n_assets x n_days` panel. Each asset gets two event
/// dates placed far enough from the edges that every day offset in
/// `-13..=14` is observed, and the event-day return jumps by `beta0`.
pub fn event_panel(n_assets: usize, n_days: usize, seed: u64) -> Result<EventPanelSynth> {
    let margin_lo = (-OFFSET_MIN) as usize;
    let margin_hi = OFFSET_MAX as usize + 1;
    if n_assets < 2 || n_days < margin_lo + margin_hi + 10 {
        return Err(Error::config(format!(
            "event-panel needs at least 2 assets and {} days, got {n_assets} and {n_days}",
            margin_lo + margin_hi + 10
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let effect = Normal::new(0.0, 0.01).unwrap();
    let noise = Normal::new(0.0, 0.001).unwrap();
    let beta0 = 0.02;
    let delta: Vec<f64> = (0..n_assets).map(|_| effect.sample(&mut rng)).collect();
    let mu: Vec<f64> = (0..n_days).map(|_| effect.sample(&mut rng)).collect();
    let lo = margin_lo as i64;
    let hi = (n_days - margin_hi) as i64;
    let mut events = Vec::with_capacity(2 * n_assets);
    let mut event_days: Vec<Vec<i64>> = Vec::with_capacity(n_assets);
    for a in 0..n_assets {
        let e1 = rng.random_range(lo..hi);
        let mut e2 = rng.random_range(lo..hi);
        while e2 == e1 {
            e2 = rng.random_range(lo..hi);
        }
        let mut days = vec![e1, e2];
        days.sort_unstable();
        for &d in &days {
            events.push(EventRow { asset_id: format!("S{a:04}"), date: d, sign: 1 });
        }
        event_days.push(days);
    }
    let mut returns = Vec::with_capacity(n_assets * n_days);
    for a in 0..n_assets {
        for t in 0..n_days {
            let mut r = delta[a] + mu[t] + noise.sample(&mut rng);
            if event_days[a].contains(&(t as i64)) {
                r += beta0;
            }
            returns.push(SeriesRow { asset_id: format!("S{a:04}"), date: t as i64, value: r });
        }
    }
    Ok(EventPanelSynth { returns, events, beta0, noise_sd: 0.001 })
}

/// The three-asset, two-day backtest fixture whose ledger is easy to check
/// by hand: caps [2, 1, 1] on day 0, one asset crossing sides on day 2.
#[derive(Debug, Clone)]
pub struct PortfolioFixtureData {
    pub scores: Vec<SentimentScore>,
    pub returns: Vec<SeriesRow>,
    pub caps: Vec<SeriesRow>,
    pub config: BacktestConfig,
}

pub fn portfolio_fixture() -> PortfolioFixtureData {
    let score = |a: &str, d: i64, s: f64| SentimentScore {
        asset_id: a.to_string(),
        date: d,
        score: s,
    };
    let row = |a: &str, d: i64, v: f64| SeriesRow { asset_id: a.to_string(), date: d, value: v };
    PortfolioFixtureData {
        scores: vec![
            score("A", 1, 0.9),
            score("B", 1, 0.7),
            score("C", 1, 0.2),
            score("A", 2, 0.4),
            score("B", 2, 0.9),
            score("C", 2, 0.8),
        ],
        returns: vec![
            row("A", 1, 0.09),
            row("B", 1, 0.0),
            row("C", 1, -0.04),
            row("A", 2, -0.02),
            row("B", 2, 0.03),
            row("C", 2, -0.015),
        ],
        caps: vec![
            row("A", 0, 2.0),
            row("B", 0, 1.0),
            row("C", 0, 1.0),
            row("A", 1, 2.0),
            row("B", 1, 2.0),
            row("C", 1, 1.0),
        ],
        config: BacktestConfig { top_n: 2, threshold: 0.5, cost_bps: 13.0 },
    }
}

#[derive(Serialize)]
struct FactorRegressionManifest<'a> {
    kind: &'a str,
    n: usize,
    p: usize,
    seed: u64,
    k: usize,
    gamma: &'a [f64],
    x_noise_sd: f64,
    y_noise_sd: f64,
    y_bin_rule: &'a str,
    files: Vec<String>,
}

#[derive(Serialize)]
struct InteractionSignalManifest<'a> {
    kind: &'a str,
    n: usize,
    p: usize,
    seed: u64,
    k: usize,
    quad_coefficients: &'a [f64],
    x_noise_sd: f64,
    y_noise_sd: f64,
    files: Vec<String>,
}

#[derive(Serialize)]
struct ScreeningSparseManifest<'a> {
    kind: &'a str,
    n: usize,
    p: usize,
    seed: u64,
    k: usize,
    gamma: &'a [f64],
    active_columns: &'a [usize],
    active_coefficients: &'a [f64],
    y_noise_sd: f64,
    files: Vec<String>,
}

#[derive(Serialize)]
struct EventPanelManifest<'a> {
    kind: &'a str,
    n_assets: usize,
    n_days: usize,
    seed: u64,
    beta0: f64,
    noise_sd: f64,
    n_events: usize,
    event_day_offset: i64,
    files: Vec<String>,
}

#[derive(Serialize)]
struct PortfolioFixtureManifest<'a> {
    kind: &'a str,
    top_n: usize,
    threshold: f64,
    cost_bps: f64,
    day1_long_net: f64,
    day1_short_net: f64,
    day1_combined_net: f64,
    files: Vec<String>,
}

fn write_manifest<T: Serialize>(dir: &Path, manifest: &T) -> Result<PathBuf> {
    let path = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::data(format!("manifest serialization failed: {e}")))?;
    std::fs::write(&path, body + "\n")
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    Ok(path)
}

/// Generates the dataset `kind` into `out_dir` and returns the files
/// written. For `EventPanel`, `n` is the asset count and `p` the day
/// count; `PortfolioFixture` ignores `n`, `p`, and `seed`.
pub fn generate(
    kind: SynthKind,
    n: usize,
    p: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::data(format!("{}: {e}", out_dir.display())))?;
    let file_names = |paths: &[PathBuf]| -> Vec<String> {
        paths
            .iter()
            .map(|q| q.file_name().unwrap().to_string_lossy().into_owned())
            .collect()
    };
    match kind {
        SynthKind::FactorRegression => {
            let d = factor_regression(n, p, seed)?;
            let paths = vec![
                out_dir.join("x.csv"),
                out_dir.join("y.csv"),
                out_dir.join("y_bin.csv"),
                out_dir.join("f_true.csv"),
            ];
            save_csv(&d.x, &paths[0])?;
            save_csv(&vector_matrix(&d.y, "y"), &paths[1])?;
            save_csv(&vector_matrix(&d.y_bin, "y"), &paths[2])?;
            save_csv(&d.f_true, &paths[3])?;
            let mut files = file_names(&paths);
            files.push("manifest.json".to_string());
            let manifest = FactorRegressionManifest {
                kind: kind.as_str(),
                n,
                p,
                seed,
                k: 3,
                gamma: &d.gamma,
                x_noise_sd: d.x_noise_sd,
                y_noise_sd: d.y_noise_sd,
                y_bin_rule: "1 when the factor score plus N(0, 0.25^2) noise is positive",
                files,
            };
            let mpath = write_manifest(out_dir, &manifest)?;
            Ok(paths.into_iter().chain([mpath]).collect())
        }
        SynthKind::InteractionSignal => {
            let d = interaction_signal(n, p, seed)?;
            let paths = vec![
                out_dir.join("x.csv"),
                out_dir.join("y.csv"),
                out_dir.join("f_true.csv"),
            ];
            save_csv(&d.x, &paths[0])?;
            save_csv(&vector_matrix(&d.y, "y"), &paths[1])?;
            save_csv(&d.f_true, &paths[2])?;
            let mut files = file_names(&paths);
            files.push("manifest.json".to_string());
            let manifest = InteractionSignalManifest {
                kind: kind.as_str(),
                n,
                p,
                seed,
                k: 2,
                quad_coefficients: &d.quad,
                x_noise_sd: d.x_noise_sd,
                y_noise_sd: d.y_noise_sd,
                files,
            };
            let mpath = write_manifest(out_dir, &manifest)?;
            Ok(paths.into_iter().chain([mpath]).collect())
        }
        SynthKind::ScreeningSparse => {
            let d = screening_sparse(n, p, seed)?;
            let paths = vec![
                out_dir.join("x.csv"),
                out_dir.join("y.csv"),
                out_dir.join("f_true.csv"),
                out_dir.join("u_true.csv"),
            ];
            save_csv(&d.x, &paths[0])?;
            save_csv(&vector_matrix(&d.y, "y"), &paths[1])?;
            save_csv(&d.f_true, &paths[2])?;
            save_csv(&d.u_true, &paths[3])?;
            let mut files = file_names(&paths);
            files.push("manifest.json".to_string());
            let manifest = ScreeningSparseManifest {
                kind: kind.as_str(),
                n,
                p,
                seed,
                k: 3,
                gamma: &d.gamma,
                active_columns: &d.actives,
                active_coefficients: &d.coefs,
                y_noise_sd: d.y_noise_sd,
                files,
            };
            let mpath = write_manifest(out_dir, &manifest)?;
            Ok(paths.into_iter().chain([mpath]).collect())
        }
        SynthKind::EventPanel => {
            let d = event_panel(n, p, seed)?;
            let paths = vec![out_dir.join("returns.csv"), out_dir.join("events.csv")];
            save_series_csv(&d.returns, "ret", &paths[0])?;
            save_events_csv(&d.events, &paths[1])?;
            let mut files = file_names(&paths);
            files.push("manifest.json".to_string());
            let manifest = EventPanelManifest {
                kind: kind.as_str(),
                n_assets: n,
                n_days: p,
                seed,
                beta0: d.beta0,
                noise_sd: d.noise_sd,
                n_events: d.events.len(),
                event_day_offset: 0,
                files,
            };
            let mpath = write_manifest(out_dir, &manifest)?;
            Ok(paths.into_iter().chain([mpath]).collect())
        }
        SynthKind::PortfolioFixture => {
            let d = portfolio_fixture();
            let paths = vec![
                out_dir.join("scores.csv"),
                out_dir.join("returns.csv"),
                out_dir.join("caps.csv"),
            ];
            let score_rows: Vec<SeriesRow> = d
                .scores
                .iter()
                .map(|s| SeriesRow { asset_id: s.asset_id.clone(), date: s.date, value: s.score })
                .collect();
            save_series_csv(&score_rows, "score", &paths[0])?;
            save_series_csv(&d.returns, "ret", &paths[1])?;
            save_series_csv(&d.caps, "cap", &paths[2])?;
            let mut files = file_names(&paths);
            files.push("manifest.json".to_string());
            let manifest = PortfolioFixtureManifest {
                kind: kind.as_str(),
                top_n: d.config.top_n,
                threshold: d.config.threshold,
                cost_bps: d.config.cost_bps,
                day1_long_net: 0.0587,
                day1_short_net: 0.01935,
                day1_combined_net: 0.039025,
                files,
            };
            let mpath = write_manifest(out_dir, &manifest)?;
            Ok(paths.into_iter().chain([mpath]).collect())
        }
    }
}
