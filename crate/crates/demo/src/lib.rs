//! Browser playground for the pipeline: three interactive operations behind
//! a JSON-string interface so a static page needs no bindings beyond
//! `wasm-bindgen`. Every function takes a JSON object and returns a JSON
//! object; failures come back as `{"error": "..."}` instead of trapping.
//!
//! Build for the web with `wasm-pack build crates/demo --target web --out-dir
//! www/pkg` and open `crates/demo/www/index.html` from any static file
//! server. The crate also compiles natively so the operations stay testable
//! with plain `cargo test`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::wasm_bindgen;

use farmaug::factors::{eigen_ratio_k, spectrum, FactorMode, FactorSpec};
use farmaug::finance::{portfolio_backtest, BacktestConfig, SentimentScore, SeriesRow};
use farmaug::learners::linear::ridge_fit;
use farmaug::learners::{LearnerSpec, Task};
use farmaug::matrix::{standardize, StandardizeMode};
use farmaug::pipeline::{run_pipeline, PipelineSpec, WindowScheme};
use farmaug::synth;
use farmaug::transforms::{TransformKind, TransformSpec};
use farmaug::Matrix;

fn respond<T: Serialize>(result: Result<T, String>) -> String {
    match result {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| {
            format!("{{\"error\":\"serialization failed: {e}\"}}")
        }),
        Err(msg) => serde_json::to_string(&serde_json::json!({ "error": msg }))
            .unwrap_or_else(|_| "{\"error\":\"unreportable error\"}".to_string()),
    }
}

fn parse<'a, T: Deserialize<'a>>(input: &'a str) -> Result<T, String> {
    serde_json::from_str(input).map_err(|e| format!("bad request: {e}"))
}

fn clamp(value: usize, lo: usize, hi: usize) -> usize {
    value.clamp(lo, hi)
}

// -------------------------------------------------------------------------
// Operation 1: eigenvalue scree and the ratio rule.
// -------------------------------------------------------------------------

#[derive(Deserialize)]
struct ScreeRequest {
    #[serde(default = "default_n")]
    n: usize,
    #[serde(default = "default_p")]
    p: usize,
    #[serde(default = "default_k_true")]
    k_true: usize,
    #[serde(default = "default_snr")]
    snr: f64,
    #[serde(default)]
    seed: u64,
}

fn default_n() -> usize {
    400
}
fn default_p() -> usize {
    60
}
fn default_k_true() -> usize {
    4
}
fn default_snr() -> f64 {
    5.0
}

#[derive(Serialize)]
struct ScreeResponse {
    n: usize,
    p: usize,
    k_true: usize,
    chosen_k: usize,
    k_min: usize,
    k_max: usize,
    eigenvalues: Vec<f64>,
    ratios: Vec<f64>,
}

fn scree_impl(input: &str) -> Result<ScreeResponse, String> {
    let req: ScreeRequest = parse(input)?;
    let n = clamp(req.n, 60, 3000);
    let p = clamp(req.p, 20, 300);
    let k_true = clamp(req.k_true, 1, p / 4);
    let snr = req.snr.clamp(0.1, 100.0);
    let noise_sd = (k_true as f64 / snr).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let normal = Normal::new(0.0, 1.0).map_err(|e| e.to_string())?;
    let f: Vec<f64> = (0..n * k_true).map(|_| normal.sample(&mut rng)).collect();
    let b: Vec<f64> = (0..p * k_true).map(|_| normal.sample(&mut rng)).collect();
    let mut data = Vec::with_capacity(n * p);
    for i in 0..n {
        for j in 0..p {
            let mut v = 0.0;
            for k in 0..k_true {
                v += f[i * k_true + k] * b[j * k_true + k];
            }
            data.push(v + noise_sd * normal.sample(&mut rng));
        }
    }
    let x = Matrix::new(n, p, data).map_err(|e| e.to_string())?;
    let spec = spectrum(&x).map_err(|e| e.to_string())?;
    // Search the widest sensible range so small planted ranks stay visible.
    let (k_min, k_max) = (2, (n.min(p) / 3).max(3));
    let chosen_k = eigen_ratio_k(&spec, Some((k_min, k_max))).map_err(|e| e.to_string())?;

    let shown = spec.values().len().min(30);
    let eigenvalues = spec.values()[..shown].to_vec();
    let mut ratios = Vec::with_capacity(shown.saturating_sub(1));
    for w in spec.values()[..shown].windows(2) {
        ratios.push(if w[1] > 0.0 { w[0] / w[1] } else { 0.0 });
    }
    Ok(ScreeResponse { n, p, k_true, chosen_k, k_min, k_max, eigenvalues, ratios })
}

/// Synthesizes a factor panel with a known rank, returns the top of its
/// eigenvalue scree, adjacent-eigenvalue ratios, and the rank chosen by the
/// ratio rule with its search bounds.
#[wasm_bindgen]
pub fn scree_explore(input: &str) -> String {
    respond(scree_impl(input))
}

// -------------------------------------------------------------------------
// Operation 2: out-of-sample lift from factor augmentation.
// -------------------------------------------------------------------------

#[derive(Deserialize)]
struct LiftRequest {
    #[serde(default = "default_lift_n")]
    n: usize,
    #[serde(default = "default_lift_p")]
    p: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_kind")]
    transform: String,
    #[serde(default = "default_k")]
    k: usize,
}

fn default_lift_n() -> usize {
    600
}
fn default_lift_p() -> usize {
    40
}
fn default_kind() -> String {
    "interactions".to_string()
}
fn default_k() -> usize {
    5
}

#[derive(Serialize)]
struct LiftResponse {
    n: usize,
    p: usize,
    transform: String,
    k: usize,
    r2_augmented: f64,
    r2_raw: f64,
    lift: f64,
}

fn lift_impl(input: &str) -> Result<LiftResponse, String> {
    let req: LiftRequest = parse(input)?;
    let n = clamp(req.n, 100, 2000);
    let p = clamp(req.p, 10, 100);
    let kind = match req.transform.as_str() {
        "identity" => TransformKind::Identity,
        "interactions" => TransformKind::Interactions,
        "poly" => TransformKind::Poly,
        "rbf" => TransformKind::Rbf,
        other => return Err(format!("unknown transform kind {other:?}")),
    };
    let k = clamp(req.k, 1, 12);

    let d = synth::interaction_signal(n, p, req.seed).map_err(|e| e.to_string())?;
    let mut spec = PipelineSpec::basic(
        Task::Regression,
        TransformSpec { kind, ..TransformSpec::default() },
        FactorSpec { mode: FactorMode::Pca, k: Some(k), ..FactorSpec::default() },
        LearnerSpec::ridge(1.0),
        WindowScheme::Static { train_fraction: 0.5 },
    );
    spec.seed = req.seed;
    let outcome = run_pipeline(&d.x, &d.y, &spec).map_err(|e| e.to_string())?;
    let r2_augmented = outcome.report.value;

    // Baseline: the same ridge on raw standardized features, same split.
    let m = (n as f64 * 0.5).floor() as usize;
    let xtr = d.x.slice_rows(0, m).map_err(|e| e.to_string())?;
    let xte = d.x.slice_rows(m, n).map_err(|e| e.to_string())?;
    let (xs_tr, st) = standardize(&xtr, StandardizeMode::Zscore).map_err(|e| e.to_string())?;
    let xs_te = st.apply(&xte).map_err(|e| e.to_string())?;
    let model = ridge_fit(&xs_tr, &d.y[..m], 1.0).map_err(|e| e.to_string())?;
    let train_mean = d.y[..m].iter().sum::<f64>() / m as f64;
    let (mut rss, mut tss) = (0.0, 0.0);
    for i in 0..xs_te.nrows() {
        let pred = model.predict_row(xs_te.row(i)).map_err(|e| e.to_string())?;
        rss += (d.y[m + i] - pred).powi(2);
        tss += (d.y[m + i] - train_mean).powi(2);
    }
    let r2_raw = 1.0 - rss / tss;
    Ok(LiftResponse {
        n,
        p,
        transform: req.transform,
        k,
        r2_augmented,
        r2_raw,
        lift: r2_augmented - r2_raw,
    })
}

/// Fits the full augmented pipeline and a plain ridge baseline on the same
/// interaction-driven panel and split, returning both out-of-sample R^2
/// values and their difference.
#[wasm_bindgen]
pub fn augmentation_lift(input: &str) -> String {
    respond(lift_impl(input))
}

// -------------------------------------------------------------------------
// Operation 3: score-sorted portfolio backtest.
// -------------------------------------------------------------------------

#[derive(Deserialize)]
struct BacktestRequest {
    #[serde(default = "default_assets")]
    n_assets: usize,
    #[serde(default = "default_days")]
    n_days: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_top_n")]
    top_n: usize,
    #[serde(default = "default_threshold")]
    threshold: f64,
    #[serde(default = "default_cost")]
    cost_bps: f64,
    /// How strongly scores predict next-day returns, in units of daily
    /// return volatility. Zero gives pure noise.
    #[serde(default = "default_strength")]
    signal_strength: f64,
}

fn default_assets() -> usize {
    20
}
fn default_days() -> usize {
    120
}
fn default_top_n() -> usize {
    5
}
fn default_threshold() -> f64 {
    0.5
}
fn default_cost() -> f64 {
    13.0
}
fn default_strength() -> f64 {
    0.3
}

#[derive(Serialize)]
struct BacktestResponse {
    dates: Vec<i64>,
    long_cum: Vec<f64>,
    short_cum: Vec<f64>,
    combined_cum: Vec<f64>,
    mean_long_turnover: f64,
    total_combined: f64,
}

fn backtest_impl(input: &str) -> Result<BacktestResponse, String> {
    let req: BacktestRequest = parse(input)?;
    let n_assets = clamp(req.n_assets, 3, 100);
    let n_days = clamp(req.n_days, 5, 600) as i64;
    let top_n = clamp(req.top_n, 1, n_assets);
    let threshold = req.threshold.clamp(0.0, 1.0);
    let cost_bps = req.cost_bps.clamp(0.0, 500.0);
    let strength = req.signal_strength.clamp(-2.0, 2.0);

    let daily_sd = 0.02;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let normal = Normal::new(0.0, daily_sd).map_err(|e| e.to_string())?;
    let mut scores = Vec::new();
    let mut returns = Vec::new();
    let mut caps = Vec::new();
    for a in 0..n_assets {
        let id = format!("A{a:03}");
        for t in 0..n_days {
            if t < n_days - 1 {
                caps.push(SeriesRow {
                    asset_id: id.clone(),
                    date: t,
                    value: (rng.random::<f64>() * 2.0).exp(),
                });
            }
            if t > 0 {
                let score: f64 = rng.random();
                scores.push(SentimentScore { asset_id: id.clone(), date: t, score });
                returns.push(SeriesRow {
                    asset_id: id.clone(),
                    date: t,
                    value: strength * daily_sd * (score - 0.5) * 2.0 + normal.sample(&mut rng),
                });
            }
        }
    }
    let cfg = BacktestConfig { top_n, threshold, cost_bps };
    let ledger = portfolio_backtest(&scores, &returns, &caps, &cfg).map_err(|e| e.to_string())?;

    let mut dates = Vec::new();
    let (mut lc, mut sc, mut cc) = (0.0, 0.0, 0.0);
    let mut long_cum = Vec::new();
    let mut short_cum = Vec::new();
    let mut combined_cum = Vec::new();
    let mut turn_sum = 0.0;
    for day in &ledger.days {
        dates.push(day.date);
        lc += day.long_net;
        sc += day.short_net;
        cc += day.combined_net;
        long_cum.push(lc);
        short_cum.push(sc);
        combined_cum.push(cc);
        turn_sum += day.long_turnover;
    }
    let n = ledger.days.len().max(1) as f64;
    Ok(BacktestResponse {
        dates,
        long_cum,
        short_cum,
        combined_cum,
        mean_long_turnover: turn_sum / n,
        total_combined: cc,
    })
}

/// Runs the score-sorted long/short backtest on a synthetic market whose
/// scores carry a tunable amount of real signal, returning cumulative net
/// return curves for the long, short, and combined books.
#[wasm_bindgen]
pub fn backtest_curve(input: &str) -> String {
    respond(backtest_impl(input))
}
