//! Sentiment scores, event studies, and long-short backtests.
//!
//! Predictions become per-asset-day sentiment scores centered at 0.5;
//! extreme scores define events whose return profile is traced by a two-way
//! fixed-effects regression on event-relative day indicators; and the score
//! cross-section drives a daily-rebalanced, value-weighted long-short
//! portfolio with round-trip transaction costs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::quantile_sorted;

/// One value of a per-asset daily series (a score, a return, or a market
/// capitalization).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub asset_id: String,
    pub date: i64,
    pub value: f64,
}

/// A sentiment score for one asset on one day, centered so that 0.5 is
/// neutral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentScore {
    pub asset_id: String,
    pub date: i64,
    pub score: f64,
}

/// An extreme-sentiment event: `sign` is +1 for very positive scores and
/// -1 for very negative ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRow {
    pub asset_id: String,
    pub date: i64,
    pub sign: i8,
}

/// Events plus the return panel they are studied against.
#[derive(Debug, Clone)]
pub struct EventPanel {
    pub events: Vec<EventRow>,
    pub returns: Vec<SeriesRow>,
}

/// First and last event-relative day offsets carrying an indicator.
pub const OFFSET_MIN: i64 = -13;
pub const OFFSET_MAX: i64 = 14;
const N_OFFSETS: usize = (OFFSET_MAX - OFFSET_MIN + 1) as usize;

/// Turns raw regression predictions into sentiment scores: recenter by the
/// training mean, shift to 0.5, and average duplicates for the same asset
/// and day. Output is sorted by date, then asset.
pub fn scores_from_regression(preds: &[SeriesRow], train_mean: f64) -> Vec<SentimentScore> {
    average_scores(preds.iter().map(|r| {
        (r.asset_id.clone(), r.date, r.value - train_mean + 0.5)
    }))
}

/// Turns positive-class probabilities into sentiment scores (they are
/// already on the 0.5-neutral scale), averaging same-day duplicates.
pub fn scores_from_probabilities(preds: &[SeriesRow]) -> Result<Vec<SentimentScore>> {
    for r in preds {
        if !(0.0..=1.0).contains(&r.value) {
            return Err(Error::data(format!(
                "probability score {} for {} on day {} is outside [0, 1]",
                r.value, r.asset_id, r.date
            )));
        }
    }
    Ok(average_scores(preds.iter().map(|r| (r.asset_id.clone(), r.date, r.value))))
}

fn average_scores(items: impl Iterator<Item = (String, i64, f64)>) -> Vec<SentimentScore> {
    let mut acc: BTreeMap<(i64, String), (f64, usize)> = BTreeMap::new();
    for (asset, date, v) in items {
        let slot = acc.entry((date, asset)).or_insert((0.0, 0));
        slot.0 += v;
        slot.1 += 1;
    }
    acc.into_iter()
        .map(|((date, asset_id), (sum, count))| SentimentScore {
            asset_id,
            date,
            score: sum / count as f64,
        })
        .collect()
}

/// Selects extreme events: positive events are scores above 0.5 in the top
/// `quantile` share of positive scores (strictly above the cut), negative
/// events mirror below 0.5. No qualifying scores means an empty event list.
pub fn select_events(scores: &[SentimentScore], quantile: f64) -> Result<Vec<EventRow>> {
    if scores.is_empty() {
        return Err(Error::data("cannot select events from an empty score set".to_string()));
    }
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::config(format!(
            "event quantile {quantile} must lie strictly between 0 and 1"
        )));
    }
    let mut pos: Vec<f64> = scores.iter().map(|s| s.score).filter(|&v| v > 0.5).collect();
    let mut neg: Vec<f64> = scores.iter().map(|s| s.score).filter(|&v| v < 0.5).collect();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut events = Vec::new();
    if !pos.is_empty() {
        let cut = quantile_sorted(&pos, 1.0 - quantile);
        for s in scores {
            if s.score > 0.5 && s.score > cut {
                events.push(EventRow { asset_id: s.asset_id.clone(), date: s.date, sign: 1 });
            }
        }
    }
    if !neg.is_empty() {
        let cut = quantile_sorted(&neg, quantile);
        for s in scores {
            if s.score < 0.5 && s.score < cut {
                events.push(EventRow { asset_id: s.asset_id.clone(), date: s.date, sign: -1 });
            }
        }
    }
    events.sort_by(|a, b| (a.date, &a.asset_id, a.sign).cmp(&(b.date, &b.asset_id, b.sign)));
    Ok(events)
}

/// Two-way fixed-effects fit of returns on event-relative day indicators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventStudyFit {
    /// Day offsets, `-13..=14` in order.
    pub offsets: Vec<i64>,
    /// Indicator coefficients, aligned with `offsets`.
    pub beta: Vec<f64>,
    /// Conventional OLS standard errors, aligned with `offsets`.
    pub se: Vec<f64>,
    pub n_obs: usize,
    pub n_assets: usize,
    pub n_dates: usize,
    pub rss: f64,
    /// Residual degrees of freedom: observations minus indicators, asset
    /// effects, date effects, and the grand mean.
    pub dof: usize,
}

/// Fits `return = sum_p beta_p Day_p + asset effect + date effect + noise`
/// by alternating within-demeaning (to 1e-10) and OLS on the demeaned
/// indicators. `Day_p` is 1 when the observation date is exactly `p` days
/// after one of the asset's events, whatever the event sign; callers wanting
/// per-sign profiles filter the event list first.
pub fn event_study_fit(panel: &EventPanel) -> Result<EventStudyFit> {
    let n = panel.returns.len();
    if n == 0 {
        return Err(Error::data("event panel has no return observations".to_string()));
    }
    let mut seen: BTreeSet<(i64, &str)> = BTreeSet::new();
    for r in &panel.returns {
        if !seen.insert((r.date, r.asset_id.as_str())) {
            return Err(Error::data(format!(
                "duplicate return observation for {} on day {}",
                r.asset_id, r.date
            )));
        }
    }
    let mut asset_ids: Vec<&str> = panel.returns.iter().map(|r| r.asset_id.as_str()).collect();
    asset_ids.sort_unstable();
    asset_ids.dedup();
    let mut dates: Vec<i64> = panel.returns.iter().map(|r| r.date).collect();
    dates.sort_unstable();
    dates.dedup();
    if asset_ids.len() < 2 || dates.len() < 2 {
        return Err(Error::data(format!(
            "event study needs at least 2 assets and 2 dates, got {} and {}",
            asset_ids.len(),
            dates.len()
        )));
    }
    let asset_index: BTreeMap<&str, usize> =
        asset_ids.iter().enumerate().map(|(i, &a)| (a, i)).collect();
    let date_index: BTreeMap<i64, usize> =
        dates.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let mut events_by_asset: BTreeMap<&str, Vec<i64>> = BTreeMap::new();
    for e in &panel.events {
        events_by_asset.entry(e.asset_id.as_str()).or_default().push(e.date);
    }

    let offsets: Vec<i64> = (OFFSET_MIN..=OFFSET_MAX).collect();
    // Working matrix: column 0 is the return, columns 1.. the indicators.
    let mut work = DMatrix::<f64>::zeros(n, 1 + N_OFFSETS);
    let mut asset_rows: Vec<Vec<usize>> = vec![Vec::new(); asset_ids.len()];
    let mut date_rows: Vec<Vec<usize>> = vec![Vec::new(); dates.len()];
    for (row, r) in panel.returns.iter().enumerate() {
        work[(row, 0)] = r.value;
        asset_rows[asset_index[r.asset_id.as_str()]].push(row);
        date_rows[date_index[&r.date]].push(row);
        if let Some(evs) = events_by_asset.get(r.asset_id.as_str()) {
            for &e in evs {
                let off = r.date - e;
                if (OFFSET_MIN..=OFFSET_MAX).contains(&off) {
                    // Overlapping events set the indicator, they do not sum.
                    work[(row, 1 + (off - OFFSET_MIN) as usize)] = 1.0;
                }
            }
        }
    }
    let empty: Vec<i64> = (0..N_OFFSETS)
        .filter(|&j| (0..n).all(|i| work[(i, 1 + j)] == 0.0))
        .map(|j| offsets[j])
        .collect();
    if !empty.is_empty() {
        return Err(Error::data(format!(
            "degenerate event panel: day offsets {empty:?} have no observations"
        )));
    }

    demean_two_way(&mut work, &asset_rows, &date_rows)?;

    // Modified Gram-Schmidt scan for indicator columns that the fixed
    // effects (or other indicators) explain completely.
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut collinear = Vec::new();
    for j in 0..N_OFFSETS {
        let mut v: DVector<f64> = work.column(1 + j).into();
        let orig = v.norm();
        for b in &basis {
            let c = b.dot(&v);
            v -= b * c;
        }
        if v.norm() <= 1e-8 * orig.max(1e-12) {
            collinear.push(offsets[j]);
        } else {
            let norm = v.norm();
            basis.push(v / norm);
        }
    }
    if !collinear.is_empty() {
        return Err(Error::data(format!(
            "day offsets {collinear:?} are collinear with the fixed effects or \
             with other offsets"
        )));
    }

    let ytil: DVector<f64> = work.column(0).into();
    let dtil = work.columns(1, N_OFFSETS).clone_owned();
    let gram = dtil.tr_mul(&dtil);
    let rhs = dtil.tr_mul(&ytil);
    let chol = gram.clone().cholesky().ok_or_else(|| {
        Error::numerical("event-study normal equations are not positive definite".to_string())
    })?;
    let beta = chol.solve(&rhs);
    let resid = &ytil - &dtil * &beta;
    let rss = resid.norm_squared();
    let dof_signed =
        n as i64 - N_OFFSETS as i64 - asset_ids.len() as i64 - dates.len() as i64 + 1;
    if dof_signed <= 0 {
        return Err(Error::data(format!(
            "event panel leaves {dof_signed} residual degrees of freedom"
        )));
    }
    let dof = dof_signed as usize;
    let sigma2 = rss / dof as f64;
    let inv = chol.inverse();
    let se: Vec<f64> = (0..N_OFFSETS).map(|j| (sigma2 * inv[(j, j)]).sqrt()).collect();
    Ok(EventStudyFit {
        offsets,
        beta: beta.iter().copied().collect(),
        se,
        n_obs: n,
        n_assets: asset_ids.len(),
        n_dates: dates.len(),
        rss,
        dof,
    })
}

/// Alternates asset- and date-demeaning of every column until all group
/// means are below 1e-10.
fn demean_two_way(
    work: &mut DMatrix<f64>,
    asset_rows: &[Vec<usize>],
    date_rows: &[Vec<usize>],
) -> Result<()> {
    let cols = work.ncols();
    for _ in 0..1000 {
        for rows in asset_rows.iter().chain(date_rows.iter()) {
            for c in 0..cols {
                let mean: f64 =
                    rows.iter().map(|&i| work[(i, c)]).sum::<f64>() / rows.len() as f64;
                for &i in rows {
                    work[(i, c)] -= mean;
                }
            }
        }
        let mut maxdev = 0.0f64;
        for rows in asset_rows.iter().chain(date_rows.iter()) {
            for c in 0..cols {
                let mean: f64 =
                    rows.iter().map(|&i| work[(i, c)]).sum::<f64>() / rows.len() as f64;
                maxdev = maxdev.max(mean.abs());
            }
        }
        if maxdev < 1e-10 {
            return Ok(());
        }
    }
    Err(Error::numerical("two-way demeaning did not converge in 1000 passes".to_string()))
}

/// Backtest configuration. Defaults: 50 names per leg, neutral threshold
/// 0.5, 13 basis points round-trip cost, value weighting by prior-day cap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub top_n: usize,
    pub threshold: f64,
    pub cost_bps: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig { top_n: 50, threshold: 0.5, cost_bps: 13.0 }
    }
}

/// One day of the backtest ledger. Weights are within-leg fractions of
/// that leg's unit capital; `cash` is the uninvested remainder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DayLedger {
    pub date: i64,
    pub long_weights: Vec<(String, f64)>,
    pub short_weights: Vec<(String, f64)>,
    pub long_cash: f64,
    pub short_cash: f64,
    pub long_gross: f64,
    pub short_gross: f64,
    pub long_turnover: f64,
    pub short_turnover: f64,
    pub long_cost: f64,
    pub short_cost: f64,
    pub long_net: f64,
    pub short_net: f64,
    /// Average of the two leg nets (each leg runs unit capital).
    pub combined_net: f64,
}

/// The full daily ledger of a backtest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestLedger {
    pub config: BacktestConfig,
    pub days: Vec<DayLedger>,
}

impl BacktestLedger {
    pub fn long_nets(&self) -> Vec<f64> {
        self.days.iter().map(|d| d.long_net).collect()
    }
    pub fn short_nets(&self) -> Vec<f64> {
        self.days.iter().map(|d| d.short_net).collect()
    }
    pub fn combined_nets(&self) -> Vec<f64> {
        self.days.iter().map(|d| d.combined_net).collect()
    }
}

/// Runs the daily long-short backtest.
///
/// Each day with scores: the long leg holds the up-to-`top_n` assets with
/// scores strictly above the threshold (ranked by score), value-weighted by
/// prior-day capitalization and scaled by `k/top_n` so missing names sit in
/// cash; the short leg mirrors below the threshold. Costs are the round-trip
/// rate times the day's weight turnover of the leg.
pub fn portfolio_backtest(
    scores: &[SentimentScore],
    returns: &[SeriesRow],
    caps: &[SeriesRow],
    cfg: &BacktestConfig,
) -> Result<BacktestLedger> {
    if cfg.top_n == 0 {
        return Err(Error::config("top_n must be at least 1".to_string()));
    }
    if !cfg.threshold.is_finite() || !(cfg.cost_bps >= 0.0) {
        return Err(Error::config("threshold must be finite and cost_bps nonnegative".to_string()));
    }
    let mut ret_map: BTreeMap<(i64, &str), f64> = BTreeMap::new();
    for r in returns {
        if ret_map.insert((r.date, r.asset_id.as_str()), r.value).is_some() {
            return Err(Error::data(format!(
                "duplicate return for {} on day {}",
                r.asset_id, r.date
            )));
        }
    }
    let mut caps_by_asset: BTreeMap<&str, Vec<(i64, f64)>> = BTreeMap::new();
    for c in caps {
        if c.value < 0.0 {
            return Err(Error::data(format!(
                "negative market cap for {} on day {}",
                c.asset_id, c.date
            )));
        }
        caps_by_asset.entry(c.asset_id.as_str()).or_default().push((c.date, c.value));
    }
    for series in caps_by_asset.values_mut() {
        series.sort_by_key(|&(d, _)| d);
    }
    let prior_cap = |asset: &str, day: i64| -> Result<f64> {
        let series = caps_by_asset.get(asset).ok_or_else(|| {
            Error::data(format!("no market capitalization series for {asset} (day {day})"))
        })?;
        let idx = series.partition_point(|&(d, _)| d < day);
        if idx == 0 {
            return Err(Error::data(format!(
                "no market capitalization for {asset} before day {day}"
            )));
        }
        Ok(series[idx - 1].1)
    };

    let mut by_date: BTreeMap<i64, Vec<&SentimentScore>> = BTreeMap::new();
    let mut dup: BTreeSet<(i64, &str)> = BTreeSet::new();
    for s in scores {
        if !dup.insert((s.date, s.asset_id.as_str())) {
            return Err(Error::data(format!(
                "duplicate score for {} on day {}; average duplicates first",
                s.asset_id, s.date
            )));
        }
        by_date.entry(s.date).or_default().push(s);
    }

    let rate = cfg.cost_bps / 1e4;
    let mut prev_long: BTreeMap<String, f64> = BTreeMap::new();
    let mut prev_short: BTreeMap<String, f64> = BTreeMap::new();
    let mut days = Vec::with_capacity(by_date.len());
    for (&date, day_scores) in &by_date {
        let mut longs: Vec<&&SentimentScore> =
            day_scores.iter().filter(|s| s.score > cfg.threshold).collect();
        longs.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.asset_id.cmp(&b.asset_id)));
        longs.truncate(cfg.top_n);
        let mut shorts: Vec<&&SentimentScore> =
            day_scores.iter().filter(|s| s.score < cfg.threshold).collect();
        shorts.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.asset_id.cmp(&b.asset_id)));
        shorts.truncate(cfg.top_n);

        let (long_w, long_gross) =
            leg_positions(&longs, date, cfg.top_n, 1.0, &prior_cap, &ret_map)?;
        let (short_w, short_gross) =
            leg_positions(&shorts, date, cfg.top_n, -1.0, &prior_cap, &ret_map)?;

        let long_turnover = turnover(&prev_long, &long_w);
        let short_turnover = turnover(&prev_short, &short_w);
        let long_cost = rate * long_turnover;
        let short_cost = rate * short_turnover;
        let long_net = long_gross - long_cost;
        let short_net = short_gross - short_cost;
        let long_invested: f64 = long_w.values().sum();
        let short_invested: f64 = short_w.values().sum();
        days.push(DayLedger {
            date,
            long_weights: long_w.iter().map(|(a, &w)| (a.clone(), w)).collect(),
            short_weights: short_w.iter().map(|(a, &w)| (a.clone(), w)).collect(),
            long_cash: 1.0 - long_invested,
            short_cash: 1.0 - short_invested,
            long_gross,
            short_gross,
            long_turnover,
            short_turnover,
            long_cost,
            short_cost,
            long_net,
            short_net,
            combined_net: (long_net + short_net) / 2.0,
        });
        prev_long = long_w;
        prev_short = short_w;
    }
    Ok(BacktestLedger { config: cfg.clone(), days })
}

/// Value weights and gross return for one leg on one day. `direction` is
/// +1 for the long leg and -1 for the short leg.
fn leg_positions(
    selected: &[&&SentimentScore],
    date: i64,
    top_n: usize,
    direction: f64,
    prior_cap: &dyn Fn(&str, i64) -> Result<f64>,
    ret_map: &BTreeMap<(i64, &str), f64>,
) -> Result<(BTreeMap<String, f64>, f64)> {
    let mut weights = BTreeMap::new();
    if selected.is_empty() {
        return Ok((weights, 0.0));
    }
    let invested = selected.len() as f64 / top_n as f64;
    let mut caps = Vec::with_capacity(selected.len());
    let mut total = 0.0;
    for s in selected {
        let c = prior_cap(&s.asset_id, date)?;
        caps.push(c);
        total += c;
    }
    if total <= 0.0 {
        return Err(Error::data(format!(
            "market caps of the day-{date} selection sum to zero"
        )));
    }
    let mut gross = 0.0;
    for (s, c) in selected.iter().zip(&caps) {
        let w = c / total * invested;
        let ret = ret_map.get(&(date, s.asset_id.as_str())).copied().ok_or_else(|| {
            Error::data(format!("missing return for {} on day {}", s.asset_id, date))
        })?;
        gross += direction * w * ret;
        weights.insert(s.asset_id.clone(), w);
    }
    Ok((weights, gross))
}

/// Sum of absolute weight changes between consecutive days, entries and
/// exits included.
fn turnover(prev: &BTreeMap<String, f64>, next: &BTreeMap<String, f64>) -> f64 {
    let mut assets: BTreeSet<&String> = prev.keys().collect();
    assets.extend(next.keys());
    assets
        .into_iter()
        .map(|a| {
            let old = prev.get(a).copied().unwrap_or(0.0);
            let new = next.get(a).copied().unwrap_or(0.0);
            (new - old).abs()
        })
        .sum()
}

/// Annualized percentage return and Sharpe ratio of a daily return series:
/// `APR = mean * 252 * 100`, `SR = mean / sd * sqrt(252)` with the sample
/// (n-1) standard deviation.
pub fn apr_sharpe(daily: &[f64]) -> Result<(f64, f64)> {
    if daily.len() < 2 {
        return Err(Error::data(format!(
            "need at least 2 daily returns, got {}",
            daily.len()
        )));
    }
    let n = daily.len() as f64;
    let mean = daily.iter().sum::<f64>() / n;
    let var = daily.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd <= 0.0 {
        return Err(Error::data(
            "daily returns are constant; the Sharpe ratio is undefined".to_string(),
        ));
    }
    Ok((mean * 252.0 * 100.0, mean / sd * 252.0_f64.sqrt()))
}

/// Renders the ledger as CSV, one row per day.
pub fn ledger_csv(ledger: &BacktestLedger) -> String {
    let mut out = String::from(
        "date,long_gross,long_turnover,long_cost,long_net,long_cash,short_gross,\
         short_turnover,short_cost,short_net,short_cash,combined_net\n",
    );
    for d in &ledger.days {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            d.date,
            d.long_gross,
            d.long_turnover,
            d.long_cost,
            d.long_net,
            d.long_cash,
            d.short_gross,
            d.short_turnover,
            d.short_cost,
            d.short_net,
            d.short_cash,
            d.combined_net
        ));
    }
    out
}

/// Loads a per-asset series CSV with header `asset_id,date,<value_name>`.
pub fn load_series_csv(path: &Path, value_name: &str) -> Result<Vec<SeriesRow>> {
    let file = File::open(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::data(format!("{}: empty file", path.display())))?
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let expected = format!("asset_id,date,{value_name}");
    if header.trim() != expected {
        return Err(Error::data(format!(
            "{}: expected header {expected:?}, found {:?}",
            path.display(),
            header.trim()
        )));
    }
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::data(format!(
                "{}: row {}: expected 3 fields, found {}",
                path.display(),
                i + 1,
                parts.len()
            )));
        }
        let date = crate::io::parse_date(parts[1].trim())
            .map_err(|e| e.with_context(&format!("{}: row {}", path.display(), i + 1)))?;
        let value: f64 = parts[2].trim().parse().map_err(|_| {
            Error::data(format!(
                "{}: row {}: cannot parse {value_name} value {:?}",
                path.display(),
                i + 1,
                parts[2]
            ))
        })?;
        if !value.is_finite() {
            return Err(Error::data(format!(
                "{}: row {}: non-finite {value_name}",
                path.display(),
                i + 1
            )));
        }
        rows.push(SeriesRow { asset_id: parts[0].trim().to_string(), date, value });
    }
    Ok(rows)
}

/// Writes a per-asset series CSV with header `asset_id,date,<value_name>`.
pub fn save_series_csv(rows: &[SeriesRow], value_name: &str, path: &Path) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "asset_id,date,{value_name}")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.asset_id, r.date, r.value)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads an events CSV with header `asset_id,date,sign` and signs written
/// as `+`/`-` (or `1`/`-1`).
pub fn load_events_csv(path: &Path) -> Result<Vec<EventRow>> {
    let file = File::open(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::data(format!("{}: empty file", path.display())))?
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    if header.trim() != "asset_id,date,sign" {
        return Err(Error::data(format!(
            "{}: expected header \"asset_id,date,sign\"",
            path.display()
        )));
    }
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::data(format!(
                "{}: row {}: expected 3 fields",
                path.display(),
                i + 1
            )));
        }
        let date = crate::io::parse_date(parts[1].trim())
            .map_err(|e| e.with_context(&format!("{}: row {}", path.display(), i + 1)))?;
        let sign = match parts[2].trim() {
            "+" | "1" | "+1" => 1,
            "-" | "-1" => -1,
            other => {
                return Err(Error::data(format!(
                    "{}: row {}: sign must be + or -, found {other:?}",
                    path.display(),
                    i + 1
                )))
            }
        };
        rows.push(EventRow { asset_id: parts[0].trim().to_string(), date, sign });
    }
    Ok(rows)
}

/// Writes an events CSV with `+`/`-` signs.
pub fn save_events_csv(rows: &[EventRow], path: &Path) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "asset_id,date,sign")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.asset_id, r.date, if r.sign >= 0 { "+" } else { "-" })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn row(asset: &str, date: i64, value: f64) -> SeriesRow {
        SeriesRow { asset_id: asset.to_string(), date, value }
    }

    fn score(asset: &str, date: i64, s: f64) -> SentimentScore {
        SentimentScore { asset_id: asset.to_string(), date, score: s }
    }

    #[test]
    fn regression_scores_recenter_and_average() {
        let preds = vec![row("A", 1, 0.001), row("B", 1, 0.4), row("B", 1, 0.6)];
        let scores = scores_from_regression(&preds, 0.001);
        assert_eq!(scores.len(), 2);
        assert_eq!(scores[0].asset_id, "A");
        assert!((scores[0].score - 0.5).abs() < 1e-15);
        // Duplicates for B average to (0.4 + 0.6) / 2 - 0.001 + 0.5.
        assert!((scores[1].score - (0.5 - 0.001 + 0.5)).abs() < 1e-12);
        let single = scores_from_regression(&[row("C", 2, 0.02)], 0.001);
        assert!((single[0].score - 0.519).abs() < 1e-12);
    }

    #[test]
    fn probability_scores_must_sit_in_the_unit_interval() {
        assert!(scores_from_probabilities(&[row("A", 1, 1.2)]).is_err());
        let ok = scores_from_probabilities(&[row("A", 1, 0.7), row("A", 1, 0.9)]).unwrap();
        assert!((ok[0].score - 0.8).abs() < 1e-15);
    }

    #[test]
    fn neutral_scores_never_become_events() {
        let scores = vec![score("A", 1, 0.5), score("B", 1, 0.5)];
        assert!(select_events(&scores, 0.05).unwrap().is_empty());
        assert!(select_events(&[], 0.05).is_err());
    }

    #[test]
    fn a_hundred_positive_scores_yield_exactly_five_events() {
        let scores: Vec<SentimentScore> = (0..100)
            .map(|i| score(&format!("A{i:03}"), 1, 0.51 + i as f64 * 0.001))
            .collect();
        let events = select_events(&scores, 0.05).unwrap();
        assert_eq!(events.len(), 5);
        // The five largest scores belong to A095..A099.
        let ids: Vec<&str> = events.iter().map(|e| e.asset_id.as_str()).collect();
        assert_eq!(ids, ["A095", "A096", "A097", "A098", "A099"]);
        assert!(events.iter().all(|e| e.sign == 1));
    }

    #[test]
    fn mixed_signs_match_a_hand_enumerated_cut() {
        // 12 positive scores 0.51..0.62 and 8 negative scores 0.30..0.44.
        let mut scores = Vec::new();
        for i in 0..12 {
            scores.push(score(&format!("P{i:02}"), 1, 0.51 + 0.01 * i as f64));
        }
        for i in 0..8 {
            scores.push(score(&format!("N{i:02}"), 1, 0.30 + 0.02 * i as f64));
        }
        let events = select_events(&scores, 0.25).unwrap();
        // Positive cut: order statistic position 8.25 of the sorted twelve,
        // 0.59 + 0.25 * 0.01 = 0.5925, keeping 0.60, 0.61, 0.62.
        // Negative cut: position 1.75 of the sorted eight,
        // 0.32 + 0.75 * 0.02 = 0.335, keeping 0.30 and 0.32.
        let pos: Vec<&str> = events
            .iter()
            .filter(|e| e.sign == 1)
            .map(|e| e.asset_id.as_str())
            .collect();
        let neg: Vec<&str> = events
            .iter()
            .filter(|e| e.sign == -1)
            .map(|e| e.asset_id.as_str())
            .collect();
        assert_eq!(pos, ["P09", "P10", "P11"]);
        assert_eq!(neg, ["N00", "N01"]);
    }

    #[test]
    fn tightening_the_quantile_never_adds_events() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scores: Vec<SentimentScore> = (0..200)
            .map(|i| score(&format!("A{i:03}"), 1 + (i % 7) as i64, rng.random::<f64>()))
            .collect();
        let wide = select_events(&scores, 0.2).unwrap();
        let tight = select_events(&scores, 0.05).unwrap();
        for e in &tight {
            assert!(wide.contains(e), "event {e:?} appeared only at the tighter quantile");
        }
    }

    /// Deterministic toy panel: `n_assets` x `n_days`, planted event effect
    /// `beta0` on the event day, asset and date effects, Gaussian noise.
    fn planted_panel(
        n_assets: usize,
        n_days: i64,
        event_days: &[(usize, i64)],
        beta0: f64,
        noise_sd: f64,
        seed: u64,
    ) -> EventPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_sd).unwrap();
        let asset_fx: Vec<f64> = (0..n_assets).map(|_| 0.01 * rng.random::<f64>()).collect();
        let date_fx: Vec<f64> = (0..n_days).map(|_| 0.01 * rng.random::<f64>()).collect();
        let mut returns = Vec::new();
        for a in 0..n_assets {
            for t in 0..n_days {
                let mut r = asset_fx[a] + date_fx[t as usize] + normal.sample(&mut rng);
                if event_days.iter().any(|&(ea, ed)| ea == a && t == ed) {
                    r += beta0;
                }
                returns.push(row(&format!("S{a:03}"), t, r));
            }
        }
        let events = event_days
            .iter()
            .map(|&(a, d)| EventRow { asset_id: format!("S{a:03}"), date: d, sign: 1 })
            .collect();
        EventPanel { events, returns }
    }

    #[test]
    fn planted_event_effect_is_recovered_within_two_standard_errors() {
        let events = [(0usize, 30i64), (5, 40), (12, 35), (20, 50), (27, 45)];
        let panel = planted_panel(30, 80, &events, 0.02, 0.001, 2);
        let fit = event_study_fit(&panel).unwrap();
        let day0 = fit.offsets.iter().position(|&o| o == 0).unwrap();
        assert!(
            (fit.beta[day0] - 0.02).abs() <= 2.0 * fit.se[day0],
            "beta0 {} se {}",
            fit.beta[day0],
            fit.se[day0]
        );
        let mut misses = 0;
        for j in 0..fit.beta.len() {
            if j != day0 && fit.beta[j].abs() > 2.0 * fit.se[j] {
                misses += 1;
            }
        }
        assert!(misses <= 1, "{misses} null offsets out of bounds");
    }

    #[test]
    fn within_estimator_matches_a_dummy_variable_oracle() {
        let events = [(0usize, 15i64), (2, 20), (4, 24)];
        let panel = planted_panel(5, 40, &events, 0.03, 0.002, 3);
        let fit = event_study_fit(&panel).unwrap();

        // Oracle: plain OLS with explicit asset/date dummies and intercept.
        let n = panel.returns.len();
        let k = N_OFFSETS;
        let n_assets = 5;
        let n_days = 40usize;
        let cols = k + (n_assets - 1) + (n_days - 1) + 1;
        let mut design = DMatrix::<f64>::zeros(n, cols);
        let mut yv = DVector::<f64>::zeros(n);
        for (i, r) in panel.returns.iter().enumerate() {
            yv[i] = r.value;
            let a: usize = r.asset_id[1..].parse().unwrap();
            let t = r.date as usize;
            for (j, &off) in fit.offsets.iter().enumerate() {
                let hit = events
                    .iter()
                    .any(|&(ea, ed)| format!("S{ea:03}") == r.asset_id && r.date == ed + off);
                design[(i, j)] = if hit { 1.0 } else { 0.0 };
            }
            if a > 0 {
                design[(i, k + a - 1)] = 1.0;
            }
            if t > 0 {
                design[(i, k + n_assets - 1 + t - 1)] = 1.0;
            }
            design[(i, cols - 1)] = 1.0;
        }
        let rhs = DMatrix::from_column_slice(n, 1, yv.as_slice());
        let coef = crate::linalg::lstsq(&design, &rhs).unwrap();
        for j in 0..k {
            assert!(
                (fit.beta[j] - coef[(j, 0)]).abs() < 1e-8,
                "offset {}: {} vs {}",
                fit.offsets[j],
                fit.beta[j],
                coef[(j, 0)]
            );
        }
    }

    #[test]
    fn fixed_effects_absorb_per_asset_and_per_date_shifts() {
        let events = [(1usize, 20i64), (3, 25)];
        let panel = planted_panel(6, 45, &events, 0.02, 0.002, 4);
        let base = event_study_fit(&panel).unwrap();

        let mut shifted = panel.clone();
        for r in &mut shifted.returns {
            if r.asset_id == "S001" {
                r.value += 5.0;
            }
            if r.date == 22 {
                r.value -= 3.0;
            }
        }
        let moved = event_study_fit(&shifted).unwrap();
        for j in 0..base.beta.len() {
            assert!(
                (base.beta[j] - moved.beta[j]).abs() < 1e-8,
                "offset {} moved: {} vs {}",
                base.offsets[j],
                base.beta[j],
                moved.beta[j]
            );
        }
    }

    #[test]
    fn missing_events_or_offsets_are_degenerate() {
        let panel = planted_panel(4, 40, &[], 0.0, 0.001, 5);
        let err = event_study_fit(&panel).unwrap_err();
        assert!(err.to_string().contains("offsets"), "{err}");
        // An event too close to the panel edge leaves early offsets empty.
        let edge = planted_panel(4, 40, &[(0, 3)], 0.02, 0.001, 6);
        let err = event_study_fit(&edge).unwrap_err();
        assert!(err.to_string().contains("offsets"), "{err}");
    }

    fn fixture_scores() -> Vec<SentimentScore> {
        vec![
            score("A", 1, 0.9),
            score("B", 1, 0.7),
            score("C", 1, 0.2),
            score("A", 2, 0.4),
            score("B", 2, 0.9),
            score("C", 2, 0.8),
        ]
    }

    fn fixture_returns() -> Vec<SeriesRow> {
        vec![
            row("A", 1, 0.09),
            row("B", 1, 0.0),
            row("C", 1, -0.04),
            row("A", 2, -0.02),
            row("B", 2, 0.03),
            row("C", 2, -0.015),
        ]
    }

    fn fixture_caps() -> Vec<SeriesRow> {
        vec![
            row("A", 0, 2.0),
            row("B", 0, 1.0),
            row("C", 0, 1.0),
            row("A", 1, 2.0),
            row("B", 1, 2.0),
            row("C", 1, 1.0),
        ]
    }

    #[test]
    fn hand_fixture_reproduces_the_manual_ledger_exactly() {
        let cfg = BacktestConfig { top_n: 2, threshold: 0.5, cost_bps: 13.0 };
        let ledger =
            portfolio_backtest(&fixture_scores(), &fixture_returns(), &fixture_caps(), &cfg)
                .unwrap();
        assert_eq!(ledger.days.len(), 2);
        let rate = 13.0 / 1e4;

        // Day 1: long A (cap 2) and B (cap 1) fully invested; short C at
        // half capital. Entering from cash trades the full weight.
        let d1 = &ledger.days[0];
        let wa = 2.0 / 3.0;
        let wb = 1.0 / 3.0;
        let long_gross = wa * 0.09 + wb * 0.0;
        let long_cost = rate * (wa + wb);
        assert_eq!(d1.long_gross, long_gross);
        assert_eq!(d1.long_turnover, wa + wb);
        assert_eq!(d1.long_net, long_gross - long_cost);
        assert!((d1.long_net - 0.0587).abs() < 1e-12);
        let short_gross = -(0.5 * -0.04);
        let short_cost = rate * 0.5;
        assert_eq!(d1.short_gross, short_gross);
        assert_eq!(d1.short_net, short_gross - short_cost);
        assert!((d1.short_net - 0.01935).abs() < 1e-15);
        assert_eq!(d1.combined_net, (d1.long_net + d1.short_net) / 2.0);
        assert!((d1.combined_net - 0.039025).abs() < 1e-12);
        assert_eq!(d1.long_cash, 1.0 - (wa + wb));
        assert_eq!(d1.short_cash, 0.5);

        // Day 2: long B (cap 2) and C (cap 1); short A at half capital.
        let d2 = &ledger.days[1];
        let wb2 = 2.0 / 3.0;
        let wc2 = 1.0 / 3.0;
        let long_gross2 = wb2 * 0.03 + wc2 * -0.015;
        let long_turn2 = wa + (wb2 - wb).abs() + wc2;
        assert_eq!(d2.long_gross, long_gross2);
        assert_eq!(d2.long_turnover, long_turn2);
        assert_eq!(d2.long_net, long_gross2 - rate * long_turn2);
        let short_gross2 = -(0.5 * -0.02);
        let short_turn2 = 0.5 + 0.5;
        assert_eq!(d2.short_gross, short_gross2);
        assert_eq!(d2.short_turnover, short_turn2);
        assert_eq!(d2.short_net, short_gross2 - rate * short_turn2);
        assert!((d2.short_net - 0.0087).abs() < 1e-15);
        assert_eq!(d2.combined_net, (d2.long_net + d2.short_net) / 2.0);

        for d in &ledger.days {
            assert_eq!(d.long_net, d.long_gross - d.long_cost);
            assert_eq!(d.short_net, d.short_gross - d.short_cost);
        }
        let csv = ledger_csv(&ledger);
        assert!(csv.lines().count() == 3 && csv.starts_with("date,"));
    }

    #[test]
    fn neutral_days_hold_no_positions_and_pay_no_costs() {
        let scores = vec![score("A", 1, 0.5), score("B", 1, 0.5)];
        let cfg = BacktestConfig { top_n: 2, ..BacktestConfig::default() };
        let ledger =
            portfolio_backtest(&scores, &fixture_returns(), &fixture_caps(), &cfg).unwrap();
        let d = &ledger.days[0];
        assert!(d.long_weights.is_empty() && d.short_weights.is_empty());
        assert_eq!(d.long_net, 0.0);
        assert_eq!(d.short_net, 0.0);
        assert_eq!(d.long_cost, 0.0);
        assert_eq!(d.long_cash, 1.0);
    }

    #[test]
    fn weights_ignore_a_common_cap_scale() {
        let cfg = BacktestConfig { top_n: 2, threshold: 0.5, cost_bps: 13.0 };
        let base =
            portfolio_backtest(&fixture_scores(), &fixture_returns(), &fixture_caps(), &cfg)
                .unwrap();
        let scaled_caps: Vec<SeriesRow> = fixture_caps()
            .into_iter()
            .map(|mut r| {
                r.value *= 3.0;
                r
            })
            .collect();
        let scaled =
            portfolio_backtest(&fixture_scores(), &fixture_returns(), &scaled_caps, &cfg)
                .unwrap();
        for (a, b) in base.days.iter().zip(&scaled.days) {
            for ((na, wa), (nb, wb)) in a.long_weights.iter().zip(&b.long_weights) {
                assert_eq!(na, nb);
                assert!((wa - wb).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn missing_data_is_reported_with_the_asset_and_date() {
        let cfg = BacktestConfig { top_n: 2, ..BacktestConfig::default() };
        let no_caps: Vec<SeriesRow> = fixture_caps()
            .into_iter()
            .filter(|r| !(r.asset_id == "A" && r.date == 0))
            .collect();
        let err = portfolio_backtest(&fixture_scores(), &fixture_returns(), &no_caps, &cfg)
            .unwrap_err();
        assert!(err.to_string().contains('A') && err.to_string().contains('1'), "{err}");

        let no_ret: Vec<SeriesRow> =
            fixture_returns().into_iter().filter(|r| r.asset_id != "C").collect();
        let err = portfolio_backtest(&fixture_scores(), &no_ret, &fixture_caps(), &cfg)
            .unwrap_err();
        assert!(err.to_string().contains("missing return for C"), "{err}");
    }

    #[test]
    fn default_cost_is_thirteen_basis_points() {
        let cfg = BacktestConfig::default();
        assert_eq!(cfg.cost_bps, 13.0);
        assert_eq!(cfg.top_n, 50);
        assert_eq!(cfg.threshold, 0.5);
    }

    #[test]
    fn cumulative_log_return_sums_daily_logs() {
        let cfg = BacktestConfig { top_n: 2, threshold: 0.5, cost_bps: 13.0 };
        let ledger =
            portfolio_backtest(&fixture_scores(), &fixture_returns(), &fixture_caps(), &cfg)
                .unwrap();
        let nets = ledger.combined_nets();
        let cumlog: f64 = nets.iter().map(|r| (1.0 + r).ln()).sum();
        let direct = nets.iter().fold(1.0, |acc, r| acc * (1.0 + r)).ln();
        assert!((cumlog - direct).abs() < 1e-12);
    }

    #[test]
    fn apr_and_sharpe_match_hand_arithmetic() {
        assert!(apr_sharpe(&[0.01, 0.01, 0.01]).is_err());
        assert!(apr_sharpe(&[0.01]).is_err());
        let (apr, _) = apr_sharpe(&[0.01, -0.01, 0.01, -0.01]).unwrap();
        assert!(apr.abs() < 1e-12);

        let series = [0.004, -0.002, 0.007, 0.001, -0.003, 0.006, 0.0, 0.002, -0.001, 0.005];
        let (apr, sr) = apr_sharpe(&series).unwrap();
        let mean = series.iter().sum::<f64>() / 10.0;
        let var = series.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / 9.0;
        assert!((apr - mean * 252.0 * 100.0).abs() < 1e-10);
        assert!((sr - mean / var.sqrt() * 252.0_f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn series_and_event_csvs_round_trip() {
        let dir = std::env::temp_dir().join(format!("farmaug-fin-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let spath = dir.join("scores.csv");
        let rows = vec![row("A", 1, 0.25), row("B", 2, -0.5)];
        save_series_csv(&rows, "score", &spath).unwrap();
        let back = load_series_csv(&spath, "score").unwrap();
        assert_eq!(back, rows);
        assert!(load_series_csv(&spath, "ret").is_err());

        let epath = dir.join("events.csv");
        let events = vec![
            EventRow { asset_id: "A".to_string(), date: 3, sign: 1 },
            EventRow { asset_id: "B".to_string(), date: 4, sign: -1 },
        ];
        save_events_csv(&events, &epath).unwrap();
        assert_eq!(load_events_csv(&epath).unwrap(), events);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
