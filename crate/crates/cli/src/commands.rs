//! Subcommand implementations.
//!
//! Every command that reads a configuration follows the same shape: parse
//! and hash the file, resolve the effective seed and output directory,
//! honor `--dry-run` by validating inputs only, do the work, and finish
//! with a `manifest.json` naming the files written. The manifest is the
//! only place a timestamp appears, so reruns with identical inputs are
//! byte-identical everywhere else.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use farmaug::augment::{fit_augment, BlockLabel};
use farmaug::config::{RunConfig, sha256_hex};
use farmaug::error::{Error, Result};
use farmaug::evaluate::{EvalReport, MetricKind};
use farmaug::factors::{spectrum, EigenSpectrum};
use farmaug::finance::{
    event_study_fit, ledger_csv, load_events_csv, load_series_csv, portfolio_backtest,
    select_events, apr_sharpe, EventPanel, EventRow, EventStudyFit, SentimentScore, SeriesRow,
};
use farmaug::io::{load_csv, load_vector_csv};
use farmaug::matrix::{standardize, Matrix};
use farmaug::pipeline::run_pipeline;
use farmaug::screening::{screen, LossKind, ScreenResult};
use farmaug::synth::{generate, SynthKind};
use farmaug::transforms::fit_transform;

use crate::{RunArgs, SynthArgs};

/// Parsed configuration plus the run-wide effective values.
struct Ctx {
    cfg: RunConfig,
    hash: String,
    seed: u64,
    out: PathBuf,
}

impl Ctx {
    fn new(args: &RunArgs) -> Result<Ctx> {
        let (cfg, hash) = RunConfig::from_path(&args.config)?;
        init_threads(args.threads)?;
        let seed = args.seed.unwrap_or(cfg.seed);
        let out = args
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .ok_or_else(|| {
                Error::Config("no output directory: pass --out or set out_dir".to_string())
            })?;
        Ok(Ctx { cfg, hash, seed, out })
    }

    fn ensure_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out)
            .map_err(|e| Error::Data(format!("{}: {e}", self.out.display())))
    }
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".to_string()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool setup failed: {e}")))?;
    }
    Ok(())
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Data(format!("{}: file not found", path.display())))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    fs::write(path, body + "\n").map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn load_xy(cfg: &RunConfig) -> Result<(Matrix, Vec<f64>)> {
    let x = load_csv(&cfg.data.x, cfg.data.has_header)?;
    let y = load_vector_csv(&cfg.data.y, cfg.data.has_header)?;
    Ok((x, y))
}

/// Run metadata; `created_unix_secs` is the only timestamp any command
/// writes.
#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    created_unix_secs: u64,
    jobs: Vec<String>,
    files: Vec<String>,
}

fn write_manifest(ctx: &Ctx, command: &str, jobs: Vec<String>, files: Vec<String>) -> Result<()> {
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = Manifest {
        command,
        config_hash: &ctx.hash,
        seed: ctx.seed,
        created_unix_secs: created,
        jobs,
        files,
    };
    write_json(&ctx.out.join("manifest.json"), &manifest)
}

fn metric_str(kind: MetricKind) -> &'static str {
    match kind {
        MetricKind::OosR2Rolling => "oos_r2_rolling",
        MetricKind::OosR2 => "oos_r2",
        MetricKind::Err => "err",
    }
}

/// The metrics document schema: field order is fixed so identical runs are
/// byte-identical.
#[derive(Serialize)]
struct MetricsDoc<'a> {
    metric: &'a str,
    value: f64,
    per_window: &'a [Option<f64>],
    seed: u64,
    config_hash: &'a str,
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    job: &'a str,
    seed: u64,
    config_hash: &'a str,
    report: &'a EvalReport,
}

pub fn cmd_run(args: &RunArgs) -> Result<()> {
    let ctx = Ctx::new(args)?;
    let jobs = ctx.cfg.jobs(args.seed)?;
    let reps = ctx.cfg.repetitions;
    if args.dry_run {
        require_file(&ctx.cfg.data.x)?;
        require_file(&ctx.cfg.data.y)?;
        println!(
            "configuration ok: {} job(s) x {} repetition(s), seed {}",
            jobs.len(),
            reps,
            ctx.seed
        );
        return Ok(());
    }
    ctx.ensure_out()?;
    let (x, y) = load_xy(&ctx.cfg)?;
    let mut files = Vec::new();
    let mut job_names = Vec::new();
    for job in &jobs {
        job_names.push(job.name.clone());
        for rep in 0..reps {
            let mut spec = job.spec.clone();
            spec.seed = ctx.seed + rep as u64;
            let outcome = run_pipeline(&x, &y, &spec)
                .map_err(|e| e.with_context(&format!("job {}", job.name)))?;
            let metric = metric_str(outcome.report.metric);
            let suffix = if reps > 1 {
                format!("{}-r{rep}", job.name)
            } else {
                job.name.clone()
            };
            let metrics_name = format!("metrics-{suffix}.json");
            write_json(
                &ctx.out.join(&metrics_name),
                &MetricsDoc {
                    metric,
                    value: outcome.report.value,
                    per_window: &outcome.report.per_window,
                    seed: spec.seed,
                    config_hash: &ctx.hash,
                },
            )?;
            let report_name = format!("report-{suffix}.json");
            write_json(
                &ctx.out.join(&report_name),
                &ReportDoc {
                    job: &job.name,
                    seed: spec.seed,
                    config_hash: &ctx.hash,
                    report: &outcome.report,
                },
            )?;
            files.push(metrics_name);
            files.push(report_name);
            println!("job {suffix}: {metric} = {}", outcome.report.value);
        }
    }
    write_manifest(&ctx, "run", job_names, files)
}

fn write_factors_csv(
    path: &Path,
    hash: &str,
    seed: u64,
    spect: &EigenSpectrum,
) -> Result<()> {
    let vals = spect.values();
    let total: f64 = vals.iter().sum();
    let mut s = format!("# config_hash={hash} seed={seed}\n");
    s.push_str("index,eigenvalue,ratio,cum_var_explained\n");
    let mut cum = 0.0;
    for (i, &v) in vals.iter().enumerate() {
        cum += v;
        let ratio = if i + 1 < vals.len() && vals[i + 1] > 0.0 {
            format!("{}", v / vals[i + 1])
        } else {
            String::new()
        };
        let share = if total > 0.0 { cum / total } else { 0.0 };
        s.push_str(&format!("{},{},{},{}\n", i + 1, v, ratio, share));
    }
    fs::write(path, s).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn cmd_factors(args: &RunArgs) -> Result<()> {
    let ctx = Ctx::new(args)?;
    let jobs = ctx.cfg.jobs(args.seed)?;
    if args.dry_run {
        require_file(&ctx.cfg.data.x)?;
        require_file(&ctx.cfg.data.y)?;
        println!("configuration ok: {} job(s), seed {}", jobs.len(), ctx.seed);
        return Ok(());
    }
    ctx.ensure_out()?;
    let (x, y) = load_xy(&ctx.cfg)?;
    let mut files = Vec::new();
    let mut job_names = Vec::new();
    #[derive(Serialize)]
    struct FactorJobSummary {
        job: String,
        chosen_k: usize,
        rows: usize,
        transformed_cols: usize,
    }
    let mut summaries = Vec::new();
    for job in &jobs {
        job_names.push(job.name.clone());
        let spec = &job.spec;
        let (xs, _) = standardize(&x, spec.standardize_mode)?;
        let fitted = fit_transform(&spec.transform, &xs, Some(&y), spec.task, spec.seed)
            .map_err(|e| e.with_context(&format!("job {}", job.name)))?;
        let z = fitted.apply(&xs)?;
        let spect = spectrum(&z)?;
        let model = spec
            .factor
            .fit(&z)
            .map_err(|e| e.with_context(&format!("job {}", job.name)))?;
        let csv_name = format!("factors-{}.csv", job.name);
        write_factors_csv(&ctx.out.join(&csv_name), &ctx.hash, ctx.seed, &spect)?;
        let bin_name = format!("factor-{}.bin", job.name);
        model.save_bin(&ctx.out.join(&bin_name))?;
        files.push(csv_name);
        files.push(bin_name);
        summaries.push(FactorJobSummary {
            job: job.name.clone(),
            chosen_k: model.k,
            rows: z.nrows(),
            transformed_cols: z.ncols(),
        });
        println!(
            "job {}: k = {} on a {} x {} transformed panel",
            job.name,
            model.k,
            z.nrows(),
            z.ncols()
        );
    }
    #[derive(Serialize)]
    struct FactorsSummary<'a> {
        config_hash: &'a str,
        seed: u64,
        jobs: Vec<FactorJobSummary>,
    }
    write_json(
        &ctx.out.join("factors-summary.json"),
        &FactorsSummary { config_hash: &ctx.hash, seed: ctx.seed, jobs: summaries },
    )?;
    files.push("factors-summary.json".to_string());
    write_manifest(&ctx, "factors", job_names, files)
}

pub fn cmd_screen(args: &RunArgs) -> Result<()> {
    let ctx = Ctx::new(args)?;
    let jobs = ctx.cfg.jobs(args.seed)?;
    if args.dry_run {
        require_file(&ctx.cfg.data.x)?;
        require_file(&ctx.cfg.data.y)?;
        println!("configuration ok: {} job(s), seed {}", jobs.len(), ctx.seed);
        return Ok(());
    }
    ctx.ensure_out()?;
    let (x, y) = load_xy(&ctx.cfg)?;
    let loss = LossKind::from(ctx.cfg.task);
    let mut files = Vec::new();
    let mut job_names = Vec::new();
    for job in &jobs {
        job_names.push(job.name.clone());
        let spec = &job.spec;
        let m = spec.screen_m.ok_or_else(|| {
            Error::Config("the screen command needs a [screen] section with m".to_string())
        })?;
        let (xs, _) = standardize(&x, spec.standardize_mode)?;
        let fitted = fit_transform(&spec.transform, &xs, Some(&y), spec.task, spec.seed)
            .map_err(|e| e.with_context(&format!("job {}", job.name)))?;
        let (_, design) = fit_augment(
            &xs,
            fitted,
            &spec.factor,
            spec.factor0.as_ref(),
            spec.residual,
            spec.include_x,
        )
        .map_err(|e| e.with_context(&format!("job {}", job.name)))?;
        let f_blocks: Vec<&Matrix> = design
            .blocks
            .iter()
            .filter(|(l, _)| matches!(l, BlockLabel::F0 | BlockLabel::F))
            .map(|(_, m)| m)
            .collect();
        let f_all = Matrix::hcat(&f_blocks)?;
        let target = design
            .blocks
            .iter()
            .find(|(l, _)| matches!(l, BlockLabel::U | BlockLabel::Utilde))
            .or_else(|| design.blocks.iter().find(|(l, _)| matches!(l, BlockLabel::X)))
            .map(|(_, m)| m)
            .ok_or_else(|| {
                Error::Config(
                    "screening needs a residual block or include_x = true".to_string(),
                )
            })?;
        let result: ScreenResult = screen(&y, &f_all, target, m, loss)
            .map_err(|e| e.with_context(&format!("job {}", job.name)))?;
        #[derive(Serialize)]
        struct ScreenDoc<'a> {
            job: &'a str,
            seed: u64,
            config_hash: &'a str,
            m: usize,
            candidates: usize,
            result: &'a ScreenResult,
        }
        let name = format!("screen-{}.json", job.name);
        write_json(
            &ctx.out.join(&name),
            &ScreenDoc {
                job: &job.name,
                seed: ctx.seed,
                config_hash: &ctx.hash,
                m,
                candidates: target.ncols(),
                result: &result,
            },
        )?;
        files.push(name);
        println!("job {}: kept {} of {} residual columns", job.name, m, target.ncols());
    }
    write_manifest(&ctx, "screen", job_names, files)
}

/// APR/Sharpe of one leg, or the reason it has none.
#[derive(Serialize)]
struct LegSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    apr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sharpe: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn leg_summary(nets: &[f64], empty: bool) -> LegSummary {
    if empty {
        return LegSummary { apr: None, sharpe: None, error: Some("no positions".to_string()) };
    }
    match apr_sharpe(nets) {
        Ok((apr, sharpe)) => LegSummary { apr: Some(apr), sharpe: Some(sharpe), error: None },
        Err(e) => LegSummary { apr: None, sharpe: None, error: Some(e.to_string()) },
    }
}

pub fn cmd_backtest(args: &RunArgs) -> Result<()> {
    let ctx = Ctx::new(args)?;
    let bt = ctx.cfg.backtest.clone().ok_or_else(|| {
        Error::Config("the backtest command needs a [backtest] section".to_string())
    })?;
    if args.dry_run {
        require_file(&bt.scores)?;
        require_file(&bt.returns)?;
        require_file(&bt.caps)?;
        println!("configuration ok: backtest inputs found");
        return Ok(());
    }
    ctx.ensure_out()?;
    let score_rows = load_series_csv(&bt.scores, "score")?;
    let returns = load_series_csv(&bt.returns, "ret")?;
    let caps = load_series_csv(&bt.caps, "cap")?;
    let scores: Vec<SentimentScore> = score_rows
        .into_iter()
        .map(|r| SentimentScore { asset_id: r.asset_id, date: r.date, score: r.value })
        .collect();
    let ledger = portfolio_backtest(&scores, &returns, &caps, &bt.config())?;
    let ledger_path = ctx.out.join("ledger.csv");
    let body = format!(
        "# config_hash={} seed={}\n{}",
        ctx.hash,
        ctx.seed,
        ledger_csv(&ledger)
    );
    fs::write(&ledger_path, body)
        .map_err(|e| Error::Data(format!("{}: {e}", ledger_path.display())))?;

    let empty = ledger.days.is_empty();
    #[derive(Serialize)]
    struct BacktestSummary<'a> {
        config_hash: &'a str,
        seed: u64,
        days: usize,
        top_n: usize,
        threshold: f64,
        cost_bps: f64,
        long: LegSummary,
        short: LegSummary,
        combined: LegSummary,
    }
    let summary = BacktestSummary {
        config_hash: &ctx.hash,
        seed: ctx.seed,
        days: ledger.days.len(),
        top_n: bt.top_n,
        threshold: bt.threshold,
        cost_bps: bt.cost_bps,
        long: leg_summary(&ledger.long_nets(), empty),
        short: leg_summary(&ledger.short_nets(), empty),
        combined: leg_summary(&ledger.combined_nets(), empty),
    };
    write_json(&ctx.out.join("backtest-summary.json"), &summary)?;
    match (&summary.combined.apr, &summary.combined.sharpe) {
        (Some(apr), Some(sr)) => {
            println!("backtest: {} day(s); combined APR = {apr}, SR = {sr}", ledger.days.len());
        }
        _ => println!(
            "backtest: {} day(s); {}",
            ledger.days.len(),
            summary.combined.error.as_deref().unwrap_or("no summary")
        ),
    }
    write_manifest(
        &ctx,
        "backtest",
        vec![],
        vec!["ledger.csv".to_string(), "backtest-summary.json".to_string()],
    )
}

/// Around-event profile for one sign class, or why it was not fitted.
#[derive(Serialize)]
struct SignedProfile {
    n_events: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<EventStudyFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn signed_profile(events: Vec<EventRow>, returns: &[SeriesRow]) -> SignedProfile {
    let n_events = events.len();
    if n_events == 0 {
        return SignedProfile { n_events, fit: None, error: None };
    }
    match event_study_fit(&EventPanel { events, returns: returns.to_vec() }) {
        Ok(fit) => SignedProfile { n_events, fit: Some(fit), error: None },
        Err(e) => SignedProfile { n_events, fit: None, error: Some(e.to_string()) },
    }
}

pub fn cmd_event_study(args: &RunArgs) -> Result<()> {
    let ctx = Ctx::new(args)?;
    let es = ctx.cfg.event_study.clone().ok_or_else(|| {
        Error::Config("the event-study command needs an [event_study] section".to_string())
    })?;
    if args.dry_run {
        require_file(&es.returns)?;
        if let Some(p) = &es.events {
            require_file(p)?;
        }
        if let Some(p) = &es.scores {
            require_file(p)?;
        }
        println!("configuration ok: event-study inputs found");
        return Ok(());
    }
    ctx.ensure_out()?;
    let returns = load_series_csv(&es.returns, "ret")?;
    if returns.is_empty() {
        return Err(Error::Data(format!("{}: no return rows", es.returns.display())));
    }
    let events: Vec<EventRow> = match (&es.events, &es.scores) {
        (Some(epath), None) => load_events_csv(epath)?,
        (None, Some(spath)) => {
            let rows = load_series_csv(spath, "score")?;
            let scores: Vec<SentimentScore> = rows
                .into_iter()
                .map(|r| SentimentScore { asset_id: r.asset_id, date: r.date, score: r.value })
                .collect();
            select_events(&scores, es.quantile)?
        }
        _ => unreachable!("validated at parse time"),
    };
    let all = event_study_fit(&EventPanel { events: events.clone(), returns: returns.clone() })?;
    let n_pos = events.iter().filter(|e| e.sign > 0).count();
    let n_neg = events.len() - n_pos;
    let positive = signed_profile(
        events.iter().filter(|e| e.sign > 0).cloned().collect(),
        &returns,
    );
    let negative = signed_profile(
        events.iter().filter(|e| e.sign < 0).cloned().collect(),
        &returns,
    );
    #[derive(Serialize)]
    struct EventStudyDoc<'a> {
        config_hash: &'a str,
        seed: u64,
        n_events: usize,
        all: &'a EventStudyFit,
        positive: SignedProfile,
        negative: SignedProfile,
    }
    write_json(
        &ctx.out.join("event-study.json"),
        &EventStudyDoc {
            config_hash: &ctx.hash,
            seed: ctx.seed,
            n_events: events.len(),
            all: &all,
            positive,
            negative,
        },
    )?;
    let day0 = all.offsets.iter().position(|&o| o == 0).expect("offset 0 is always present");
    println!(
        "event-study: {} event(s) ({n_pos} positive, {n_neg} negative); \
         day-0 coefficient = {} (se {})",
        events.len(),
        all.beta[day0],
        all.se[day0]
    );
    write_manifest(&ctx, "event-study", vec![], vec!["event-study.json".to_string()])
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    init_threads(args.threads)?;
    let kind: SynthKind = args.kind.parse()?;
    let (dn, dp) = kind.default_dims();
    let n = args.n.unwrap_or(dn);
    let p = args.p.unwrap_or(dp);
    if args.dry_run {
        println!(
            "would generate {} (n = {n}, p = {p}, seed = {}) into {}",
            kind.as_str(),
            args.seed,
            args.out.display()
        );
        return Ok(());
    }
    let files = generate(kind, n, p, args.seed, &args.out)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

// Used by integration tests to confirm the hash helper the CLI stamps into
// outputs matches the library's.
#[allow(dead_code)]
fn hash_of(text: &str) -> String {
    sha256_hex(text.as_bytes())
}
