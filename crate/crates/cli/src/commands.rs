//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use aethercast::eval::{build_report, RunReport};
use aethercast::featsel::{mrmr_select, relevance_report, Discretizer};
use aethercast::ingest::{fetch_all, load_csv_with_target, write_csv, HttpTransport, SourceConfig};
use aethercast::preprocess::PipelineState;
use aethercast::regimes::{run_regime, ForecastRecord, Regime, RunFailure, RunOutcome};
use aethercast::report::{
    comparison_csv, comparison_markdown, emit_report, parse_reference_csv, reference_csv,
    relevance_svg, ComparisonRow, FORECASTS_FILE, MANIFEST_FILE,
};
use aethercast::series::{
    chrono_split, fmt_ts, parse_ts, weekly_windows, ChronoSplit, HourlyFrame,
};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{ConfigError, DataSource, ExperimentConfig, ModelKind};

/// Relative band used when comparing against reference numbers.
pub const REFERENCE_BAND: f64 = 0.25;

pub const BENCH_REGIMES: [Regime; 2] = [Regime::WalkForward, Regime::FrozenCorrected];

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn rt(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| rt(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, body).map_err(|e| rt(format!("{}: {e}", path.display())))
}

fn source_config(
    cfg: &ExperimentConfig,
    latitude: f64,
    longitude: f64,
    start: i64,
    end: i64,
) -> SourceConfig {
    SourceConfig {
        latitude,
        longitude,
        start,
        end,
        api_key: None,
        cache_dir: cfg.data.cache_dir.clone(),
    }
}

/// Loads the configured CSV or fetches from the remote providers.
pub fn load_data(cfg: &ExperimentConfig) -> Result<HourlyFrame, CliError> {
    match cfg.source()? {
        DataSource::Csv(path) => load_csv_with_target(&path, Some(&cfg.data.target)).map_err(rt),
        DataSource::Fetch {
            latitude,
            longitude,
            start,
            end,
        } => {
            let src = source_config(cfg, latitude, longitude, start, end);
            let transport = HttpTransport::new(Duration::from_secs(120));
            fetch_all(&src, &transport).map_err(rt)
        }
    }
}

pub fn fetch(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let DataSource::Fetch {
        latitude,
        longitude,
        start,
        end,
    } = cfg.source()?
    else {
        return Err(ConfigError::InvalidValue {
            key: "data".into(),
            reason: "fetch needs latitude, longitude, start and end rather than csv".into(),
        }
        .into());
    };
    let src = source_config(cfg, latitude, longitude, start, end);
    let transport = HttpTransport::new(Duration::from_secs(120));
    let frame = fetch_all(&src, &transport).map_err(rt)?;
    let path = cfg.out_dir.join("data.csv");
    fs::create_dir_all(&cfg.out_dir).map_err(rt)?;
    write_csv(&frame, &path).map_err(rt)?;
    log::info!("wrote {} rows to {}", frame.len(), path.display());
    Ok(path)
}

fn candidates(frame: &HourlyFrame) -> Vec<String> {
    frame
        .column_names()
        .iter()
        .filter(|c| c.as_str() != frame.target_name())
        .cloned()
        .collect()
}

/// Regressors for a run: the configured list, or the mRMR top-k from the
/// training segment when `select_k` is set.
pub fn resolve_exog(cfg: &ExperimentConfig, split: &ChronoSplit) -> Result<Vec<String>, CliError> {
    let Some(k) = cfg.select_k else {
        return Ok(cfg.exog.clone());
    };
    let mut cands = candidates(&split.train);
    cands.sort();
    let mut cols = cands.clone();
    cols.push(split.train.target_name().to_string());
    let d = Discretizer::fit(&split.train, &cols, cfg.mi_bins).map_err(rt)?;
    mrmr_select(&split.train, &cands, k, &d).map_err(rt)
}

fn split_data(cfg: &ExperimentConfig, frame: &HourlyFrame) -> Result<ChronoSplit, CliError> {
    chrono_split(frame, cfg.split_ratio).map_err(rt)
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let frame = load_data(cfg)?;
    let split = split_data(cfg, &frame)?;
    let exog = resolve_exog(cfg, &split)?;
    let state = PipelineState::fit(&split.train, &cfg.preprocess(exog)).map_err(rt)?;
    let windows = weekly_windows(&split.test);
    let out = &cfg.out_dir;
    let files = [
        (out.join("pipeline.json"), state.to_json()),
        (
            out.join("train_prepared.csv"),
            aethercast::ingest::frame_to_csv(&state.transform(&split.train).map_err(rt)?),
        ),
        (
            out.join("test_regressors.csv"),
            aethercast::ingest::frame_to_csv(&state.transform_regressors(&split.test).map_err(rt)?),
        ),
        (
            out.join("split.json"),
            serde_json::to_string_pretty(&json!({
                "train_rows": split.train.len(),
                "test_rows": split.test.len(),
                "train_end": split.train.last_timestamp().map(fmt_ts),
                "test_start": split.test.first_timestamp().map(fmt_ts),
                "windows": windows.len(),
                "degenerate_columns": state.winsor.degenerate_columns(),
            }))
            .map_err(rt)?,
        ),
    ];
    let mut written = Vec::new();
    for (path, body) in files {
        write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

pub fn select_features(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let frame = load_data(cfg)?;
    let split = split_data(cfg, &frame)?;
    let rel = relevance_report(&split.train, &candidates(&split.train), cfg.mi_bins).map_err(rt)?;
    let k = cfg
        .select_k
        .unwrap_or(cfg.exog.len())
        .min(rel.ranking.len());
    let selected = &rel.ranking[..k];
    let out = &cfg.out_dir;
    let files = [
        (out.join("relevance.csv"), rel.to_csv()),
        (out.join("relevance.svg"), relevance_svg(&rel)),
        (
            out.join("selected.json"),
            serde_json::to_string_pretty(&json!({ "k": k, "selected": selected })).map_err(rt)?,
        ),
    ];
    let mut written = Vec::new();
    for (path, body) in files {
        write(&path, body)?;
        written.push(path);
    }
    log::info!("mRMR selection: {}", selected.join(", "));
    Ok(written)
}

/// Runs one model under one regime and writes its report into `out_dir`.
fn run_cell(
    cfg: &ExperimentConfig,
    split: &ChronoSplit,
    exog: &[String],
    kind: ModelKind,
    regime: Regime,
    out_dir: &Path,
) -> Result<RunReport, CliError> {
    let windows = weekly_windows(&split.test);
    if windows.is_empty() {
        return Err(rt(format!(
            "test segment has {} hours, fewer than one 168-hour window",
            split.test.len()
        )));
    }
    let mut model = cfg.model_spec(kind).build();
    let started = Instant::now();
    let outcome = run_regime(
        model.as_mut(),
        regime,
        split,
        &windows,
        &cfg.preprocess(exog.to_vec()),
        &cfg.correction(),
    );
    let elapsed = started.elapsed().as_secs_f64();
    if let Some(f) = &outcome.failure {
        log::warn!(
            "{} / {}: stopped at week {}: {}",
            outcome.model_tag,
            outcome.regime_tag,
            f.week,
            f.message
        );
    }
    if outcome.records.is_empty() {
        let msg = outcome.failure.map_or_else(
            || "no forecasts produced".to_string(),
            |f| format!("week {}: {}", f.week, f.message),
        );
        return Err(rt(format!(
            "{} / {} produced no forecasts: {msg}",
            kind_tag(kind),
            regime.tag()
        )));
    }
    let report = build_report(&outcome, windows.len(), elapsed).map_err(rt)?;
    let mut manifest_cfg = serde_json::to_value(cfg).map_err(rt)?;
    manifest_cfg["model"] = json!(kind);
    manifest_cfg["regime"] = json!(regime);
    manifest_cfg["resolved_exog"] = json!(exog);
    emit_report(&report, &outcome.records, out_dir, &manifest_cfg).map_err(rt)?;
    Ok(report)
}

fn kind_tag(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Sarimax => "sarimax",
        ModelKind::Additive => "additive",
        ModelKind::Arnet => "arnet",
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunReport, CliError> {
    let frame = load_data(cfg)?;
    let split = split_data(cfg, &frame)?;
    let exog = resolve_exog(cfg, &split)?;
    let report = run_cell(cfg, &split, &exog, cfg.model, cfg.regime, &cfg.out_dir)?;
    log::info!(
        "{} / {}: {} of {} windows, MAE {:.3}, RMSE {:.3}",
        report.model,
        report.regime,
        report.windows.len(),
        report.planned_windows,
        report.aggregate.mae,
        report.aggregate.rmse
    );
    Ok(report)
}

/// Runs every model under the walk-forward and corrected frozen regimes in
/// parallel, one subdirectory per cell, then writes comparison tables.
pub fn bench(
    cfg: &ExperimentConfig,
    reference: Option<&Path>,
) -> Result<Vec<ComparisonRow>, CliError> {
    let refs = match reference {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| rt(format!("{}: {e}", p.display())))?;
            Some(parse_reference_csv(&text).map_err(rt)?)
        }
        None => None,
    };
    let frame = load_data(cfg)?;
    let split = split_data(cfg, &frame)?;
    let exog = resolve_exog(cfg, &split)?;
    let planned = weekly_windows(&split.test).len();
    let cells: Vec<(ModelKind, Regime)> = ModelKind::ALL
        .iter()
        .flat_map(|k| BENCH_REGIMES.iter().map(move |r| (*k, *r)))
        .collect();
    let rows: Vec<ComparisonRow> = std::thread::scope(|s| {
        let handles: Vec<_> = cells
            .iter()
            .map(|&(kind, regime)| {
                let (split, exog) = (&split, &exog);
                let dir = cfg
                    .out_dir
                    .join(format!("{}_{}", kind_tag(kind), regime.tag()));
                s.spawn(
                    move || match run_cell(cfg, split, exog, kind, regime, &dir) {
                        Ok(r) => ComparisonRow::from_report(&r),
                        Err(e) => ComparisonRow::failed(
                            kind_tag(kind),
                            regime.tag(),
                            planned,
                            e.to_string(),
                        ),
                    },
                )
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("bench cell panicked"))
            .collect()
    });
    write(&cfg.out_dir.join("comparison.csv"), comparison_csv(&rows))?;
    write(
        &cfg.out_dir.join("comparison.md"),
        comparison_markdown(&rows),
    )?;
    if let Some(refs) = refs {
        write(
            &cfg.out_dir.join("reference.csv"),
            reference_csv(&rows, &refs, REFERENCE_BAND),
        )?;
    }
    Ok(rows)
}

/// Rebuilds forecast records from a run directory's `forecasts.csv`.
pub fn read_records(
    dir: &Path,
    model: &str,
    regime: &str,
) -> Result<Vec<ForecastRecord>, CliError> {
    let path = dir.join(FORECASTS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| rt(format!("{}: {e}", path.display())))?;
    let mut weeks: BTreeMap<usize, ForecastRecord> = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = || rt(format!("{}: malformed line {}", path.display(), i + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let week: usize = f[1].parse().map_err(|_| bad())?;
        let rec = weeks.entry(week).or_insert_with(|| ForecastRecord {
            week,
            timestamps: Vec::new(),
            actual: Vec::new(),
            base_pred: Vec::new(),
            corrected_pred: Vec::new(),
            bias: 0.0,
            model_tag: model.into(),
            regime_tag: regime.into(),
            train_rows: 0,
            fit_seconds: 0.0,
        });
        rec.timestamps.push(parse_ts(f[0]).ok_or_else(bad)?);
        rec.actual.push(num(f[3])?);
        rec.base_pred.push(num(f[4])?);
        rec.corrected_pred.push(num(f[5])?);
        rec.bias = num(f[6])?;
    }
    Ok(weeks.into_values().collect())
}

/// Re-scores an existing run directory and rewrites its report files into
/// `out` (the run directory itself when `out` is `None`).
pub fn report(run_dir: &Path, out: Option<&Path>) -> Result<RunReport, CliError> {
    let mpath = run_dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| rt(format!("{}: {e}", mpath.display())))?;
    let manifest: Value =
        serde_json::from_str(&text).map_err(|e| rt(format!("{}: {e}", mpath.display())))?;
    let field = |k: &str| {
        manifest
            .get(k)
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string()
    };
    let (model, regime) = (field("model"), field("regime"));
    let records = read_records(run_dir, &model, &regime)?;
    let failure = manifest
        .get("failed_week")
        .and_then(Value::as_u64)
        .map(|w| RunFailure {
            week: w as usize,
            message: field("failure"),
        });
    let planned = manifest
        .get("planned_windows")
        .and_then(Value::as_u64)
        .map_or(records.len(), |v| v as usize);
    let outcome = RunOutcome {
        model_tag: model,
        regime_tag: regime,
        records,
        failure,
        fits: manifest.get("fits").and_then(Value::as_u64).unwrap_or(0) as usize,
        pipeline: None,
    };
    let elapsed = manifest
        .get("elapsed_seconds")
        .and_then(Value::as_f64)
        .unwrap_or(0.0);
    let rep = build_report(&outcome, planned, elapsed).map_err(rt)?;
    let config = manifest.get("config").cloned().unwrap_or(Value::Null);
    emit_report(&rep, &outcome.records, out.unwrap_or(run_dir), &config).map_err(rt)?;
    Ok(rep)
}
