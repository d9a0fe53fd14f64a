//! Window scoring and run aggregation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regimes::{ForecastRecord, RunOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("actual has {actual} values but prediction has {pred}")]
    LengthMismatch { actual: usize, pred: usize },
    #[error("non-finite value at hour {0}")]
    NonFinite(usize),
    #[error("no windows to aggregate")]
    EmptyRun,
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub week: usize,
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
}

pub fn score_window(week: usize, actual: &[f64], pred: &[f64]) -> Result<WindowScore, EvalError> {
    if actual.len() != pred.len() || actual.is_empty() {
        return Err(EvalError::LengthMismatch {
            actual: actual.len(),
            pred: pred.len(),
        });
    }
    let mut abs = 0.0;
    let mut sq = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for (i, (y, p)) in actual.iter().zip(pred).enumerate() {
        let e = y - p;
        if !e.is_finite() {
            return Err(EvalError::NonFinite(i));
        }
        abs += e.abs();
        sq += e * e;
        lo = lo.min(e.abs());
        hi = hi.max(e.abs());
    }
    let n = actual.len() as f64;
    let mae = abs / n;
    // Equal error magnitudes make the two means identical; otherwise keep
    // the power-mean ordering safe from last-bit rounding.
    let rmse = if lo == hi {
        mae
    } else {
        (sq / n).sqrt().max(mae)
    };
    Ok(WindowScore {
        week,
        mae,
        rmse,
        n: actual.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Mean of window MAEs.
    pub mae: f64,
    /// Mean of window RMSEs.
    pub rmse: f64,
    /// RMSE over all hours pooled together.
    pub pooled_rmse: f64,
    pub best_week: usize,
    pub worst_week: usize,
}

/// Ties on MAE resolve to the earliest week.
pub fn aggregate(scores: &[WindowScore]) -> Result<Aggregate, EvalError> {
    let first = scores.first().ok_or(EvalError::EmptyRun)?;
    let n = scores.len() as f64;
    let mut best = first;
    let mut worst = first;
    for s in &scores[1..] {
        if s.mae < best.mae {
            best = s;
        }
        if s.mae > worst.mae {
            worst = s;
        }
    }
    let hours: usize = scores.iter().map(|s| s.n).sum();
    let sq: f64 = scores.iter().map(|s| s.rmse * s.rmse * s.n as f64).sum();
    Ok(Aggregate {
        mae: scores.iter().map(|s| s.mae).sum::<f64>() / n,
        rmse: scores.iter().map(|s| s.rmse).sum::<f64>() / n,
        pooled_rmse: (sq / hours as f64).sqrt(),
        best_week: best.week,
        worst_week: worst.week,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: String,
    pub regime: String,
    /// Scores of the deployed (corrected) forecasts.
    pub windows: Vec<WindowScore>,
    pub aggregate: Aggregate,
    /// Scores of the uncorrected base forecasts.
    pub base_windows: Vec<WindowScore>,
    pub base_aggregate: Aggregate,
    pub planned_windows: usize,
    pub partial: bool,
    pub failed_week: Option<usize>,
    pub failure: Option<String>,
    pub fits: usize,
    pub elapsed_seconds: f64,
}

impl RunReport {
    pub fn window(&self, week: usize) -> Option<&WindowScore> {
        self.windows.iter().find(|w| w.week == week)
    }
}

fn score_records(
    records: &[ForecastRecord],
    corrected: bool,
) -> Result<Vec<WindowScore>, EvalError> {
    records
        .iter()
        .map(|r| {
            let pred = if corrected {
                &r.corrected_pred
            } else {
                &r.base_pred
            };
            score_window(r.week, &r.actual, pred)
        })
        .collect()
}

/// Scores a regime run. Fails with `EmptyRun` when no week completed.
pub fn build_report(
    outcome: &RunOutcome,
    planned_windows: usize,
    elapsed_seconds: f64,
) -> Result<RunReport, EvalError> {
    let windows = score_records(&outcome.records, true)?;
    let base_windows = score_records(&outcome.records, false)?;
    Ok(RunReport {
        model: outcome.model_tag.clone(),
        regime: outcome.regime_tag.clone(),
        aggregate: aggregate(&windows)?,
        base_aggregate: aggregate(&base_windows)?,
        windows,
        base_windows,
        planned_windows,
        partial: outcome.is_partial(),
        failed_week: outcome.failure.as_ref().map(|f| f.week),
        failure: outcome.failure.as_ref().map(|f| f.message.clone()),
        fits: outcome.fits,
        elapsed_seconds,
    })
}
