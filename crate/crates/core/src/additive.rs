//! Decomposable additive forecaster: piecewise-linear trend with
//! changepoints, Fourier seasonalities and linear regressors, fitted by
//! block-penalized least squares.
//!
//! The trend lives on a time axis scaled to `[0, 1]` over the training
//! span. Fourier terms use the phase of the absolute hour within each
//! cycle, so seasonal shapes stay aligned to the clock across refits.

use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::{fmt_ts, HourlyFrame, HOUR};

/// Daily, weekly and yearly cycle lengths in hours (365.25 days).
pub const DAILY: i64 = 24;
pub const WEEKLY: i64 = 168;
pub const YEARLY: i64 = 8766;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdditiveError {
    #[error("normal equations are singular")]
    SingularSystem,
    #[error("training span of {got_hours} h is too short; need {needed_hours} h")]
    TooShort { needed_hours: i64, got_hours: i64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = AdditiveError> = std::result::Result<T, E>;

/// A Fourier order of 0 disables that cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveConfig {
    pub n_changepoints: usize,
    pub changepoint_range: f64,
    pub daily_order: usize,
    pub weekly_order: usize,
    pub yearly_order: usize,
    pub trend_penalty: f64,
    pub seasonal_penalty: f64,
    pub regressor_penalty: f64,
}

impl Default for AdditiveConfig {
    fn default() -> Self {
        Self {
            n_changepoints: 25,
            changepoint_range: 0.8,
            daily_order: 4,
            weekly_order: 3,
            yearly_order: 10,
            trend_penalty: 0.5,
            seasonal_penalty: 0.1,
            regressor_penalty: 0.1,
        }
    }
}

impl AdditiveConfig {
    pub fn validate(&self) -> Result<()> {
        let penalties = [
            self.trend_penalty,
            self.seasonal_penalty,
            self.regressor_penalty,
        ];
        if penalties.iter().any(|p| !(*p >= 0.0)) {
            return Err(AdditiveError::InvalidConfig(
                "penalties must be >= 0".into(),
            ));
        }
        if !(self.changepoint_range > 0.0 && self.changepoint_range < 1.0) {
            return Err(AdditiveError::InvalidConfig(
                "changepoint_range must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn cycles(&self) -> Vec<(i64, usize)> {
        [
            (DAILY, self.daily_order),
            (WEEKLY, self.weekly_order),
            (YEARLY, self.yearly_order),
        ]
        .into_iter()
        .filter(|(_, k)| *k > 0)
        .collect()
    }
}

/// Maps epoch seconds onto the trend axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeScale {
    pub start: i64,
    pub span_seconds: f64,
}

impl TimeScale {
    pub fn from_timestamps(ts: &[i64]) -> Self {
        let start = ts[0];
        let span = (ts[ts.len() - 1] - start).max(HOUR) as f64;
        Self {
            start,
            span_seconds: span,
        }
    }

    pub fn scale(&self, ts: i64) -> f64 {
        (ts - self.start) as f64 / self.span_seconds
    }
}

/// Column layout of the design matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignLayout {
    pub time_scale: TimeScale,
    /// Changepoint locations on the scaled axis.
    pub changepoints: Vec<f64>,
    /// `(period_hours, order)` per enabled cycle.
    pub cycles: Vec<(i64, usize)>,
    pub regressors: Vec<String>,
}

impl DesignLayout {
    pub fn new(train_ts: &[i64], cfg: &AdditiveConfig, regressors: &[String]) -> Self {
        let n = cfg.n_changepoints;
        let changepoints = (1..=n)
            .map(|j| cfg.changepoint_range * j as f64 / n as f64)
            .collect();
        Self {
            time_scale: TimeScale::from_timestamps(train_ts),
            changepoints,
            cycles: cfg.cycles(),
            regressors: regressors.to_vec(),
        }
    }

    pub fn n_seasonal(&self) -> usize {
        self.cycles.iter().map(|(_, k)| 2 * k).sum()
    }

    pub fn trend_block(&self) -> Range<usize> {
        0..2
    }

    pub fn changepoint_block(&self) -> Range<usize> {
        2..2 + self.changepoints.len()
    }

    pub fn seasonal_block(&self) -> Range<usize> {
        let s = self.changepoint_block().end;
        s..s + self.n_seasonal()
    }

    pub fn regressor_block(&self) -> Range<usize> {
        let s = self.seasonal_block().end;
        s..s + self.regressors.len()
    }

    pub fn n_columns(&self) -> usize {
        self.regressor_block().end
    }
}

/// Phase in `[0, 1)` of an epoch timestamp within a cycle of `period`
/// hours; exact for whole-hour timestamps.
pub(crate) fn cycle_phase(ts: i64, period: i64) -> f64 {
    let hours = ts.div_euclid(HOUR);
    let frac = ts.rem_euclid(HOUR) as f64 / HOUR as f64;
    (hours.rem_euclid(period) as f64 + frac) / period as f64
}

/// Design rows: `[1, t, relu(t - c_j)..., sin/cos(2 pi j phase)..., x...]`.
pub fn build_design_matrix(
    timestamps: &[i64],
    exog: &[&[f64]],
    layout: &DesignLayout,
) -> Result<DMatrix<f64>> {
    if exog.len() != layout.regressors.len() {
        return Err(AdditiveError::DimensionMismatch(format!(
            "layout has {} regressors, got {}",
            layout.regressors.len(),
            exog.len()
        )));
    }
    let n = timestamps.len();
    if let Some(c) = exog.iter().find(|c| c.len() != n) {
        return Err(AdditiveError::DimensionMismatch(format!(
            "regressor has {} rows, expected {n}",
            c.len()
        )));
    }
    let p = layout.n_columns();
    let mut d = DMatrix::<f64>::zeros(n, p);
    for (i, &ts) in timestamps.iter().enumerate() {
        let t = layout.time_scale.scale(ts);
        d[(i, 0)] = 1.0;
        d[(i, 1)] = t;
        let mut col = 2;
        for &cp in &layout.changepoints {
            d[(i, col)] = (t - cp).max(0.0);
            col += 1;
        }
        for &(period, order) in &layout.cycles {
            let phase = cycle_phase(ts, period);
            for j in 1..=order {
                let angle = 2.0 * std::f64::consts::PI * j as f64 * phase;
                d[(i, col)] = angle.sin();
                d[(i, col + 1)] = angle.cos();
                col += 2;
            }
        }
        for x in exog {
            d[(i, col)] = x[i];
            col += 1;
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalTerms {
    pub period_hours: i64,
    /// Coefficients of `sin(2 pi j phase)`, `j = 1..=order`.
    pub sin: Vec<f64>,
    /// Coefficients of `cos(2 pi j phase)`.
    pub cos: Vec<f64>,
}

/// Fitted coefficients in target units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveParams {
    pub layout: DesignLayout,
    /// Base slope per unit of scaled time.
    pub k: f64,
    /// Offset.
    pub m: f64,
    pub delta: Vec<f64>,
    pub seasonal: Vec<SeasonalTerms>,
    pub gamma: Vec<f64>,
}

impl AdditiveParams {
    /// Coefficients in design-column order.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut w = vec![self.m, self.k];
        w.extend_from_slice(&self.delta);
        for s in &self.seasonal {
            for (a, b) in s.sin.iter().zip(&s.cos) {
                w.push(*a);
                w.push(*b);
            }
        }
        w.extend_from_slice(&self.gamma);
        w
    }

    fn from_coefficients(layout: DesignLayout, w: &[f64]) -> Self {
        let cp = layout.changepoint_block();
        let mut col = layout.seasonal_block().start;
        let seasonal = layout
            .cycles
            .iter()
            .map(|&(period, order)| {
                let mut sin = Vec::with_capacity(order);
                let mut cos = Vec::with_capacity(order);
                for _ in 0..order {
                    sin.push(w[col]);
                    cos.push(w[col + 1]);
                    col += 2;
                }
                SeasonalTerms {
                    period_hours: period,
                    sin,
                    cos,
                }
            })
            .collect();
        Self {
            m: w[0],
            k: w[1],
            delta: w[cp].to_vec(),
            seasonal,
            gamma: w[layout.regressor_block()].to_vec(),
            layout,
        }
    }

    /// A model with every coefficient zero.
    pub fn zeros(layout: DesignLayout) -> Self {
        let w = vec![0.0; layout.n_columns()];
        Self::from_coefficients(layout, &w)
    }
}

/// Solves the penalized normal equations; the target is scaled by its
/// maximum absolute value while solving and the coefficients mapped back.
pub fn fit_additive(
    train: &HourlyFrame,
    exog: &[String],
    cfg: &AdditiveConfig,
) -> Result<AdditiveParams> {
    cfg.validate()?;
    let ts = train.timestamps();
    if ts.len() < 2 {
        return Err(AdditiveError::TooShort {
            needed_hours: 2,
            got_hours: ts.len() as i64,
        });
    }
    let span_hours = (ts[ts.len() - 1] - ts[0]) / HOUR + 1;
    let needed = if cfg.weekly_order > 0 { 2 * WEEKLY } else { 2 };
    if span_hours < needed {
        return Err(AdditiveError::TooShort {
            needed_hours: needed,
            got_hours: span_hours,
        });
    }
    let cols: Vec<&[f64]> = exog
        .iter()
        .map(|c| {
            train
                .column(c)
                .ok_or_else(|| AdditiveError::MissingColumn(c.clone()))
        })
        .collect::<Result<_>>()?;
    let layout = DesignLayout::new(ts, cfg, exog);
    let d = build_design_matrix(ts, &cols, &layout)?;
    let y = train.target();
    let scale = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let ys = DVector::from_iterator(y.len(), y.iter().map(|v| v / scale));

    let mut a = d.tr_mul(&d);
    for i in layout.changepoint_block() {
        a[(i, i)] += cfg.trend_penalty;
    }
    for i in layout.seasonal_block() {
        a[(i, i)] += cfg.seasonal_penalty;
    }
    for i in layout.regressor_block() {
        a[(i, i)] += cfg.regressor_penalty;
    }
    let b = d.tr_mul(&ys);
    let chol = a.cholesky().ok_or(AdditiveError::SingularSystem)?;
    let w = chol.solve(&b);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(AdditiveError::SingularSystem);
    }
    let w: Vec<f64> = w.iter().map(|v| v * scale).collect();
    Ok(AdditiveParams::from_coefficients(layout, &w))
}

/// Forecast split into its additive components.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveForecast {
    pub timestamps: Vec<i64>,
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub regressors: Vec<f64>,
    pub total: Vec<f64>,
}

impl AdditiveForecast {
    /// `timestamp,trend,seasonal,regressors,total`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp,trend,seasonal,regressors,total\n");
        for i in 0..self.total.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                fmt_ts(self.timestamps[i]),
                self.trend[i],
                self.seasonal[i],
                self.regressors[i],
                self.total[i]
            );
        }
        out
    }
}

/// `g(t) + s(t) + h(t)`; beyond the last changepoint the trend continues
/// linearly.
pub fn forecast_additive(
    params: &AdditiveParams,
    timestamps: &[i64],
    future_exog: &[&[f64]],
) -> Result<AdditiveForecast> {
    let layout = &params.layout;
    let d = build_design_matrix(timestamps, future_exog, layout)?;
    let w = params.coefficients();
    let block_sum = |i: usize, cols: Range<usize>| -> f64 { cols.map(|c| d[(i, c)] * w[c]).sum() };
    let n = timestamps.len();
    let mut out = AdditiveForecast {
        timestamps: timestamps.to_vec(),
        trend: Vec::with_capacity(n),
        seasonal: Vec::with_capacity(n),
        regressors: Vec::with_capacity(n),
        total: Vec::with_capacity(n),
    };
    let trend_cols = 0..layout.changepoint_block().end;
    for i in 0..n {
        let g = block_sum(i, trend_cols.clone());
        let s = block_sum(i, layout.seasonal_block());
        let h = block_sum(i, layout.regressor_block());
        out.trend.push(g);
        out.seasonal.push(s);
        out.regressors.push(h);
        out.total.push(g + s + h);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_daily_only() -> AdditiveConfig {
        AdditiveConfig {
            n_changepoints: 0,
            daily_order: 1,
            weekly_order: 0,
            yearly_order: 0,
            ..Default::default()
        }
    }

    #[test]
    fn minimal_design_has_four_columns() {
        let ts: Vec<i64> = (0..48).map(|i| i * HOUR).collect();
        let layout = DesignLayout::new(&ts, &cfg_daily_only(), &[]);
        let d = build_design_matrix(&ts, &[], &layout).unwrap();
        assert_eq!(d.ncols(), 4);
    }

    #[test]
    fn hinge_is_zero_at_changepoint() {
        let ts: Vec<i64> = (0..=100).map(|i| i * HOUR).collect();
        let cfg = AdditiveConfig {
            n_changepoints: 4,
            ..cfg_daily_only()
        };
        let layout = DesignLayout::new(&ts, &cfg, &[]);
        // changepoints at 0.2, 0.4, 0.6, 0.8 of a 100 h span
        assert_eq!(layout.changepoints.len(), 4);
        let d = build_design_matrix(&ts, &[], &layout).unwrap();
        assert_eq!(d[(20, 2)], 0.0);
        assert!(d[(21, 2)] > 0.0);
        assert!(layout.changepoints.iter().all(|&c| c > 0.0 && c < 1.0));
    }

    #[test]
    fn daily_columns_repeat_every_24_hours() {
        let ts: Vec<i64> = (0..400)
            .map(|i| 1_700_000_000 / HOUR * HOUR + i * HOUR)
            .collect();
        let cfg = AdditiveConfig::default();
        let layout = DesignLayout::new(&ts, &cfg, &[]);
        let d = build_design_matrix(&ts, &[], &layout).unwrap();
        for c in layout.seasonal_block().take(8) {
            assert!((d[(5, c)] - d[(29, c)]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_model_with_offset_is_constant() {
        let ts: Vec<i64> = (0..400).map(|i| i * HOUR).collect();
        let mut p = AdditiveParams::zeros(DesignLayout::new(&ts, &AdditiveConfig::default(), &[]));
        p.m = 7.0;
        let fc = forecast_additive(&p, &ts[200..368], &[]).unwrap();
        assert!(fc.total.iter().all(|v| *v == 7.0));
    }

    #[test]
    fn dimension_mismatch_on_missing_regressor() {
        let ts: Vec<i64> = (0..400).map(|i| i * HOUR).collect();
        let p = AdditiveParams::zeros(DesignLayout::new(
            &ts,
            &AdditiveConfig::default(),
            &["no".into()],
        ));
        assert!(matches!(
            forecast_additive(&p, &ts[..10], &[]),
            Err(AdditiveError::DimensionMismatch(_))
        ));
    }
}
