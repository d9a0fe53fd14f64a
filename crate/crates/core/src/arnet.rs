//! Direct multi-step linear autoregressive network.
//!
//! Each output horizon `h` is a linear function of the last `n_lags`
//! targets (a full `n_forecasts x n_lags` weight block) plus calendar
//! Fourier terms, a linear trend and the regressors observed at `t + h`.
//! The calendar, trend and regressor weights are shared across horizons.
//! Targets are standardized internally and mapped back at the output.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::additive::{cycle_phase, TimeScale, DAILY, WEEKLY};
use crate::preprocess::mean_std;
use crate::series::{HourlyFrame, HOUR};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArNetError {
    #[error("need at least {needed} rows to form one window, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = ArNetError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArNetConfig {
    pub n_lags: usize,
    pub n_forecasts: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub daily_order: usize,
    pub weekly_order: usize,
    pub trend: bool,
}

impl Default for ArNetConfig {
    fn default() -> Self {
        Self {
            n_lags: 168,
            n_forecasts: 168,
            epochs: 30,
            batch_size: 128,
            learning_rate: 0.001,
            seed: 0,
            optimizer: Optimizer::Sgd,
            daily_order: 6,
            weekly_order: 3,
            trend: true,
        }
    }
}

impl ArNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_lags == 0 || self.n_forecasts == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(ArNetError::InvalidConfig(
                "n_lags, n_forecasts, epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ArNetError::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }

    fn n_calendar(&self) -> usize {
        2 * (self.daily_order + self.weekly_order)
    }
}

/// Feature row for one timestamp: calendar terms, then trend, then
/// regressors.
fn feature_row(
    ts: i64,
    daily: usize,
    weekly: usize,
    trend: Option<&TimeScale>,
    exog: impl Iterator<Item = f64>,
    out: &mut Vec<f64>,
) {
    for (period, order) in [(DAILY, daily), (WEEKLY, weekly)] {
        let phase = cycle_phase(ts, period);
        for j in 1..=order {
            let angle = 2.0 * std::f64::consts::PI * j as f64 * phase;
            out.push(angle.sin());
            out.push(angle.cos());
        }
    }
    if let Some(scale) = trend {
        out.push(scale.scale(ts));
    }
    out.extend(exog);
}

/// Sliding stride-1 supervised windows over a training frame. Windows are
/// views into the stored series, not materialized rows.
#[derive(Debug, Clone)]
pub struct ArNetWindows {
    n_lags: usize,
    n_forecasts: usize,
    timestamps: Vec<i64>,
    y: Vec<f64>,
    features: Vec<f64>,
    n_features: usize,
    regressors: Vec<String>,
    time_scale: TimeScale,
    daily_order: usize,
    weekly_order: usize,
    trend: bool,
}

pub fn make_windows(
    train: &HourlyFrame,
    cfg: &ArNetConfig,
    regressors: &[String],
) -> Result<ArNetWindows> {
    cfg.validate()?;
    let needed = cfg.n_lags + cfg.n_forecasts;
    if train.len() < needed {
        return Err(ArNetError::TooShort {
            needed,
            got: train.len(),
        });
    }
    let cols: Vec<&[f64]> = regressors
        .iter()
        .map(|c| {
            train
                .column(c)
                .ok_or_else(|| ArNetError::MissingColumn(c.clone()))
        })
        .collect::<Result<_>>()?;
    let ts = train.timestamps();
    let time_scale = TimeScale::from_timestamps(ts);
    let n_features = cfg.n_calendar() + usize::from(cfg.trend) + cols.len();
    let mut features = Vec::with_capacity(ts.len() * n_features);
    for (i, &t) in ts.iter().enumerate() {
        feature_row(
            t,
            cfg.daily_order,
            cfg.weekly_order,
            cfg.trend.then_some(&time_scale),
            cols.iter().map(|c| c[i]),
            &mut features,
        );
    }
    Ok(ArNetWindows {
        n_lags: cfg.n_lags,
        n_forecasts: cfg.n_forecasts,
        timestamps: ts.to_vec(),
        y: train.target().to_vec(),
        features,
        n_features,
        regressors: regressors.to_vec(),
        time_scale,
        daily_order: cfg.daily_order,
        weekly_order: cfg.weekly_order,
        trend: cfg.trend,
    })
}

impl ArNetWindows {
    pub fn len(&self) -> usize {
        self.y.len() + 1 - self.n_lags - self.n_forecasts
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row index of the first forecast hour of sample `i`.
    pub fn origin(&self, i: usize) -> usize {
        i + self.n_lags
    }

    pub fn origin_timestamp(&self, i: usize) -> i64 {
        self.timestamps[self.origin(i)]
    }

    pub fn lags(&self, i: usize) -> &[f64] {
        let o = self.origin(i);
        &self.y[o - self.n_lags..o]
    }

    pub fn targets(&self, i: usize) -> &[f64] {
        let o = self.origin(i);
        &self.y[o..o + self.n_forecasts]
    }

    /// Feature row for horizon `h` (0-based) of sample `i`.
    pub fn features(&self, i: usize, h: usize) -> &[f64] {
        let r = self.origin(i) + h;
        &self.features[r * self.n_features..(r + 1) * self.n_features]
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArNetParams {
    pub n_lags: usize,
    pub n_forecasts: usize,
    pub daily_order: usize,
    pub weekly_order: usize,
    pub trend: bool,
    pub regressors: Vec<String>,
    pub time_scale: TimeScale,
    pub target_mean: f64,
    pub target_std: f64,
    /// Row-major `n_forecasts x n_lags`.
    pub ar: Vec<f64>,
    pub bias: Vec<f64>,
    /// Shared weights over the feature row.
    pub shared: Vec<f64>,
}

impl ArNetParams {
    /// Zero weights shaped for `windows`, with the target moments of its
    /// series.
    pub fn zeros(windows: &ArNetWindows) -> Self {
        let (mean, std) = mean_std(&windows.y);
        Self {
            n_lags: windows.n_lags,
            n_forecasts: windows.n_forecasts,
            daily_order: windows.daily_order,
            weekly_order: windows.weekly_order,
            trend: windows.trend,
            regressors: windows.regressors.clone(),
            time_scale: windows.time_scale,
            target_mean: mean,
            target_std: if std > 0.0 && std.is_finite() {
                std
            } else {
                1.0
            },
            ar: vec![0.0; windows.n_forecasts * windows.n_lags],
            bias: vec![0.0; windows.n_forecasts],
            shared: vec![0.0; windows.n_features],
        }
    }

    pub fn n_weights(&self) -> usize {
        self.ar.len() + self.bias.len() + self.shared.len()
    }

    /// `[ar..., bias..., shared...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_weights());
        v.extend_from_slice(&self.ar);
        v.extend_from_slice(&self.bias);
        v.extend_from_slice(&self.shared);
        v
    }

    pub fn set_flat(&mut self, w: &[f64]) {
        let (a, rest) = w.split_at(self.ar.len());
        let (b, s) = rest.split_at(self.bias.len());
        self.ar.copy_from_slice(a);
        self.bias.copy_from_slice(b);
        self.shared.copy_from_slice(s);
    }

    fn check_windows(&self, w: &ArNetWindows) -> Result<()> {
        if w.n_lags != self.n_lags
            || w.n_forecasts != self.n_forecasts
            || w.n_features != self.shared.len()
        {
            return Err(ArNetError::DimensionMismatch(
                "parameters do not match window layout".into(),
            ));
        }
        Ok(())
    }
}

/// Mean squared error over a batch (standardized units) and its gradient
/// in [`ArNetParams::to_flat`] order.
pub fn loss_and_gradient(
    params: &ArNetParams,
    windows: &ArNetWindows,
    batch: &[usize],
) -> Result<(f64, Vec<f64>)> {
    params.check_windows(windows)?;
    let (l, hn, f) = (params.n_lags, params.n_forecasts, params.shared.len());
    let b = batch.len();
    let (mu, sd) = (params.target_mean, params.target_std);

    let x = DMatrix::from_fn(b, l, |r, c| (windows.lags(batch[r])[c] - mu) / sd);
    let w = DMatrix::from_row_slice(hn, l, &params.ar);
    let mut err = &x * w.transpose();
    for (r, &i) in batch.iter().enumerate() {
        let targets = windows.targets(i);
        for h in 0..hn {
            let feats = windows.features(i, h);
            let shared: f64 = feats.iter().zip(&params.shared).map(|(a, b)| a * b).sum();
            err[(r, h)] += params.bias[h] + shared - (targets[h] - mu) / sd;
        }
    }
    let denom = (b * hn) as f64;
    let loss = err.iter().map(|e| e * e).sum::<f64>() / denom;

    err *= 2.0 / denom;
    let g_ar = err.transpose() * &x;
    let mut grad = Vec::with_capacity(params.n_weights());
    for h in 0..hn {
        for c in 0..l {
            grad.push(g_ar[(h, c)]);
        }
    }
    for h in 0..hn {
        grad.push(err.column(h).sum());
    }
    let mut g_shared = vec![0.0; f];
    for (r, &i) in batch.iter().enumerate() {
        for h in 0..hn {
            let e = err[(r, h)];
            for (g, v) in g_shared.iter_mut().zip(windows.features(i, h)) {
                *g += e * v;
            }
        }
    }
    grad.extend(g_shared);
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Sample-weighted mean batch loss per epoch.
    pub epoch_loss: Vec<f64>,
}

impl TrainingReport {
    /// `epoch,loss` with 1-based epochs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (e, l) in self.epoch_loss.iter().enumerate() {
            let _ = writeln!(out, "{},{}", e + 1, l);
        }
        out
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, w: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for k in 0..w.len() {
            self.m[k] = Self::B1 * self.m[k] + (1.0 - Self::B1) * g[k];
            self.v[k] = Self::B2 * self.v[k] + (1.0 - Self::B2) * g[k] * g[k];
            w[k] -= lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Mini-batch training from `init`; batches are reshuffled every epoch
/// with a generator seeded from `cfg.seed`.
pub fn train_arnet(
    windows: &ArNetWindows,
    cfg: &ArNetConfig,
    init: ArNetParams,
) -> Result<(ArNetParams, TrainingReport)> {
    cfg.validate()?;
    init.check_windows(windows)?;
    if windows.is_empty() {
        return Err(ArNetError::TooShort {
            needed: cfg.n_lags + cfg.n_forecasts,
            got: windows.y.len(),
        });
    }
    let mut params = init;
    let mut w = params.to_flat();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut adam = Adam {
        m: vec![0.0; w.len()],
        v: vec![0.0; w.len()],
        t: 0,
    };
    let mut report = TrainingReport {
        epoch_loss: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grad) = loss_and_gradient(&params, windows, batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ArNetError::NonFiniteLoss { epoch });
            }
            total += loss * batch.len() as f64;
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (wk, gk) in w.iter_mut().zip(&grad) {
                        *wk -= cfg.learning_rate * gk;
                    }
                }
                Optimizer::Adam => adam.step(&mut w, &grad, cfg.learning_rate),
            }
            params.set_flat(&w);
        }
        let mean = total / windows.len() as f64;
        log::debug!("arnet epoch {epoch}: loss {mean:.6}");
        report.epoch_loss.push(mean);
    }
    Ok((params, report))
}

/// Trains from zero weights.
pub fn fit_arnet(
    windows: &ArNetWindows,
    cfg: &ArNetConfig,
) -> Result<(ArNetParams, TrainingReport)> {
    train_arnet(windows, cfg, ArNetParams::zeros(windows))
}

/// One application of the linear map. `last_lags` are the raw targets
/// immediately before `timestamps[0]`; `future_exog` holds one column per
/// regressor over the horizon.
pub fn forecast_arnet(
    params: &ArNetParams,
    last_lags: &[f64],
    timestamps: &[i64],
    future_exog: &[&[f64]],
) -> Result<Vec<f64>> {
    let hn = params.n_forecasts;
    if last_lags.len() != params.n_lags {
        return Err(ArNetError::DimensionMismatch(format!(
            "expected {} lags, got {}",
            params.n_lags,
            last_lags.len()
        )));
    }
    if timestamps.len() != hn {
        return Err(ArNetError::DimensionMismatch(format!(
            "expected {hn} horizon timestamps, got {}",
            timestamps.len()
        )));
    }
    if future_exog.len() != params.regressors.len() || future_exog.iter().any(|c| c.len() != hn) {
        return Err(ArNetError::DimensionMismatch(format!(
            "expected {} regressor columns of {hn} rows",
            params.regressors.len()
        )));
    }
    let (mu, sd) = (params.target_mean, params.target_std);
    let x: Vec<f64> = last_lags.iter().map(|v| (v - mu) / sd).collect();
    let mut row = Vec::with_capacity(params.shared.len());
    let out = (0..hn)
        .map(|h| {
            row.clear();
            feature_row(
                timestamps[h],
                params.daily_order,
                params.weekly_order,
                params.trend.then_some(&params.time_scale),
                future_exog.iter().map(|c| c[h]),
                &mut row,
            );
            let weights = &params.ar[h * params.n_lags..(h + 1) * params.n_lags];
            let z = params.bias[h]
                + weights.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()
                + row
                    .iter()
                    .zip(&params.shared)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            mu + sd * z
        })
        .collect();
    Ok(out)
}

/// Timestamps of the `n` hours starting at `origin`.
pub fn horizon_timestamps(origin: i64, n: usize) -> Vec<i64> {
    (0..n as i64).map(|h| origin + h * HOUR).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::tests::ramp_frame;

    #[test]
    fn sample_counts_at_boundary() {
        let cfg = ArNetConfig::default();
        assert_eq!(make_windows(&ramp_frame(336), &cfg, &[]).unwrap().len(), 1);
        assert_eq!(make_windows(&ramp_frame(337), &cfg, &[]).unwrap().len(), 2);
        assert!(matches!(
            make_windows(&ramp_frame(335), &cfg, &[]),
            Err(ArNetError::TooShort {
                needed: 336,
                got: 335
            })
        ));
    }

    #[test]
    fn lag_block_is_verbatim_history() {
        let f = ramp_frame(400);
        let w = make_windows(&f, &ArNetConfig::default(), &[]).unwrap();
        let i = 17;
        let o = w.origin(i);
        assert_eq!(w.lags(i), &f.target()[o - 168..o]);
        assert_eq!(w.targets(i), &f.target()[o..o + 168]);
    }

    #[test]
    fn zero_weights_give_bias() {
        let f = ramp_frame(400);
        let w = make_windows(&f, &ArNetConfig::default(), &[]).unwrap();
        let mut p = ArNetParams::zeros(&w);
        p.target_mean = 0.0;
        p.target_std = 1.0;
        p.bias = vec![4.5; 168];
        let ts = horizon_timestamps(f.last_timestamp().unwrap() + HOUR, 168);
        let out = forecast_arnet(&p, &[1.0; 168], &ts, &[]).unwrap();
        assert!(out.iter().all(|v| *v == 4.5));
    }

    #[test]
    fn rejects_wrong_lag_count() {
        let f = ramp_frame(400);
        let w = make_windows(&f, &ArNetConfig::default(), &[]).unwrap();
        let p = ArNetParams::zeros(&w);
        let ts = horizon_timestamps(0, 168);
        assert!(matches!(
            forecast_arnet(&p, &[0.0; 10], &ts, &[]),
            Err(ArNetError::DimensionMismatch(_))
        ));
    }
}
