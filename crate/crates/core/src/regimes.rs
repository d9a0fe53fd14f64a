//! Deployment regimes over the weekly evaluation windows: walk-forward
//! refitting, a frozen base model, and a frozen base model with an online
//! weekly bias correction.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::additive::{
    fit_additive, forecast_additive, AdditiveConfig, AdditiveError, AdditiveParams,
};
use crate::arnet::{fit_arnet, forecast_arnet, make_windows, ArNetConfig, ArNetError, ArNetParams};
use crate::preprocess::{PerfectPrognosisView, PipelineState, PreprocessConfig, PreprocessError};
use crate::sarimax::{fit_sarimax, forecast_sarimax, SarimaxConfig, SarimaxError, SarimaxParams};
use crate::series::{ChronoSplit, HourlyFrame, WeekWindow};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sarimax: {0}")]
    Sarimax(#[from] SarimaxError),
    #[error("additive: {0}")]
    Additive(#[from] AdditiveError),
    #[error("arnet: {0}")]
    ArNet(#[from] ArNetError),
    #[error("preprocess: {0}")]
    Preprocess(#[from] PreprocessError),
    #[error("model used before fitting")]
    NotFitted,
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegimeError {
    #[error("week {week} has {got} observed hours, expected {expected}")]
    IncompleteWeek {
        week: usize,
        got: usize,
        expected: usize,
    },
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("invalid bias filter variances")]
    InvalidVariance,
}

/// A forecasting engine as seen by the regime runners. Inputs are already
/// preprocessed: regressors standardized, target winsorized when the
/// pipeline is configured to do so.
pub trait Forecaster: Send {
    fn tag(&self) -> &str;

    /// (Re)estimates parameters on `train`. Implementations may reuse
    /// their previous estimate as a starting point.
    fn fit(&mut self, train: &HourlyFrame, exog: &[String]) -> Result<(), ModelError>;

    /// Forecasts the view's hours. `history` holds every row observed
    /// before the window, transformed by the same pipeline state.
    fn forecast(
        &self,
        history: &HourlyFrame,
        view: &PerfectPrognosisView,
    ) -> Result<Vec<f64>, ModelError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelSpec {
    Sarimax(SarimaxConfig),
    Additive(AdditiveConfig),
    Arnet(ArNetConfig),
}

impl ModelSpec {
    pub fn tag(&self) -> &'static str {
        match self {
            ModelSpec::Sarimax(_) => "sarimax",
            ModelSpec::Additive(_) => "additive",
            ModelSpec::Arnet(_) => "arnet",
        }
    }

    pub fn build(&self) -> Box<dyn Forecaster> {
        match self {
            ModelSpec::Sarimax(c) => Box::new(SarimaxForecaster::new(c.clone())),
            ModelSpec::Additive(c) => Box::new(AdditiveForecaster::new(c.clone())),
            ModelSpec::Arnet(c) => Box::new(ArNetForecaster::new(c.clone())),
        }
    }
}

fn columns<'a>(frame: &'a HourlyFrame, names: &[String]) -> Result<Vec<&'a [f64]>, ModelError> {
    names
        .iter()
        .map(|c| {
            frame
                .column(c)
                .ok_or_else(|| ModelError::Other(format!("missing column `{c}`")))
        })
        .collect()
}

fn view_columns(view: &PerfectPrognosisView) -> Vec<&[f64]> {
    view.future_exog.iter().map(Vec::as_slice).collect()
}

pub struct SarimaxForecaster {
    pub config: SarimaxConfig,
    pub params: Option<SarimaxParams>,
}

impl SarimaxForecaster {
    pub fn new(config: SarimaxConfig) -> Self {
        Self {
            config,
            params: None,
        }
    }
}

impl Forecaster for SarimaxForecaster {
    fn tag(&self) -> &str {
        "sarimax"
    }

    fn fit(&mut self, train: &HourlyFrame, exog: &[String]) -> Result<(), ModelError> {
        let x = columns(train, exog)?;
        let params = fit_sarimax(train.target(), &x, &self.config, self.params.as_ref())?;
        self.params = Some(params);
        Ok(())
    }

    fn forecast(
        &self,
        history: &HourlyFrame,
        view: &PerfectPrognosisView,
    ) -> Result<Vec<f64>, ModelError> {
        let params = self.params.as_ref().ok_or(ModelError::NotFitted)?;
        let hx = columns(history, &view.columns)?;
        let fx = view_columns(view);
        Ok(forecast_sarimax(
            params,
            history.target(),
            &hx,
            &fx,
            view.horizon(),
        )?)
    }
}

pub struct AdditiveForecaster {
    pub config: AdditiveConfig,
    pub params: Option<AdditiveParams>,
}

impl AdditiveForecaster {
    pub fn new(config: AdditiveConfig) -> Self {
        Self {
            config,
            params: None,
        }
    }
}

impl Forecaster for AdditiveForecaster {
    fn tag(&self) -> &str {
        "additive"
    }

    fn fit(&mut self, train: &HourlyFrame, exog: &[String]) -> Result<(), ModelError> {
        self.params = Some(fit_additive(train, exog, &self.config)?);
        Ok(())
    }

    fn forecast(
        &self,
        _history: &HourlyFrame,
        view: &PerfectPrognosisView,
    ) -> Result<Vec<f64>, ModelError> {
        let params = self.params.as_ref().ok_or(ModelError::NotFitted)?;
        Ok(forecast_additive(params, &view.timestamps, &view_columns(view))?.total)
    }
}

pub struct ArNetForecaster {
    pub config: ArNetConfig,
    pub params: Option<ArNetParams>,
}

impl ArNetForecaster {
    pub fn new(config: ArNetConfig) -> Self {
        Self {
            config,
            params: None,
        }
    }
}

impl Forecaster for ArNetForecaster {
    fn tag(&self) -> &str {
        "arnet"
    }

    fn fit(&mut self, train: &HourlyFrame, exog: &[String]) -> Result<(), ModelError> {
        let windows = make_windows(train, &self.config, exog)?;
        let (params, report) = fit_arnet(&windows, &self.config)?;
        log::debug!("arnet final epoch loss {:?}", report.epoch_loss.last());
        self.params = Some(params);
        Ok(())
    }

    /// Horizons beyond `n_forecasts` are not produced by a direct model;
    /// the view must not be longer than the configured output width.
    fn forecast(
        &self,
        history: &HourlyFrame,
        view: &PerfectPrognosisView,
    ) -> Result<Vec<f64>, ModelError> {
        let params = self.params.as_ref().ok_or(ModelError::NotFitted)?;
        let y = history.target();
        if y.len() < params.n_lags {
            return Err(ArNetError::TooShort {
                needed: params.n_lags,
                got: y.len(),
            }
            .into());
        }
        let lags = &y[y.len() - params.n_lags..];
        Ok(forecast_arnet(
            params,
            lags,
            &view.timestamps,
            &view_columns(view),
        )?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "walkforward")]
    WalkForward,
    #[serde(rename = "frozen")]
    Frozen,
    #[serde(rename = "frozen-corrected")]
    FrozenCorrected,
}

impl Regime {
    pub fn tag(&self) -> &'static str {
        match self {
            Regime::WalkForward => "walkforward",
            Regime::Frozen => "frozen",
            Regime::FrozenCorrected => "frozen-corrected",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "walkforward" | "walk-forward" => Some(Regime::WalkForward),
            "frozen" => Some(Regime::Frozen),
            "frozen-corrected" => Some(Regime::FrozenCorrected),
            _ => None,
        }
    }
}

/// Weekly bias offset and its smoothing factor. `w` is the 1-based week
/// the offset `b` applies to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasState {
    pub w: usize,
    pub b: f64,
    pub alpha: f64,
}

impl BiasState {
    pub fn new(alpha: f64) -> Result<Self, RegimeError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(RegimeError::InvalidAlpha(alpha));
        }
        Ok(Self {
            w: 1,
            b: 0.0,
            alpha,
        })
    }
}

/// `b_w = alpha * ebar + (1 - alpha) * b_{w-1}`.
pub fn ewma_update(prev: BiasState, mean_resid_prev_week: f64) -> BiasState {
    BiasState {
        w: prev.w + 1,
        b: prev.alpha * mean_resid_prev_week + (1.0 - prev.alpha) * prev.b,
        alpha: prev.alpha,
    }
}

/// Scalar random-walk-plus-noise filter for the weekly bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanBias {
    pub state_var: f64,
    pub obs_var: f64,
    pub b: f64,
    pub p: f64,
}

impl KalmanBias {
    pub fn new(state_var: f64, obs_var: f64, initial_var: f64) -> Result<Self, RegimeError> {
        if !(state_var >= 0.0 && obs_var > 0.0 && initial_var >= 0.0) {
            return Err(RegimeError::InvalidVariance);
        }
        Ok(Self {
            state_var,
            obs_var,
            b: 0.0,
            p: initial_var,
        })
    }

    pub fn update(&mut self, mean_resid: f64) {
        let p = self.p + self.state_var;
        let k = p / (p + self.obs_var);
        self.b += k * (mean_resid - self.b);
        self.p = (1.0 - k) * p;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Correction {
    Ewma {
        alpha: f64,
    },
    Kalman {
        state_var: f64,
        obs_var: f64,
        initial_var: f64,
    },
}

impl Correction {
    pub fn ewma(alpha: f64) -> Self {
        Correction::Ewma { alpha }
    }

    pub fn validate(&self) -> Result<(), RegimeError> {
        match *self {
            Correction::Ewma { alpha } => BiasState::new(alpha).map(|_| ()),
            Correction::Kalman {
                state_var,
                obs_var,
                initial_var,
            } => KalmanBias::new(state_var, obs_var, initial_var).map(|_| ()),
        }
    }
}

enum BiasTracker {
    Ewma(BiasState),
    Kalman(KalmanBias),
}

impl BiasTracker {
    fn new(c: &Correction) -> Result<Self, RegimeError> {
        Ok(match *c {
            Correction::Ewma { alpha } => BiasTracker::Ewma(BiasState::new(alpha)?),
            Correction::Kalman {
                state_var,
                obs_var,
                initial_var,
            } => BiasTracker::Kalman(KalmanBias::new(state_var, obs_var, initial_var)?),
        })
    }

    fn bias(&self) -> f64 {
        match self {
            BiasTracker::Ewma(s) => s.b,
            BiasTracker::Kalman(k) => k.b,
        }
    }

    fn observe(&mut self, mean_resid: f64) {
        match self {
            BiasTracker::Ewma(s) => *s = ewma_update(*s, mean_resid),
            BiasTracker::Kalman(k) => k.update(mean_resid),
        }
    }
}

/// One forecast week. `corrected_pred - base_pred` equals `bias` at every
/// hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub week: usize,
    pub timestamps: Vec<i64>,
    pub actual: Vec<f64>,
    pub base_pred: Vec<f64>,
    pub corrected_pred: Vec<f64>,
    pub bias: f64,
    pub model_tag: String,
    pub regime_tag: String,
    /// Rows in the fitting window behind this forecast.
    pub train_rows: usize,
    /// Wall-clock seconds spent fitting before this week (0 when no fit
    /// happened).
    pub fit_seconds: f64,
}

impl ForecastRecord {
    /// `e_t = y_t - base_t`.
    pub fn residuals(&self) -> Vec<f64> {
        self.actual
            .iter()
            .zip(&self.base_pred)
            .map(|(y, p)| y - p)
            .collect()
    }
}

/// Mean base residual over a fully observed week.
pub fn mean_week_residual(
    record: &ForecastRecord,
    expected_hours: usize,
) -> Result<f64, RegimeError> {
    let n = record.actual.len();
    if n != expected_hours || record.base_pred.len() != expected_hours {
        return Err(RegimeError::IncompleteWeek {
            week: record.week,
            got: n.min(record.base_pred.len()),
            expected: expected_hours,
        });
    }
    Ok(record.residuals().iter().sum::<f64>() / n as f64)
}

pub fn apply_correction(base_pred: &[f64], bias: &BiasState) -> Vec<f64> {
    base_pred.iter().map(|p| p + bias.b).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub week: usize,
    pub message: String,
}

/// Records for completed weeks; `failure` is set when a fit or forecast
/// stopped the run early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub model_tag: String,
    pub regime_tag: String,
    pub records: Vec<ForecastRecord>,
    pub failure: Option<RunFailure>,
    pub fits: usize,
    /// Pipeline state of the last fit.
    pub pipeline: Option<PipelineState>,
}

impl RunOutcome {
    pub fn is_partial(&self) -> bool {
        self.failure.is_some()
    }

    fn fail(&mut self, week: usize, err: impl std::fmt::Display) {
        log::warn!(
            "{} {} stopped at week {week}: {err}",
            self.model_tag,
            self.regime_tag
        );
        self.failure = Some(RunFailure {
            week,
            message: err.to_string(),
        });
    }
}

struct FitResult {
    state: PipelineState,
    seconds: f64,
}

fn fit_on(
    model: &mut dyn Forecaster,
    raw: &HourlyFrame,
    pre: &PreprocessConfig,
) -> Result<FitResult, ModelError> {
    let start = Instant::now();
    let state = PipelineState::fit(raw, pre)?;
    let train = state.transform(raw)?;
    model.fit(&train, &state.features)?;
    Ok(FitResult {
        state,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn forecast_week(
    model: &dyn Forecaster,
    split: &ChronoSplit,
    window: &WeekWindow,
    state: &PipelineState,
) -> Result<Vec<f64>, ModelError> {
    let history = state.transform(&split.expanding(window.rows.start))?;
    let view = PerfectPrognosisView::new(&split.test, window, state)?;
    let pred = model.forecast(&history, &view)?;
    if pred.len() != window.horizon_hours || pred.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::Other(format!(
            "forecast for week {} is malformed or non-finite",
            window.index
        )));
    }
    Ok(pred)
}

fn record(
    model: &dyn Forecaster,
    regime: Regime,
    split: &ChronoSplit,
    window: &WeekWindow,
    base: Vec<f64>,
    bias: f64,
    train_rows: usize,
    fit_seconds: f64,
) -> ForecastRecord {
    let rows = window.rows.clone();
    ForecastRecord {
        week: window.index,
        timestamps: split.test.timestamps()[rows.clone()].to_vec(),
        actual: split.test.target()[rows].to_vec(),
        corrected_pred: base.iter().map(|p| p + bias).collect(),
        base_pred: base,
        bias,
        model_tag: model.tag().to_string(),
        regime_tag: regime.tag().to_string(),
        train_rows,
        fit_seconds,
    }
}

fn empty_outcome(model: &dyn Forecaster, regime: Regime) -> RunOutcome {
    RunOutcome {
        model_tag: model.tag().to_string(),
        regime_tag: regime.tag().to_string(),
        records: Vec::new(),
        failure: None,
        fits: 0,
        pipeline: None,
    }
}

/// Refits preprocessing and model on the expanding window before each
/// week.
pub fn run_walk_forward(
    model: &mut dyn Forecaster,
    split: &ChronoSplit,
    windows: &[WeekWindow],
    pre: &PreprocessConfig,
) -> RunOutcome {
    let mut out = empty_outcome(model, Regime::WalkForward);
    for window in windows {
        let raw = split.expanding(window.rows.start);
        let fit = match fit_on(model, &raw, pre) {
            Ok(f) => f,
            Err(e) => {
                out.fail(window.index, e);
                break;
            }
        };
        out.fits += 1;
        match forecast_week(model, split, window, &fit.state) {
            Ok(base) => out.records.push(record(
                model,
                Regime::WalkForward,
                split,
                window,
                base,
                0.0,
                raw.len(),
                fit.seconds,
            )),
            Err(e) => {
                out.fail(window.index, e);
                break;
            }
        }
        out.pipeline = Some(fit.state);
    }
    out
}

fn run_frozen_inner(
    model: &mut dyn Forecaster,
    split: &ChronoSplit,
    windows: &[WeekWindow],
    pre: &PreprocessConfig,
    correction: Option<&Correction>,
) -> RunOutcome {
    let regime = if correction.is_some() {
        Regime::FrozenCorrected
    } else {
        Regime::Frozen
    };
    let mut out = empty_outcome(model, regime);
    let mut tracker = match correction.map(BiasTracker::new).transpose() {
        Ok(t) => t,
        Err(e) => {
            out.fail(windows.first().map_or(1, |w| w.index), e);
            return out;
        }
    };
    let fit = match fit_on(model, &split.train, pre) {
        Ok(f) => f,
        Err(e) => {
            out.fail(windows.first().map_or(1, |w| w.index), e);
            return out;
        }
    };
    out.fits = 1;
    for (i, window) in windows.iter().enumerate() {
        let base = match forecast_week(model, split, window, &fit.state) {
            Ok(b) => b,
            Err(e) => {
                out.fail(window.index, e);
                break;
            }
        };
        let bias = tracker.as_ref().map_or(0.0, BiasTracker::bias);
        let seconds = if i == 0 { fit.seconds } else { 0.0 };
        let rec = record(
            model,
            regime,
            split,
            window,
            base,
            bias,
            split.train.len(),
            seconds,
        );
        if let Some(t) = tracker.as_mut() {
            match mean_week_residual(&rec, window.horizon_hours) {
                Ok(e) => t.observe(e),
                Err(e) => {
                    out.fail(window.index, e);
                    break;
                }
            }
        }
        out.records.push(rec);
    }
    out.pipeline = Some(fit.state);
    out
}

/// One fit on the training segment, then per-week forecasts.
pub fn run_frozen(
    model: &mut dyn Forecaster,
    split: &ChronoSplit,
    windows: &[WeekWindow],
    pre: &PreprocessConfig,
) -> RunOutcome {
    run_frozen_inner(model, split, windows, pre, None)
}

/// [`run_frozen`] plus a bias offset per week estimated only from the
/// residuals of earlier weeks.
pub fn run_frozen_corrected(
    model: &mut dyn Forecaster,
    split: &ChronoSplit,
    windows: &[WeekWindow],
    pre: &PreprocessConfig,
    correction: &Correction,
) -> RunOutcome {
    run_frozen_inner(model, split, windows, pre, Some(correction))
}

pub fn run_regime(
    model: &mut dyn Forecaster,
    regime: Regime,
    split: &ChronoSplit,
    windows: &[WeekWindow],
    pre: &PreprocessConfig,
    correction: &Correction,
) -> RunOutcome {
    match regime {
        Regime::WalkForward => run_walk_forward(model, split, windows, pre),
        Regime::Frozen => run_frozen(model, split, windows, pre),
        Regime::FrozenCorrected => run_frozen_corrected(model, split, windows, pre, correction),
    }
}
