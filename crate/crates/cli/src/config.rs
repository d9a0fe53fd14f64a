//! Experiment configuration: a TOML file with every key optional, plus
//! command-line overrides.

use std::path::{Path, PathBuf};

use aethercast::additive::AdditiveConfig;
use aethercast::arnet::{ArNetConfig, Optimizer};
use aethercast::preprocess::PreprocessConfig;
use aethercast::regimes::{Correction, ModelSpec, Regime};
use aethercast::sarimax::{SarimaxConfig, SarimaxOrder};
use aethercast::series::{parse_ts, DEFAULT_TARGET};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown configuration key: {0}")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("cannot read config {path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sarimax,
    Additive,
    Arnet,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Sarimax, ModelKind::Additive, ModelKind::Arnet];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sarimax" => Some(ModelKind::Sarimax),
            "additive" => Some(ModelKind::Additive),
            "arnet" => Some(ModelKind::Arnet),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub csv: Option<PathBuf>,
    pub target: String,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
    pub start: Option<String>,
    pub end: Option<String>,
    pub cache_dir: PathBuf,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            csv: None,
            target: DEFAULT_TARGET.into(),
            latitude: None,
            longitude: None,
            start: None,
            end: None,
            cache_dir: PathBuf::from(".aethercast-cache"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrectionMethod {
    Ewma,
    Kalman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectionSection {
    pub method: CorrectionMethod,
    pub state_var: f64,
    pub obs_var: f64,
    pub initial_var: f64,
}

impl Default for CorrectionSection {
    fn default() -> Self {
        Self {
            method: CorrectionMethod::Ewma,
            state_var: 1.0,
            obs_var: 25.0,
            initial_var: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SarimaxSection {
    pub order: [usize; 3],
    pub seasonal_order: [usize; 4],
    pub intercept: bool,
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl Default for SarimaxSection {
    fn default() -> Self {
        let c = SarimaxConfig::default();
        let o = c.order;
        Self {
            order: [o.p, o.d, o.q],
            seasonal_order: [o.seasonal_p, o.seasonal_d, o.seasonal_q, o.period],
            intercept: c.intercept,
            max_iter: c.max_iter,
            rel_tol: c.rel_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdditiveSection {
    pub n_changepoints: usize,
    pub changepoint_range: f64,
    pub daily_order: usize,
    pub weekly_order: usize,
    pub yearly_order: usize,
    pub trend_penalty: f64,
    pub seasonal_penalty: f64,
    pub regressor_penalty: f64,
}

impl Default for AdditiveSection {
    fn default() -> Self {
        let c = AdditiveConfig::default();
        Self {
            n_changepoints: c.n_changepoints,
            changepoint_range: c.changepoint_range,
            daily_order: c.daily_order,
            weekly_order: c.weekly_order,
            yearly_order: c.yearly_order,
            trend_penalty: c.trend_penalty,
            seasonal_penalty: c.seasonal_penalty,
            regressor_penalty: c.regressor_penalty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArNetSection {
    pub n_lags: usize,
    pub n_forecasts: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub daily_order: usize,
    pub weekly_order: usize,
    pub trend: bool,
}

impl Default for ArNetSection {
    fn default() -> Self {
        let c = ArNetConfig::default();
        Self {
            n_lags: c.n_lags,
            n_forecasts: c.n_forecasts,
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            optimizer: c.optimizer,
            daily_order: c.daily_order,
            weekly_order: c.weekly_order,
            trend: c.trend,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub regime: Regime,
    pub alpha: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub split_ratio: f64,
    pub winsor_lower: f64,
    pub winsor_upper: f64,
    pub winsorize_target: bool,
    pub exog: Vec<String>,
    /// When set, the regressors are the top-k mRMR picks among all
    /// non-target columns, computed on the training segment.
    pub select_k: Option<usize>,
    pub mi_bins: usize,
    pub data: DataSection,
    pub correction: CorrectionSection,
    pub sarimax: SarimaxSection,
    pub additive: AdditiveSection,
    pub arnet: ArNetSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let pre = PreprocessConfig::default();
        Self {
            model: ModelKind::Additive,
            regime: Regime::FrozenCorrected,
            alpha: 0.3,
            seed: 0,
            out_dir: PathBuf::from("aethercast-out"),
            split_ratio: 0.9,
            winsor_lower: pre.p_lo,
            winsor_upper: pre.p_hi,
            winsorize_target: pre.winsorize_target,
            exog: pre.exog,
            select_k: None,
            mi_bins: 10,
            data: DataSection::default(),
            correction: CorrectionSection::default(),
            sarimax: SarimaxSection::default(),
            additive: AdditiveSection::default(),
            arnet: ArNetSection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub model: Option<String>,
    pub regime: Option<String>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub start: Option<String>,
    pub end: Option<String>,
    pub csv: Option<PathBuf>,
}

/// Where the observations come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Fetch {
        latitude: f64,
        longitude: f64,
        start: i64,
        end: i64,
    },
}

/// Accepts RFC 3339 or a bare `YYYY-MM-DD` (midnight UTC).
pub fn parse_instant(s: &str) -> Option<i64> {
    parse_ts(s).or_else(|| {
        let s = s.trim();
        (s.len() == 10)
            .then(|| parse_ts(&format!("{s}T00:00:00Z")))
            .flatten()
    })
}

fn unknown_key(msg: &str) -> Option<String> {
    let rest = msg.split("unknown field `").nth(1)?;
    Some(rest.split('`').next()?.to_string())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            match unknown_key(&msg) {
                Some(k) => ConfigError::UnknownKey(k),
                None => ConfigError::InvalidValue {
                    key: e.span().map_or_else(String::new, |s| {
                        text.get(s)
                            .unwrap_or_default()
                            .lines()
                            .next()
                            .unwrap_or_default()
                            .to_string()
                    }),
                    reason: msg,
                },
            }
        })
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(m) = &o.model {
            self.model = ModelKind::parse(m)
                .ok_or_else(|| invalid("model", format!("unknown model `{m}`")))?;
        }
        if let Some(r) = &o.regime {
            self.regime = Regime::parse(r)
                .ok_or_else(|| invalid("regime", format!("unknown regime `{r}`")))?;
        }
        if let Some(a) = o.alpha {
            self.alpha = a;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out_dir = p.clone();
        }
        if let Some(p) = &o.csv {
            self.data.csv = Some(p.clone());
        }
        let fetch_flag = o.lat.is_some() || o.lon.is_some() || o.start.is_some() || o.end.is_some();
        if fetch_flag && o.csv.is_none() {
            self.data.csv = None;
        }
        if let Some(v) = o.lat {
            self.data.latitude = Some(v);
        }
        if let Some(v) = o.lon {
            self.data.longitude = Some(v);
        }
        if let Some(v) = &o.start {
            self.data.start = Some(v.clone());
        }
        if let Some(v) = &o.end {
            self.data.end = Some(v.clone());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(
                "alpha",
                format!("{} must lie in (0, 1)", self.alpha),
            ));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(invalid(
                "split_ratio",
                format!("{} must lie in (0, 1)", self.split_ratio),
            ));
        }
        if !(0.0 <= self.winsor_lower
            && self.winsor_lower < self.winsor_upper
            && self.winsor_upper <= 1.0)
        {
            return Err(invalid(
                "winsor_lower/winsor_upper",
                "need 0 <= lower < upper <= 1",
            ));
        }
        if self.mi_bins < 2 {
            return Err(invalid("mi_bins", "need at least 2 bins"));
        }
        if self.select_k == Some(0) {
            return Err(invalid("select_k", "must be positive"));
        }
        let c = &self.correction;
        if c.method == CorrectionMethod::Kalman
            && !(c.state_var >= 0.0 && c.obs_var > 0.0 && c.initial_var >= 0.0)
        {
            return Err(invalid(
                "correction",
                "variances must be >= 0 with obs_var > 0",
            ));
        }
        if self.sarimax.seasonal_order[3] < 2
            && self.sarimax.seasonal_order[..3].iter().any(|v| *v > 0)
        {
            return Err(invalid(
                "sarimax.seasonal_order",
                "seasonal terms need a period >= 2",
            ));
        }
        if !(self.sarimax.rel_tol > 0.0) || self.sarimax.max_iter == 0 {
            return Err(invalid("sarimax", "max_iter and rel_tol must be positive"));
        }
        self.additive_config()
            .validate()
            .map_err(|e| invalid("additive", e.to_string()))?;
        self.arnet_config()
            .validate()
            .map_err(|e| invalid("arnet", e.to_string()))?;
        self.source()?;
        Ok(())
    }

    pub fn source(&self) -> Result<DataSource, ConfigError> {
        if let Some(p) = &self.data.csv {
            return Ok(DataSource::Csv(p.clone()));
        }
        let d = &self.data;
        match (d.latitude, d.longitude, &d.start, &d.end) {
            (Some(latitude), Some(longitude), Some(s), Some(e)) => {
                if !(-90.0..=90.0).contains(&latitude) {
                    return Err(invalid("latitude", "must lie in [-90, 90]"));
                }
                if !(-180.0..=180.0).contains(&longitude) {
                    return Err(invalid("longitude", "must lie in [-180, 180]"));
                }
                let start = parse_instant(s)
                    .ok_or_else(|| invalid("start", format!("cannot parse `{s}`")))?;
                let end = parse_instant(e)
                    .ok_or_else(|| invalid("end", format!("cannot parse `{e}`")))?;
                if end <= start {
                    return Err(invalid("end", "must be after start"));
                }
                Ok(DataSource::Fetch {
                    latitude,
                    longitude,
                    start,
                    end,
                })
            }
            (None, None, None, None) => Err(invalid(
                "data",
                "set `csv` or all of latitude/longitude/start/end",
            )),
            _ => Err(invalid(
                "data",
                "fetching needs latitude, longitude, start and end",
            )),
        }
    }

    pub fn preprocess(&self, exog: Vec<String>) -> PreprocessConfig {
        PreprocessConfig {
            p_lo: self.winsor_lower,
            p_hi: self.winsor_upper,
            winsorize_target: self.winsorize_target,
            exog,
        }
    }

    pub fn correction(&self) -> Correction {
        match self.correction.method {
            CorrectionMethod::Ewma => Correction::ewma(self.alpha),
            CorrectionMethod::Kalman => Correction::Kalman {
                state_var: self.correction.state_var,
                obs_var: self.correction.obs_var,
                initial_var: self.correction.initial_var,
            },
        }
    }

    pub fn sarimax_config(&self) -> SarimaxConfig {
        let [p, d, q] = self.sarimax.order;
        let [sp, sd, sq, s] = self.sarimax.seasonal_order;
        SarimaxConfig {
            order: SarimaxOrder::new((p, d, q), (sp, sd, sq, s)),
            intercept: self.sarimax.intercept,
            max_iter: self.sarimax.max_iter,
            rel_tol: self.sarimax.rel_tol,
        }
    }

    pub fn additive_config(&self) -> AdditiveConfig {
        let a = &self.additive;
        AdditiveConfig {
            n_changepoints: a.n_changepoints,
            changepoint_range: a.changepoint_range,
            daily_order: a.daily_order,
            weekly_order: a.weekly_order,
            yearly_order: a.yearly_order,
            trend_penalty: a.trend_penalty,
            seasonal_penalty: a.seasonal_penalty,
            regressor_penalty: a.regressor_penalty,
        }
    }

    pub fn arnet_config(&self) -> ArNetConfig {
        let a = &self.arnet;
        ArNetConfig {
            n_lags: a.n_lags,
            n_forecasts: a.n_forecasts,
            epochs: a.epochs,
            batch_size: a.batch_size,
            learning_rate: a.learning_rate,
            seed: self.seed,
            optimizer: a.optimizer,
            daily_order: a.daily_order,
            weekly_order: a.weekly_order,
            trend: a.trend,
        }
    }

    pub fn model_spec(&self, kind: ModelKind) -> ModelSpec {
        match kind {
            ModelKind::Sarimax => ModelSpec::Sarimax(self.sarimax_config()),
            ModelKind::Additive => ModelSpec::Additive(self.additive_config()),
            ModelKind::Arnet => ModelSpec::Arnet(self.arnet_config()),
        }
    }
}

/// Reads the optional file, applies overrides, validates.
pub fn parse_config(
    path: Option<&Path>,
    overrides: &Overrides,
) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Io {
                path: p.to_path_buf(),
                reason: e.to_string(),
            })?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    cfg.apply(overrides)?;
    Ok(cfg)
}
