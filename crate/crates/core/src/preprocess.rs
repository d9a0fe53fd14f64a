//! Leakage-safe preprocessing: percentile winsorization and z-score
//! standardization, both fitted on a training window and then applied
//! unchanged to any other segment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::{HourlyFrame, SeriesError, WeekWindow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("percentiles must satisfy 0 <= lower < upper <= 1, got ({0}, {1})")]
    InvalidPercentiles(f64, f64),
    #[error("need at least 2 rows to fit, got {0}")]
    TooFewRows(usize),
    #[error("regressor `{0}` has zero variance in the fitting window")]
    ZeroVariance(String),
    #[error("target column `{0}` cannot be standardized; it stays in original units")]
    TargetNotAllowed(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

pub type Result<T, E = PreprocessError> = std::result::Result<T, E>;

/// Linear-interpolation quantile of an already sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

/// Per-column clipping bounds taken at the `p_lo`/`p_hi` quantiles of the
/// fitting window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinsorBounds {
    pub p_lo: f64,
    pub p_hi: f64,
    pub bounds: BTreeMap<String, Bounds>,
}

impl WinsorBounds {
    /// Columns whose bounds collapsed to a single value.
    pub fn degenerate_columns(&self) -> Vec<&str> {
        self.bounds
            .iter()
            .filter(|(_, b)| b.lo == b.hi)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn get(&self, column: &str) -> Option<Bounds> {
        self.bounds.get(column).copied()
    }
}

/// Fits bounds for the given columns (every column when `columns` is
/// `None`). Constant columns are allowed and logged.
pub fn fit_winsor(
    train: &HourlyFrame,
    columns: Option<&[String]>,
    p_lo: f64,
    p_hi: f64,
) -> Result<WinsorBounds> {
    if !(0.0..=1.0).contains(&p_lo) || !(0.0..=1.0).contains(&p_hi) || p_lo >= p_hi {
        return Err(PreprocessError::InvalidPercentiles(p_lo, p_hi));
    }
    if train.len() < 2 {
        return Err(PreprocessError::TooFewRows(train.len()));
    }
    let names: Vec<String> = match columns {
        Some(c) => c.to_vec(),
        None => train.column_names().to_vec(),
    };
    let mut bounds = BTreeMap::new();
    for name in names {
        let col = train
            .column(&name)
            .ok_or_else(|| PreprocessError::MissingColumn(name.clone()))?;
        let sorted = sorted_copy(col);
        let b = Bounds {
            lo: quantile_sorted(&sorted, p_lo),
            hi: quantile_sorted(&sorted, p_hi),
        };
        if b.lo == b.hi {
            log::warn!("column `{name}` is constant in the fitting window; winsor bounds collapse");
        }
        bounds.insert(name, b);
    }
    Ok(WinsorBounds { p_lo, p_hi, bounds })
}

/// Clamps every covered column into its bounds; row count is unchanged.
/// Columns without bounds pass through.
pub fn apply_winsor(frame: &HourlyFrame, bounds: &WinsorBounds) -> HourlyFrame {
    let mut out = frame.clone();
    for (name, b) in &bounds.bounds {
        if let Some(col) = frame.column(name) {
            let clipped = col.iter().map(|&v| v.max(b.lo).min(b.hi)).collect();
            out.set_column(name, clipped)
                .expect("column exists and length matches");
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

/// Z-score statistics for exogenous regressors. Never covers the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub target: String,
    pub columns: BTreeMap<String, Moments>,
}

impl Standardizer {
    /// A standardizer that maps every listed column to itself.
    pub fn identity(target: &str, regressors: &[String]) -> Self {
        Self {
            target: target.to_string(),
            columns: regressors
                .iter()
                .map(|r| {
                    (
                        r.clone(),
                        Moments {
                            mean: 0.0,
                            std: 1.0,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn transform_value(&self, column: &str, v: f64) -> Option<f64> {
        self.columns.get(column).map(|m| (v - m.mean) / m.std)
    }

    pub fn inverse_value(&self, column: &str, z: f64) -> Option<f64> {
        self.columns.get(column).map(|m| z * m.std + m.mean)
    }
}

/// Population mean and standard deviation (divide by n).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn fit_standardizer(train: &HourlyFrame, regressors: &[String]) -> Result<Standardizer> {
    let mut columns = BTreeMap::new();
    for name in regressors {
        if name == train.target_name() {
            return Err(PreprocessError::TargetNotAllowed(name.clone()));
        }
        let col = train
            .column(name)
            .ok_or_else(|| PreprocessError::MissingColumn(name.clone()))?;
        let (mean, std) = mean_std(col);
        if !(std > 0.0) {
            return Err(PreprocessError::ZeroVariance(name.clone()));
        }
        columns.insert(name.clone(), Moments { mean, std });
    }
    Ok(Standardizer {
        target: train.target_name().to_string(),
        columns,
    })
}

pub fn apply_standardizer(frame: &HourlyFrame, s: &Standardizer) -> Result<HourlyFrame> {
    let mut out = frame.clone();
    for (name, m) in &s.columns {
        let col = frame
            .column(name)
            .ok_or_else(|| PreprocessError::MissingColumn(name.clone()))?;
        out.set_column(name, col.iter().map(|v| (v - m.mean) / m.std).collect())?;
    }
    Ok(out)
}

/// Knobs for fitting a [`PipelineState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub p_lo: f64,
    pub p_hi: f64,
    /// Also winsorize the target inside the fitting window. Scoring always
    /// uses raw observations regardless.
    pub winsorize_target: bool,
    /// Exogenous regressors handed to the models.
    pub exog: Vec<String>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            p_lo: 0.01,
            p_hi: 0.99,
            winsorize_target: true,
            exog: ["no", "no2", "co", "so2"].map(String::from).to_vec(),
        }
    }
}

/// Fitted preprocessing bound to one training window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub winsor: WinsorBounds,
    pub standardizer: Standardizer,
    pub features: Vec<String>,
    /// Number of rows in the fitting window.
    pub fitted_rows: usize,
    /// Last timestamp (epoch seconds) of the fitting window.
    pub fitted_until: i64,
}

impl PipelineState {
    /// Fits winsor bounds on the exogenous columns (plus the target when
    /// configured), then standardizes the clipped regressors.
    pub fn fit(train: &HourlyFrame, cfg: &PreprocessConfig) -> Result<Self> {
        let mut cols = Vec::with_capacity(cfg.exog.len() + 1);
        if cfg.winsorize_target {
            cols.push(train.target_name().to_string());
        }
        cols.extend(cfg.exog.iter().cloned());
        let winsor = fit_winsor(train, Some(&cols), cfg.p_lo, cfg.p_hi)?;
        let clipped = apply_winsor(train, &winsor);
        let standardizer = fit_standardizer(&clipped, &cfg.exog)?;
        Ok(Self {
            winsor,
            standardizer,
            features: cfg.exog.clone(),
            fitted_rows: train.len(),
            fitted_until: train.last_timestamp().unwrap_or_default(),
        })
    }

    /// Winsorizes and standardizes, keeping only target and features.
    pub fn transform(&self, frame: &HourlyFrame) -> Result<HourlyFrame> {
        let selected = frame.select(&self.features)?;
        apply_standardizer(&apply_winsor(&selected, &self.winsor), &self.standardizer)
    }

    /// Same as [`transform`](Self::transform) but leaves the target raw.
    pub fn transform_regressors(&self, frame: &HourlyFrame) -> Result<HourlyFrame> {
        let mut out = self.transform(frame)?;
        out.set_column(frame.target_name(), frame.target().to_vec())?;
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pipeline state serializes")
    }
}

/// Held-out regressor values for one evaluation week, transformed by the
/// training-window fit. The target is not part of the view.
#[derive(Debug, Clone, PartialEq)]
pub struct PerfectPrognosisView {
    pub window: WeekWindow,
    pub timestamps: Vec<i64>,
    /// Column names in the order of `future_exog` rows.
    pub columns: Vec<String>,
    /// `future_exog[j][h]`: regressor `j` at hour `h` of the window.
    pub future_exog: Vec<Vec<f64>>,
}

impl PerfectPrognosisView {
    pub fn new(test: &HourlyFrame, window: &WeekWindow, state: &PipelineState) -> Result<Self> {
        let rows = test.slice(window.rows.clone());
        let transformed = state.transform(&rows)?;
        let future_exog = state
            .features
            .iter()
            .map(|c| transformed.require(c).map(|v| v.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            window: window.clone(),
            timestamps: rows.timestamps().to_vec(),
            columns: state.features.clone(),
            future_exog,
        })
    }

    /// Builds a view from already-transformed values.
    pub fn from_parts(
        window: WeekWindow,
        timestamps: Vec<i64>,
        columns: Vec<String>,
        future_exog: Vec<Vec<f64>>,
    ) -> Self {
        Self {
            window,
            timestamps,
            columns,
            future_exog,
        }
    }

    pub fn horizon(&self) -> usize {
        self.timestamps.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::HOUR;

    fn frame(cols: Vec<(&str, Vec<f64>)>) -> HourlyFrame {
        let n = cols[0].1.len();
        HourlyFrame::enforce_hourly_grid(
            (0..n as i64).map(|i| i * HOUR).collect(),
            cols.into_iter().map(|(n, v)| (n.to_string(), v)).collect(),
            "pm2_5",
        )
        .unwrap()
    }

    #[test]
    fn winsor_linear_interpolation_quantiles() {
        let f = frame(vec![("pm2_5", (1..=100).map(f64::from).collect())]);
        let b = fit_winsor(&f, None, 0.01, 0.99).unwrap();
        let pm = b.get("pm2_5").unwrap();
        assert!((pm.lo - 1.99).abs() < 1e-12);
        assert!((pm.hi - 99.01).abs() < 1e-12);
    }

    #[test]
    fn constant_column_collapses() {
        let f = frame(vec![("pm2_5", vec![5.0; 3])]);
        let b = fit_winsor(&f, None, 0.01, 0.99).unwrap();
        assert_eq!(b.get("pm2_5").unwrap(), Bounds { lo: 5.0, hi: 5.0 });
        assert_eq!(b.degenerate_columns(), vec!["pm2_5"]);
    }

    #[test]
    fn full_range_bounds_are_identity() {
        let f = frame(vec![("pm2_5", vec![3.0, -1.0, 7.5, 2.0])]);
        let b = fit_winsor(&f, None, 0.0, 1.0).unwrap();
        assert_eq!(b.get("pm2_5").unwrap(), Bounds { lo: -1.0, hi: 7.5 });
        assert_eq!(apply_winsor(&f, &b), f);
    }

    #[test]
    fn clamp_and_idempotence() {
        let f = frame(vec![("pm2_5", vec![150.0, 50.0, 1.0])]);
        let mut bounds = BTreeMap::new();
        bounds.insert("pm2_5".to_string(), Bounds { lo: 2.0, hi: 99.0 });
        let b = WinsorBounds {
            p_lo: 0.01,
            p_hi: 0.99,
            bounds,
        };
        let once = apply_winsor(&f, &b);
        assert_eq!(once.target(), &[99.0, 50.0, 2.0]);
        assert_eq!(apply_winsor(&once, &b), once);
    }

    #[test]
    fn invalid_percentiles() {
        let f = frame(vec![("pm2_5", vec![1.0, 2.0])]);
        assert!(fit_winsor(&f, None, 0.5, 0.5).is_err());
        assert!(fit_winsor(&f, None, -0.1, 0.5).is_err());
    }

    #[test]
    fn standardizer_two_point_population_std() {
        let f = frame(vec![("pm2_5", vec![1.0, 1.0]), ("no", vec![0.0, 2.0])]);
        let s = fit_standardizer(&f, &["no".into()]).unwrap();
        assert_eq!(
            s.columns["no"],
            Moments {
                mean: 1.0,
                std: 1.0
            }
        );
    }

    #[test]
    fn standardizer_rejects_target_and_constant() {
        let f = frame(vec![("pm2_5", vec![1.0, 2.0]), ("no", vec![3.0, 3.0])]);
        assert_eq!(
            fit_standardizer(&f, &["pm2_5".into()]).unwrap_err(),
            PreprocessError::TargetNotAllowed("pm2_5".into())
        );
        assert_eq!(
            fit_standardizer(&f, &["no".into()]).unwrap_err(),
            PreprocessError::ZeroVariance("no".into())
        );
    }

    #[test]
    fn own_segment_standardizes_to_unit_moments() {
        let x: Vec<f64> = (0..50)
            .map(|i| (i as f64 * 0.37).sin() * 4.0 + 2.0)
            .collect();
        let f = frame(vec![("pm2_5", vec![0.0; 50]), ("co", x)]);
        let s = fit_standardizer(&f, &["co".into()]).unwrap();
        let t = apply_standardizer(&f, &s).unwrap();
        let (m, sd) = mean_std(t.column("co").unwrap());
        assert!(m.abs() < 1e-12);
        assert!((sd - 1.0).abs() < 1e-12);
        assert_eq!(t.target(), f.target());
    }

    #[test]
    fn identity_standardizer_leaves_frame() {
        let f = frame(vec![("pm2_5", vec![1.0, 2.0]), ("no", vec![3.0, 4.5])]);
        let s = Standardizer::identity("pm2_5", &["no".into()]);
        assert_eq!(apply_standardizer(&f, &s).unwrap(), f);
    }

    #[test]
    fn missing_column_is_reported() {
        let f = frame(vec![("pm2_5", vec![1.0, 2.0]), ("no", vec![3.0, 4.5])]);
        let mut s = Standardizer::identity("pm2_5", &["no".into()]);
        s.columns.insert(
            "so2".into(),
            Moments {
                mean: 0.0,
                std: 1.0,
            },
        );
        assert_eq!(
            apply_standardizer(&f, &s).unwrap_err(),
            PreprocessError::MissingColumn("so2".into())
        );
    }

    #[test]
    fn state_roundtrips_through_json() {
        let x: Vec<f64> = (0..40).map(|i| (i as f64).cos()).collect();
        let y: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let f = frame(vec![("pm2_5", y), ("no", x)]);
        let cfg = PreprocessConfig {
            exog: vec!["no".into()],
            ..Default::default()
        };
        let state = PipelineState::fit(&f, &cfg).unwrap();
        let back: PipelineState = serde_json::from_str(&state.to_json()).unwrap();
        assert_eq!(back, state);
    }
}
