//! Hourly time-series container, grid enforcement, chronological splitting
//! and weekly windowing.
//!
//! Timestamps are UTC epoch seconds. Every [`HourlyFrame`] sits on a gapless
//! hourly grid; calendar features are derived from the epoch value on demand.

use std::ops::Range;

use chrono::{DateTime, Utc};
use thiserror::Error;

/// Seconds in one hour.
pub const HOUR: i64 = 3600;
/// Forecast horizon and step of the rolling protocol, in hours.
pub const WEEK_HOURS: usize = 168;
/// Default forecast target column.
pub const DEFAULT_TARGET: &str = "pm2_5";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("duplicate timestamp {}", fmt_ts(*.0))]
    DuplicateTimestamp(i64),
    #[error("hourly grid gap between {} and {}", fmt_ts(*.0), fmt_ts(*.1))]
    GridGap(i64, i64),
    #[error("timestamp {} is not on an hour boundary", fmt_ts(*.0))]
    NotHourAligned(i64),
    #[error("frame needs at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("column `{name}` has {got} values, expected {expected}")]
    LengthMismatch {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("non-finite value in column `{column}` at row {row}")]
    NonFinite { column: String, row: usize },
    #[error("split ratio {0} must lie strictly between 0 and 1")]
    InvalidRatio(f64),
    #[error("split leaves an empty {0} segment")]
    EmptySegment(&'static str),
    #[error("frames are not contiguous on the hourly grid")]
    NotContiguous,
}

pub type Result<T, E = SeriesError> = std::result::Result<T, E>;

/// Formats an epoch-second timestamp as `YYYY-MM-DDTHH:MM:SSZ`.
pub fn fmt_ts(ts: i64) -> String {
    match DateTime::<Utc>::from_timestamp(ts, 0) {
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        None => format!("@{ts}"),
    }
}

/// Parses an RFC 3339 timestamp into epoch seconds.
pub fn parse_ts(s: &str) -> Option<i64> {
    DateTime::parse_from_rfc3339(s.trim())
        .ok()
        .map(|dt| dt.timestamp())
}

/// Timestamp-indexed multivariate hourly table.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlyFrame {
    timestamps: Vec<i64>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    target: String,
}

impl HourlyFrame {
    /// Builds a frame from raw, possibly unsorted rows and enforces the
    /// hourly grid. Gaps are a hard error; nothing is imputed.
    pub fn enforce_hourly_grid(
        timestamps: Vec<i64>,
        columns: Vec<(String, Vec<f64>)>,
        target: &str,
    ) -> Result<Self> {
        let n = timestamps.len();
        if n < 2 {
            return Err(SeriesError::TooFewRows { needed: 2, got: n });
        }
        let mut names = Vec::with_capacity(columns.len());
        let mut values = Vec::with_capacity(columns.len());
        for (name, col) in columns {
            if col.len() != n {
                return Err(SeriesError::LengthMismatch {
                    name,
                    expected: n,
                    got: col.len(),
                });
            }
            if names.contains(&name) {
                return Err(SeriesError::DuplicateColumn(name));
            }
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(SeriesError::NonFinite { column: name, row });
            }
            names.push(name);
            values.push(col);
        }
        if !names.iter().any(|c| c == target) {
            return Err(SeriesError::MissingColumn(target.to_string()));
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| timestamps[i]);
        let sorted_ts: Vec<i64> = order.iter().map(|&i| timestamps[i]).collect();
        for &t in &sorted_ts {
            if t.rem_euclid(HOUR) != 0 {
                return Err(SeriesError::NotHourAligned(t));
            }
        }
        for w in sorted_ts.windows(2) {
            if w[0] == w[1] {
                return Err(SeriesError::DuplicateTimestamp(w[0]));
            }
            if w[1] - w[0] != HOUR {
                return Err(SeriesError::GridGap(w[0], w[1]));
            }
        }
        let columns = values
            .into_iter()
            .map(|col| order.iter().map(|&i| col[i]).collect())
            .collect();
        Ok(Self {
            timestamps: sorted_ts,
            names,
            columns,
            target: target.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn target_name(&self) -> &str {
        &self.target
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.names.iter().any(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|c| c == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn require(&self, name: &str) -> Result<&[f64]> {
        self.column(name)
            .ok_or_else(|| SeriesError::MissingColumn(name.to_string()))
    }

    pub fn target(&self) -> &[f64] {
        self.column(&self.target)
            .expect("target column present by construction")
    }

    /// Iterates `(name, values)` in column order.
    pub fn columns(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.names
            .iter()
            .zip(&self.columns)
            .map(|(n, c)| (n.as_str(), c.as_slice()))
    }

    pub fn first_timestamp(&self) -> Option<i64> {
        self.timestamps.first().copied()
    }

    pub fn last_timestamp(&self) -> Option<i64> {
        self.timestamps.last().copied()
    }

    /// Row-range view copied into a new frame. An empty range yields an
    /// empty frame with the same columns.
    pub fn slice(&self, rows: Range<usize>) -> Self {
        Self {
            timestamps: self.timestamps[rows.clone()].to_vec(),
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| c[rows.clone()].to_vec())
                .collect(),
            target: self.target.clone(),
        }
    }

    /// Returns a copy where `f` has been applied to the named column.
    pub fn map_column(&self, name: &str, f: impl Fn(f64) -> f64) -> Result<Self> {
        let idx = self
            .names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| SeriesError::MissingColumn(name.to_string()))?;
        let mut out = self.clone();
        for v in &mut out.columns[idx] {
            *v = f(*v);
        }
        Ok(out)
    }

    /// Replaces one column's values in place.
    pub fn set_column(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        let idx = self
            .names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| SeriesError::MissingColumn(name.to_string()))?;
        if values.len() != self.len() {
            return Err(SeriesError::LengthMismatch {
                name: name.to_string(),
                expected: self.len(),
                got: values.len(),
            });
        }
        self.columns[idx] = values;
        Ok(())
    }

    /// Keeps the target plus the requested columns, in the requested order.
    pub fn select(&self, keep: &[String]) -> Result<Self> {
        let mut names = vec![self.target.clone()];
        let mut columns = vec![self.target().to_vec()];
        for name in keep {
            if name == &self.target {
                continue;
            }
            names.push(name.clone());
            columns.push(self.require(name)?.to_vec());
        }
        Ok(Self {
            timestamps: self.timestamps.clone(),
            names,
            columns,
            target: self.target.clone(),
        })
    }

    /// Appends `next`, which must start exactly one hour after `self` ends
    /// and carry the same columns.
    pub fn concat(&self, next: &HourlyFrame) -> Result<Self> {
        if next.is_empty() {
            return Ok(self.clone());
        }
        if self.is_empty() {
            return Ok(next.clone());
        }
        if self.names != next.names || self.target != next.target {
            return Err(SeriesError::NotContiguous);
        }
        if next.timestamps[0] - self.timestamps[self.len() - 1] != HOUR {
            return Err(SeriesError::NotContiguous);
        }
        let mut out = self.clone();
        out.timestamps.extend_from_slice(&next.timestamps);
        for (col, extra) in out.columns.iter_mut().zip(&next.columns) {
            col.extend_from_slice(extra);
        }
        Ok(out)
    }
}

/// Chronological train/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ChronoSplit {
    pub train: HourlyFrame,
    pub test: HourlyFrame,
    pub ratio: f64,
}

impl ChronoSplit {
    /// Training rows followed by the first `test_rows` rows of the test
    /// segment: the expanding window available before a forecast origin.
    pub fn expanding(&self, test_rows: usize) -> HourlyFrame {
        let head = self.test.slice(0..test_rows.min(self.test.len()));
        self.train
            .concat(&head)
            .expect("train and test are contiguous by construction")
    }
}

/// Splits `frame` into the first `floor(ratio * N)` rows and the rest.
pub fn chrono_split(frame: &HourlyFrame, ratio: f64) -> Result<ChronoSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(SeriesError::InvalidRatio(ratio));
    }
    let n = frame.len();
    if n < 2 {
        return Err(SeriesError::TooFewRows { needed: 2, got: n });
    }
    let n_train = (ratio * n as f64).floor() as usize;
    if n_train == 0 {
        return Err(SeriesError::EmptySegment("train"));
    }
    if n_train == n {
        return Err(SeriesError::EmptySegment("test"));
    }
    Ok(ChronoSplit {
        train: frame.slice(0..n_train),
        test: frame.slice(n_train..n),
        ratio,
    })
}

/// One 168-hour evaluation window of the test segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeekWindow {
    /// 1-based week number.
    pub index: usize,
    pub start: i64,
    pub horizon_hours: usize,
    /// Row range inside the test frame.
    pub rows: Range<usize>,
}

/// Consecutive non-overlapping 168-hour windows; a trailing partial week
/// is dropped.
pub fn weekly_windows(test: &HourlyFrame) -> Vec<WeekWindow> {
    let n_weeks = test.len() / WEEK_HOURS;
    (0..n_weeks)
        .map(|w| {
            let rows = w * WEEK_HOURS..(w + 1) * WEEK_HOURS;
            WeekWindow {
                index: w + 1,
                start: test.timestamps()[rows.start],
                horizon_hours: WEEK_HOURS,
                rows,
            }
        })
        .collect()
}
