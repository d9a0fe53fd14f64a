//! Hourly data acquisition: pollution and meteorology providers with an
//! on-disk response cache, CSV input/output and timestamp alignment.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::series::{fmt_ts, parse_ts, HourlyFrame, SeriesError, DEFAULT_TARGET, HOUR};

/// Environment variable holding the pollution provider API key.
pub const API_KEY_ENV: &str = "AETHERCAST_OWM_KEY";

pub const POLLUTANTS: [&str; 8] = ["pm2_5", "pm10", "co", "no", "no2", "so2", "o3", "nh3"];
pub const METEO_COLUMNS: [&str; 2] = ["temperature", "dew_point"];

const OWM_URL: &str = "https://api.openweathermap.org/data/2.5/air_pollution/history";
const METEO_URL: &str = "https://archive-api.open-meteo.com/v1/archive";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid source configuration: {0}")]
    InvalidSource(String),
    #[error("no API key for the pollution provider; set {API_KEY_ENV} or pass one explicitly")]
    MissingApiKey,
    #[error("HTTP status {0}")]
    HttpStatus(u16),
    #[error("HTTP transport: {0}")]
    Http(String),
    #[error("unexpected provider response: {0}")]
    Schema(String),
    #[error("provider returned no rows inside the requested range")]
    RangeEmpty,
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("frames share no timestamps")]
    EmptyIntersection,
    #[error("column `{0}` appears in more than one frame")]
    ColumnCollision(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub latitude: f64,
    pub longitude: f64,
    /// Inclusive start, epoch seconds.
    pub start: i64,
    /// Exclusive end, epoch seconds.
    pub end: i64,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub cache_dir: PathBuf,
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(IngestError::InvalidSource(format!(
                "latitude {} outside [-90, 90]",
                self.latitude
            )));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(IngestError::InvalidSource(format!(
                "longitude {} outside [-180, 180]",
                self.longitude
            )));
        }
        if self.end <= self.start {
            return Err(IngestError::InvalidSource("end must be after start".into()));
        }
        Ok(())
    }

    /// Explicit key first, then the environment.
    pub fn resolve_api_key(&self) -> Result<String> {
        self.api_key
            .clone()
            .or_else(|| std::env::var(API_KEY_ENV).ok())
            .filter(|k| !k.trim().is_empty())
            .ok_or(IngestError::MissingApiKey)
    }
}

/// Minimal HTTP GET abstraction so tests can run offline.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str) -> Result<Vec<u8>>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build();
        Self {
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(60))
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str) -> Result<Vec<u8>> {
        let mut resp = self.agent.get(url).call().map_err(|e| match e {
            ureq::Error::StatusCode(code) => IngestError::HttpStatus(code),
            other => IngestError::Http(other.to_string()),
        })?;
        resp.body_mut()
            .with_config()
            .limit(512 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| IngestError::Http(e.to_string()))
    }
}

/// A cached raw provider response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub fetched_at: i64,
    pub payload: String,
}

pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// Request key: provider, coordinates and range; never the API key.
    pub fn key(provider: &str, cfg: &SourceConfig) -> String {
        format!(
            "{provider}|{:.6}|{:.6}|{}|{}",
            cfg.latitude, cfg.longitude, cfg.start, cfg.end
        )
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(hex::encode(Sha256::digest(key.as_bytes())))
    }

    pub fn load(&self, key: &str) -> Option<CacheEntry> {
        let bytes = std::fs::read(self.path_for(key)).ok()?;
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(e) if e.key == key => Some(e),
            Ok(_) => None,
            Err(e) => {
                log::warn!("ignoring unreadable cache entry for {key}: {e}");
                None
            }
        }
    }

    /// Write-temp-then-rename so readers never see a partial file.
    pub fn store(&self, entry: &CacheEntry) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.path_for(&entry.key);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(&serde_json::to_vec(entry).map_err(|e| IngestError::Schema(e.to_string()))?)?;
        tmp.flush()?;
        tmp.persist(&path).map_err(|e| IngestError::Io(e.error))?;
        Ok(path)
    }
}

fn cached_fetch(
    provider: &str,
    cfg: &SourceConfig,
    transport: &dyn Transport,
    url: impl FnOnce() -> Result<String>,
) -> Result<String> {
    let cache = ResponseCache::new(&cfg.cache_dir);
    let key = ResponseCache::key(provider, cfg);
    if let Some(entry) = cache.load(&key) {
        log::info!("{provider}: serving cached response");
        return Ok(entry.payload);
    }
    let url = url()?;
    let bytes = transport.get(&url)?;
    let payload = String::from_utf8(bytes)
        .map_err(|_| IngestError::Schema("response is not UTF-8".into()))?;
    let entry = CacheEntry {
        key,
        fetched_at: Utc::now().timestamp(),
        payload,
    };
    cache.store(&entry)?;
    Ok(entry.payload)
}

#[derive(Deserialize)]
struct OwmResponse {
    list: Vec<OwmEntry>,
}

#[derive(Deserialize)]
struct OwmEntry {
    dt: i64,
    components: std::collections::HashMap<String, Option<f64>>,
}

/// Parses a pollution history payload into rows inside `[start, end)`.
pub fn parse_air_pollution(payload: &str, start: i64, end: i64) -> Result<HourlyFrame> {
    let resp: OwmResponse =
        serde_json::from_str(payload).map_err(|e| IngestError::Schema(e.to_string()))?;
    let mut ts = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); POLLUTANTS.len()];
    for entry in resp.list.iter().filter(|e| e.dt >= start && e.dt < end) {
        ts.push(entry.dt);
        for (k, name) in POLLUTANTS.iter().enumerate() {
            let v = entry
                .components
                .get(*name)
                .copied()
                .flatten()
                .ok_or_else(|| {
                    IngestError::Schema(format!("missing `{name}` at {}", fmt_ts(entry.dt)))
                })?;
            cols[k].push(v);
        }
    }
    if ts.is_empty() {
        return Err(IngestError::RangeEmpty);
    }
    let columns = POLLUTANTS.iter().map(|s| s.to_string()).zip(cols).collect();
    Ok(HourlyFrame::enforce_hourly_grid(
        ts,
        columns,
        DEFAULT_TARGET,
    )?)
}

pub fn fetch_air_pollution(cfg: &SourceConfig, transport: &dyn Transport) -> Result<HourlyFrame> {
    cfg.validate()?;
    let payload = cached_fetch("openweather-air-pollution", cfg, transport, || {
        let key = cfg.resolve_api_key()?;
        Ok(format!(
            "{OWM_URL}?lat={}&lon={}&start={}&end={}&appid={key}",
            cfg.latitude, cfg.longitude, cfg.start, cfg.end
        ))
    })?;
    parse_air_pollution(&payload, cfg.start, cfg.end)
}

#[derive(Deserialize)]
struct MeteoResponse {
    hourly: MeteoHourly,
}

#[derive(Deserialize)]
struct MeteoHourly {
    time: Vec<i64>,
    temperature_2m: Vec<Option<f64>>,
    dew_point_2m: Vec<Option<f64>>,
}

/// Parses an archive payload (unixtime format) into rows inside
/// `[start, end)`.
pub fn parse_meteo(payload: &str, start: i64, end: i64) -> Result<HourlyFrame> {
    let resp: MeteoResponse =
        serde_json::from_str(payload).map_err(|e| IngestError::Schema(e.to_string()))?;
    let h = resp.hourly;
    if h.temperature_2m.len() != h.time.len() || h.dew_point_2m.len() != h.time.len() {
        return Err(IngestError::Schema("hourly arrays differ in length".into()));
    }
    if let Some(w) = h.time.windows(2).find(|w| w[1] - w[0] != HOUR) {
        return Err(IngestError::Schema(format!(
            "non-hourly grid between {} and {}",
            fmt_ts(w[0]),
            fmt_ts(w[1])
        )));
    }
    let mut ts = Vec::new();
    let (mut temp, mut dew) = (Vec::new(), Vec::new());
    for (i, &t) in h.time.iter().enumerate() {
        if t < start || t >= end {
            continue;
        }
        let missing = |what: &str| IngestError::Schema(format!("null {what} at {}", fmt_ts(t)));
        ts.push(t);
        temp.push(h.temperature_2m[i].ok_or_else(|| missing("temperature_2m"))?);
        dew.push(h.dew_point_2m[i].ok_or_else(|| missing("dew_point_2m"))?);
    }
    if ts.is_empty() {
        return Err(IngestError::RangeEmpty);
    }
    Ok(HourlyFrame::enforce_hourly_grid(
        ts,
        vec![
            (METEO_COLUMNS[0].into(), temp),
            (METEO_COLUMNS[1].into(), dew),
        ],
        METEO_COLUMNS[0],
    )?)
}

fn date(ts: i64) -> String {
    DateTime::<Utc>::from_timestamp(ts, 0)
        .map(|d| d.format("%Y-%m-%d").to_string())
        .unwrap_or_default()
}

pub fn fetch_meteo(cfg: &SourceConfig, transport: &dyn Transport) -> Result<HourlyFrame> {
    cfg.validate()?;
    let payload = cached_fetch("open-meteo-archive", cfg, transport, || {
        Ok(format!(
            "{METEO_URL}?latitude={}&longitude={}&start_date={}&end_date={}&hourly=temperature_2m,dew_point_2m&timeformat=unixtime&timezone=GMT",
            cfg.latitude,
            cfg.longitude,
            date(cfg.start),
            date(cfg.end - 1)
        ))
    })?;
    parse_meteo(&payload, cfg.start, cfg.end)
}

/// Fetches both providers concurrently and aligns them.
pub fn fetch_all(cfg: &SourceConfig, transport: &dyn Transport) -> Result<HourlyFrame> {
    let (air, meteo) = std::thread::scope(|s| {
        let air = s.spawn(|| fetch_air_pollution(cfg, transport));
        let meteo = s.spawn(|| fetch_meteo(cfg, transport));
        (
            air.join().expect("pollution fetch panicked"),
            meteo.join().expect("meteo fetch panicked"),
        )
    });
    merge_align(&[air?, meteo?])
}

/// Inner join on timestamps. Column order follows frame order and the
/// target comes from the first frame.
pub fn merge_align(frames: &[HourlyFrame]) -> Result<HourlyFrame> {
    let Some(first) = frames.first() else {
        return Err(IngestError::EmptyIntersection);
    };
    let mut seen = BTreeSet::new();
    for f in frames {
        for name in f.column_names() {
            if !seen.insert(name.as_str()) {
                return Err(IngestError::ColumnCollision(name.clone()));
            }
        }
    }
    let lo = frames
        .iter()
        .filter_map(HourlyFrame::first_timestamp)
        .max()
        .unwrap_or(0);
    let hi = frames
        .iter()
        .filter_map(HourlyFrame::last_timestamp)
        .min()
        .unwrap_or(-1);
    if hi < lo {
        return Err(IngestError::EmptyIntersection);
    }
    let ts: Vec<i64> = (0..=(hi - lo) / HOUR).map(|k| lo + k * HOUR).collect();
    let mut columns = Vec::new();
    for f in frames {
        let offset = ((lo - f.first_timestamp().unwrap_or(lo)) / HOUR) as usize;
        for (name, values) in f.columns() {
            columns.push((name.to_string(), values[offset..offset + ts.len()].to_vec()));
        }
    }
    Ok(HourlyFrame::enforce_hourly_grid(
        ts,
        columns,
        first.target_name(),
    )?)
}

/// Reads a `timestamp,<numeric columns...>` file. The target is `pm2_5`
/// when present, otherwise the first data column.
pub fn load_csv(path: &Path) -> Result<HourlyFrame> {
    load_csv_with_target(path, None)
}

pub fn load_csv_with_target(path: &Path, target: Option<&str>) -> Result<HourlyFrame> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text, target)
}

pub fn parse_csv(text: &str, target: Option<&str>) -> Result<HourlyFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| IngestError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.get(0).map(str::trim) != Some("timestamp") {
        return Err(IngestError::Parse {
            line: 1,
            message: "first column must be `timestamp`".into(),
        });
    }
    let names: Vec<String> = header
        .iter()
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    if names.is_empty() {
        return Err(IngestError::Parse {
            line: 1,
            message: "no data columns".into(),
        });
    }
    let mut ts = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IngestError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let t = rec
            .get(0)
            .and_then(parse_ts)
            .ok_or_else(|| IngestError::Parse {
                line,
                message: format!("bad timestamp `{}`", rec.get(0).unwrap_or("")),
            })?;
        ts.push(t);
        for (k, col) in cols.iter_mut().enumerate() {
            let cell = rec.get(k + 1).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| IngestError::Parse {
                line,
                message: format!("column `{}`: `{cell}` is not a number", names[k]),
            })?;
            col.push(v);
        }
    }
    let target = target.map(str::to_string).unwrap_or_else(|| {
        if names.iter().any(|n| n == DEFAULT_TARGET) {
            DEFAULT_TARGET.to_string()
        } else {
            names[0].clone()
        }
    });
    Ok(HourlyFrame::enforce_hourly_grid(
        ts,
        names.into_iter().zip(cols).collect(),
        &target,
    )?)
}

/// `timestamp,<columns in frame order>` with LF endings and shortest
/// round-trip float formatting.
pub fn frame_to_csv(frame: &HourlyFrame) -> String {
    let mut out = String::from("timestamp");
    for name in frame.column_names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let cols: Vec<&[f64]> = frame.columns().map(|(_, v)| v).collect();
    for (i, &t) in frame.timestamps().iter().enumerate() {
        out.push_str(&fmt_ts(t));
        for c in &cols {
            let _ = write!(out, ",{}", c[i]);
        }
        out.push('\n');
    }
    out
}

pub fn write_csv(frame: &HourlyFrame, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, frame_to_csv(frame))?;
    Ok(())
}
