//! Filter-based feature relevance: Pearson correlation, plug-in mutual
//! information on equal-mass bins, and greedy mRMR selection.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::preprocess::{mean_std, quantile_sorted};
use crate::series::HourlyFrame;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatselError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations")]
    TooShort,
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("requested {k} features but only {available} candidates")]
    TooManyFeatures { k: usize, available: usize },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("bin count must be at least 1")]
    NoBins,
}

pub type Result<T, E = FeatselError> = std::result::Result<T, E>;

/// Pearson correlation, clamped to [-1, 1].
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(FeatselError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(FeatselError::TooShort);
    }
    let (mx, sx) = mean_std(x);
    let (my, sy) = mean_std(y);
    if !(sx > 0.0 && sy > 0.0) {
        return Err(FeatselError::ZeroVariance);
    }
    let cov = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / x.len() as f64;
    Ok((cov / (sx * sy)).clamp(-1.0, 1.0))
}

/// Interior equal-mass bin edges for one variable.
#[derive(Debug, Clone, PartialEq)]
pub struct BinEdges {
    edges: Vec<f64>,
}

impl BinEdges {
    /// Quantile edges at `k / bins`, deduplicated so ties collapse bins.
    pub fn fit(values: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(FeatselError::NoBins);
        }
        if values.is_empty() {
            return Err(FeatselError::TooShort);
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut edges: Vec<f64> = (1..bins)
            .map(|k| quantile_sorted(&sorted, k as f64 / bins as f64))
            .collect();
        edges.dedup();
        // An edge at the minimum would leave bin 0 empty forever.
        edges.retain(|&e| e > sorted[0]);
        Ok(Self { edges })
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Bin index = number of edges `<= v`.
    pub fn bin(&self, v: f64) -> usize {
        self.edges.partition_point(|&e| e <= v)
    }

    pub fn codes(&self, values: &[f64]) -> Vec<usize> {
        values.iter().map(|&v| self.bin(v)).collect()
    }
}

/// Per-column quantile discretization fitted on a training frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretizer {
    pub bin_count: usize,
    pub edges: BTreeMap<String, BinEdges>,
}

impl Discretizer {
    pub fn fit(train: &HourlyFrame, columns: &[String], bin_count: usize) -> Result<Self> {
        let mut edges = BTreeMap::new();
        for name in columns {
            let col = train
                .column(name)
                .ok_or_else(|| FeatselError::MissingColumn(name.clone()))?;
            edges.insert(name.clone(), BinEdges::fit(col, bin_count)?);
        }
        Ok(Self { bin_count, edges })
    }

    pub fn codes(&self, column: &str, values: &[f64]) -> Result<Vec<usize>> {
        self.edges
            .get(column)
            .map(|e| e.codes(values))
            .ok_or_else(|| FeatselError::MissingColumn(column.to_string()))
    }

    pub fn n_bins(&self, column: &str) -> usize {
        self.edges.get(column).map_or(1, BinEdges::n_bins)
    }
}

/// Plug-in MI (nats) from two discrete code vectors.
pub fn mutual_info_codes(a: &[usize], na: usize, b: &[usize], nb: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(FeatselError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(FeatselError::TooShort);
    }
    let n = a.len() as f64;
    let mut joint = vec![0usize; na * nb];
    let mut pa = vec![0usize; na];
    let mut pb = vec![0usize; nb];
    for (&i, &j) in a.iter().zip(b) {
        joint[i * nb + j] += 1;
        pa[i] += 1;
        pb[j] += 1;
    }
    let mut mi = 0.0;
    for i in 0..na {
        for j in 0..nb {
            let c = joint[i * nb + j];
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / n;
            mi += pxy * (c as f64 * n / (pa[i] as f64 * pb[j] as f64)).ln();
        }
    }
    Ok(mi.max(0.0))
}

/// MI between two series, each binned into `bins` equal-mass bins fitted
/// on the given values.
pub fn mutual_info(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    if x.len() != y.len() {
        return Err(FeatselError::LengthMismatch(x.len(), y.len()));
    }
    let ex = BinEdges::fit(x, bins)?;
    let ey = BinEdges::fit(y, bins)?;
    mutual_info_codes(&ex.codes(x), ex.n_bins(), &ey.codes(y), ey.n_bins())
}

/// Relevance of each candidate to the target plus the mRMR order.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceReport {
    pub pearson: BTreeMap<String, f64>,
    pub mi: BTreeMap<String, f64>,
    pub ranking: Vec<String>,
}

impl RelevanceReport {
    /// `feature,pearson,mi,rank` with rank 1-based in mRMR order; features
    /// not selected get an empty rank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,pearson,mi,rank\n");
        let mut names: Vec<&String> = self.ranking.iter().collect();
        names.extend(self.mi.keys().filter(|k| !self.ranking.contains(k)));
        for name in names {
            let rank = self
                .ranking
                .iter()
                .position(|r| r == name)
                .map(|r| (r + 1).to_string())
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{name},{},{},{rank}",
                self.pearson.get(name).copied().unwrap_or(f64::NAN),
                self.mi.get(name).copied().unwrap_or(f64::NAN)
            );
        }
        out
    }
}

/// Greedy mRMR: at each step pick the candidate maximizing
/// `I(f;y) - mean_{s in S} I(f;s)`. Ties go to the lexicographically
/// smaller column name.
pub fn mrmr_select(
    train: &HourlyFrame,
    candidates: &[String],
    k: usize,
    d: &Discretizer,
) -> Result<Vec<String>> {
    if k > candidates.len() {
        return Err(FeatselError::TooManyFeatures {
            k,
            available: candidates.len(),
        });
    }
    let target = train.target_name();
    let y = d.codes(target, train.target())?;
    let ny = d.n_bins(target);
    let mut pool: Vec<String> = candidates
        .iter()
        .filter(|c| c.as_str() != target)
        .cloned()
        .collect();
    pool.sort();
    pool.dedup();

    let mut codes = BTreeMap::new();
    let mut relevance = BTreeMap::new();
    for c in &pool {
        let col = train
            .column(c)
            .ok_or_else(|| FeatselError::MissingColumn(c.clone()))?;
        let cc = d.codes(c, col)?;
        relevance.insert(c.clone(), mutual_info_codes(&cc, d.n_bins(c), &y, ny)?);
        codes.insert(c.clone(), cc);
    }

    let mut selected: Vec<String> = Vec::with_capacity(k);
    let mut redundancy: BTreeMap<String, f64> = pool.iter().map(|c| (c.clone(), 0.0)).collect();
    while selected.len() < k {
        let mut best: Option<(&String, f64)> = None;
        for c in pool.iter().filter(|c| !selected.contains(c)) {
            let red = if selected.is_empty() {
                0.0
            } else {
                redundancy[c] / selected.len() as f64
            };
            let score = relevance[c] - red;
            // `pool` is sorted, so strict `>` keeps the earliest name on ties.
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((c, score));
            }
        }
        let Some((pick, _)) = best else { break };
        let pick = pick.clone();
        for c in pool.iter().filter(|c| !selected.contains(c) && **c != pick) {
            let r = mutual_info_codes(&codes[c], d.n_bins(c), &codes[&pick], d.n_bins(&pick))?;
            *redundancy.get_mut(c).expect("candidate tracked") += r;
        }
        selected.push(pick);
    }
    Ok(selected)
}

/// Computes Pearson and MI relevance for every candidate and the full mRMR
/// order, all on the training frame only.
pub fn relevance_report(
    train: &HourlyFrame,
    candidates: &[String],
    bins: usize,
) -> Result<RelevanceReport> {
    let target = train.target_name().to_string();
    let mut cols: Vec<String> = candidates
        .iter()
        .filter(|c| **c != target)
        .cloned()
        .collect();
    cols.sort();
    cols.dedup();
    let mut all = cols.clone();
    all.push(target.clone());
    let d = Discretizer::fit(train, &all, bins)?;
    let y = train.target();
    let yc = d.codes(&target, y)?;
    let mut pearson_map = BTreeMap::new();
    let mut mi = BTreeMap::new();
    for c in &cols {
        let x = train.column(c).expect("checked by discretizer fit");
        // A constant candidate carries no linear signal.
        pearson_map.insert(c.clone(), pearson(x, y).unwrap_or(0.0));
        mi.insert(
            c.clone(),
            mutual_info_codes(&d.codes(c, x)?, d.n_bins(c), &yc, d.n_bins(&target))?,
        );
    }
    let ranking = mrmr_select(train, &cols, cols.len(), &d)?;
    Ok(RelevanceReport {
        pearson: pearson_map,
        mi,
        ranking,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_self_and_negation() {
        let x = [1.0, 3.0, 2.0, 7.0, 5.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn pearson_errors() {
        assert_eq!(
            pearson(&[1.0, 2.0], &[1.0]),
            Err(FeatselError::LengthMismatch(2, 1))
        );
        assert_eq!(
            pearson(&[1.0, 1.0], &[1.0, 2.0]),
            Err(FeatselError::ZeroVariance)
        );
    }

    #[test]
    fn mi_of_identity_is_log_bins() {
        let x: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.618).fract()).collect();
        let mi = mutual_info(&x, &x, 10).unwrap();
        assert!((mi - 10f64.ln()).abs() < 1e-12, "{mi}");
    }

    #[test]
    fn mi_symmetric() {
        let x: Vec<f64> = (0..500).map(|i| (i as f64 * 0.31).sin()).collect();
        let y: Vec<f64> = (0..500).map(|i| (i as f64 * 0.17).cos() + x[i]).collect();
        assert_eq!(
            mutual_info(&x, &y, 10).unwrap(),
            mutual_info(&y, &x, 10).unwrap()
        );
    }

    #[test]
    fn bin_edges_dedupe_ties() {
        let e = BinEdges::fit(&[1.0, 1.0, 1.0, 1.0, 2.0], 4).unwrap();
        assert!(e.edges().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(e.bin(1.0), 0);
    }
}
