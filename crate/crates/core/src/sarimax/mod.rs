//! SARIMAX as regression with seasonal ARIMA errors.
//!
//! After differencing target and regressors with `(1-B)^d (1-B^s)^D`, the
//! residual `w - c - z beta` is a stationary ARMA process. Its exact
//! Gaussian likelihood comes from the Kalman filter in [`kalman`]. The
//! regression coefficients and the innovation variance are concentrated
//! out, so the numerical search only runs over the AR/MA parameters, in an
//! unconstrained space that guarantees stationarity and invertibility.
//!
//! With differencing enabled the intercept acts on the differenced series
//! (a drift term).

pub mod kalman;
pub mod transform;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim::{self, OptimOptions};
pub use kalman::{filter, kalman_loglik, FilterOutput, StateSpaceModel};
use transform::{
    constrain_stationary, diff_polynomial, expand_ar, expand_ma, unconstrain_stationary,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SarimaxError {
    #[error("series too short: need at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("numerical divergence: {0}")]
    NumericalDivergence(String),
    #[error("non-finite input at index {0}")]
    NonFiniteInput(usize),
    #[error("objective is not finite at the starting point")]
    NonFiniteObjective,
    #[error("optimizer failed to find a finite optimum")]
    OptimizerFailure,
    #[error("regression block is singular (collinear or constant regressors)")]
    SingularRegression,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type Result<T, E = SarimaxError> = std::result::Result<T, E>;

/// `(p, d, q) x (P, D, Q, s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SarimaxOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub seasonal_p: usize,
    pub seasonal_d: usize,
    pub seasonal_q: usize,
    pub period: usize,
}

impl Default for SarimaxOrder {
    fn default() -> Self {
        Self::new((1, 1, 1), (1, 1, 1, 24))
    }
}

impl SarimaxOrder {
    pub fn new(order: (usize, usize, usize), seasonal: (usize, usize, usize, usize)) -> Self {
        Self {
            p: order.0,
            d: order.1,
            q: order.2,
            seasonal_p: seasonal.0,
            seasonal_d: seasonal.1,
            seasonal_q: seasonal.2,
            period: seasonal.3.max(1),
        }
    }

    /// Observations consumed by differencing.
    pub fn diff_len(&self) -> usize {
        self.d + self.seasonal_d * self.period
    }

    pub fn state_dim(&self) -> usize {
        let ar = self.p + self.seasonal_p * self.period;
        let ma = self.q + self.seasonal_q * self.period;
        ar.max(ma + 1)
    }

    fn n_arma(&self) -> usize {
        self.p + self.q + self.seasonal_p + self.seasonal_q
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SarimaxConfig {
    pub order: SarimaxOrder,
    pub intercept: bool,
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl Default for SarimaxConfig {
    fn default() -> Self {
        Self {
            order: SarimaxOrder::default(),
            intercept: true,
            max_iter: 500,
            rel_tol: 1e-8,
        }
    }
}

/// Fitted coefficients. AR coefficients follow `1 - sum phi B^i`, MA
/// coefficients follow `1 + sum theta B^i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SarimaxParams {
    pub order: SarimaxOrder,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub seasonal_ar: Vec<f64>,
    pub seasonal_ma: Vec<f64>,
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub sigma2: f64,
    pub loglik: f64,
    pub n_obs: usize,
}

impl SarimaxParams {
    pub fn state_space(&self) -> Result<StateSpaceModel> {
        let p = self.order.period;
        StateSpaceModel::arma(
            &expand_ar(&self.ar, &self.seasonal_ar, p),
            &expand_ma(&self.ma, &self.seasonal_ma, p),
            self.sigma2,
        )
    }

    /// AR/MA parameters mapped back to the optimizer's unconstrained space.
    pub fn unconstrained(&self) -> Vec<f64> {
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
        let mut x = unconstrain_stationary(&self.ar);
        x.extend(unconstrain_stationary(&neg(&self.ma)));
        x.extend(unconstrain_stationary(&self.seasonal_ar));
        x.extend(unconstrain_stationary(&neg(&self.seasonal_ma)));
        x
    }
}

struct ArmaParts {
    ar: Vec<f64>,
    ma: Vec<f64>,
    seasonal_ar: Vec<f64>,
    seasonal_ma: Vec<f64>,
}

fn split_unconstrained(order: &SarimaxOrder, x: &[f64]) -> ArmaParts {
    let (p, q, sp, sq) = (order.p, order.q, order.seasonal_p, order.seasonal_q);
    let neg = |v: Vec<f64>| v.into_iter().map(|c| -c).collect::<Vec<_>>();
    ArmaParts {
        ar: constrain_stationary(&x[..p]),
        ma: neg(constrain_stationary(&x[p..p + q])),
        seasonal_ar: constrain_stationary(&x[p + q..p + q + sp]),
        seasonal_ma: neg(constrain_stationary(&x[p + q + sp..p + q + sp + sq])),
    }
}

/// Applies `(1-B)^d (1-B^s)^D`; output is shorter by `d + D s`.
pub fn difference(y: &[f64], d: usize, seasonal_d: usize, period: usize) -> Result<Vec<f64>> {
    let poly = diff_polynomial(d, seasonal_d, period);
    let k = poly.len() - 1;
    if y.len() <= k {
        return Err(SarimaxError::TooShort {
            needed: k + 1,
            got: y.len(),
        });
    }
    Ok((k..y.len())
        .map(|t| poly.iter().enumerate().map(|(j, c)| c * y[t - j]).sum())
        .collect())
}

/// Differenced target plus differenced regression columns (intercept first
/// when enabled).
struct Prepared {
    w: Vec<f64>,
    regressors: Vec<Vec<f64>>,
}

fn prepare(y: &[f64], exog: &[&[f64]], cfg: &SarimaxConfig) -> Result<Prepared> {
    let o = &cfg.order;
    for col in exog {
        if col.len() != y.len() {
            return Err(SarimaxError::DimensionMismatch(format!(
                "exogenous column has {} rows, target has {}",
                col.len(),
                y.len()
            )));
        }
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(SarimaxError::NonFiniteInput(i));
    }
    let w = difference(y, o.d, o.seasonal_d, o.period)?;
    let mut regressors = Vec::with_capacity(exog.len() + 1);
    if cfg.intercept {
        regressors.push(vec![1.0; w.len()]);
    }
    for col in exog {
        regressors.push(difference(col, o.d, o.seasonal_d, o.period)?);
    }
    Ok(Prepared { w, regressors })
}

/// Regression coefficients, concentrated innovation variance and
/// concentrated log-likelihood for one set of ARMA parameters.
struct Concentrated {
    coef: Vec<f64>,
    sigma2: f64,
    loglik: f64,
}

fn concentrate(ss: &StateSpaceModel, data: &Prepared) -> Result<Concentrated> {
    let mut cols: Vec<&[f64]> = Vec::with_capacity(data.regressors.len() + 1);
    cols.push(&data.w);
    cols.extend(data.regressors.iter().map(Vec::as_slice));
    let out = filter(ss, &cols)?;
    let n = data.w.len();
    let k = data.regressors.len();
    let f = &out.variances;

    let coef = if k == 0 {
        Vec::new()
    } else {
        let mut a = DMatrix::<f64>::zeros(k, k);
        let mut b = DVector::<f64>::zeros(k);
        for t in 0..n {
            let wt = 1.0 / f[t];
            for i in 0..k {
                let ui = out.innovations[i + 1][t] * wt;
                b[i] += ui * out.innovations[0][t];
                for j in 0..=i {
                    a[(i, j)] += ui * out.innovations[j + 1][t];
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                a[(j, i)] = a[(i, j)];
            }
        }
        let chol = a.cholesky().ok_or(SarimaxError::SingularRegression)?;
        chol.solve(&b).iter().copied().collect()
    };

    let mut ssq = 0.0;
    let mut logdet = 0.0;
    for t in 0..n {
        let mut e = out.innovations[0][t];
        for (i, c) in coef.iter().enumerate() {
            e -= c * out.innovations[i + 1][t];
        }
        ssq += e * e / f[t];
        logdet += f[t].ln();
    }
    let sigma2 = ssq / n as f64;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let loglik =
        -0.5 * n as f64 * (ln2pi + sigma2.max(f64::MIN_POSITIVE).ln() + 1.0) - 0.5 * logdet;
    Ok(Concentrated {
        coef,
        sigma2,
        loglik,
    })
}

/// Maximum-likelihood fit. `warm_start` seeds the ARMA search (its
/// regression coefficients are re-estimated regardless).
pub fn fit_sarimax(
    y: &[f64],
    exog: &[&[f64]],
    cfg: &SarimaxConfig,
    warm_start: Option<&SarimaxParams>,
) -> Result<SarimaxParams> {
    let o = cfg.order;
    let needed = 10 * (o.diff_len() + o.state_dim());
    if y.len() < needed {
        return Err(SarimaxError::TooShort {
            needed,
            got: y.len(),
        });
    }
    let data = prepare(y, exog, cfg)?;
    let objective = |x: &[f64]| -> f64 {
        let parts = split_unconstrained(&o, x);
        let ss = match StateSpaceModel::arma(
            &expand_ar(&parts.ar, &parts.seasonal_ar, o.period),
            &expand_ma(&parts.ma, &parts.seasonal_ma, o.period),
            1.0,
        ) {
            Ok(ss) => ss,
            Err(_) => return f64::NAN,
        };
        match concentrate(&ss, &data) {
            Ok(c) => -c.loglik / data.w.len() as f64,
            Err(_) => f64::NAN,
        }
    };

    let x0 = match warm_start {
        Some(p) if p.order == o => p.unconstrained(),
        _ => vec![0.0; o.n_arma()],
    };
    if !objective(&x0).is_finite() {
        return Err(SarimaxError::NonFiniteObjective);
    }
    let opts = OptimOptions {
        max_iter: cfg.max_iter,
        rel_tol: cfg.rel_tol,
        initial_step: 0.5,
    };
    let best = if x0.is_empty() {
        x0
    } else {
        let res = optim::minimize(objective, &x0, &opts);
        if !res.fx.is_finite() {
            return Err(SarimaxError::OptimizerFailure);
        }
        res.x
    };

    let parts = split_unconstrained(&o, &best);
    let ss = StateSpaceModel::arma(
        &expand_ar(&parts.ar, &parts.seasonal_ar, o.period),
        &expand_ma(&parts.ma, &parts.seasonal_ma, o.period),
        1.0,
    )?;
    let conc = concentrate(&ss, &data)?;
    let (intercept, beta) = if cfg.intercept {
        (conc.coef[0], conc.coef[1..].to_vec())
    } else {
        (0.0, conc.coef.clone())
    };
    Ok(SarimaxParams {
        order: o,
        ar: parts.ar,
        ma: parts.ma,
        seasonal_ar: parts.seasonal_ar,
        seasonal_ma: parts.seasonal_ma,
        beta,
        intercept,
        sigma2: conc.sigma2,
        loglik: conc.loglik,
        n_obs: data.w.len(),
    })
}

/// Mean forecast of `future_exog[0].len()` steps (or `horizon` when there
/// are no regressors), conditioned on the full history.
pub fn forecast_sarimax(
    params: &SarimaxParams,
    history_y: &[f64],
    history_exog: &[&[f64]],
    future_exog: &[&[f64]],
    horizon: usize,
) -> Result<Vec<f64>> {
    let o = params.order;
    if history_exog.len() != params.beta.len() || future_exog.len() != params.beta.len() {
        return Err(SarimaxError::DimensionMismatch(format!(
            "model has {} regressors, got {} historical and {} future columns",
            params.beta.len(),
            history_exog.len(),
            future_exog.len()
        )));
    }
    if let Some(col) = future_exog.iter().find(|c| c.len() != horizon) {
        return Err(SarimaxError::DimensionMismatch(format!(
            "future regressor has {} rows, horizon is {horizon}",
            col.len()
        )));
    }
    let cfg = SarimaxConfig {
        order: o,
        intercept: true,
        ..Default::default()
    };
    let data = prepare(history_y, history_exog, &cfg)?;
    let resid: Vec<f64> = (0..data.w.len())
        .map(|t| {
            let mut v = data.w[t] - params.intercept;
            for (j, b) in params.beta.iter().enumerate() {
                v -= b * data.regressors[j + 1][t];
            }
            v
        })
        .collect();
    let ss = params.state_space()?;
    let out = filter(&ss, &[&resid])?;
    let mut state = out.next_states.into_iter().next().expect("one column");

    // differenced future regressors need the trailing history
    let future_diff: Vec<Vec<f64>> = history_exog
        .iter()
        .zip(future_exog)
        .map(|(h, f)| {
            let mut all = h.to_vec();
            all.extend_from_slice(f);
            let d = difference(&all, o.d, o.seasonal_d, o.period)?;
            Ok(d[d.len() - horizon..].to_vec())
        })
        .collect::<Result<_>>()?;

    let poly = diff_polynomial(o.d, o.seasonal_d, o.period);
    let mut path = history_y.to_vec();
    let mut out_fc = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let mut w = params.intercept + state[0];
        for (j, b) in params.beta.iter().enumerate() {
            w += b * future_diff[j][h];
        }
        ss.advance(&mut state);
        let t = path.len();
        let y = w - (1..poly.len()).map(|k| poly[k] * path[t - k]).sum::<f64>();
        path.push(y);
        out_fc.push(y);
    }
    Ok(out_fc)
}
