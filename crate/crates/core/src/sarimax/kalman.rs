//! Harvey state-space form of a stationary ARMA process and an exact
//! Kalman filter over it.
//!
//! State: `alpha_{t+1} = T alpha_t + R eps_{t+1}`, observation `v_t =
//! alpha_{t,0}` with no measurement noise. `T` has the full AR coefficients
//! in its first column and ones on the superdiagonal; `R = [1, m_1, ...]`.
//! The filter exploits that companion structure, so one step costs O(r^2).

use nalgebra::DMatrix;

use super::SarimaxError;

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    /// First column of the transition matrix, zero padded to `dim`.
    pub ar: Vec<f64>,
    /// State innovation loading `R`, length `dim`.
    pub loading: Vec<f64>,
    pub sigma2: f64,
    /// Stationary covariance of the state for unit innovation variance,
    /// row major `dim x dim`.
    pub initial_cov: Vec<f64>,
    pub dim: usize,
}

impl StateSpaceModel {
    /// Builds the model from full (already expanded) AR and MA coefficients.
    pub fn arma(ar: &[f64], ma: &[f64], sigma2: f64) -> Result<Self, SarimaxError> {
        let dim = ar.len().max(ma.len() + 1);
        let mut t_col = vec![0.0; dim];
        t_col[..ar.len()].copy_from_slice(ar);
        let mut loading = vec![0.0; dim];
        loading[0] = 1.0;
        loading[1..=ma.len()].copy_from_slice(ma);
        let initial_cov = stationary_cov(&t_col, &loading)?;
        Ok(Self {
            ar: t_col,
            loading,
            sigma2,
            initial_cov,
            dim,
        })
    }

    pub fn transition_matrix(&self) -> DMatrix<f64> {
        let r = self.dim;
        let mut t = DMatrix::zeros(r, r);
        for i in 0..r {
            t[(i, 0)] = self.ar[i];
            if i + 1 < r {
                t[(i, i + 1)] = 1.0;
            }
        }
        t
    }

    /// `T a` in O(r).
    pub fn advance(&self, a: &mut [f64]) {
        let a0 = a[0];
        for i in 0..self.dim {
            let next = if i + 1 < self.dim { a[i + 1] } else { 0.0 };
            a[i] = self.ar[i] * a0 + next;
        }
    }
}

/// Solves `P = T P T' + R R'` by the doubling recursion.
fn stationary_cov(t_col: &[f64], loading: &[f64]) -> Result<Vec<f64>, SarimaxError> {
    let r = t_col.len();
    let mut a = DMatrix::<f64>::zeros(r, r);
    for i in 0..r {
        a[(i, 0)] = t_col[i];
        if i + 1 < r {
            a[(i, i + 1)] = 1.0;
        }
    }
    let rv = nalgebra::DVector::from_column_slice(loading);
    let mut p = &rv * rv.transpose();
    for _ in 0..200 {
        let term = &a * &p * a.transpose();
        let scale = p.amax().max(1.0);
        p += &term;
        if !p.iter().all(|v| v.is_finite()) {
            return Err(SarimaxError::NumericalDivergence(
                "stationary covariance diverged".into(),
            ));
        }
        if term.amax() <= 1e-16 * scale {
            let mut out = vec![0.0; r * r];
            for i in 0..r {
                for j in 0..r {
                    out[i * r + j] = 0.5 * (p[(i, j)] + p[(j, i)]);
                }
            }
            return Ok(out);
        }
        a = &a * &a;
    }
    Err(SarimaxError::NumericalDivergence(
        "stationary covariance did not converge (AR part too close to unit root)".into(),
    ))
}

/// Output of filtering several data columns through one model.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    /// `innovations[c][t]` for column `c`.
    pub innovations: Vec<Vec<f64>>,
    /// Innovation variances `F_t` for unit `sigma2`.
    pub variances: Vec<f64>,
    /// Predicted state `a_{n+1|n}` per column.
    pub next_states: Vec<Vec<f64>>,
    /// Step at which the gain stopped changing, if it did.
    pub steady_from: Option<usize>,
}

/// Runs the filter on every column at once; gains do not depend on data,
/// so each column's innovations are the exact one-step prediction errors.
/// Variances are reported for unit innovation variance.
pub fn filter(ss: &StateSpaceModel, columns: &[&[f64]]) -> Result<FilterOutput, SarimaxError> {
    let r = ss.dim;
    let n = columns.first().map_or(0, |c| c.len());
    let mut p = ss.initial_cov.clone();
    let mut states = vec![vec![0.0; r]; columns.len()];
    let mut innovations = vec![Vec::with_capacity(n); columns.len()];
    let mut variances = Vec::with_capacity(n);
    let mut tp = vec![0.0; r * r];
    let mut next = vec![0.0; r * r];
    let mut gain = vec![0.0; r];
    let mut steady: Option<usize> = None;
    let mut f_steady = 0.0;

    for t in 0..n {
        let f = if steady.is_some() { f_steady } else { p[0] };
        if !(f > 1e-300) || !f.is_finite() {
            return Err(SarimaxError::NumericalDivergence(format!(
                "innovation variance {f} at step {t}"
            )));
        }
        if steady.is_none() {
            for i in 0..r {
                gain[i] = p[i * r] / f;
            }
        }
        for (c, col) in columns.iter().enumerate() {
            let a = &mut states[c];
            let u = col[t] - a[0];
            innovations[c].push(u);
            for i in 0..r {
                a[i] += gain[i] * u;
            }
            ss.advance(a);
        }
        variances.push(f);
        if steady.is_some() {
            continue;
        }

        // filtered covariance: P - P e0 e0' P / F
        for i in 0..r {
            let pi0 = p[i * r];
            for j in 0..r {
                tp[i * r + j] = p[i * r + j] - pi0 * p[j * r] / f;
            }
        }
        // M = T Pf, then T M' = T Pf T'
        let mut m = vec![0.0; r * r];
        for i in 0..r {
            for j in 0..r {
                let below = if i + 1 < r { tp[(i + 1) * r + j] } else { 0.0 };
                m[i * r + j] = ss.ar[i] * tp[j] + below;
            }
        }
        for i in 0..r {
            for j in 0..r {
                let below = if i + 1 < r { m[j * r + i + 1] } else { 0.0 };
                next[i * r + j] = ss.ar[i] * m[j * r] + below + ss.loading[i] * ss.loading[j];
            }
        }
        let mut diff = 0.0f64;
        let mut scale = 1.0f64;
        for k in 0..r * r {
            diff = diff.max((next[k] - p[k]).abs());
            scale = scale.max(next[k].abs());
        }
        std::mem::swap(&mut p, &mut next);
        if diff <= 1e-14 * scale {
            steady = Some(t + 1);
            f_steady = p[0];
            for i in 0..r {
                gain[i] = p[i * r] / f_steady;
            }
        }
    }
    Ok(FilterOutput {
        innovations,
        variances,
        next_states: states,
        steady_from: steady,
    })
}

/// Exact Gaussian log-likelihood by prediction-error decomposition.
pub fn kalman_loglik(ss: &StateSpaceModel, y: &[f64]) -> Result<f64, SarimaxError> {
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(SarimaxError::NonFiniteInput(i));
    }
    let out = filter(ss, &[y])?;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    Ok(out
        .variances
        .iter()
        .zip(&out.innovations[0])
        .map(|(f, u)| {
            let fs = f * ss.sigma2;
            -0.5 * (ln2pi + fs.ln() + u * u / fs)
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_noise_closed_form() {
        let ss = StateSpaceModel::arma(&[], &[], 1.0).unwrap();
        let y: Vec<f64> = (0..50).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let ll = kalman_loglik(&ss, &y).unwrap();
        let expect =
            -25.0 * (2.0 * std::f64::consts::PI).ln() - 0.5 * y.iter().map(|v| v * v).sum::<f64>();
        assert!((ll - expect).abs() < 1e-12);
    }

    #[test]
    fn ar1_initial_variance() {
        let ss = StateSpaceModel::arma(&[0.6], &[], 1.0).unwrap();
        assert!((ss.initial_cov[0] - 1.0 / (1.0 - 0.36)).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_residual_is_small() {
        let ss = StateSpaceModel::arma(&[0.5, 0.0, 0.2, -0.1], &[0.3, 0.0, 0.4], 1.0).unwrap();
        let r = ss.dim;
        let t = ss.transition_matrix();
        let p = DMatrix::from_row_slice(r, r, &ss.initial_cov);
        let rv = nalgebra::DVector::from_column_slice(&ss.loading);
        let resid = &t * &p * t.transpose() + &rv * rv.transpose() - &p;
        assert!(resid.amax() < 1e-12);
    }

    #[test]
    fn loglik_is_deterministic() {
        let ss = StateSpaceModel::arma(&[0.5], &[0.3], 1.0).unwrap();
        let y: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7).sin()).collect();
        assert_eq!(
            kalman_loglik(&ss, &y).unwrap().to_bits(),
            kalman_loglik(&ss, &y).unwrap().to_bits()
        );
    }
}
