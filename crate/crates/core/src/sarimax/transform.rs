//! Lag polynomials and the partial-autocorrelation reparameterization that
//! keeps AR parts stationary and MA parts invertible.

/// Coefficients `e_0..=e_K` of `(1 - B)^d (1 - B^s)^D`, with `e_0 = 1`.
pub fn diff_polynomial(d: usize, seasonal_d: usize, period: usize) -> Vec<f64> {
    let mut poly = vec![1.0];
    for _ in 0..d {
        poly = poly_mul(&poly, &[1.0, -1.0]);
    }
    let mut seasonal = vec![0.0; period + 1];
    seasonal[0] = 1.0;
    seasonal[period] = -1.0;
    for _ in 0..seasonal_d {
        poly = poly_mul(&poly, &seasonal);
    }
    poly
}

pub fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Full AR coefficients `a_k` such that
/// `(1 - sum phi_i B^i)(1 - sum Phi_j B^{js}) = 1 - sum a_k B^k`.
pub fn expand_ar(ar: &[f64], seasonal_ar: &[f64], period: usize) -> Vec<f64> {
    let mut ns = vec![1.0];
    ns.extend(ar.iter().map(|v| -v));
    let mut s = vec![0.0; seasonal_ar.len() * period + 1];
    s[0] = 1.0;
    for (j, v) in seasonal_ar.iter().enumerate() {
        s[(j + 1) * period] = -v;
    }
    poly_mul(&ns, &s)[1..].iter().map(|v| -v).collect()
}

/// Full MA coefficients `m_k` such that
/// `(1 + sum theta_i B^i)(1 + sum Theta_j B^{js}) = 1 + sum m_k B^k`.
pub fn expand_ma(ma: &[f64], seasonal_ma: &[f64], period: usize) -> Vec<f64> {
    let mut ns = vec![1.0];
    ns.extend_from_slice(ma);
    let mut s = vec![0.0; seasonal_ma.len() * period + 1];
    s[0] = 1.0;
    for (j, v) in seasonal_ma.iter().enumerate() {
        s[(j + 1) * period] = *v;
    }
    poly_mul(&ns, &s)[1..].to_vec()
}

/// Maps unconstrained reals to the coefficients of a stationary AR
/// polynomial `1 - sum c_i B^i` (partial autocorrelations via
/// `x / sqrt(1 + x^2)`, then Durbin-Levinson).
pub fn constrain_stationary(x: &[f64]) -> Vec<f64> {
    let pacf: Vec<f64> = x.iter().map(|v| v / (1.0 + v * v).sqrt()).collect();
    let mut coef: Vec<f64> = Vec::with_capacity(x.len());
    for (k, &r) in pacf.iter().enumerate() {
        let prev = coef.clone();
        for j in 0..k {
            coef[j] = prev[j] - r * prev[k - 1 - j];
        }
        coef.push(r);
    }
    coef
}

/// Inverse of [`constrain_stationary`]. Partial autocorrelations are
/// clipped just inside (-1, 1).
pub fn unconstrain_stationary(coef: &[f64]) -> Vec<f64> {
    let p = coef.len();
    let mut cur = coef.to_vec();
    let mut pacf = vec![0.0; p];
    for k in (0..p).rev() {
        let r = cur[k].clamp(-1.0 + 1e-9, 1.0 - 1e-9);
        pacf[k] = r;
        let denom = 1.0 - r * r;
        let prev: Vec<f64> = (0..k)
            .map(|j| (cur[j] + r * cur[k - 1 - j]) / denom)
            .collect();
        cur = prev;
    }
    pacf.iter().map(|r| r / (1.0 - r * r).sqrt()).collect()
}

/// Spectral radius of the companion matrix of `1 - sum c_i B^i`. The
/// polynomial's roots lie outside the unit circle iff this is below 1.
pub fn companion_radius(coef: &[f64]) -> f64 {
    let p = coef.len();
    if p == 0 {
        return 0.0;
    }
    let mut m = nalgebra::DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        m[(0, j)] = coef[j];
    }
    for i in 1..p {
        m[(i, i - 1)] = 1.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diff_polynomial_default_order() {
        let p = diff_polynomial(1, 1, 24);
        assert_eq!(p.len(), 26);
        assert_eq!((p[0], p[1], p[24], p[25]), (1.0, -1.0, -1.0, 1.0));
        assert_eq!(p.iter().filter(|v| **v != 0.0).count(), 4);
    }

    #[test]
    fn expansion_multiplies_seasonal_factor() {
        let a = expand_ar(&[0.5], &[0.3], 4);
        // (1 - .5B)(1 - .3B^4) = 1 - .5B - .3B^4 + .15B^5
        assert_eq!(a, vec![0.5, 0.0, 0.0, 0.3, -0.15]);
        let m = expand_ma(&[0.2], &[0.4], 2);
        assert_eq!(m, vec![0.2, 0.4, 0.08000000000000002]);
    }

    #[test]
    fn transform_roundtrip_and_stationarity() {
        for x in [vec![0.3], vec![-2.0, 1.5], vec![4.0, -3.0, 0.7]] {
            let c = constrain_stationary(&x);
            assert!(companion_radius(&c) < 1.0);
            let back = unconstrain_stationary(&c);
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-8, "{x:?} -> {back:?}");
            }
        }
    }
}
