#![allow(dead_code)]

use aethercast::series::{HourlyFrame, HOUR};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normals(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
    let d = Normal::new(0.0, sd).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

/// ARMA(p, q) draw using full lag polynomials `v_t = sum a_k v_{t-k} +
/// e_t + sum m_k e_{t-k}` with a long burn-in.
pub fn simulate_arma(
    rng: &mut ChaCha8Rng,
    ar: &[f64],
    ma: &[f64],
    sigma: f64,
    n: usize,
) -> Vec<f64> {
    let burn = 2000;
    let e = normals(rng, n + burn, sigma);
    let mut v = vec![0.0; n + burn];
    for t in 0..n + burn {
        let mut x = e[t];
        for (k, a) in ar.iter().enumerate() {
            if t > k {
                x += a * v[t - k - 1];
            }
        }
        for (k, m) in ma.iter().enumerate() {
            if t > k {
                x += m * e[t - k - 1];
            }
        }
        v[t] = x;
    }
    v[burn..].to_vec()
}

/// Epoch start aligned to a Monday 00:00 UTC.
pub const T0: i64 = 1_609_718_400; // 2021-01-04T00:00:00Z

pub fn frame(columns: Vec<(&str, Vec<f64>)>) -> HourlyFrame {
    let n = columns[0].1.len();
    HourlyFrame::enforce_hourly_grid(
        (0..n as i64).map(|i| T0 + i * HOUR).collect(),
        columns
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        "pm2_5",
    )
    .unwrap()
}

/// Linear trend + daily and weekly sinusoids + Gaussian noise, with an
/// optional level shift from row `shift_at` onward.
pub fn drift_series(seed: u64, n: usize, noise_sd: f64, shift_at: usize, shift: f64) -> Vec<f64> {
    let mut r = rng(seed);
    let noise = normals(&mut r, n, noise_sd);
    (0..n)
        .map(|i| {
            let t = i as f64;
            let mut y = 80.0
                + 0.002 * t
                + 15.0 * (2.0 * std::f64::consts::PI * t / 24.0).sin()
                + 10.0 * (2.0 * std::f64::consts::PI * t / 168.0).cos()
                + noise[i];
            if i >= shift_at {
                y += shift;
            }
            y
        })
        .collect()
}
