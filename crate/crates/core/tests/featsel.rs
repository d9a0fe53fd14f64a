mod common;

use aethercast::featsel::{
    mrmr_select, mutual_info, mutual_info_codes, pearson, relevance_report, Discretizer,
};
use common::{frame, normals, rng};
use proptest::prelude::*;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// Population MI of a standard bivariate normal after cutting both axes at
/// their deciles, from exact cell probabilities (Simpson over x).
fn discretized_gaussian_mi(rho: f64, bins: usize) -> f64 {
    let z = Normal::new(0.0, 1.0).unwrap();
    let s = (1.0 - rho * rho).sqrt();
    let mut cuts = vec![-9.0];
    cuts.extend((1..bins).map(|k| z.inverse_cdf(k as f64 / bins as f64)));
    cuts.push(9.0);
    let m = 1.0 / bins as f64;
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let f = |x: f64| {
                z.pdf(x) * (z.cdf((cuts[j + 1] - rho * x) / s) - z.cdf((cuts[j] - rho * x) / s))
            };
            let (a, b) = (cuts[i], cuts[i + 1]);
            let steps = 2000;
            let h = (b - a) / steps as f64;
            let mut acc = f(a) + f(b);
            for k in 1..steps {
                acc += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            let p = acc * h / 3.0;
            if p > 0.0 {
                mi += p * (p / (m * m)).ln();
            }
        }
    }
    mi
}

fn gaussian_pair(seed: u64, n: usize, rho: f64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let a = normals(&mut r, n, 1.0);
    let b = normals(&mut r, n, 1.0);
    let y = a
        .iter()
        .zip(&b)
        .map(|(a, b)| rho * a + (1.0 - rho * rho).sqrt() * b)
        .collect();
    (a, y)
}

#[test]
fn mi_matches_discretized_gaussian_oracle() {
    let oracle = discretized_gaussian_mi(0.8, 10);
    let continuous = 0.5 * (1.0f64 / (1.0 - 0.64)).ln();
    // Ten bins lose about 0.05 nats against the continuous value.
    assert!(
        continuous - oracle > 0.05 && continuous - oracle < 0.055,
        "oracle {oracle}"
    );
    let (x, y) = gaussian_pair(5, 10_000, 0.8);
    let est = mutual_info(&x, &y, 10).unwrap();
    assert!(
        (est - oracle).abs() < 0.02,
        "estimate {est} oracle {oracle}"
    );
    let (x, y) = gaussian_pair(6, 400_000, 0.8);
    let est = mutual_info(&x, &y, 10).unwrap();
    assert!(
        (est - oracle).abs() < 0.003,
        "large-n estimate {est} oracle {oracle}"
    );
}

#[test]
fn independent_series_have_small_mi() {
    let (x, y) = gaussian_pair(9, 20_000, 0.0);
    let est = mutual_info(&x, &y, 10).unwrap();
    // Plug-in bias is about (B-1)^2 / 2n.
    assert!(est < 81.0 / 20_000.0 * 2.0, "{est}");
}

fn four_feature_frame(seed: u64, n: usize) -> aethercast::series::HourlyFrame {
    let mut r = rng(seed);
    let a = normals(&mut r, n, 1.0);
    let b = normals(&mut r, n, 1.0);
    let c = normals(&mut r, n, 1.0);
    let noise = normals(&mut r, n, 0.5);
    let y: Vec<f64> = (0..n)
        .map(|i| 2.0 * a[i] + b[i] + 0.3 * c[i] + noise[i])
        .collect();
    // `a2` duplicates `a` up to a monotone map.
    let a2: Vec<f64> = a.iter().map(|v| v.exp()).collect();
    frame(vec![("pm2_5", y), ("a", a), ("a2", a2), ("b", b), ("c", c)])
}

/// Exhaustive greedy oracle: recompute the criterion for every remaining
/// candidate from scratch at each step.
fn brute_force_mrmr(
    f: &aethercast::series::HourlyFrame,
    cands: &[String],
    k: usize,
    d: &Discretizer,
) -> Vec<String> {
    let codes = |c: &str| d.codes(c, f.column(c).unwrap()).unwrap();
    let y = codes("pm2_5");
    let mut sorted = cands.to_vec();
    sorted.sort();
    let mut chosen: Vec<String> = Vec::new();
    while chosen.len() < k {
        let scored: Vec<(f64, &String)> = sorted
            .iter()
            .filter(|c| !chosen.contains(c))
            .map(|c| {
                let rel = mutual_info_codes(&codes(c), d.n_bins(c), &y, d.n_bins("pm2_5")).unwrap();
                let red = if chosen.is_empty() {
                    0.0
                } else {
                    chosen
                        .iter()
                        .map(|s| {
                            mutual_info_codes(&codes(c), d.n_bins(c), &codes(s), d.n_bins(s))
                                .unwrap()
                        })
                        .sum::<f64>()
                        / chosen.len() as f64
                };
                (rel - red, c)
            })
            .collect();
        let best = scored.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        let pick = scored.iter().find(|s| s.0 == best).unwrap().1.clone();
        chosen.push(pick);
    }
    chosen
}

#[test]
fn mrmr_matches_brute_force_and_skips_duplicates() {
    let f = four_feature_frame(3, 4000);
    let cands: Vec<String> = ["a", "a2", "b", "c"].map(String::from).to_vec();
    let mut cols = cands.clone();
    cols.push("pm2_5".into());
    let d = Discretizer::fit(&f, &cols, 10).unwrap();
    let picked = mrmr_select(&f, &cands, 4, &d).unwrap();
    assert_eq!(picked, brute_force_mrmr(&f, &cands, 4, &d));
    assert_eq!(picked[0], "a");
    assert_eq!(
        picked[1], "b",
        "the duplicate of `a` must not come second: {picked:?}"
    );
    assert_eq!(picked.last().unwrap(), "a2");
}

#[test]
fn relevance_report_is_training_only_and_complete() {
    let f = four_feature_frame(4, 3000);
    let cands: Vec<String> = ["a", "a2", "b", "c"].map(String::from).to_vec();
    let rep = relevance_report(&f, &cands, 10).unwrap();
    assert_eq!(rep.ranking.len(), 4);
    assert_eq!(rep.mi.len(), 4);
    assert!(
        (rep.pearson["a"] - pearson(f.column("a").unwrap(), f.target()).unwrap()).abs() < 1e-15
    );
    // Quantile bins make MI rank-based.
    assert!((rep.mi["a"] - rep.mi["a2"]).abs() < 1e-12);
    assert_eq!(rep.to_csv().lines().count(), 5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mi_is_symmetric_bounded_and_rank_invariant(
        xs in prop::collection::vec(-1e3f64..1e3, 30..300),
        seed in 0u64..1000,
    ) {
        let mut r = rng(seed);
        let noise = normals(&mut r, xs.len(), 50.0);
        let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, e)| 0.5 * x + e).collect();
        let a = mutual_info(&xs, &ys, 10).unwrap();
        let b = mutual_info(&ys, &xs, 10).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a >= 0.0 && a <= (10.0f64).ln() + 1e-12);
        let warped: Vec<f64> = xs.iter().map(|v| v.powi(3) + 7.0).collect();
        prop_assert!((mutual_info(&warped, &ys, 10).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn pearson_is_bounded_and_scale_free(
        xs in prop::collection::vec(-100f64..100.0, 3..200),
        scale in 0.01f64..100.0,
        shift in -50f64..50.0,
    ) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x + (i % 3) as f64).collect();
        if let Ok(r) = pearson(&xs, &ys) {
            prop_assert!((-1.0..=1.0).contains(&r));
            let moved: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
            prop_assert!((pearson(&moved, &ys).unwrap() - r).abs() < 1e-9);
        }
    }
}
