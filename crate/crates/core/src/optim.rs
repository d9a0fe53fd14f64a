//! Derivative-free simplex search followed by finite-difference BFGS.
//!
//! Non-finite objective values are treated as `+inf`, so callers can map
//! invalid regions to NaN without special casing.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimOptions {
    pub max_iter: usize,
    /// Stop when the relative objective change falls below this.
    pub rel_tol: f64,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            rel_tol: 1e-8,
            initial_step: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }
}

fn rel_change(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &OptimOptions) -> OptimResult {
    let mut f = Counted { f, evals: 0 };
    let n = x0.len();
    if n == 0 {
        let fx = f.call(x0);
        return OptimResult {
            x: vec![],
            fx,
            iterations: 0,
            evaluations: f.evals,
            converged: true,
        };
    }
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += opts.initial_step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f.call(v)).collect();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        iterations += 1;
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        values = idx.iter().map(|&i| values[i]).collect();

        if values[n].is_finite() && rel_change(values[0], values[n]) < opts.rel_tol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let towards = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + coef * (w - c))
                .collect()
        };

        let xr = towards(-1.0);
        let fr = f.call(&xr);
        if fr < values[0] {
            let xe = towards(-2.0);
            let fe = f.call(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = towards(-0.5);
            let fc = f.call(&xc);
            (xc, fc)
        } else {
            let xc = towards(0.5);
            let fc = f.call(&xc);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // shrink
        let best = simplex[0].clone();
        for i in 1..=n {
            for j in 0..n {
                simplex[i][j] = best[j] + 0.5 * (simplex[i][j] - best[j]);
            }
            values[i] = f.call(&simplex[i]);
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("non-empty simplex");
    OptimResult {
        x: simplex[best].clone(),
        fx: values[best],
        iterations,
        evaluations: f.evals,
        converged,
    }
}

fn fd_gradient<F: FnMut(&[f64]) -> f64>(f: &mut Counted<F>, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-5 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f.call(&xp);
        xp[i] = x[i] - h;
        let fm = f.call(&xp);
        xp[i] = x[i];
        g[i] = if fp.is_finite() && fm.is_finite() {
            (fp - fm) / (2.0 * h)
        } else {
            0.0
        };
    }
    g
}

/// Quasi-Newton descent with central-difference gradients and Armijo
/// backtracking.
pub fn bfgs<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &OptimOptions) -> OptimResult {
    let mut f = Counted { f, evals: 0 };
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f.call(&x);
    if n == 0 || !fx.is_finite() {
        return OptimResult {
            x,
            fx,
            iterations: 0,
            evaluations: f.evals,
            converged: n == 0,
        };
    }
    let mut h_inv = identity(n);
    let mut g = fd_gradient(&mut f, &x);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        iterations += 1;
        if g.iter().all(|v| v.abs() < 1e-10) {
            converged = true;
            break;
        }
        let mut dir: Vec<f64> = (0..n).map(|i| -dot(&h_inv[i], &g)).collect();
        let mut slope = dot(&dir, &g);
        if slope >= 0.0 {
            h_inv = identity(n);
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&dir, &g);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let fnew = f.call(&xn);
            if fnew <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            converged = true;
            break;
        };
        let gn = fd_gradient(&mut f, &xn);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            h_inv = bfgs_update(&h_inv, &s, &y, sy);
        }
        let change = rel_change(fx, fnew);
        x = xn;
        fx = fnew;
        g = gn;
        if change < opts.rel_tol {
            converged = true;
            break;
        }
    }
    OptimResult {
        x,
        fx,
        iterations,
        evaluations: f.evals,
        converged,
    }
}

/// Simplex search, then quasi-Newton refinement from the simplex optimum.
pub fn minimize<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &OptimOptions) -> OptimResult {
    let nm = nelder_mead(&mut f, x0, opts);
    let polished = bfgs(&mut f, &nm.x, opts);
    let evaluations = nm.evaluations + polished.evaluations;
    let iterations = nm.iterations + polished.iterations;
    if polished.fx <= nm.fx {
        OptimResult {
            evaluations,
            iterations,
            converged: nm.converged || polished.converged,
            ..polished
        }
    } else {
        OptimResult {
            evaluations,
            iterations,
            ..nm
        }
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn bfgs_update(h: &[Vec<f64>], s: &[f64], y: &[f64], sy: f64) -> Vec<Vec<f64>> {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            out[i][j] = h[i][j] - rho * (hy[i] * s[j] + s[i] * hy[j])
                + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn minimizes_rosenbrock() {
        let r = minimize(rosenbrock, &[-1.2, 1.0], &OptimOptions::default());
        assert!((r.x[0] - 1.0).abs() < 1e-4, "{:?}", r);
        assert!((r.x[1] - 1.0).abs() < 1e-4, "{:?}", r);
    }

    #[test]
    fn quadratic_bfgs_is_exact() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2) + 0.5 * x[0] * x[1];
        let r = bfgs(f, &[0.0, 0.0], &OptimOptions::default());
        // stationary point of the quadratic
        let a = nalgebra::Matrix2::new(2.0, 0.5, 0.5, 4.0);
        let b = nalgebra::Vector2::new(6.0, -4.0);
        let sol = a.lu().solve(&b).unwrap();
        assert!((r.x[0] - sol[0]).abs() < 1e-5);
        assert!((r.x[1] - sol[1]).abs() < 1e-5);
    }

    #[test]
    fn nan_regions_are_avoided() {
        let f = |x: &[f64]| {
            if x[0] < 0.0 {
                f64::NAN
            } else {
                (x[0] - 0.5).powi(2)
            }
        };
        let r = minimize(f, &[2.0], &OptimOptions::default());
        assert!((r.x[0] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn empty_parameter_vector() {
        let r = minimize(|_| 4.0, &[], &OptimOptions::default());
        assert_eq!(r.fx, 4.0);
        assert!(r.x.is_empty());
    }
}
