//! Small dense solvers: limited-memory BFGS and symmetric linear systems.

use std::collections::VecDeque;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct LbfgsConfig {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub memory: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-6,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: Array1<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Minimizes a smooth function given as `x -> (value, gradient)` with
/// L-BFGS and Armijo backtracking. Every accepted step decreases the value.
pub(crate) fn lbfgs<F>(mut f: F, x0: Array1<f64>, cfg: LbfgsConfig) -> Result<Minimum>
where
    F: FnMut(&Array1<f64>) -> (f64, Array1<f64>),
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    if !fx.is_finite() {
        return Err(Error::Numerical(
            "objective is not finite at the starting point".into(),
        ));
    }
    let mut hist: VecDeque<(Array1<f64>, Array1<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        if g.dot(&g).sqrt() <= cfg.grad_tol {
            break;
        }
        iterations += 1;
        let mut d = two_loop(&g, &hist);
        if d.dot(&g) >= 0.0 {
            hist.clear();
            d = -&g;
        }
        let slope = d.dot(&g);
        let mut step = if hist.is_empty() {
            1.0 / g.dot(&g).sqrt().max(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &x + &(&d * step);
            let (fc, gc) = f(&cand);
            if fc.is_finite() && fc <= fx + 1e-4 * step * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fxn, gn)) = accepted else {
            break;
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 {
            if hist.len() == cfg.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let done = (fx - fxn).abs() <= 1e-15 * fx.abs().max(1.0);
        x = xn;
        fx = fxn;
        g = gn;
        if done {
            break;
        }
    }
    Ok(Minimum {
        x,
        value: fx,
        iterations,
    })
}

fn two_loop(g: &Array1<f64>, hist: &VecDeque<(Array1<f64>, Array1<f64>, f64)>) -> Array1<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * s.dot(&q);
        q.scaled_add(-a, y);
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
        let b = rho * y.dot(&q);
        q.scaled_add(a - b, s);
    }
    -q
}

/// Solves `a x = b` for symmetric positive definite `a` (Cholesky), column by column.
pub(crate) fn solve_spd(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let scale = (0..n)
        .map(|i| a[[i, i]].abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d <= 1e-12 * scale {
            return Err(Error::IllConditioned(format!(
                "normal equations are singular (pivot {d:.3e} at row {j})"
            )));
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = v / d;
        }
    }
    let mut x = b.clone();
    for mut col in x.columns_mut() {
        for i in 0..n {
            let mut v = col[i];
            for k in 0..i {
                v -= l[[i, k]] * col[k];
            }
            col[i] = v / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut v = col[i];
            for k in i + 1..n {
                v -= l[[k, i]] * col[k];
            }
            col[i] = v / l[[i, i]];
        }
    }
    Ok(x)
}
