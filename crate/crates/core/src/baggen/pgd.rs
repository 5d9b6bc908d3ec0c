//! Row-stochastic least squares: `argmin_A ||P_YB - P_YZ A||_F` over
//! matrices whose rows are probability vectors.
//!
//! The first stage is the clip-and-renormalize projected gradient descent
//! used for Intermediate generation. Its fixed points are not in general
//! optimal (the renormalization is not a Euclidean projection), so by
//! default each restart is refined with accelerated projected gradient
//! using the exact projection onto the probability simplex.

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::StochasticMatrix;
use crate::error::{Error, Result};
use crate::{par, rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgdConfig {
    /// Step size of the clip-and-renormalize stage.
    pub alpha: f64,
    pub max_iter: usize,
    /// Relative-change stopping threshold `||A - A_old|| / ||A||`.
    pub tol: f64,
    pub restarts: usize,
    /// Polish every restart with exact simplex-projected gradient steps.
    pub refine: bool,
    pub refine_max_iter: usize,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            max_iter: 10_000,
            tol: 1e-5,
            restarts: 5,
            refine: true,
            refine_max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgdSolution {
    /// `Q x L` matrix standing in for `Pr(B | Z)`.
    pub matrix: StochasticMatrix,
    /// Frobenius residual of `matrix`.
    pub residual: f64,
    /// Best residual reached by the clip-and-renormalize stage alone.
    pub clip_residual: f64,
    /// Iterations of the clip-and-renormalize stage in the winning restart.
    pub iterations: usize,
    pub restart: usize,
}

/// `||P_YB - P_YZ A||_F`.
pub fn frobenius_residual(p_yz: &Array2<f64>, p_yb: &Array2<f64>, a: &Array2<f64>) -> f64 {
    (p_yb - &p_yz.dot(a))
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

fn check_shapes(p_yz: &Array2<f64>, p_yb: &Array2<f64>) -> Result<()> {
    if p_yz.nrows() != p_yb.nrows() {
        return Err(Error::DimensionMismatch {
            expected: p_yz.nrows(),
            got: p_yb.nrows(),
        });
    }
    if p_yz.ncols() == 0 || p_yb.ncols() == 0 {
        return Err(Error::InvalidArgument(
            "empty cluster or bag dimension".into(),
        ));
    }
    if p_yz
        .iter()
        .chain(p_yb.iter())
        .any(|&v| !(v >= 0.0) || !v.is_finite())
    {
        return Err(Error::InvalidArgument(
            "joint matrices must be finite and non-negative".into(),
        ));
    }
    Ok(())
}

/// Solves for a row-stochastic `A` from `restarts` uniform random starts and
/// keeps the lowest residual (ties to the earliest restart).
pub fn pgd_solve(
    p_yz: &Array2<f64>,
    p_yb: &Array2<f64>,
    cfg: &PgdConfig,
    seed: u64,
) -> Result<PgdSolution> {
    check_shapes(p_yz, p_yb)?;
    let (q, l) = (p_yz.ncols(), p_yb.ncols());
    let runs = par::map_range(cfg.restarts.max(1), |r| -> Result<PgdSolution> {
        let mut g = rng::rng(rng::derive(seed, r as u64));
        let init = Array2::from_shape_simple_fn((q, l), || g.random::<f64>());
        let (a, iterations) = descend_clip_renormalize(p_yz, p_yb, init, cfg, |_, _| {})?;
        let clip_residual = frobenius_residual(p_yz, p_yb, &a);
        let (a, residual) = if cfg.refine {
            let refined = refine_simplex(p_yz, p_yb, &a, cfg.refine_max_iter)?;
            let res = frobenius_residual(p_yz, p_yb, &refined);
            if res <= clip_residual {
                (refined, res)
            } else {
                (a, clip_residual)
            }
        } else {
            (a, clip_residual)
        };
        Ok(PgdSolution {
            matrix: StochasticMatrix::from_trusted(a),
            residual,
            clip_residual,
            iterations,
            restart: r,
        })
    });
    let mut best: Option<PgdSolution> = None;
    let mut best_clip = f64::INFINITY;
    for run in runs {
        let run = run?;
        best_clip = best_clip.min(run.clip_residual);
        if best.as_ref().is_none_or(|b| run.residual < b.residual) {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one restart");
    best.clip_residual = best_clip;
    Ok(best)
}

/// Gradient step `A - alpha (2 P'P A - 2 P'P_YB)`, clip to `[0, 1]`, renormalize
/// rows, stop once the relative change drops to `cfg.tol` or after
/// `cfg.max_iter` steps. `on_iter` sees every iterate.
///
/// A row clipped to all zeros is reset to uniform.
pub fn descend_clip_renormalize(
    p_yz: &Array2<f64>,
    p_yb: &Array2<f64>,
    init: Array2<f64>,
    cfg: &PgdConfig,
    mut on_iter: impl FnMut(usize, &Array2<f64>),
) -> Result<(Array2<f64>, usize)> {
    let hess = p_yz.t().dot(p_yz);
    let lin = p_yz.t().dot(p_yb);
    let l = init.ncols();
    let mut a = init;
    normalize_rows(&mut a, l);
    let mut a_old = Array2::from_elem(a.dim(), 1e5);
    let mut it = 0;
    while it <= cfg.max_iter {
        let grad = (hess.dot(&a) - &lin) * 2.0;
        a.scaled_add(-cfg.alpha, &grad);
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite iterate at step {it}; step size {} diverges",
                cfg.alpha
            )));
        }
        a.mapv_inplace(|v| v.clamp(0.0, 1.0));
        normalize_rows(&mut a, l);
        it += 1;
        on_iter(it, &a);
        let change = (&a - &a_old).iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        if change / norm <= cfg.tol {
            break;
        }
        a_old.assign(&a);
    }
    Ok((a, it))
}

fn normalize_rows(a: &mut Array2<f64>, l: usize) {
    for mut row in a.axis_iter_mut(Axis(0)) {
        let s: f64 = row.sum();
        if s > 0.0 {
            row /= s;
        } else {
            row.fill(1.0 / l as f64);
        }
    }
}

/// Euclidean projection of every row onto the probability simplex.
pub fn project_rows_to_simplex(v: &Array2<f64>) -> Array2<f64> {
    let mut out = v.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let mut u: Vec<f64> = row.to_vec();
        u.sort_by(|a, b| b.total_cmp(a));
        let mut css = 0.0;
        let mut theta = 0.0;
        for (k, &uk) in u.iter().enumerate() {
            css += uk;
            let t = (css - 1.0) / (k + 1) as f64;
            if uk - t > 0.0 {
                theta = t;
            }
        }
        row.mapv_inplace(|x| (x - theta).max(0.0));
    }
    out
}

fn largest_eigenvalue(sym: &Array2<f64>) -> f64 {
    let n = sym.nrows();
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w = sym.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = v.dot(&w);
        v = w / norm;
    }
    lambda
}

/// Accelerated projected gradient (FISTA with monotone restarts) from `start`.
pub fn refine_simplex(
    p_yz: &Array2<f64>,
    p_yb: &Array2<f64>,
    start: &Array2<f64>,
    max_iter: usize,
) -> Result<Array2<f64>> {
    let hess = p_yz.t().dot(p_yz);
    let lin = p_yz.t().dot(p_yb);
    let trace: f64 = hess.diag().sum();
    let lipschitz = 2.0 * (1.05 * largest_eigenvalue(&hess)).min(trace);
    if lipschitz <= 0.0 {
        return Ok(start.clone());
    }
    let objective = |a: &Array2<f64>| {
        let r = p_yb - &p_yz.dot(a);
        r.iter().map(|v| v * v).sum::<f64>()
    };
    let mut a = project_rows_to_simplex(start);
    let mut y = a.clone();
    let mut t = 1.0f64;
    let mut f_a = objective(&a);
    for _ in 0..max_iter {
        let grad = (hess.dot(&y) - &lin) * 2.0;
        let next = project_rows_to_simplex(&(&y - &(grad / lipschitz)));
        let f_next = objective(&next);
        if f_next > f_a {
            // momentum overshot: restart from the current point
            t = 1.0;
            y.assign(&a);
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let step = &next - &a;
        let change = step.iter().map(|v| v * v).sum::<f64>().sqrt();
        y = &next + &(step * ((t - 1.0) / t_next));
        a = next;
        t = t_next;
        f_a = f_next;
        if !f_a.is_finite() {
            return Err(Error::Numerical(
                "non-finite objective during refinement".into(),
            ));
        }
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        if change <= 1e-13 * norm.max(1.0) {
            break;
        }
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_solution() {
        let p_yz = array![[0.5, 0.0], [0.0, 0.5]];
        let p_yb = array![[0.25, 0.25], [0.25, 0.25]];
        let sol = pgd_solve(&p_yz, &p_yb, &PgdConfig::default(), 3).unwrap();
        assert!(sol.residual < 1e-8, "{}", sol.residual);
        for v in sol.matrix.as_array().iter() {
            assert!((v - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn identity_solution() {
        let p_yz = array![[0.3, 0.1, 0.05], [0.05, 0.2, 0.3]];
        let sol = pgd_solve(&p_yz, &p_yz.clone(), &PgdConfig::default(), 8).unwrap();
        assert!(sol.residual <= 1e-4, "{}", sol.residual);
    }

    #[test]
    fn iterates_stay_stochastic() {
        let p_yz = array![[0.2, 0.3], [0.4, 0.1]];
        let p_yb = array![[0.1, 0.2, 0.2], [0.3, 0.1, 0.1]];
        let cfg = PgdConfig {
            alpha: 0.5,
            ..PgdConfig::default()
        };
        let init = array![[0.9, 0.05, 0.3], [0.1, 0.7, 0.2]];
        let mut steps = 0;
        descend_clip_renormalize(&p_yz, &p_yb, init, &cfg, |_, a| {
            steps += 1;
            for row in a.axis_iter(Axis(0)) {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        })
        .unwrap();
        assert!(steps > 0);
    }

    #[test]
    fn divergent_step_is_reported() {
        let p_yz = array![[1e150, 0.0], [0.0, 1e150]];
        let p_yb = array![[0.5, 0.0], [0.0, 0.5]];
        let cfg = PgdConfig {
            alpha: 1e10,
            ..PgdConfig::default()
        };
        assert!(matches!(
            descend_clip_renormalize(
                &p_yz,
                &p_yb,
                Array2::from_elem((2, 2), 0.5),
                &cfg,
                |_, _| {}
            ),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn simplex_projection_basics() {
        let p = project_rows_to_simplex(&array![[0.2, 0.3], [2.0, 0.0], [-1.0, -1.0]]);
        assert!((p[[0, 0]] - 0.45).abs() < 1e-12 && (p[[0, 1]] - 0.55).abs() < 1e-12);
        assert_eq!(p.row(1).to_vec(), vec![1.0, 0.0]);
        assert_eq!(p.row(2).to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn rejects_bad_shapes() {
        let p_yz = array![[0.5, 0.5]];
        let p_yb = array![[0.5], [0.5]];
        assert!(pgd_solve(&p_yz, &p_yb, &PgdConfig::default(), 0).is_err());
    }
}
