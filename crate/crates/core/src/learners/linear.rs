//! Linear learners: EM over soft labels with logistic regression, and the
//! mean-map family (MM, LMM, AMM).
//!
//! Binary conventions: class 1 is the positive class, `p_l` is the
//! positive share of bag `l`, and the model scores `theta' [x; 1]`.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use super::optim::{lbfgs, solve_spd, LbfgsConfig};
use crate::dataset::BagData;
use crate::error::{Error, Result};

pub(crate) fn augment(x: &Array2<f64>) -> Array2<f64> {
    let (n, d) = x.dim();
    let mut a = Array2::ones((n, d + 1));
    a.slice_mut(s![.., ..d]).assign(x);
    a
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn positive_shares(bags: &BagData) -> Vec<f64> {
    bags.proportions.column(1).to_vec()
}

pub(crate) fn require_binary(bags: &BagData, name: &str) -> Result<()> {
    if bags.n_classes() != 2 {
        return Err(Error::InvalidArgument(format!(
            "{name} handles binary labels only, got {} classes",
            bags.n_classes()
        )));
    }
    Ok(())
}

/// Shift `s` such that `mean_i sigmoid(z_i + s) = target`, by bisection.
/// Returns the calibrated soft labels.
pub fn calibrate_bag(logits: &[f64], target: f64) -> Vec<f64> {
    if target <= 0.0 {
        return vec![0.0; logits.len()];
    }
    if target >= 1.0 {
        return vec![1.0; logits.len()];
    }
    let mean_at =
        |s: f64| logits.iter().map(|&z| sigmoid(z + s)).sum::<f64>() / logits.len() as f64;
    let zmax = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let zmin = logits.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (-zmax - 50.0, -zmin + 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * (1.0 + lo.abs()) {
            break;
        }
    }
    let s = 0.5 * (lo + hi);
    logits.iter().map(|&z| sigmoid(z + s)).collect()
}

/// Per-class multiplicative calibration of probability rows so that their
/// column means match `target`.
pub fn calibrate_bag_multiclass(probs: &Array2<f64>, target: ArrayView1<f64>) -> Array2<f64> {
    let c = probs.ncols();
    let mut w = vec![1.0; c];
    let mut q = probs.clone();
    for _ in 0..1000 {
        for mut row in q.axis_iter_mut(Axis(0)) {
            let s: f64 = (0..c).map(|k| row[k] * w[k]).sum::<f64>();
            let orig: Vec<f64> = row.to_vec();
            for k in 0..c {
                row[k] = if s > 0.0 {
                    orig[k] * w[k] / s
                } else {
                    target[k]
                };
            }
        }
        let means = q.mean_axis(Axis(0)).expect("non-empty bag");
        let mut worst: f64 = 0.0;
        for k in 0..c {
            worst = worst.max((means[k] - target[k]).abs());
            if target[k] <= 0.0 {
                w[k] = 0.0;
            } else if means[k] > 0.0 {
                w[k] *= target[k] / means[k];
            }
        }
        q.assign(probs);
        if worst < 1e-12 {
            break;
        }
    }
    for mut row in q.axis_iter_mut(Axis(0)) {
        let s: f64 = (0..c).map(|k| row[k] * w[k]).sum::<f64>();
        let orig: Vec<f64> = row.to_vec();
        for k in 0..c {
            row[k] = if s > 0.0 {
                orig[k] * w[k] / s
            } else {
                target[k]
            };
        }
    }
    q
}

/// Soft-label logistic regression: mean cross-entropy plus `||w||^2 / (2 C n)`
/// with the bias unpenalized.
fn fit_soft_logistic(
    xa: &Array2<f64>,
    q: &Array1<f64>,
    inv_reg: f64,
    warm: Array1<f64>,
    cfg: LbfgsConfig,
) -> Result<(Array1<f64>, f64, usize)> {
    let n = xa.nrows() as f64;
    let d = xa.ncols() - 1;
    let pen = 1.0 / (inv_reg * n);
    let m = lbfgs(
        |theta| {
            let z = xa.dot(theta);
            let mut value = 0.0;
            let mut r = Array1::zeros(z.len());
            for i in 0..z.len() {
                value += softplus(z[i]) - q[i] * z[i];
                r[i] = sigmoid(z[i]) - q[i];
            }
            let mut g = xa.t().dot(&r) / n;
            value /= n;
            for j in 0..d {
                value += 0.5 * pen * theta[j] * theta[j];
                g[j] += pen * theta[j];
            }
            (value, g)
        },
        warm,
        cfg,
    )?;
    Ok((m.x, m.value, m.iterations))
}

/// Soft-label multinomial logistic regression; weights are `C x (d + 1)`.
fn fit_soft_softmax(
    xa: &Array2<f64>,
    q: &Array2<f64>,
    inv_reg: f64,
    warm: Array2<f64>,
    cfg: LbfgsConfig,
) -> Result<(Array2<f64>, f64, usize)> {
    let n = xa.nrows() as f64;
    let (c, p) = warm.dim();
    let d = p - 1;
    let pen = 1.0 / (inv_reg * n);
    let m = lbfgs(
        |flat| {
            let w = flat.view().into_shape_with_order((c, p)).expect("shape");
            let z = xa.dot(&w.t());
            let mut value = 0.0;
            let mut r = Array2::zeros(z.dim());
            for (i, zr) in z.axis_iter(Axis(0)).enumerate() {
                let mx = zr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + zr.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
                for k in 0..c {
                    value -= q[[i, k]] * (zr[k] - lse);
                    r[[i, k]] = (zr[k] - lse).exp() - q[[i, k]];
                }
            }
            let mut g = r.t().dot(xa) / n;
            value /= n;
            for k in 0..c {
                for j in 0..d {
                    value += 0.5 * pen * w[[k, j]] * w[[k, j]];
                    g[[k, j]] += pen * w[[k, j]];
                }
            }
            (value, g.into_shape_with_order(c * p).expect("shape"))
        },
        warm.into_shape_with_order(c * p).expect("shape"),
        cfg,
    )?;
    Ok((
        m.x.into_shape_with_order((c, p)).expect("shape"),
        m.value,
        m.iterations,
    ))
}

pub(crate) fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - mx).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

pub(crate) struct LinearFit {
    pub weights: Array2<f64>,
    pub iterations: usize,
    pub final_loss: f64,
    pub trace: Vec<f64>,
}

/// EM over soft labels. Soft labels start at the bag proportions; each
/// round fits the regularized logistic model and recalibrates soft labels
/// within every bag to its proportion.
pub(crate) fn fit_emlr(
    bags: &BagData,
    inv_reg: f64,
    max_rounds: usize,
    tol: f64,
) -> Result<LinearFit> {
    if !(inv_reg > 0.0 && inv_reg.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "C = {inv_reg} must be positive"
        )));
    }
    let xa = augment(&bags.features);
    let members = bags.bag_members();
    let cfg = LbfgsConfig::default();
    let c = bags.n_classes();
    let mut trace = Vec::new();
    if c == 2 {
        let mut q: Array1<f64> = bags
            .bag_ids
            .iter()
            .map(|&b| bags.proportions[[b, 1]])
            .collect();
        let mut theta = Array1::zeros(xa.ncols());
        let mut rounds = 0;
        let mut loss = f64::NAN;
        while rounds < max_rounds {
            rounds += 1;
            let (t, l, _) = fit_soft_logistic(&xa, &q, inv_reg, theta, cfg)?;
            theta = t;
            loss = l;
            trace.push(l);
            let z = xa.dot(&theta);
            let mut change: f64 = 0.0;
            for (b, m) in members.iter().enumerate() {
                let logits: Vec<f64> = m.iter().map(|&i| z[i]).collect();
                let cal = calibrate_bag(&logits, bags.proportions[[b, 1]]);
                for (&i, v) in m.iter().zip(cal) {
                    change = change.max((v - q[i]).abs());
                    q[i] = v;
                }
            }
            if change < tol {
                break;
            }
        }
        Ok(LinearFit {
            weights: theta.insert_axis(Axis(0)),
            iterations: rounds,
            final_loss: loss,
            trace,
        })
    } else {
        let mut q = Array2::zeros((xa.nrows(), c));
        for (i, &b) in bags.bag_ids.iter().enumerate() {
            q.row_mut(i).assign(&bags.proportions.row(b));
        }
        let mut w = Array2::zeros((c, xa.ncols()));
        let mut rounds = 0;
        let mut loss = f64::NAN;
        while rounds < max_rounds {
            rounds += 1;
            let (nw, l, _) = fit_soft_softmax(&xa, &q, inv_reg, w, cfg)?;
            w = nw;
            loss = l;
            trace.push(l);
            let probs = softmax_rows(&xa.dot(&w.t()));
            let mut change: f64 = 0.0;
            for (b, m) in members.iter().enumerate() {
                let cal =
                    calibrate_bag_multiclass(&probs.select(Axis(0), m), bags.proportions.row(b));
                for (r, &i) in m.iter().enumerate() {
                    for k in 0..c {
                        change = change.max((cal[[r, k]] - q[[i, k]]).abs());
                        q[[i, k]] = cal[[r, k]];
                    }
                }
            }
            if change < tol {
                break;
            }
        }
        Ok(LinearFit {
            weights: w,
            iterations: rounds,
            final_loss: loss,
            trace,
        })
    }
}

/// Augmented bag means, `L x (d + 1)`.
fn bag_means(xa: &Array2<f64>, members: &[Vec<usize>]) -> Array2<f64> {
    let mut m = Array2::zeros((members.len(), xa.ncols()));
    for (b, items) in members.iter().enumerate() {
        for &i in items {
            m.row_mut(b).scaled_add(1.0, &xa.row(i));
        }
        m.row_mut(b).mapv_inplace(|v| v / items.len() as f64);
    }
    m
}

/// Class means `(b+, b-)` under the homogeneity assumption `M = Pi [b+; b-]`,
/// by ridge least squares.
pub fn mm_class_means(bags: &BagData, lambda: f64) -> Result<(Array1<f64>, Array1<f64>)> {
    require_binary(bags, "MM")?;
    let xa = augment(&bags.features);
    let m = bag_means(&xa, &bags.bag_members());
    let p = positive_shares(bags);
    let pi = Array2::from_shape_fn(
        (p.len(), 2),
        |(l, k)| if k == 0 { p[l] } else { 1.0 - p[l] },
    );
    let mut lhs = pi.t().dot(&pi);
    lhs.diag_mut().mapv_inplace(|v| v + lambda);
    let b = solve_spd(&lhs, &pi.t().dot(&m))?;
    Ok((b.row(0).to_owned(), b.row(1).to_owned()))
}

/// Per-bag class means smoothed over a bag-similarity graph:
/// `min ||M - Pi B||^2 + gamma tr(B' Lap B)`.
/// Returns `(B+, B-)`, each `L x (d + 1)`.
pub fn lmm_class_means(
    bags: &BagData,
    gamma: f64,
    sigma: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    require_binary(bags, "LMM")?;
    if !(sigma > 0.0) || !(gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma = {gamma}, sigma = {sigma}"
        )));
    }
    let xa = augment(&bags.features);
    let members = bags.bag_members();
    let m = bag_means(&xa, &members);
    let l = m.nrows();
    let d = bags.n_features();
    let p = positive_shares(bags);
    let mut lap = Array2::<f64>::zeros((l, l));
    for a in 0..l {
        for b in 0..l {
            if a != b {
                let dist: f64 = (0..d).map(|j| (m[[a, j]] - m[[b, j]]).powi(2)).sum();
                let w = (-dist / (2.0 * sigma * sigma)).exp();
                lap[[a, b]] -= w;
                lap[[a, a]] += w;
            }
        }
    }
    let mut pi = Array2::<f64>::zeros((l, 2 * l));
    for b in 0..l {
        pi[[b, b]] = p[b];
        pi[[b, l + b]] = 1.0 - p[b];
    }
    let mut lhs = pi.t().dot(&pi);
    for a in 0..l {
        for b in 0..l {
            lhs[[a, b]] += gamma * lap[[a, b]];
            lhs[[l + a, l + b]] += gamma * lap[[a, b]];
        }
    }
    let sol = solve_spd(&lhs, &pi.t().dot(&m))?;
    Ok((
        sol.slice(s![..l, ..]).to_owned(),
        sol.slice(s![l.., ..]).to_owned(),
    ))
}

/// `mu_S = sum_l (n_l / N) (p_l b+_l - (1 - p_l) b-_l)` with per-bag class means.
fn mean_operator(bags: &BagData, plus: &Array2<f64>, minus: &Array2<f64>) -> Array1<f64> {
    let sizes = bags.bag_sizes();
    let n = bags.n_items() as f64;
    let p = positive_shares(bags);
    let mut mu = Array1::zeros(plus.ncols());
    for b in 0..sizes.len() {
        let w = sizes[b] as f64 / n;
        mu.scaled_add(w * p[b], &plus.row(b));
        mu.scaled_add(-w * (1.0 - p[b]), &minus.row(b));
    }
    mu
}

/// Logistic risk written through the mean operator:
/// `(1/N) sum log(1 + e^{theta'x}) - theta'(xbar + mu) / 2 + lambda ||theta||^2 / (2N)`.
pub(crate) fn mean_operator_objective(
    xa: &Array2<f64>,
    mu: &Array1<f64>,
    lambda: f64,
    theta: &Array1<f64>,
) -> (f64, Array1<f64>) {
    let n = xa.nrows() as f64;
    let xbar = xa.mean_axis(Axis(0)).expect("non-empty");
    let target = (&xbar + mu) * 0.5;
    let z = xa.dot(theta);
    let value = z.iter().map(|&v| softplus(v)).sum::<f64>() / n - theta.dot(&target)
        + 0.5 * lambda / n * theta.dot(theta);
    let sig = z.mapv(sigmoid);
    let g = xa.t().dot(&sig) / n - &target + theta * (lambda / n);
    (value, g)
}

fn fit_from_mean_operator(
    xa: &Array2<f64>,
    mu: &Array1<f64>,
    lambda: f64,
) -> Result<(Array1<f64>, f64, usize)> {
    let m = lbfgs(
        |t| mean_operator_objective(xa, mu, lambda, t),
        Array1::zeros(xa.ncols()),
        LbfgsConfig {
            max_iter: 1000,
            ..LbfgsConfig::default()
        },
    )?;
    Ok((m.x, m.value, m.iterations))
}

pub(crate) fn fit_mm(bags: &BagData, lambda: f64) -> Result<LinearFit> {
    check_lambda(lambda)?;
    let (bp, bm) = mm_class_means(bags, lambda)?;
    let l = bags.n_bags();
    let plus = Array2::from_shape_fn((l, bp.len()), |(_, j)| bp[j]);
    let minus = Array2::from_shape_fn((l, bm.len()), |(_, j)| bm[j]);
    let mu = mean_operator(bags, &plus, &minus);
    let (theta, loss, it) = fit_from_mean_operator(&augment(&bags.features), &mu, lambda)?;
    Ok(LinearFit {
        weights: theta.insert_axis(Axis(0)),
        iterations: it,
        final_loss: loss,
        trace: vec![loss],
    })
}

pub(crate) fn fit_lmm(bags: &BagData, lambda: f64, gamma: f64, sigma: f64) -> Result<LinearFit> {
    check_lambda(lambda)?;
    let (plus, minus) = lmm_class_means(bags, gamma, sigma)?;
    let mu = mean_operator(bags, &plus, &minus);
    let (theta, loss, it) = fit_from_mean_operator(&augment(&bags.features), &mu, lambda)?;
    Ok(LinearFit {
        weights: theta.insert_axis(Axis(0)),
        iterations: it,
        final_loss: loss,
        trace: vec![loss],
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda = {lambda} must be non-negative"
        )));
    }
    Ok(())
}

/// Labels maximizing agreement with `z` subject to `ceil(p_l n_l)` positives per bag.
fn assign_labels(z: &Array1<f64>, members: &[Vec<usize>], p: &[f64]) -> Vec<f64> {
    let mut y = vec![-1.0; z.len()];
    for (b, m) in members.iter().enumerate() {
        let k = ((p[b] * m.len() as f64) - 1e-9).ceil().max(0.0) as usize;
        let mut order = m.clone();
        order.sort_by(|&a, &c| z[c].total_cmp(&z[a]).then(a.cmp(&c)));
        for &i in order.iter().take(k.min(m.len())) {
            y[i] = 1.0;
        }
    }
    y
}

fn labelled_objective(
    xa: &Array2<f64>,
    y: &[f64],
    lambda: f64,
    theta: &Array1<f64>,
) -> (f64, Array1<f64>) {
    let n = xa.nrows() as f64;
    let z = xa.dot(theta);
    let mut value = 0.0;
    let mut r = Array1::zeros(z.len());
    for i in 0..z.len() {
        value += softplus(-y[i] * z[i]);
        r[i] = -y[i] * sigmoid(-y[i] * z[i]);
    }
    let g = xa.t().dot(&r) / n + theta * (lambda / n);
    (value / n + 0.5 * lambda / n * theta.dot(theta), g)
}

/// Alternating label assignment started from the LMM solution; `trace`
/// holds the objective at the best assignment after every refit.
pub(crate) fn fit_amm(
    bags: &BagData,
    lambda: f64,
    gamma: f64,
    sigma: f64,
    max_alternations: usize,
) -> Result<LinearFit> {
    let init = fit_lmm(bags, lambda, gamma, sigma)?;
    let xa = augment(&bags.features);
    let members = bags.bag_members();
    let p = positive_shares(bags);
    let mut theta = init.weights.row(0).to_owned();
    let mut y = assign_labels(&xa.dot(&theta), &members, &p);
    let mut trace = vec![labelled_objective(&xa, &y, lambda, &theta).0];
    let mut alternations = 0;
    while alternations < max_alternations {
        alternations += 1;
        let m = lbfgs(
            |t| labelled_objective(&xa, &y, lambda, t),
            theta,
            LbfgsConfig::default(),
        )?;
        theta = m.x;
        let next = assign_labels(&xa.dot(&theta), &members, &p);
        trace.push(labelled_objective(&xa, &next, lambda, &theta).0);
        if next == y {
            break;
        }
        y = next;
    }
    Ok(LinearFit {
        final_loss: *trace.last().expect("non-empty trace"),
        weights: theta.insert_axis(Axis(0)),
        iterations: alternations,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> BagData {
        let x = array![
            [0.0, 1.0],
            [1.0, 0.5],
            [2.0, -1.0],
            [3.0, 0.0],
            [-1.0, 2.0],
            [0.5, 0.5]
        ];
        BagData::new(
            x,
            vec![0, 0, 0, 1, 1, 1],
            array![[1.0 / 3.0, 2.0 / 3.0], [2.0 / 3.0, 1.0 / 3.0]],
        )
        .unwrap()
    }

    #[test]
    fn calibration_hits_target() {
        let z = [-2.0, 0.3, 1.7, 4.0];
        for target in [0.01, 0.25, 0.5, 0.9] {
            let q = calibrate_bag(&z, target);
            let m = q.iter().sum::<f64>() / 4.0;
            assert!((m - target).abs() < 1e-9, "{m} vs {target}");
            // order preserved
            assert!(q.windows(2).all(|w| w[0] <= w[1]));
        }
        assert_eq!(calibrate_bag(&z, 0.0), vec![0.0; 4]);
    }

    #[test]
    fn multiclass_calibration() {
        let p = array![[0.2, 0.5, 0.3], [0.6, 0.2, 0.2], [0.1, 0.1, 0.8]];
        let t = array![0.5, 0.25, 0.25];
        let q = calibrate_bag_multiclass(&p, t.view());
        let m = q.mean_axis(Axis(0)).unwrap();
        assert!((&m - &t).iter().all(|v| v.abs() < 1e-9), "{m}");
    }

    #[test]
    fn mm_pure_bags_recover_class_means() {
        let x = array![[1.0, 2.0], [3.0, 2.0], [-1.0, 0.0], [-3.0, 4.0]];
        let bags = BagData::new(x, vec![1, 1, 0, 0], array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let (bp, bm) = mm_class_means(&bags, 0.0).unwrap();
        assert!(
            (&bp - &array![2.0, 2.0, 1.0])
                .iter()
                .all(|v| v.abs() < 1e-12),
            "{bp}"
        );
        assert!(
            (&bm - &array![-2.0, 2.0, 1.0])
                .iter()
                .all(|v| v.abs() < 1e-12),
            "{bm}"
        );
    }

    #[test]
    fn mm_singular_without_ridge() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let bags = BagData::new(x, vec![0, 0, 1, 1], array![[0.5, 0.5], [0.5, 0.5]]).unwrap();
        assert!(matches!(
            mm_class_means(&bags, 0.0),
            Err(Error::IllConditioned(_))
        ));
        assert!(mm_class_means(&bags, 1.0).is_ok());
    }

    #[test]
    fn mean_operator_gradient_matches_supervised() {
        let x = array![
            [0.3, -1.2],
            [1.5, 0.4],
            [-0.7, 0.9],
            [2.2, -0.1],
            [0.0, 0.5]
        ];
        let y = [1.0, -1.0, 1.0, 1.0, -1.0];
        let xa = augment(&x);
        let n = 5.0;
        let mut mu = Array1::zeros(3);
        for i in 0..5 {
            mu.scaled_add(y[i] / n, &xa.row(i));
        }
        let theta = array![0.4, -0.3, 0.1];
        let (_, g_mu) = mean_operator_objective(&xa, &mu, 0.0, &theta);
        let (_, g_sup) = labelled_objective(&xa, &y, 0.0, &theta);
        assert!((&g_mu - &g_sup).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn amm_trace_non_increasing() {
        let fit = fit_amm(&toy(), 1.0, 0.1, 1.0, 20).unwrap();
        for w in fit.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", fit.trace);
        }
    }

    #[test]
    fn emlr_single_bag_is_supervised() {
        let x = array![[-2.0], [-1.0], [1.0], [2.0]];
        let bags = BagData::new(x, vec![0, 0, 0, 0], array![[0.0, 1.0]]).unwrap();
        let fit = fit_emlr(&bags, 1.0, 50, 1e-4).unwrap();
        // every soft label is 1, so the learned bias dominates toward class 1
        let z = augment(&bags.features).dot(&fit.weights.row(0));
        assert!(z.iter().all(|&v| v > 0.0), "{z}");
    }
}
