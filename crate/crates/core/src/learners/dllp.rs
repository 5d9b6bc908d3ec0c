//! Bag-level KL training of a fully connected softmax network.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::linear::softmax_rows;
use crate::dataset::BagData;
use crate::error::{Error, Result};
use crate::rng;

/// Network shape and training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DllpConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
}

impl Default for DllpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![100, 100],
            epochs: 100,
        }
    }
}

/// One affine layer; `weights` is `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Probability lower bound inside the log of the bag loss.
const PROB_FLOOR: f64 = 1e-12;

/// `KL(p || q)` with `0 ln 0 = 0`.
pub fn kl_divergence(p: ArrayView1<f64>, q: ArrayView1<f64>) -> f64 {
    p.iter()
        .zip(q.iter())
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b.max(PROB_FLOOR)).ln())
        .sum()
}

pub(crate) fn init_layers(n_in: usize, hidden: &[usize], n_out: usize, seed: u64) -> Vec<Dense> {
    let mut r = rng::rng(seed);
    let mut dims = vec![n_in];
    dims.extend_from_slice(hidden);
    dims.push(n_out);
    dims.windows(2)
        .map(|w| {
            let bound = 1.0 / (w[0] as f64).sqrt();
            Dense {
                weights: Array2::from_shape_simple_fn((w[1], w[0]), || {
                    r.random_range(-bound..=bound)
                }),
                bias: Array1::from_shape_simple_fn(w[1], || r.random_range(-bound..=bound)),
            }
        })
        .collect()
}

/// Activations of every layer; the last entry holds softmax probabilities.
fn forward(layers: &[Dense], x: &Array2<f64>) -> Vec<Array2<f64>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(x.clone());
    for (k, layer) in layers.iter().enumerate() {
        let mut z = acts[k].dot(&layer.weights.t());
        z += &layer.bias;
        if k + 1 < layers.len() {
            z.mapv_inplace(|v| v.max(0.0));
            acts.push(z);
        } else {
            acts.push(softmax_rows(&z));
        }
    }
    acts
}

pub(crate) fn predict_proba(layers: &[Dense], x: &Array2<f64>) -> Array2<f64> {
    forward(layers, x).pop().expect("output layer")
}

/// One gradient step on a single bag; returns the bag loss before the step.
fn step(layers: &mut [Dense], x: &Array2<f64>, target: ArrayView1<f64>, lr: f64) -> f64 {
    let acts = forward(layers, x);
    let probs = acts.last().expect("output layer");
    let n = x.nrows() as f64;
    let mean = probs.mean_axis(Axis(0)).expect("non-empty bag");
    let loss = kl_divergence(target, mean.view());
    // dL/dmean_c = -p_c / mean_c; push through the softmax of each item
    let ratio: Array1<f64> = target
        .iter()
        .zip(mean.iter())
        .map(|(&p, &m)| p / m.max(PROB_FLOOR))
        .collect();
    let mut delta = Array2::zeros(probs.dim());
    for (i, s) in probs.axis_iter(Axis(0)).enumerate() {
        let inner: f64 = s.iter().zip(ratio.iter()).map(|(a, b)| a * b).sum();
        for k in 0..s.len() {
            delta[[i, k]] = s[k] * (inner - ratio[k]) / n;
        }
    }
    for k in (0..layers.len()).rev() {
        let input = &acts[k];
        let gw = delta.t().dot(input);
        let gb = delta.sum_axis(Axis(0));
        if k > 0 {
            let mut back = delta.dot(&layers[k].weights);
            back.zip_mut_with(input, |d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = back;
        }
        layers[k].weights.scaled_add(-lr, &gw);
        layers[k].bias.scaled_add(-lr, &gb);
    }
    loss
}

pub(crate) struct DllpFit {
    pub layers: Vec<Dense>,
    pub epochs: usize,
    pub final_loss: f64,
    pub trace: Vec<f64>,
}

/// Round-robin gradient descent, one bag per step, for `cfg.epochs` passes.
/// `trace` holds the summed bag loss after every epoch.
pub(crate) fn fit_dllp(bags: &BagData, lr: f64, cfg: &DllpConfig, seed: u64) -> Result<DllpFit> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate {lr} must be positive"
        )));
    }
    let mut layers = init_layers(bags.n_features(), &cfg.hidden, bags.n_classes(), seed);
    let members = bags.bag_members();
    let batches: Vec<Array2<f64>> = members
        .iter()
        .map(|m| bags.features.select(Axis(0), m))
        .collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        for (b, x) in batches.iter().enumerate() {
            step(&mut layers, x, bags.proportions.row(b), lr);
        }
        let total = bag_loss(&layers, &batches, bags);
        if !total.is_finite()
            || layers
                .iter()
                .any(|l| l.weights.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Numerical(format!(
                "training diverged at learning rate {lr}"
            )));
        }
        trace.push(total);
    }
    let final_loss = trace
        .last()
        .copied()
        .unwrap_or_else(|| bag_loss(&layers, &batches, bags));
    Ok(DllpFit {
        layers,
        epochs: cfg.epochs,
        final_loss,
        trace,
    })
}

fn bag_loss(layers: &[Dense], batches: &[Array2<f64>], bags: &BagData) -> f64 {
    batches
        .iter()
        .enumerate()
        .map(|(b, x)| {
            let mean = predict_proba(layers, x)
                .mean_axis(Axis(0))
                .expect("non-empty bag");
            kl_divergence(bags.proportions.row(b), mean.view())
        })
        .sum()
}
