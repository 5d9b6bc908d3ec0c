//! LLP learners behind one fit/predict contract.
//!
//! [`fit`] trains one of five algorithms from features, bag memberships and
//! bag proportions. Ground-truth labels never enter training. The linear
//! algorithms score `theta' [x; 1]`; DLLP is a softmax network.
//!
//! Hyperparameters are passed by name: `C` (EM/LR inverse regularization),
//! `lambda` (mean-map ridge), `gamma` and `sigma` (LMM/AMM bag graph) and
//! `alpha` (DLLP learning rate).

mod dllp;
mod linear;
mod optim;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

pub use dllp::{kl_divergence, DllpConfig};
pub use linear::{calibrate_bag, calibrate_bag_multiclass, lmm_class_means, mm_class_means};

use crate::dataset::BagData;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "EMLR")]
    Emlr,
    #[serde(rename = "MM")]
    Mm,
    #[serde(rename = "LMM")]
    Lmm,
    #[serde(rename = "AMM")]
    Amm,
    #[serde(rename = "DLLP")]
    Dllp,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [Self::Emlr, Self::Mm, Self::Lmm, Self::Amm, Self::Dllp];

    pub fn name(self) -> &'static str {
        match self {
            Self::Emlr => "EMLR",
            Self::Mm => "MM",
            Self::Lmm => "LMM",
            Self::Amm => "AMM",
            Self::Dllp => "DLLP",
        }
    }

    /// Whether the algorithm only handles two classes.
    pub fn binary_only(self) -> bool {
        matches!(self, Self::Mm | Self::Lmm | Self::Amm)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace(['/', '-', '_'], "").as_str() {
            "EMLR" => Ok(Self::Emlr),
            "MM" => Ok(Self::Mm),
            "LMM" => Ok(Self::Lmm),
            "AMM" => Ok(Self::Amm),
            "DLLP" => Ok(Self::Dllp),
            _ => Err(Error::InvalidArgument(format!("unknown algorithm {s:?}"))),
        }
    }
}

pub type Hyperparameters = BTreeMap<String, f64>;

/// Fixed training settings that are not searched over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub em_max_rounds: usize,
    pub em_tol: f64,
    pub amm_max_alternations: usize,
    /// Bag-graph bandwidth for AMM when the grid does not supply `sigma`.
    pub amm_sigma: f64,
    pub dllp: DllpConfig,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            em_max_rounds: 50,
            em_tol: 1e-4,
            amm_max_alternations: 20,
            amm_sigma: 1.0,
            dllp: DllpConfig::default(),
        }
    }
}

/// Trained weights, stored flat (row-major) for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Parameters {
    /// Binary linear model, `theta` has `d + 1` entries with the bias last.
    Linear {
        theta: Vec<f64>,
    },
    /// Multinomial linear model, `classes x (d + 1)`.
    Softmax {
        classes: usize,
        weights: Vec<f64>,
    },
    Network {
        layers: Vec<LayerWeights>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub iterations: usize,
    pub final_loss: f64,
    /// Per-round objective (EM rounds, AMM alternations, DLLP epochs).
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LLPModel {
    pub algorithm: Algorithm,
    pub n_features: usize,
    pub n_classes: usize,
    pub hyperparameters: Hyperparameters,
    pub parameters: Parameters,
    pub training_meta: TrainingMeta,
}

fn hp(hps: &Hyperparameters, name: &str) -> Result<f64> {
    hps.get(name)
        .copied()
        .ok_or_else(|| Error::InvalidArgument(format!("missing hyperparameter {name:?}")))
}

/// Trains `algorithm` on `bags`. Deterministic given `seed` (only DLLP draws
/// random numbers).
pub fn fit(
    algorithm: Algorithm,
    bags: &BagData,
    hps: &Hyperparameters,
    seed: u64,
    cfg: &LearnerConfig,
) -> Result<LLPModel> {
    if bags.n_classes() < 2 {
        return Err(Error::InvalidArgument(
            "at least two classes are required".into(),
        ));
    }
    if algorithm.binary_only() {
        linear::require_binary(bags, algorithm.name())?;
    }
    if bags.features.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("features must be finite".into()));
    }
    let (parameters, meta) = match algorithm {
        Algorithm::Dllp => {
            let out = dllp::fit_dllp(bags, hp(hps, "alpha")?, &cfg.dllp, seed)?;
            let layers = out
                .layers
                .into_iter()
                .map(|l| LayerWeights {
                    inputs: l.weights.ncols(),
                    outputs: l.weights.nrows(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect();
            (
                Parameters::Network { layers },
                TrainingMeta {
                    iterations: out.epochs,
                    final_loss: out.final_loss,
                    trace: out.trace,
                },
            )
        }
        linear_alg => {
            let out = match linear_alg {
                Algorithm::Emlr => {
                    linear::fit_emlr(bags, hp(hps, "C")?, cfg.em_max_rounds, cfg.em_tol)?
                }
                Algorithm::Mm => linear::fit_mm(bags, hp(hps, "lambda")?)?,
                Algorithm::Lmm => linear::fit_lmm(
                    bags,
                    hp(hps, "lambda")?,
                    hp(hps, "gamma")?,
                    hp(hps, "sigma")?,
                )?,
                Algorithm::Amm => {
                    let sigma = hps.get("sigma").copied().unwrap_or(cfg.amm_sigma);
                    linear::fit_amm(
                        bags,
                        hp(hps, "lambda")?,
                        hp(hps, "gamma")?,
                        sigma,
                        cfg.amm_max_alternations,
                    )?
                }
                Algorithm::Dllp => unreachable!(),
            };
            let parameters = if out.weights.nrows() == 1 {
                Parameters::Linear {
                    theta: out.weights.row(0).to_vec(),
                }
            } else {
                Parameters::Softmax {
                    classes: out.weights.nrows(),
                    weights: out.weights.iter().copied().collect(),
                }
            };
            (
                parameters,
                TrainingMeta {
                    iterations: out.iterations,
                    final_loss: out.final_loss,
                    trace: out.trace,
                },
            )
        }
    };
    let model = LLPModel {
        algorithm,
        n_features: bags.n_features(),
        n_classes: bags.n_classes(),
        hyperparameters: hps.clone(),
        parameters,
        training_meta: meta,
    };
    if !model.weights_finite() {
        return Err(Error::Numerical(format!(
            "{algorithm} produced non-finite weights"
        )));
    }
    Ok(model)
}

impl LLPModel {
    pub fn weights_finite(&self) -> bool {
        match &self.parameters {
            Parameters::Linear { theta } => theta.iter().all(|v| v.is_finite()),
            Parameters::Softmax { weights, .. } => weights.iter().all(|v| v.is_finite()),
            Parameters::Network { layers } => layers
                .iter()
                .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite())),
        }
    }

    fn check_dim(&self, features: &Array2<f64>) -> Result<()> {
        if features.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: features.ncols(),
            });
        }
        Ok(())
    }

    fn linear_scores(&self, features: &Array2<f64>, theta: &[f64]) -> Array1<f64> {
        let d = self.n_features;
        let w = ndarray::ArrayView1::from(&theta[..d]);
        features.dot(&w) + theta[d]
    }

    /// Per-item class probabilities, `n x C`.
    pub fn predict_proba(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_dim(features)?;
        Ok(match &self.parameters {
            Parameters::Linear { theta } => {
                let z = self.linear_scores(features, theta);
                let mut out = Array2::zeros((z.len(), 2));
                for (i, &v) in z.iter().enumerate() {
                    let p = linear::sigmoid(v);
                    out[[i, 0]] = 1.0 - p;
                    out[[i, 1]] = p;
                }
                out
            }
            Parameters::Softmax { classes, weights } => {
                let w = Array2::from_shape_vec((*classes, self.n_features + 1), weights.clone())
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                linear::softmax_rows(&linear::augment(features).dot(&w.t()))
            }
            Parameters::Network { layers } => dllp::predict_proba(&to_dense(layers)?, features),
        })
    }

    /// Class ids. Linear binary models threshold the score at zero with
    /// ties going to class 0; the others take the argmax, lowest index on ties.
    pub fn predict(&self, features: &Array2<f64>) -> Result<Vec<usize>> {
        self.check_dim(features)?;
        if let Parameters::Linear { theta } = &self.parameters {
            return Ok(self
                .linear_scores(features, theta)
                .iter()
                .map(|&z| usize::from(z > 0.0))
                .collect());
        }
        let probs = self.predict_proba(features)?;
        Ok(probs
            .axis_iter(Axis(0))
            .map(|row| {
                let mut best = 0;
                for k in 1..row.len() {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect())
    }

    /// Mean predicted class-probability vector of each bag, `L x C`.
    pub fn predict_proportions(&self, bags: &BagData) -> Result<Array2<f64>> {
        let probs = self.predict_proba(&bags.features)?;
        let mut out = Array2::zeros((bags.n_bags(), self.n_classes));
        for (b, members) in bags.bag_members().iter().enumerate() {
            if members.is_empty() {
                return Err(Error::EmptyBag(b));
            }
            for &i in members {
                out.row_mut(b).scaled_add(1.0, &probs.row(i));
            }
            out.row_mut(b).mapv_inplace(|v| v / members.len() as f64);
        }
        Ok(out)
    }
}

fn to_dense(layers: &[LayerWeights]) -> Result<Vec<dllp::Dense>> {
    layers
        .iter()
        .map(|l| {
            Ok(dllp::Dense {
                weights: Array2::from_shape_vec((l.outputs, l.inputs), l.weights.clone())
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?,
                bias: Array1::from(l.bias.clone()),
            })
        })
        .collect()
}

/// One named axis of a hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub name: String,
    pub values: Vec<f64>,
}

/// Per-algorithm hyperparameter axes; points are the cartesian product
/// with the first axis varying slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HyperGrid {
    pub axes: BTreeMap<Algorithm, Vec<GridAxis>>,
}

fn axis(name: &str, values: &[f64]) -> GridAxis {
    GridAxis {
        name: name.into(),
        values: values.to_vec(),
    }
}

impl HyperGrid {
    /// The published grids. AMM keeps `sigma` at its fixed default.
    pub fn published() -> Self {
        let lambda = axis("lambda", &[0.0, 1.0, 10.0, 100.0]);
        let gamma = axis("gamma", &[1e-2, 1e-1, 1.0]);
        let mut axes = BTreeMap::new();
        axes.insert(
            Algorithm::Emlr,
            vec![axis("C", &[1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3])],
        );
        axes.insert(Algorithm::Mm, vec![lambda.clone()]);
        axes.insert(
            Algorithm::Lmm,
            vec![
                lambda.clone(),
                gamma.clone(),
                axis("sigma", &[0.25, 0.5, 1.0]),
            ],
        );
        axes.insert(Algorithm::Amm, vec![lambda, gamma]);
        axes.insert(
            Algorithm::Dllp,
            vec![axis("alpha", &[1e-2, 1e-3, 1e-4, 1e-5, 1e-6])],
        );
        Self { axes }
    }

    pub fn validate(&self) -> Result<()> {
        for (alg, axes) in &self.axes {
            if axes.is_empty() || axes.iter().any(|a| a.values.is_empty()) {
                return Err(Error::InvalidArgument(format!("empty grid for {alg}")));
            }
        }
        Ok(())
    }

    /// Grid points for `algorithm` in grid order.
    pub fn points(&self, algorithm: Algorithm) -> Result<Vec<Hyperparameters>> {
        let axes = self
            .axes
            .get(&algorithm)
            .ok_or_else(|| Error::InvalidArgument(format!("no grid for {algorithm}")))?;
        let mut points = vec![Hyperparameters::new()];
        for a in axes {
            if a.values.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "axis {} of {algorithm} is empty",
                    a.name
                )));
            }
            points = points
                .into_iter()
                .flat_map(|p| {
                    a.values.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.insert(a.name.clone(), v);
                        q
                    })
                })
                .collect();
        }
        Ok(points)
    }
}
