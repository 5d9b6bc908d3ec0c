//! Variant-aware toolkit for learning from label proportions (LLP).
//!
//! The crate covers the whole evaluation pipeline:
//!
//! * [`dataset`] holds the domain types (base datasets, generation recipes,
//!   LLP instances) together with CSV/JSON ingestion and preprocessing.
//! * [`cluster`] is a k-means implementation used to coarsen the feature
//!   space before Intermediate and Hard generation.
//! * [`baggen`] assigns items to bags so that the resulting instance follows
//!   one of the Naive, Simple, Intermediate or Hard dependence structures.
//! * [`citest`] checks those structures with a chi-square test and
//!   tree-based predictive conditional-independence tests.
//! * [`learners`] implements EM/LR, MM, LMM, AMM and DLLP behind one
//!   fit/predict contract.
//! * [`modelsel`] and [`harness`] provide label-free hyperparameter
//!   selection and the repeated train/test evaluation protocol.
//!
//! Every stochastic routine takes an explicit `u64` seed; see [`rng`] for the
//! generator and the seed derivation scheme. With the default `parallel`
//! feature, independent tasks (restarts, splits, folds, executions) run on
//! the rayon pool; results are always collected in task order, so outputs do
//! not depend on the number of threads.

pub mod baggen;
pub mod citest;
pub mod cluster;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod learners;
pub mod modelsel;
pub mod par;
pub mod rng;
pub mod special;
pub mod synthetic;

pub use error::{Error, Result};
