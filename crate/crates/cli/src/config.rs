//! JSON run configuration. Every section rejects unknown keys; command-line
//! flags override values read from the file.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use llp_core::baggen::regimes::{ProportionRegime, RegimeConfig, SizeRegime};
use llp_core::baggen::GenConfig;
use llp_core::citest::CiConfig;
use llp_core::dataset::{AssignmentMode, Variant};
use llp_core::harness::StrategyGrouping;
use llp_core::learners::{Algorithm, HyperGrid, LearnerConfig};
use llp_core::modelsel::{SelectionStrategy, StrategyKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub generate: GenerateConfig,
    pub verify: VerifyConfig,
    pub benchmark: BenchmarkSection,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Synthetic two-Gaussian base used when no CSV is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticBase {
    pub n_items: usize,
    pub positive_fraction: f64,
}

impl Default for SyntheticBase {
    fn default() -> Self {
        Self {
            n_items: 2000,
            positive_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub base: Option<PathBuf>,
    pub label_column: String,
    pub synthetic: Option<SyntheticBase>,
    /// Map every feature onto [-1, 1] before generating.
    pub scale: bool,
    pub sweep: bool,
    pub variant: Variant,
    pub n_bags: usize,
    pub size_regime: SizeRegime,
    pub proportion_regime: ProportionRegime,
    /// Defaults to the number of bags.
    pub n_clusters: Option<usize>,
    pub assignment_mode: AssignmentMode,
    /// Bag counts enumerated by a sweep.
    pub sweep_bags: Vec<usize>,
    pub regimes: RegimeConfig,
    pub generation: GenConfig,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            base: None,
            label_column: "label".into(),
            synthetic: None,
            scale: false,
            sweep: false,
            variant: Variant::Simple,
            n_bags: 5,
            size_regime: SizeRegime::Equal,
            proportion_regime: ProportionRegime::CloseGlobal,
            n_clusters: None,
            assignment_mode: AssignmentMode::Exact,
            sweep_bags: vec![5, 10],
            regimes: RegimeConfig::default(),
            generation: GenConfig::default(),
        }
    }
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base.is_some() && self.synthetic.is_some() {
            bail!("give either a base CSV or a synthetic base, not both");
        }
        if self.base.is_none() && self.synthetic.is_none() {
            bail!("no base dataset: pass --base <csv> or --synthetic <n>");
        }
        if self.sweep && self.sweep_bags.is_empty() {
            bail!("sweep needs at least one bag count");
        }
        if self.n_bags < 2 || self.sweep_bags.iter().any(|&l| l < 2) {
            bail!("every instance needs at least two bags");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub instance: Option<PathBuf>,
    pub alpha: f64,
    pub tests: CiConfig,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            instance: None,
            alpha: 0.05,
            tests: CiConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSection {
    pub instances: Vec<PathBuf>,
    pub algorithms: Vec<Algorithm>,
    pub strategies: Vec<StrategyKind>,
    /// Fold count, repeats and validation share shared by all strategies.
    pub k: usize,
    pub repeats: usize,
    pub val_fraction: f64,
    pub grid: HyperGrid,
    pub n_executions: usize,
    pub train_fraction: f64,
    pub alpha: f64,
    pub max_failure_rate: f64,
    pub grouping: StrategyGrouping,
    pub learner: LearnerConfig,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        let mut s = Self {
            instances: Vec::new(),
            algorithms: Vec::new(),
            strategies: Vec::new(),
            k: 0,
            repeats: 0,
            val_fraction: 0.0,
            grid: HyperGrid::published(),
            n_executions: 0,
            train_fraction: 0.0,
            alpha: 0.05,
            max_failure_rate: 0.2,
            grouping: StrategyGrouping::default(),
            learner: LearnerConfig::default(),
        };
        s.apply_published_preset();
        s
    }
}

impl BenchmarkSection {
    /// The published protocol: default grids, every strategy, 30 executions with
    /// 75% of each bag used for training.
    pub fn apply_published_preset(&mut self) {
        let strategy = SelectionStrategy::default();
        self.algorithms = Algorithm::ALL.to_vec();
        self.strategies = StrategyKind::ALL.to_vec();
        self.k = strategy.k;
        self.repeats = strategy.repeats;
        self.val_fraction = strategy.val_fraction;
        self.grid = HyperGrid::published();
        self.n_executions = 30;
        self.train_fraction = 0.75;
    }

    pub fn selection_strategies(&self) -> Vec<SelectionStrategy> {
        self.strategies
            .iter()
            .map(|&kind| SelectionStrategy {
                kind,
                k: self.k,
                repeats: self.repeats,
                val_fraction: self.val_fraction,
                seed: 0,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.instances.is_empty() {
            bail!("no instances to benchmark: pass --instance <dir>");
        }
        if self.algorithms.is_empty() || self.strategies.is_empty() {
            bail!("at least one algorithm and one strategy are required");
        }
        if self.n_executions < 2 {
            bail!(
                "at least two executions are required, got {}",
                self.n_executions
            );
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bail!("train_fraction {} outside (0, 1)", self.train_fraction);
        }
        self.grid.validate()?;
        for &a in &self.algorithms {
            self.grid.points(a)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"seed": 1, "bogus": 2}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"generate": {"n_bag": 5}}"#).is_err());
        let c: RunConfig =
            serde_json::from_str(r#"{"generate": {"n_bags": 10, "variant": "Hard"}}"#).unwrap();
        assert_eq!(c.generate.n_bags, 10);
        assert_eq!(c.generate.variant, Variant::Hard);
    }

    #[test]
    fn default_benchmark_is_published_protocol() {
        let b = BenchmarkSection::default();
        assert_eq!(b.n_executions * b.strategies.len(), 120);
        assert_eq!(b.train_fraction, 0.75);
    }
}
