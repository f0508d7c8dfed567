//! TOML run configuration shared by every CLI command. Unknown keys are
//! rejected; every key has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifiers::ClassifierMode;
use crate::error::{Error, Result};
use crate::eval::{ExperimentPlan, Method};
use crate::losses::{DistanceMetric, LossWeights};
use crate::nn::FeConfig;
use crate::signal::PopulationSpec;
use crate::training::TrainingSchedule;

/// Synthetic dataset layout for `generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub transmitters: usize,
    pub receivers: usize,
    pub days: Vec<u16>,
    /// Captures per (transmitter, receiver, day) cell.
    pub per_cell: usize,
    /// Samples per capture.
    pub frame_len: usize,
    /// Seed of the device profiles; captures follow the run seed.
    pub population_seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        let plan = ExperimentPlan::default();
        Self {
            transmitters: 12,
            receivers: 6,
            days: vec![1, 2, 3, 4],
            per_cell: 20,
            frame_len: plan.frame_len,
            population_seed: plan.population_seed,
        }
    }
}

/// Experiment sizes and protocol for `experiment`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    pub tx_lab: usize,
    pub rx_lab: usize,
    pub tx_field: usize,
    pub rx_field: usize,
    pub rx_test: usize,
    pub outliers: usize,
    pub mode: ClassifierMode,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub per_cell: usize,
    pub test_per_cell: usize,
    pub pool_tx: usize,
    pub pool_rx: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        let p = ExperimentPlan::default();
        Self {
            tx_lab: p.tx_lab,
            rx_lab: p.rx_lab,
            tx_field: p.tx_field,
            rx_field: p.rx_field,
            rx_test: p.rx_test,
            outliers: p.outliers,
            mode: p.mode,
            methods: p.methods,
            seeds: p.seeds,
            per_cell: p.per_cell,
            test_per_cell: p.test_per_cell,
            pool_tx: p.pool_tx,
            pool_rx: p.pool_rx,
        }
    }
}

/// Default locations, overridable by command-line flags.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every random draw derives from it.
    pub seed: u64,
    /// Open-mode false-alarm target used to set the rejection threshold.
    pub target_fa: f64,
    /// Statistic compared by the SD distance term.
    pub distance: DistanceMetric,
    pub population: PopulationSpec,
    pub arch: FeConfig,
    pub schedule: TrainingSchedule,
    pub weights: LossWeights,
    pub generate: GenerateConfig,
    pub plan: PlanConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = ExperimentPlan::default();
        Self {
            seed: 1,
            target_fa: p.target_fa,
            distance: p.metric,
            population: p.population,
            arch: p.arch,
            schedule: p.schedule,
            weights: p.weights,
            generate: GenerateConfig::default(),
            plan: PlanConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.weights.validate()?;
        if self.generate.days.is_empty() || self.generate.per_cell == 0 {
            return Err(Error::Config("generate needs at least one day and per_cell >= 1".into()));
        }
        Ok(())
    }

    /// The experiment plan described by this configuration.
    pub fn to_plan(&self) -> ExperimentPlan {
        let p = &self.plan;
        ExperimentPlan {
            tx_lab: p.tx_lab,
            rx_lab: p.rx_lab,
            tx_field: p.tx_field,
            rx_field: p.rx_field,
            rx_test: p.rx_test,
            outliers: p.outliers,
            mode: p.mode,
            methods: p.methods.clone(),
            seeds: p.seeds.clone(),
            per_cell: p.per_cell,
            test_per_cell: p.test_per_cell,
            pool_tx: p.pool_tx,
            pool_rx: p.pool_rx,
            population_seed: self.generate.population_seed,
            population: self.population.clone(),
            frame_len: self.generate.frame_len,
            arch: self.arch.clone(),
            schedule: self.schedule.clone(),
            weights: self.weights,
            metric: self.distance,
            target_fa: self.target_fa,
        }
    }

    /// Every key with its default value, as a TOML document.
    pub fn documented_defaults() -> String {
        toml::to_string_pretty(&RunConfig::default()).expect("defaults serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
        assert_eq!(RunConfig::default().weights.gamma, 1.0);
    }

    #[test]
    fn defaults_round_trip() {
        let text = RunConfig::documented_defaults();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), RunConfig::default());
        for key in ["seed", "target_fa", "[schedule]", "lr_part2", "gamma", "[plan]", "methods", "[population.channel]"] {
            assert!(text.contains(key), "{key} missing");
        }
    }

    #[test]
    fn partial_sections_and_unknown_keys() {
        let cfg = RunConfig::from_toml("[schedule]\ne1 = 3\n[weights]\nbeta = 0.5\n[population.channel]\nsnr_db = 30.0\n")
            .unwrap();
        assert_eq!(cfg.schedule.e1, 3);
        assert_eq!(cfg.schedule.e2, 2);
        assert_eq!(cfg.weights.gamma, 1.0);
        assert_eq!(cfg.population.channel.snr_db, 30.0);
        assert_eq!(cfg.population.channel.taps, 3);
        assert!(RunConfig::from_toml("[schedule]\nepochs = 3\n").is_err());
        assert!(RunConfig::from_toml("colour = 1\n").is_err());
        assert!(RunConfig::from_toml("[plan]\nmethods = [\"svm\"]\n").is_err());
        let cfg = RunConfig::from_toml("[plan]\nmethods = [\"naive\", \"exhaustive5\", \"gan\"]\n").unwrap();
        assert_eq!(cfg.to_plan().methods, vec![Method::Naive, Method::Exhaustive(5), Method::Gan]);
        assert!(RunConfig::from_toml("[schedule]\nlr_part2 = 0.01\n").is_err());
    }
}
