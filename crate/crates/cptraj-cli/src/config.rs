//! Run configuration: one JSON document with a section per subsystem.
//! Unknown keys are rejected so typos fail fast.

use std::path::Path;

use cptraj_core::eval::{default_rates, Method, RunConfig};
use cptraj_core::optimizer::OptimizerConfig;
use cptraj_core::sim::MarkovArConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    /// Master seed for generation, measures, and scenario sampling.
    pub seed: u64,
    /// Synthetic stream generator settings (used by `generate`).
    pub stream: MarkovArConfig,
    pub calibrator: CalibratorSection,
    pub optimizer: OptimizerConfig,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibratorSection {
    /// Threshold learning rate.
    pub eta: f64,
    /// Candidate-interval scale (`delta_t = big_d / sqrt(t)`).
    pub big_d: f64,
}

impl Default for CalibratorSection {
    fn default() -> Self {
        Self {
            eta: 0.005,
            big_d: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub methods: Vec<Method>,
    pub miscoverage_rates: Vec<f64>,
    /// Sample count for 2D region measures.
    pub mc_samples: u32,
    /// Optional custom objective name (must be registered).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub custom_objective: Option<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            methods: vec![Method::Cptraj],
            miscoverage_rates: default_rates(),
            mc_samples: 100_000,
            custom_objective: None,
        }
    }
}

impl FileConfig {
    /// Load from a JSON file; a missing `--config` means all defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
    }

    /// Apply command-line overrides, then validate every section.
    pub fn resolve(
        mut self,
        seed: Option<u64>,
        methods: &[Method],
        rates: Option<&[f64]>,
    ) -> Result<Self, CliError> {
        if let Some(seed) = seed {
            self.seed = seed;
            self.stream.seed = seed;
        }
        if !methods.is_empty() {
            self.eval.methods = methods.to_vec();
        }
        if let Some(rates) = rates {
            self.eval.miscoverage_rates = rates.to_vec();
        }
        self.stream
            .validate()
            .map_err(CliError::from_config_error)?;
        // Validate the run shape once per method.
        for &method in &self.eval.methods {
            self.run_config(method)
                .validate()
                .map_err(CliError::from_config_error)?;
        }
        if self.eval.methods.is_empty() {
            return Err(CliError::config("eval.methods must not be empty"));
        }
        if self.eval.custom_objective.is_some() {
            return Err(CliError::config(
                "eval.custom_objective requires an objective registry, which is only \
                 available through the library API",
            ));
        }
        Ok(self)
    }

    pub fn run_config(&self, method: Method) -> RunConfig {
        RunConfig {
            method,
            miscoverage_rates: self.eval.miscoverage_rates.clone(),
            eta: self.calibrator.eta,
            big_d: self.calibrator.big_d,
            optimizer: self.optimizer.clone(),
            mc_samples: self.eval.mc_samples,
            seed: self.seed,
            custom_objective: self.eval.custom_objective.clone(),
        }
    }

    /// Canonical JSON used for the manifest digest.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
