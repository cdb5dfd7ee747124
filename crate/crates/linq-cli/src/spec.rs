//! Experiment specification files: everything a run needs, echoed verbatim
//! into the outputs so any result can be reproduced from its own record.

use std::path::{Path, PathBuf};

use linq_core::oppq::OppqConstants;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub instance: InstanceSource,
    /// Kernel perturbation weight applied after instance resolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<AlgorithmSpec>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub base_seed: u64,
    #[serde(default = "default_oracle_tolerance")]
    pub oracle_tolerance: f64,
    /// Success threshold for the summary's success_rate; defaults to the
    /// learner's epsilon for the variance-reduced algorithm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    /// Default output directory; the --out flag overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn default_trials() -> usize {
    1
}

fn default_oracle_tolerance() -> f64 {
    1e-9
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum InstanceSource {
    Path { path: PathBuf },
    Generator(GeneratorSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    RandomLinear {
        n_states: usize,
        n_actions: usize,
        n_features: usize,
        discount: f64,
        seed: u64,
        #[serde(default = "default_true")]
        anchored: bool,
    },
    SoftAggregation {
        n_states: usize,
        n_actions: usize,
        n_features: usize,
        discount: f64,
        seed: u64,
    },
    /// Embeds a random tabular inner MDP; K = inner_states * inner_actions + 1.
    LowerBound {
        inner_states: usize,
        inner_actions: usize,
        discount: f64,
        seed: u64,
    },
}

fn default_true() -> bool {
    true
}

impl GeneratorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            GeneratorSpec::RandomLinear { .. } => "random_linear",
            GeneratorSpec::SoftAggregation { .. } => "soft_aggregation",
            GeneratorSpec::LowerBound { .. } => "lower_bound",
        }
    }

    pub fn seed(&self) -> u64 {
        match *self {
            GeneratorSpec::RandomLinear { seed, .. } => seed,
            GeneratorSpec::SoftAggregation { seed, .. } => seed,
            GeneratorSpec::LowerBound { seed, .. } => seed,
        }
    }

    pub fn discount(&self) -> f64 {
        match *self {
            GeneratorSpec::RandomLinear { discount, .. } => discount,
            GeneratorSpec::SoftAggregation { discount, .. } => discount,
            GeneratorSpec::LowerBound { discount, .. } => discount,
        }
    }

    pub fn with_discount(&self, discount: f64) -> Self {
        let mut g = self.clone();
        match &mut g {
            GeneratorSpec::RandomLinear { discount: d, .. } => *d = discount,
            GeneratorSpec::SoftAggregation { discount: d, .. } => *d = discount,
            GeneratorSpec::LowerBound { discount: d, .. } => *d = discount,
        }
        g
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    Ppq {
        total_samples: u64,
        #[serde(default = "default_rounds_coefficient")]
        rounds_coefficient: f64,
        #[serde(default = "default_solve_tolerance")]
        solve_tolerance: f64,
    },
    Oppq {
        epsilon: f64,
        delta: f64,
        #[serde(default)]
        constants: OppqConstants,
    },
}

fn default_rounds_coefficient() -> f64 {
    4.0
}

fn default_solve_tolerance() -> f64 {
    1e-9
}

impl AlgorithmSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmSpec::Ppq { .. } => "ppq",
            AlgorithmSpec::Oppq { .. } => "oppq",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    N,
    Epsilon,
    Gamma,
    Xi,
}

impl SweepAxis {
    pub fn label(&self) -> &'static str {
        match self {
            SweepAxis::N => "n",
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::Gamma => "gamma",
            SweepAxis::Xi => "xi",
        }
    }
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::validation(format!("cannot read spec {}: {e}", path.display()))
        })?;
        let spec: ExperimentSpec = serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("bad spec {}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(CliError::validation("spec name must be nonempty"));
        }
        if self
            .name
            .chars()
            .any(|c| !(c.is_ascii_alphanumeric() || c == '-' || c == '_'))
        {
            return Err(CliError::validation(format!(
                "spec name '{}' must be alphanumeric with - or _",
                self.name
            )));
        }
        if self.trials == 0 {
            return Err(CliError::validation("trials must be at least 1"));
        }
        if !(self.oracle_tolerance > 0.0) {
            return Err(CliError::validation("oracle_tolerance must be positive"));
        }
        if let Some(xi) = self.xi {
            if !(0.0..=1.0).contains(&xi) {
                return Err(CliError::validation(format!(
                    "xi must lie in [0, 1], got {xi}"
                )));
            }
        }
        if let InstanceSource::Generator(g) = &self.instance {
            let gamma = g.discount();
            if !(gamma > 0.0 && gamma < 1.0) {
                return Err(CliError::validation(format!(
                    "discount must lie in (0, 1), got {gamma}"
                )));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(CliError::validation("sweep axis values must be nonempty"));
            }
            match sweep.axis {
                SweepAxis::N => {
                    if !matches!(self.algorithm, Some(AlgorithmSpec::Ppq { .. })) {
                        return Err(CliError::validation(
                            "sweep axis 'n' requires the ppq algorithm",
                        ));
                    }
                    if sweep.values.iter().any(|&v| v < 1.0) {
                        return Err(CliError::validation("sweep 'n' values must be >= 1"));
                    }
                }
                SweepAxis::Epsilon => {
                    if !matches!(self.algorithm, Some(AlgorithmSpec::Oppq { .. })) {
                        return Err(CliError::validation(
                            "sweep axis 'epsilon' requires the oppq algorithm",
                        ));
                    }
                    if sweep.values.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
                        return Err(CliError::validation("epsilon values must lie in (0, 1)"));
                    }
                }
                SweepAxis::Gamma => {
                    if !matches!(self.instance, InstanceSource::Generator(_)) {
                        return Err(CliError::validation(
                            "sweep axis 'gamma' requires a generated instance",
                        ));
                    }
                    if sweep.values.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
                        return Err(CliError::validation("gamma values must lie in (0, 1)"));
                    }
                }
                SweepAxis::Xi => {
                    if sweep.values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                        return Err(CliError::validation("xi values must lie in [0, 1]"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Effective success threshold for the summaries.
    pub fn effective_target(&self) -> Option<f64> {
        self.target_error.or(match &self.algorithm {
            Some(AlgorithmSpec::Oppq { epsilon, .. }) => Some(*epsilon),
            _ => None,
        })
    }
}
