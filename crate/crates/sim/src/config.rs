//! Experiment configuration: one TOML file per run.
//!
//! Every field except `seed` and `[dataset].kind` has a default; unknown
//! keys are rejected. [`ExperimentConfig::echo`] writes the fully resolved
//! configuration, which parses back to an equal value.

use std::path::PathBuf;

use pfedmoe_core::data::{PartitionScheme, PartitionSpec, DEFAULT_COUNT_CONCENTRATION};
use pfedmoe_core::fed::{Algorithm, FederationConfig, ModelAssignment};
use pfedmoe_core::metrics::AccuracyMean;
use pfedmoe_core::models::{CnnVariant, InputDims, DEFAULT_GATE_HIDDEN};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub federation: FederationSection,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        #[serde(default = "defaults::classes")]
        classes: usize,
        #[serde(default = "defaults::channels")]
        channels: usize,
        #[serde(default = "defaults::side")]
        height: usize,
        #[serde(default = "defaults::side")]
        width: usize,
        #[serde(default = "defaults::samples_per_class")]
        samples_per_class: usize,
        /// Distance between class means in units of the noise deviation.
        #[serde(default = "defaults::separation")]
        separation: f64,
    },
    Cifar10 {
        /// CIFAR-10 binary batch files, relative to the config file.
        files: Vec<PathBuf>,
        /// Keep only the first this-many records of each class (0 keeps all).
        #[serde(default)]
        max_per_class: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Pathological,
    Practical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    #[serde(default = "defaults::scheme")]
    pub scheme: SchemeName,
    /// Pathological: classes per client.
    #[serde(default = "defaults::classes_per_client")]
    pub classes_per_client: usize,
    /// Pathological: Dirichlet concentration of per-class counts.
    #[serde(default = "defaults::concentration")]
    pub concentration: f64,
    /// Practical: Dirichlet concentration of class proportions.
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            scheme: defaults::scheme(),
            classes_per_client: defaults::classes_per_client(),
            concentration: defaults::concentration(),
            gamma: defaults::gamma(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSection {
    #[serde(default = "defaults::algorithm")]
    pub algorithm: String,
    #[serde(default = "defaults::clients")]
    pub clients: usize,
    #[serde(default = "defaults::participation")]
    pub participation: f64,
    #[serde(default = "defaults::rounds")]
    pub rounds: usize,
    #[serde(default = "defaults::local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::lr")]
    pub lr_theta: f64,
    /// Defaults to `lr_theta`.
    #[serde(default)]
    pub lr_omega: Option<f64>,
    #[serde(default = "defaults::lr")]
    pub lr_phi: f64,
    /// `unweighted` or `by_samples`.
    #[serde(default = "defaults::accuracy_mean")]
    pub accuracy_mean: String,
}

impl Default for FederationSection {
    fn default() -> Self {
        FederationSection {
            algorithm: defaults::algorithm(),
            clients: defaults::clients(),
            participation: defaults::participation(),
            rounds: defaults::rounds(),
            local_epochs: defaults::local_epochs(),
            batch_size: defaults::batch_size(),
            lr_theta: defaults::lr(),
            lr_omega: None,
            lr_phi: defaults::lr(),
            accuracy_mean: defaults::accuracy_mean(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `modulo5` or one of `cnn1`..`cnn5` for every client.
    #[serde(default = "defaults::assignment")]
    pub assignment: String,
    /// Hidden width m of the gating network.
    #[serde(default = "defaults::gate_hidden")]
    pub gate_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            assignment: defaults::assignment(),
            gate_hidden: defaults::gate_hidden(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Log gate weights every this-many rounds; 0 logs the final round only.
    #[serde(default)]
    pub gate_every: usize,
    /// Write a checkpoint every this-many rounds; 0 writes none.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Mean accuracies (%) for which the summary reports rounds-to-target.
    #[serde(default)]
    pub targets: Vec<f64>,
}

mod defaults {
    use super::*;

    pub fn classes() -> usize {
        4
    }
    pub fn channels() -> usize {
        3
    }
    pub fn side() -> usize {
        16
    }
    pub fn samples_per_class() -> usize {
        100
    }
    pub fn separation() -> f64 {
        3.0
    }
    pub fn scheme() -> SchemeName {
        SchemeName::Pathological
    }
    pub fn classes_per_client() -> usize {
        2
    }
    // a no-op cast unless the core is built with f32 tensors
    #[allow(clippy::unnecessary_cast)]
    pub fn concentration() -> f64 {
        DEFAULT_COUNT_CONCENTRATION as f64
    }
    pub fn gamma() -> f64 {
        0.5
    }
    pub fn algorithm() -> String {
        "pfedmoe".into()
    }
    pub fn clients() -> usize {
        10
    }
    pub fn participation() -> f64 {
        1.0
    }
    pub fn rounds() -> usize {
        20
    }
    pub fn local_epochs() -> usize {
        1
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn lr() -> f64 {
        0.01
    }
    pub fn accuracy_mean() -> String {
        "unweighted".into()
    }
    pub fn assignment() -> String {
        "modulo5".into()
    }
    pub fn gate_hidden() -> usize {
        DEFAULT_GATE_HIDDEN
    }
}

/// Parses and validates a config, resolving every default.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
    if cfg.federation.lr_omega.is_none() {
        cfg.federation.lr_omega = Some(cfg.federation.lr_theta);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn invalid(field: &str, constraint: impl std::fmt::Display) -> SimError {
    SimError::Config(format!("{field}: {constraint}"))
}

impl ExperimentConfig {
    /// Re-checks every cross-field constraint.
    pub fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetConfig::Synthetic {
                classes,
                channels,
                height,
                width,
                samples_per_class,
                separation,
            } => {
                if *classes < 2 {
                    return Err(invalid("dataset.classes", "must be at least 2"));
                }
                if *channels == 0 || *samples_per_class == 0 {
                    return Err(invalid("dataset", "channels and samples_per_class must be at least 1"));
                }
                if (*height).min(*width) < pfedmoe_core::models::MIN_INPUT_SIDE {
                    return Err(invalid(
                        "dataset.height/width",
                        format!("must be at least {}", pfedmoe_core::models::MIN_INPUT_SIDE),
                    ));
                }
                if !(separation.is_finite() && *separation >= 0.0) {
                    return Err(invalid("dataset.separation", "must be finite and non-negative"));
                }
            }
            DatasetConfig::Cifar10 { files, .. } => {
                if files.is_empty() {
                    return Err(invalid("dataset.files", "must list at least one file"));
                }
            }
        }
        let p = &self.partition;
        if p.classes_per_client == 0 || p.classes_per_client > self.num_classes() {
            return Err(invalid(
                "partition.classes_per_client",
                format!("must satisfy 1 <= k <= {} classes", self.num_classes()),
            ));
        }
        if !(p.concentration > 0.0 && p.concentration.is_finite()) {
            return Err(invalid("partition.concentration", "must be positive"));
        }
        if !(p.gamma > 0.0 && p.gamma.is_finite()) {
            return Err(invalid("partition.gamma", "must be positive"));
        }
        if self.federation.participation.is_nan() || !(0.0 < self.federation.participation && self.federation.participation <= 1.0) {
            return Err(invalid(
                "federation.participation",
                format!("must satisfy 0 < C <= 1, got {}", self.federation.participation),
            ));
        }
        if self.federation.rounds == 0 {
            return Err(invalid("federation.rounds", "must be at least 1"));
        }
        if self.output.targets.iter().any(|t| !t.is_finite()) {
            return Err(invalid("output.targets", "must be finite"));
        }
        self.federation_config()?.validate().map_err(|e| invalid("federation", e))
    }

    pub fn num_classes(&self) -> usize {
        match self.dataset {
            DatasetConfig::Synthetic { classes, .. } => classes,
            DatasetConfig::Cifar10 { .. } => 10,
        }
    }

    pub fn input_dims(&self) -> InputDims {
        match self.dataset {
            DatasetConfig::Synthetic {
                channels, height, width, ..
            } => InputDims::new(channels, height, width),
            DatasetConfig::Cifar10 { .. } => InputDims::CIFAR,
        }
    }

    pub fn federation_config(&self) -> Result<FederationConfig> {
        let f = &self.federation;
        let algorithm: Algorithm = f.algorithm.parse().map_err(|e| invalid("federation.algorithm", e))?;
        let assignment = match self.model.assignment.as_str() {
            "modulo5" => ModelAssignment::Modulo5,
            other => ModelAssignment::Fixed(
                other
                    .parse::<CnnVariant>()
                    .map_err(|_| invalid("model.assignment", format!("unknown value '{other}', expected modulo5 or cnn1..cnn5")))?,
            ),
        };
        let accuracy_mean = match f.accuracy_mean.as_str() {
            "unweighted" => AccuracyMean::Unweighted,
            "by_samples" => AccuracyMean::BySamples,
            other => {
                return Err(invalid(
                    "federation.accuracy_mean",
                    format!("unknown value '{other}', expected unweighted or by_samples"),
                ))
            }
        };
        Ok(FederationConfig {
            algorithm,
            num_clients: f.clients,
            participation: f.participation as _,
            rounds: f.rounds,
            local_epochs: f.local_epochs,
            batch_size: f.batch_size,
            lr_theta: f.lr_theta as _,
            lr_omega: f.lr_omega.unwrap_or(f.lr_theta) as _,
            lr_phi: f.lr_phi as _,
            assignment,
            gate_hidden: self.model.gate_hidden,
            accuracy_mean,
            seed: self.seed,
        })
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        let p = &self.partition;
        PartitionSpec {
            scheme: match p.scheme {
                SchemeName::Pathological => PartitionScheme::Pathological {
                    classes_per_client: p.classes_per_client,
                    concentration: p.concentration as _,
                },
                SchemeName::Practical => PartitionScheme::Practical { gamma: p.gamma as _ },
            },
            num_clients: self.federation.clients,
            seed: self.seed,
        }
    }

    /// The resolved configuration as TOML.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Whether gate weights are logged after round `t`.
    pub fn logs_gate_at(&self, t: usize) -> bool {
        let every = self.output.gate_every;
        t == self.federation.rounds || (every > 0 && t.is_multiple_of(every))
    }
}
