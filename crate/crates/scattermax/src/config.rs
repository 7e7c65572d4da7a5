//! Declarative campaign configuration: a commentable, line-diffable TOML
//! file that validates into a [`CampaignConfig`] plus the objective model.
//! Unknown keys are rejected so typos fail loudly at parse time.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::external::{ExternalCommandModel, ExternalCommandSpec};
use crate::mc::Alg1Config;
use crate::objective::{self, ObjectiveModel, RidgePlateauModel, RidgePlateauSpec};
use crate::pipeline::{CampaignConfig, FitSettings, PassSettings};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Top-level campaign config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfigFile {
    pub schema_version: u32,
    pub model: ModelSection,
    /// Optional for built-in models (their default domain applies).
    pub domain: Option<DomainSection>,
    pub uncertainty: UncertaintySection,
    #[serde(default)]
    pub pass1: PassSettings,
    #[serde(default = "PassSettings::second_pass_default")]
    pub pass2: PassSettings,
    #[serde(default)]
    pub algorithm1: Alg1Config,
    #[serde(default)]
    pub fit: FitSettings,
    #[serde(default)]
    pub campaign: CampaignSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Name of a built-in objective.
    pub builtin: Option<String>,
    /// Inline ridge/plateau spec (requires `[domain]`).
    pub ridge_plateau: Option<RidgePlateauSpec>,
    /// External command objective (requires `[domain]`).
    pub external: Option<ExternalCommandSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintySection {
    /// Per-axis manufacturing standard deviation.
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    pub master_seed: u64,
    pub parallelism: usize,
    pub narrow_half_width_sigmas: f64,
    pub cluster_radius: f64,
    /// Budget of the naive baseline optimizer (`naive` subcommand).
    pub naive_bo_budget: usize,
    /// Default campaign directory; overridden by `--dir` and the
    /// environment.
    pub output_dir: Option<String>,
}

impl Default for CampaignSection {
    fn default() -> Self {
        CampaignSection {
            master_seed: 0,
            parallelism: 2,
            narrow_half_width_sigmas: 5.0,
            cluster_radius: 0.25,
            naive_bo_budget: 64,
            output_dir: None,
        }
    }
}

/// A parsed and validated campaign: the model to optimize plus engine
/// configuration.
pub struct ValidatedCampaign {
    pub model: Arc<dyn ObjectiveModel>,
    pub config: CampaignConfig,
    pub naive_bo_budget: usize,
    pub output_dir: Option<String>,
    pub warnings: Vec<String>,
}

impl CampaignConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: CampaignConfigFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        if file.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported config schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        Ok(file)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("config serialize: {e}")))
    }

    fn build_domain(&self, fallback: Option<BoxDomain>) -> Result<BoxDomain> {
        match (&self.domain, fallback) {
            (Some(d), _) => {
                let labels = match &d.labels {
                    Some(l) => l.clone(),
                    None => (0..d.lower.len()).map(|i| format!("p{i}")).collect(),
                };
                BoxDomain::new(d.lower.clone(), d.upper.clone(), labels)
            }
            (None, Some(default)) => Ok(default),
            (None, None) => Err(Error::Config(
                "[domain] is required for external and inline models".into(),
            )),
        }
    }

    /// Resolve the model and engine configuration, running all validation.
    pub fn validate(&self) -> Result<ValidatedCampaign> {
        let picked = [
            self.model.builtin.is_some(),
            self.model.ridge_plateau.is_some(),
            self.model.external.is_some(),
        ]
        .iter()
        .filter(|b| **b)
        .count();
        if picked != 1 {
            return Err(Error::Config(
                "[model] must set exactly one of: builtin, ridge_plateau, external".into(),
            ));
        }

        let (model, domain): (Arc<dyn ObjectiveModel>, BoxDomain) =
            if let Some(name) = &self.model.builtin {
                let m = objective::builtin(name).ok_or_else(|| {
                    Error::Config(format!(
                        "unknown builtin model '{name}' (available: {})",
                        objective::builtin_names().join(", ")
                    ))
                })?;
                let domain = self.build_domain(Some(m.default_domain()))?;
                (m, domain)
            } else if let Some(spec) = &self.model.ridge_plateau {
                let domain = self.build_domain(None)?;
                let m = RidgePlateauModel::new("ridge-plateau", spec.clone(), domain.clone())?;
                (Arc::new(m), domain)
            } else {
                let spec = self.model.external.clone().unwrap();
                let domain = self.build_domain(None)?;
                let m = ExternalCommandModel::new(spec, domain.clone())?;
                (Arc::new(m), domain)
            };

        domain.check_dim(model.dim()).map_err(|_| {
            Error::Config(format!(
                "[domain] has {} axes but the model expects {}",
                domain.dim(),
                model.dim()
            ))
        })?;
        if self.uncertainty.sigma.len() != domain.dim() {
            return Err(Error::Config(format!(
                "[uncertainty].sigma has {} entries for a {}-axis domain",
                self.uncertainty.sigma.len(),
                domain.dim()
            )));
        }

        let config = CampaignConfig {
            wide_domain: domain,
            sigma_manuf: self.uncertainty.sigma.clone(),
            pass1: self.pass1.clone(),
            pass2: self.pass2.clone(),
            alg1: self.algorithm1.clone(),
            fit: self.fit.clone(),
            narrow_half_width_sigmas: self.campaign.narrow_half_width_sigmas,
            cluster_radius: self.campaign.cluster_radius,
            master_seed: self.campaign.master_seed,
            parallelism: self.campaign.parallelism,
        };
        let warnings = config.validate()?;
        Ok(ValidatedCampaign {
            model,
            config,
            naive_bo_budget: self.campaign.naive_bo_budget,
            output_dir: self.campaign.output_dir.clone(),
            warnings,
        })
    }
}
