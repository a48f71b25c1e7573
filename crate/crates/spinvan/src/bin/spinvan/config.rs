//! Run configuration file (TOML).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use spinvan::estimators::{DEFAULT_ESTIMATE_SAMPLES, DEFAULT_RESAMPLES};
use spinvan::priors::MAX_ORDER;
use spinvan::trainer::{TrainConfig, DEFAULT_BATCH, DEFAULT_ERA_LENGTH};
use spinvan::{Couplings, Geometry, PriorKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Lattice side `L`.
    pub side: usize,
    #[serde(default = "default_model")]
    pub model: PriorKind,
    /// Seed of the random `±1` couplings (EA only).
    #[serde(default)]
    pub coupling_seed: u64,
    /// Couplings in the lattice text format; overrides `coupling_seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_file: Option<PathBuf>,
    pub beta: f64,
    #[serde(default)]
    pub order: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub estimate: EstimateSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub era_length: usize,
    pub eras: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            batch_size: DEFAULT_BATCH,
            era_length: DEFAULT_ERA_LENGTH,
            eras: 10,
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_epsilon: t.adam_epsilon,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateSection {
    pub samples: usize,
    pub resamples: usize,
}

impl Default for EstimateSection {
    fn default() -> Self {
        EstimateSection {
            samples: DEFAULT_ESTIMATE_SAMPLES,
            resamples: DEFAULT_RESAMPLES,
        }
    }
}

fn default_name() -> String {
    "run".into()
}

fn default_model() -> PriorKind {
    PriorKind::Ising
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        // relative coupling files are resolved against the config's directory
        if let Some(file) = &config.coupling_file {
            if file.is_relative() {
                if let Some(dir) = path.parent() {
                    config.coupling_file = Some(dir.join(file));
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.side < 2 {
            bail!("side must be at least 2, got {}", self.side);
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            bail!("beta must be positive, got {}", self.beta);
        }
        if self.order > MAX_ORDER {
            bail!("order must be at most {MAX_ORDER}, got {}", self.order);
        }
        if let Some(file) = &self.coupling_file {
            if !file.exists() {
                bail!("coupling file {} does not exist", file.display());
            }
        }
        if self.estimate.resamples < 100 {
            bail!("estimate.resamples must be at least 100");
        }
        self.train_config().validate()?;
        Ok(())
    }

    pub fn couplings(&self) -> Result<Couplings> {
        let c = match &self.coupling_file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read coupling file {}", path.display()))?;
                Couplings::from_text(&text)?
            }
            None => {
                let g = Geometry::new(self.side)?;
                match self.model {
                    PriorKind::Ising => Couplings::ferromagnetic(g),
                    PriorKind::Ea => Couplings::ea_binary(g, self.coupling_seed),
                }
            }
        };
        if c.geometry().side() != self.side {
            bail!(
                "coupling file has side {} but the config says {}",
                c.geometry().side(),
                self.side
            );
        }
        Ok(c)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            beta: self.beta,
            batch_size: t.batch_size,
            era_length: t.era_length,
            eras: t.eras,
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_epsilon: t.adam_epsilon,
            seed: t.seed,
            prior_kind: self.model,
            order: self.order,
            hidden: self.hidden,
        }
    }
}
