//! TOML training configuration.
//!
//! Every key is optional; missing keys take the defaults below and unknown keys
//! are rejected.
//!
//! ```toml
//! n_members = 8
//! hidden_layers = [16, 16]
//! activation = "relu"
//! epochs = 1000
//! validation_split = 0.15
//! lr = 1e-3
//! weight_decay = 1e-4
//! patience = 20
//! warmup_steps = 5000
//! n_samples = 200
//! n_thinning = 10
//! desired_energy_var_start = 0.5
//! desired_energy_var_end = 0.1
//! prior_std = 1.0
//! master_seed = 0
//! max_workers = "auto"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::{EnsembleConfig, Workers};
use crate::error::{BdeError, Result};
use crate::model::{Activation, NetworkConfig, PriorSpec, Task};
use crate::optimizer::{BatchSize, OptimizerConfig};
use crate::sampler::{SamplerConfig, StepSetting};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub n_members: usize,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub validation_split: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub batch_size: BatchSize,
    pub warmup_steps: usize,
    pub n_samples: usize,
    pub n_thinning: usize,
    pub desired_energy_var_start: f64,
    pub desired_energy_var_end: f64,
    pub step_size: StepSetting,
    pub decoherence_length: StepSetting,
    pub prior_std: f64,
    pub master_seed: u64,
    pub max_workers: Workers,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let opt = OptimizerConfig::default();
        let s = SamplerConfig::default();
        Self {
            n_members: 8,
            hidden_layers: vec![16, 16],
            activation: Activation::Relu,
            epochs: opt.epochs,
            validation_split: opt.validation_split,
            lr: opt.lr,
            weight_decay: opt.weight_decay,
            patience: opt.patience,
            batch_size: opt.batch_size,
            warmup_steps: s.warmup_steps,
            n_samples: s.n_samples,
            n_thinning: s.n_thinning,
            desired_energy_var_start: s.desired_energy_var_start,
            desired_energy_var_end: s.desired_energy_var_end,
            step_size: s.initial_step_size,
            decoherence_length: s.decoherence_length,
            prior_std: s.prior.prior_std,
            master_seed: 0,
            max_workers: Workers::Auto,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| BdeError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| BdeError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            BdeError::Config(m) => BdeError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Full ensemble configuration for data with `input_dim` features and `task`.
    pub fn to_ensemble_config(&self, input_dim: usize, task: Task) -> Result<EnsembleConfig> {
        let net = NetworkConfig {
            input_dim,
            hidden_layers: self.hidden_layers.clone(),
            activation: self.activation,
            task,
        };
        let opt = OptimizerConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            patience: self.patience,
            validation_split: self.validation_split,
            batch_size: self.batch_size,
            ..OptimizerConfig::default()
        };
        let sampler = SamplerConfig {
            warmup_steps: self.warmup_steps,
            n_samples: self.n_samples,
            n_thinning: self.n_thinning,
            desired_energy_var_start: self.desired_energy_var_start,
            desired_energy_var_end: self.desired_energy_var_end,
            initial_step_size: self.step_size,
            decoherence_length: self.decoherence_length,
            prior: PriorSpec::new(self.prior_std)?,
        };
        let cfg = EnsembleConfig {
            n_members: self.n_members,
            net,
            opt,
            sampler,
            master_seed: self.master_seed,
            max_workers: self.max_workers,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
