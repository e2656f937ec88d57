//! Stage one: MAP optimization of a single member with AdamW and early stopping.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{BdeError, Result};
use crate::model::{self, Dataset, NetworkConfig, ParameterVector, PriorSpec};
use crate::rng::{self, Phase};

/// Relative decrease of the validation loss that counts as an improvement.
pub const IMPROVEMENT_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchSize {
    #[default]
    Full,
    #[serde(untagged)]
    Rows(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub validation_split: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: BatchSize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-4,
            epochs: 1000,
            patience: 20,
            validation_split: 0.15,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: BatchSize::Full,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BdeError::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.patience == 0 || self.patience > self.epochs {
            return bad(format!(
                "patience must be in 1..={}, got {}",
                self.epochs, self.patience
            ));
        }
        if !(0.0..1.0).contains(&self.validation_split) {
            return bad(format!(
                "validation_split must be in [0, 1), got {}",
                self.validation_split
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must be in (0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.batch_size == BatchSize::Rows(0) {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
}

impl AdamWState {
    pub fn new(d: usize) -> Self {
        Self {
            m: vec![0.0; d],
            v: vec![0.0; d],
            step_count: 0,
        }
    }
}

/// One AdamW update in place.
///
/// `theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)`, with the
/// decay applied to the pre-update `theta`.
pub fn adamw_step(
    theta: &mut [f64],
    grad: &[f64],
    state: &mut AdamWState,
    cfg: &OptimizerConfig,
) -> Result<()> {
    if theta.len() != grad.len() || theta.len() != state.m.len() || theta.len() != state.v.len() {
        return Err(BdeError::Shape(format!(
            "adamw: theta {}, grad {}, moments {}/{}",
            theta.len(),
            grad.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(BdeError::Numeric {
            what: "adamw gradient",
            index,
        });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..theta.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        theta[i] -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * theta[i]);
    }
    Ok(())
}

/// Seeded shuffle split into `(train, valid)`; the validation part has
/// `ceil(n * fraction)` rows.
pub fn split_train_validation(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(BdeError::Config(format!(
            "validation fraction must be in [0, 1), got {fraction}"
        )));
    }
    let n = data.len();
    let n_valid = (n as f64 * fraction).ceil() as usize;
    if n_valid >= n {
        return Err(BdeError::Config(format!(
            "validation fraction {fraction} leaves no training rows out of {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    if n_valid > 0 {
        idx.shuffle(&mut rng::stream(seed, Phase::ValidationSplit, 0));
    }
    let (valid, train) = idx.split_at(n_valid);
    Ok((data.select(train), data.select(valid)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLosses {
    /// Mean training NLL after the epoch's updates.
    pub train: f64,
    /// Mean validation NLL, or the training loss when there is no validation split.
    pub valid: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochLosses>,
    /// 0-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub early_stopped: bool,
}

impl TrainHistory {
    pub fn best_valid(&self) -> f64 {
        self.epochs[self.best_epoch].valid
    }
}

fn mean_nll(net: &NetworkConfig, theta: &[f64], data: &Dataset) -> Result<f64> {
    Ok(model::negative_log_likelihood(net, theta, data)? / data.len() as f64)
}

/// Gradient of `mean NLL + ||theta||^2 / (2 n prior_std^2)`, i.e. `-log_posterior / n`
/// on the batch.
fn loss_gradient(
    net: &NetworkConfig,
    theta: &[f64],
    batch: &Dataset,
    prior: &PriorSpec,
    grad: &mut [f64],
) -> Result<()> {
    model::nll_with_grad(net, theta, batch, Some(&mut *grad))?;
    let n = batch.len() as f64;
    let prior_scale = 1.0 / (prior.prior_std * prior.prior_std);
    for (g, &t) in grad.iter_mut().zip(theta) {
        *g = (*g + t * prior_scale) / n;
    }
    Ok(())
}

/// Trains one member from `init_params(net, seed)`.
///
/// Returns the parameters of the epoch with the lowest validation loss.
pub fn train_member(
    data: &Dataset,
    net: &NetworkConfig,
    opt: &OptimizerConfig,
    prior: &PriorSpec,
    seed: u64,
) -> Result<(ParameterVector, TrainHistory)> {
    net.validate()?;
    opt.validate()?;
    prior.validate()?;
    data.check_compatible(net)?;

    let (train, valid) = split_train_validation(data, opt.validation_split, seed)?;
    let use_validation = !valid.is_empty();
    let mut theta = model::init_params(net, seed);
    let d = theta.len();
    let mut state = AdamWState::new(d);
    let mut grad = vec![0.0; d];

    let n_train = train.len();
    let batch_rows = match opt.batch_size {
        BatchSize::Full => n_train,
        BatchSize::Rows(b) => b.min(n_train),
    };
    let mut order: Vec<usize> = (0..n_train).collect();

    let mut history = TrainHistory::default();
    let mut best = theta.clone();
    let mut best_loss = f64::INFINITY;
    let mut stale = 0;

    for epoch in 0..opt.epochs {
        let wrap = |source: BdeError| BdeError::Training {
            epoch,
            source: Box::new(source),
        };
        if batch_rows == n_train {
            loss_gradient(net, &theta, &train, prior, &mut grad).map_err(wrap)?;
            adamw_step(&mut theta, &grad, &mut state, opt).map_err(wrap)?;
        } else {
            order.shuffle(&mut rng::stream(seed, Phase::BatchShuffle, epoch as u64));
            for chunk in order.chunks(batch_rows) {
                let batch = train.select(chunk);
                loss_gradient(net, &theta, &batch, prior, &mut grad).map_err(wrap)?;
                adamw_step(&mut theta, &grad, &mut state, opt).map_err(wrap)?;
            }
        }

        let train_loss = mean_nll(net, &theta, &train).map_err(wrap)?;
        let valid_loss = if use_validation {
            mean_nll(net, &theta, &valid).map_err(wrap)?
        } else {
            train_loss
        };
        history.epochs.push(EpochLosses {
            train: train_loss,
            valid: valid_loss,
        });

        let improved = valid_loss < best_loss - IMPROVEMENT_REL_TOL * best_loss.abs();
        if improved || !best_loss.is_finite() {
            best_loss = valid_loss;
            best.copy_from_slice(&theta);
            history.best_epoch = epoch;
            stale = 0;
        } else if use_validation {
            stale += 1;
            if stale >= opt.patience {
                history.early_stopped = true;
                break;
            }
        }
    }

    // Without a validation split early stopping is off and the last iterate is returned.
    if !use_validation {
        history.best_epoch = history.epochs.len() - 1;
        return Ok((theta, history));
    }
    Ok((best, history))
}

/// Mean validation NLL of `theta` on the split `train_member` used for `seed`.
pub fn validation_loss(
    data: &Dataset,
    net: &NetworkConfig,
    opt: &OptimizerConfig,
    theta: &[f64],
    seed: u64,
) -> Result<f64> {
    let (train, valid) = split_train_validation(data, opt.validation_split, seed)?;
    if valid.is_empty() {
        mean_nll(net, theta, &train)
    } else {
        mean_nll(net, theta, &valid)
    }
}
