//! Feed-forward networks, task heads, and the unnormalized log-posterior.
//!
//! The log-posterior and its gradient are the single target shared by the
//! optimizer and the sampler. The likelihood is summed over data, so the
//! posterior sharpens as `n` grows; callers that want a scale-free loss divide
//! by `n` themselves.

use std::ops::{Deref, DerefMut};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{BdeError, Result};
use crate::matrix::Matrix;
use crate::rng::{self, Phase};
use crate::sampler::LogDensity;

/// Lower bound added to every predicted standard deviation.
pub const SIGMA_MIN: f64 = 1e-3;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = BdeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(BdeError::Config(format!(
                "unknown activation {other:?} (expected \"relu\" or \"tanh\")"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Task {
    /// Gaussian head: a mean and a raw scale per target.
    Regression { targets: usize },
    Classification { classes: usize },
}

impl Task {
    pub fn is_regression(&self) -> bool {
        matches!(self, Task::Regression { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub task: Task,
}

impl NetworkConfig {
    pub fn regression(input_dim: usize, hidden_layers: Vec<usize>, targets: usize) -> Self {
        Self {
            input_dim,
            hidden_layers,
            activation: Activation::Relu,
            task: Task::Regression { targets },
        }
    }

    pub fn classification(input_dim: usize, hidden_layers: Vec<usize>, classes: usize) -> Self {
        Self {
            input_dim,
            hidden_layers,
            activation: Activation::Relu,
            task: Task::Classification { classes },
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn output_width(&self) -> usize {
        match self.task {
            Task::Regression { targets } => 2 * targets,
            Task::Classification { classes } => classes,
        }
    }

    /// `(fan_in, fan_out)` for every affine layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers.len() + 1);
        let mut fan_in = self.input_dim;
        for &width in &self.hidden_layers {
            dims.push((fan_in, width));
            fan_in = width;
        }
        dims.push((fan_in, self.output_width()));
        dims
    }

    /// Flat parameter dimension `d`.
    pub fn num_params(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|&(fan_in, fan_out)| (fan_in + 1) * fan_out)
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(BdeError::Config("input_dim must be positive".into()));
        }
        if let Some(i) = self.hidden_layers.iter().position(|&w| w == 0) {
            return Err(BdeError::Config(format!("hidden layer {i} has width 0")));
        }
        match self.task {
            Task::Regression { targets: 0 } => {
                Err(BdeError::Config("regression needs at least one target".into()))
            }
            Task::Classification { classes } if classes < 2 => Err(BdeError::Config(format!(
                "classification needs at least 2 classes, got {classes}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Flat network parameters `theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn squared_norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParameterVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParameterVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// `n x t` real targets.
    Regression(Matrix),
    /// Labels in `0..classes`.
    Classification { labels: Vec<usize>, classes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub targets: Targets,
}

impl Dataset {
    pub fn regression(x: Matrix, y: Matrix) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(BdeError::Shape(format!(
                "{} feature rows but {} target rows",
                x.rows(),
                y.rows()
            )));
        }
        if !y.all_finite() {
            return Err(BdeError::Data("non-finite regression target".into()));
        }
        Self::checked(x, Targets::Regression(y))
    }

    pub fn classification(x: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(BdeError::Shape(format!(
                "{} feature rows but {} labels",
                x.rows(),
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(BdeError::Data(format!(
                "label {l} at row {i} is outside 0..{classes}"
            )));
        }
        Self::checked(x, Targets::Classification { labels, classes })
    }

    fn checked(x: Matrix, targets: Targets) -> Result<Self> {
        if x.rows() == 0 {
            return Err(BdeError::Data("dataset has no rows".into()));
        }
        if let Some(i) = x.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(BdeError::Data(format!(
                "non-finite feature at row {}, column {}",
                i / x.cols().max(1),
                i % x.cols().max(1)
            )));
        }
        Ok(Self { x, targets })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    /// Subset with the given rows. The result may be empty.
    pub fn select(&self, indices: &[usize]) -> Self {
        let targets = match &self.targets {
            Targets::Regression(y) => Targets::Regression(y.select_rows(indices)),
            Targets::Classification { labels, classes } => Targets::Classification {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
        };
        Self {
            x: self.x.select_rows(indices),
            targets,
        }
    }

    /// Checks that the data can be fed to a network built from `config`.
    pub fn check_compatible(&self, config: &NetworkConfig) -> Result<()> {
        if self.x.cols() != config.input_dim {
            return Err(BdeError::Shape(format!(
                "data has {} features, network expects {}",
                self.x.cols(),
                config.input_dim
            )));
        }
        match (&self.targets, config.task) {
            (Targets::Regression(y), Task::Regression { targets }) if y.cols() == targets => Ok(()),
            (Targets::Regression(y), Task::Regression { targets }) => Err(BdeError::Shape(format!(
                "data has {} targets, network predicts {targets}",
                y.cols()
            ))),
            (Targets::Classification { classes: a, .. }, Task::Classification { classes: b })
                if *a == b =>
            {
                Ok(())
            }
            (Targets::Classification { classes: a, .. }, Task::Classification { classes: b }) => {
                Err(BdeError::Shape(format!("data has {a} classes, network predicts {b}")))
            }
            _ => Err(BdeError::TaskMismatch(
                "dataset and network disagree on regression vs classification".into(),
            )),
        }
    }
}

/// Decoded Gaussian head: per-row, per-target mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHeadOutput {
    pub mu: Matrix,
    pub sigma: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub prior_std: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { prior_std: 1.0 }
    }
}

impl PriorSpec {
    pub fn new(prior_std: f64) -> Result<Self> {
        let p = Self { prior_std };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prior_std > 0.0 && self.prior_std.is_finite()) {
            return Err(BdeError::Config(format!(
                "prior_std must be positive and finite, got {}",
                self.prior_std
            )));
        }
        Ok(())
    }

    /// `||theta||^2 / (2 prior_std^2)`.
    pub fn penalty(&self, theta: &[f64]) -> f64 {
        let sq: f64 = theta.iter().map(|v| v * v).sum();
        sq / (2.0 * self.prior_std * self.prior_std)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps a raw scale output to a standard deviation.
#[inline]
pub fn scale_link(raw: f64) -> f64 {
    softplus(raw) + SIGMA_MIN
}

/// He-normal weights for relu, Glorot-normal for tanh; zero biases.
pub fn init_params(config: &NetworkConfig, seed: u64) -> ParameterVector {
    let mut rng = rng::stream(seed, Phase::ParamInit, 0);
    let mut theta = Vec::with_capacity(config.num_params());
    for (fan_in, fan_out) in config.layer_dims() {
        let var = match config.activation {
            Activation::Relu => 2.0 / fan_in as f64,
            Activation::Tanh => 2.0 / (fan_in + fan_out) as f64,
        };
        let normal = Normal::new(0.0, var.sqrt()).expect("positive variance");
        theta.extend((0..fan_in * fan_out).map(|_| normal.sample(&mut rng)));
        theta.extend(std::iter::repeat(0.0).take(fan_out));
    }
    ParameterVector(theta)
}

fn check_theta(config: &NetworkConfig, theta: &[f64]) -> Result<()> {
    let d = config.num_params();
    if theta.len() != d {
        return Err(BdeError::Shape(format!(
            "parameter vector has length {}, network needs {d}",
            theta.len()
        )));
    }
    Ok(())
}

/// Activations recorded during a forward pass for reuse in the backward pass.
struct Trace {
    /// Layer inputs; `inputs[0]` is the data, `inputs[l]` the post-activation of hidden layer `l-1`.
    inputs: Vec<Matrix>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Matrix>,
    output: Matrix,
}

fn affine(input: &Matrix, weights: &[f64], bias: &[f64], fan_out: usize) -> Matrix {
    let mut out = Matrix::zeros(input.rows(), fan_out);
    for i in 0..input.rows() {
        let row = out.row_mut(i);
        row.copy_from_slice(bias);
        for (k, &a) in input.row(i).iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let w = &weights[k * fan_out..(k + 1) * fan_out];
            for (o, &wj) in row.iter_mut().zip(w) {
                *o += a * wj;
            }
        }
    }
    out
}

fn forward_trace(config: &NetworkConfig, theta: &[f64], x: &Matrix, keep: bool) -> Trace {
    let dims = config.layer_dims();
    let mut inputs = Vec::new();
    let mut pre = Vec::new();
    let mut current = x.clone();
    let mut offset = 0;
    let last = dims.len() - 1;
    for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let weights = &theta[offset..offset + fan_in * fan_out];
        let bias = &theta[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
        offset += (fan_in + 1) * fan_out;
        let z = affine(&current, weights, bias, fan_out);
        if l == last {
            if keep {
                inputs.push(current);
            }
            return Trace {
                inputs,
                pre,
                output: z,
            };
        }
        let mut a = z.clone();
        for v in a.as_mut_slice() {
            *v = config.activation.apply(*v);
        }
        if keep {
            inputs.push(std::mem::replace(&mut current, a));
            pre.push(z);
        } else {
            current = a;
        }
    }
    unreachable!("layer_dims always has an output layer")
}

/// Network output, `n x output_width`. The last layer has no activation.
pub fn forward(config: &NetworkConfig, theta: &[f64], x: &Matrix) -> Result<Matrix> {
    check_theta(config, theta)?;
    if x.cols() != config.input_dim {
        return Err(BdeError::Shape(format!(
            "input has {} columns, network expects {}",
            x.cols(),
            config.input_dim
        )));
    }
    Ok(forward_trace(config, theta, x, false).output)
}

/// Splits a `n x 2t` head output into means and `softplus(raw) + SIGMA_MIN` scales.
pub fn decode_gaussian_head(raw: &Matrix) -> Result<GaussianHeadOutput> {
    if raw.cols() % 2 != 0 {
        return Err(BdeError::Shape(format!(
            "gaussian head needs an even width, got {}",
            raw.cols()
        )));
    }
    let t = raw.cols() / 2;
    let mut mu = Matrix::zeros(raw.rows(), t);
    let mut sigma = Matrix::zeros(raw.rows(), t);
    for (i, row) in raw.iter_rows().enumerate() {
        mu.row_mut(i).copy_from_slice(&row[..t]);
        for (s, &r) in sigma.row_mut(i).iter_mut().zip(&row[t..]) {
            *s = scale_link(r);
        }
    }
    Ok(GaussianHeadOutput { mu, sigma })
}

/// Row-wise softmax in place.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Per-row NLL of the head output; writes `dNLL/d(output)` into `d_out` when given.
fn head_loss(
    task: Task,
    output: &Matrix,
    targets: &Targets,
    mut d_out: Option<&mut Matrix>,
) -> Result<f64> {
    let mut total = 0.0;
    match (task, targets) {
        (Task::Regression { targets: t }, Targets::Regression(y)) => {
            for i in 0..output.rows() {
                let row = output.row(i);
                let yi = y.row(i);
                let mut nll = 0.0;
                for j in 0..t {
                    let mu = row[j];
                    let raw = row[t + j];
                    let sigma = scale_link(raw);
                    let r = yi[j] - mu;
                    let z2 = (r / sigma) * (r / sigma);
                    nll += HALF_LN_2PI + sigma.ln() + 0.5 * z2;
                    if let Some(d) = d_out.as_deref_mut() {
                        let var = sigma * sigma;
                        d.set(i, j, -r / var);
                        d.set(i, t + j, (1.0 - z2) / sigma * sigmoid(raw));
                    }
                }
                if !nll.is_finite() {
                    return Err(BdeError::Numeric {
                        what: "gaussian negative log-likelihood",
                        index: i,
                    });
                }
                total += nll;
            }
        }
        (Task::Classification { classes }, Targets::Classification { labels, .. }) => {
            let mut probs = vec![0.0; classes];
            for i in 0..output.rows() {
                let logits = output.row(i);
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
                let nll = lse - logits[labels[i]];
                if !nll.is_finite() {
                    return Err(BdeError::Numeric {
                        what: "cross-entropy",
                        index: i,
                    });
                }
                total += nll;
                if let Some(d) = d_out.as_deref_mut() {
                    probs.copy_from_slice(logits);
                    softmax_in_place(&mut probs);
                    probs[labels[i]] -= 1.0;
                    d.row_mut(i).copy_from_slice(&probs);
                }
            }
        }
        _ => {
            return Err(BdeError::TaskMismatch(
                "dataset and network disagree on regression vs classification".into(),
            ))
        }
    }
    Ok(total)
}

/// Summed NLL. When `grad` is given it is overwritten with `dNLL/dtheta`.
pub(crate) fn nll_with_grad(
    config: &NetworkConfig,
    theta: &[f64],
    data: &Dataset,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    check_theta(config, theta)?;
    data.check_compatible(config)?;
    let Some(grad) = grad else {
        let out = forward_trace(config, theta, &data.x, false).output;
        return head_loss(config.task, &out, &data.targets, None);
    };

    let trace = forward_trace(config, theta, &data.x, true);
    let mut delta = Matrix::zeros(trace.output.rows(), trace.output.cols());
    let nll = head_loss(config.task, &trace.output, &data.targets, Some(&mut delta))?;

    let dims = config.layer_dims();
    let mut offsets = Vec::with_capacity(dims.len());
    let mut offset = 0;
    for &(fan_in, fan_out) in &dims {
        offsets.push(offset);
        offset += (fan_in + 1) * fan_out;
    }

    for l in (0..dims.len()).rev() {
        let (fan_in, fan_out) = dims[l];
        let base = offsets[l];
        let input = &trace.inputs[l];
        let (gw, rest) = grad[base..base + (fan_in + 1) * fan_out].split_at_mut(fan_in * fan_out);
        let gb = rest;
        gw.fill(0.0);
        gb.fill(0.0);
        for i in 0..input.rows() {
            let dz = delta.row(i);
            for (b, &g) in gb.iter_mut().zip(dz) {
                *b += g;
            }
            for (k, &a) in input.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (w, &g) in gw[k * fan_out..(k + 1) * fan_out].iter_mut().zip(dz) {
                    *w += a * g;
                }
            }
        }
        if l == 0 {
            break;
        }
        let weights = &theta[base..base + fan_in * fan_out];
        let z_prev = &trace.pre[l - 1];
        let mut next = Matrix::zeros(input.rows(), fan_in);
        for i in 0..input.rows() {
            let dz = delta.row(i);
            let a_row = input.row(i);
            let z_row = z_prev.row(i);
            let out = next.row_mut(i);
            for k in 0..fan_in {
                let w = &weights[k * fan_out..(k + 1) * fan_out];
                let s: f64 = w.iter().zip(dz).map(|(w, g)| w * g).sum();
                out[k] = s * config.activation.derivative(z_row[k], a_row[k]);
            }
        }
        delta = next;
    }
    Ok(nll)
}

/// Sum over data of per-datum negative log-likelihood.
pub fn negative_log_likelihood(config: &NetworkConfig, theta: &[f64], data: &Dataset) -> Result<f64> {
    nll_with_grad(config, theta, data, None)
}

/// `-NLL(theta) - ||theta||^2 / (2 prior_std^2)`, unnormalized.
pub fn log_posterior(
    config: &NetworkConfig,
    theta: &[f64],
    data: &Dataset,
    prior: &PriorSpec,
) -> Result<f64> {
    Ok(-negative_log_likelihood(config, theta, data)? - prior.penalty(theta))
}

/// Exact gradient of [`log_posterior`] by reverse accumulation.
pub fn grad_log_posterior(
    config: &NetworkConfig,
    theta: &[f64],
    data: &Dataset,
    prior: &PriorSpec,
) -> Result<ParameterVector> {
    let mut grad = vec![0.0; theta.len()];
    log_posterior_and_grad(config, theta, data, prior, &mut grad)?;
    Ok(ParameterVector(grad))
}

pub(crate) fn log_posterior_and_grad(
    config: &NetworkConfig,
    theta: &[f64],
    data: &Dataset,
    prior: &PriorSpec,
    grad: &mut [f64],
) -> Result<f64> {
    let nll = nll_with_grad(config, theta, data, Some(&mut *grad))?;
    let inv_var = 1.0 / (prior.prior_std * prior.prior_std);
    for (g, &t) in grad.iter_mut().zip(theta) {
        *g = -*g - t * inv_var;
    }
    Ok(-nll - prior.penalty(theta))
}

/// The network posterior as a sampling target.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorTarget<'a> {
    pub config: &'a NetworkConfig,
    pub data: &'a Dataset,
    pub prior: PriorSpec,
}

impl LogDensity for PosteriorTarget<'_> {
    fn dim(&self) -> usize {
        self.config.num_params()
    }

    fn log_density(&self, theta: &[f64]) -> Result<f64> {
        log_posterior(self.config, theta, self.data, &self.prior)
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        log_posterior_and_grad(self.config, theta, self.data, &self.prior, grad)
    }
}
