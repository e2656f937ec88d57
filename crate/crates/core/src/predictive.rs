//! Posterior-predictive quantities over a [`PosteriorEnsemble`].
//!
//! For regression every retained sample contributes a Gaussian `N(mu_s, sigma_s^2)`
//! per test point and target; the predictive distribution is their equal-weight
//! mixture. Moments, quantiles and the distributional NLL are all taken from that
//! mixture, in original target units.

use std::f64::consts::{PI, SQRT_2};

use crate::ensemble::PosteriorEnsemble;
use crate::error::{BdeError, Result};
use crate::matrix::Matrix;
use crate::model::{self, Task};

/// Absolute tolerance of the quantile bisection, in target units.
pub const QUANTILE_TOL: f64 = 1e-8;

/// Floor on the plug-in standard deviation of the mean-regression NLL.
pub const MIN_PLUGIN_SIGMA: f64 = 1e-6;

/// `S x n x width` array of per-sample head outputs.
///
/// Regression rows hold `(mu_1..mu_t, sigma_1..sigma_t)` in original units;
/// classification rows hold softmax probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPredictions {
    pub samples: usize,
    pub rows: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl RawPredictions {
    #[inline]
    pub fn entry(&self, s: usize, i: usize) -> &[f64] {
        let start = (s * self.rows + i) * self.width;
        &self.values[start..start + self.width]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    pub means: Matrix,
    pub stds: Option<Matrix>,
    /// `(level, n x t matrix)` in the order requested.
    pub quantiles: Vec<(f64, Matrix)>,
    pub raw: Option<RawPredictions>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictOptions {
    pub mean_and_std: bool,
    pub credible_levels: Vec<f64>,
    pub raw: bool,
}

fn regression_targets(ens: &PosteriorEnsemble) -> Result<usize> {
    match ens.net.task {
        Task::Regression { targets } => Ok(targets),
        Task::Classification { .. } => Err(BdeError::TaskMismatch(
            "operation needs a regression ensemble".into(),
        )),
    }
}

fn classification_classes(ens: &PosteriorEnsemble) -> Result<usize> {
    match ens.net.task {
        Task::Classification { classes } => Ok(classes),
        Task::Regression { .. } => Err(BdeError::TaskMismatch(
            "operation needs a classification ensemble".into(),
        )),
    }
}

/// Forward pass of every stored sample on `x` (original feature units).
pub fn predict_raw(ens: &PosteriorEnsemble, x: &Matrix) -> Result<RawPredictions> {
    let z = ens.standardization.standardize_features(x)?;
    let width = ens.net.output_width();
    let n = z.rows();
    let mut values = Vec::with_capacity(ens.num_samples() * n * width);
    for s in 0..ens.num_samples() {
        let mut out = model::forward(&ens.net, ens.sample(s), &z)?;
        match ens.net.task {
            Task::Regression { targets } => {
                let stats = &ens.standardization;
                for i in 0..n {
                    let row = out.row_mut(i);
                    for j in 0..targets {
                        row[j] = stats.target_value(j, row[j]);
                        row[targets + j] = stats.target_spread(j, model::scale_link(row[targets + j]));
                    }
                }
            }
            Task::Classification { .. } => {
                for i in 0..n {
                    model::softmax_in_place(out.row_mut(i));
                }
            }
        }
        values.extend_from_slice(out.as_slice());
    }
    Ok(RawPredictions {
        samples: ens.num_samples(),
        rows: n,
        width,
        values,
    })
}

/// Mixture components `(mu_s, sigma_s)` for test point `i`, target `j`.
fn components(raw: &RawPredictions, targets: usize, i: usize, j: usize) -> (Vec<f64>, Vec<f64>) {
    (0..raw.samples)
        .map(|s| {
            let e = raw.entry(s, i);
            (e[j], e[targets + j])
        })
        .unzip()
}

/// Mean and standard deviation of an equal-weight Gaussian mixture.
pub fn mixture_moments(mus: &[f64], sigmas: &[f64]) -> (f64, f64) {
    let s = mus.len() as f64;
    let mean = mus.iter().sum::<f64>() / s;
    let aleatoric = sigmas.iter().map(|v| v * v).sum::<f64>() / s;
    let epistemic = mus.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / s;
    (mean, (aleatoric + epistemic).sqrt())
}

#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// `F(y) = mean_s Phi((y - mu_s) / sigma_s)`.
pub fn mixture_cdf(mus: &[f64], sigmas: &[f64], y: f64) -> f64 {
    let total: f64 = mus
        .iter()
        .zip(sigmas)
        .map(|(m, s)| normal_cdf((y - m) / s))
        .sum();
    total / mus.len() as f64
}

/// Inverts [`mixture_cdf`] by bisection on
/// `[min mu - 10 max sigma, max mu + 10 max sigma]`.
pub fn mixture_quantile(mus: &[f64], sigmas: &[f64], level: f64) -> f64 {
    let max_sigma = sigmas.iter().copied().fold(0.0, f64::max);
    let mut lo = mus.iter().copied().fold(f64::INFINITY, f64::min) - 10.0 * max_sigma;
    let mut hi = mus.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 10.0 * max_sigma;
    while hi - lo > QUANTILE_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mixture_cdf(mus, sigmas, mid) < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `ln mean_s N(y | mu_s, sigma_s^2)` via log-sum-exp.
pub fn mixture_log_density(mus: &[f64], sigmas: &[f64], y: f64) -> f64 {
    let logs: Vec<f64> = mus
        .iter()
        .zip(sigmas)
        .map(|(m, s)| {
            let z = (y - m) / s;
            -0.5 * z * z - s.ln() - 0.5 * (2.0 * PI).ln()
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln() - (mus.len() as f64).ln()
}

/// Predictive means and standard deviations (law of total variance).
pub fn predict_moments(ens: &PosteriorEnsemble, x: &Matrix) -> Result<(Matrix, Matrix)> {
    let t = regression_targets(ens)?;
    let raw = predict_raw(ens, x)?;
    Ok(moments_from_raw(&raw, t))
}

fn moments_from_raw(raw: &RawPredictions, t: usize) -> (Matrix, Matrix) {
    let mut means = Matrix::zeros(raw.rows, t);
    let mut stds = Matrix::zeros(raw.rows, t);
    for i in 0..raw.rows {
        for j in 0..t {
            let (mus, sigmas) = components(raw, t, i, j);
            let (m, s) = mixture_moments(&mus, &sigmas);
            means.set(i, j, m);
            stds.set(i, j, s);
        }
    }
    (means, stds)
}

fn check_levels(levels: &[f64]) -> Result<()> {
    match levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        Some(l) => Err(BdeError::Config(format!(
            "credible level {l} is outside (0, 1)"
        ))),
        None => Ok(()),
    }
}

/// Quantiles of the predictive mixture, one `n x t` matrix per level.
pub fn predict_quantiles(ens: &PosteriorEnsemble, x: &Matrix, levels: &[f64]) -> Result<Vec<Matrix>> {
    check_levels(levels)?;
    let t = regression_targets(ens)?;
    let raw = predict_raw(ens, x)?;
    Ok(quantiles_from_raw(&raw, t, levels))
}

fn quantiles_from_raw(raw: &RawPredictions, t: usize, levels: &[f64]) -> Vec<Matrix> {
    let mut out = vec![Matrix::zeros(raw.rows, t); levels.len()];
    for i in 0..raw.rows {
        for j in 0..t {
            let (mus, sigmas) = components(raw, t, i, j);
            for (q, &level) in out.iter_mut().zip(levels) {
                q.set(i, j, mixture_quantile(&mus, &sigmas, level));
            }
        }
    }
    out
}

/// Mean over samples of per-sample class probabilities.
pub fn predict_proba(ens: &PosteriorEnsemble, x: &Matrix) -> Result<Matrix> {
    let k = classification_classes(ens)?;
    let raw = predict_raw(ens, x)?;
    let mut probs = Matrix::zeros(raw.rows, k);
    for i in 0..raw.rows {
        let row = probs.row_mut(i);
        for s in 0..raw.samples {
            for (p, &q) in row.iter_mut().zip(raw.entry(s, i)) {
                *p += q;
            }
        }
        let total: f64 = row.iter().sum();
        for p in row.iter_mut() {
            *p /= total;
        }
    }
    Ok(probs)
}

/// Most probable class; ties go to the lowest index.
pub fn predict_class(ens: &PosteriorEnsemble, x: &Matrix) -> Result<Vec<usize>> {
    let probs = predict_proba(ens, x)?;
    Ok(probs
        .iter_rows()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &p)| if p > best.1 { (j, p) } else { best })
                .0
        })
        .collect())
}

/// Regression prediction with the requested extras, from a single forward sweep.
pub fn predict(ens: &PosteriorEnsemble, x: &Matrix, opts: &PredictOptions) -> Result<PredictionResult> {
    check_levels(&opts.credible_levels)?;
    let t = regression_targets(ens)?;
    let raw = predict_raw(ens, x)?;
    let (means, stds) = moments_from_raw(&raw, t);
    let quantiles = quantiles_from_raw(&raw, t, &opts.credible_levels);
    Ok(PredictionResult {
        means,
        stds: opts.mean_and_std.then_some(stds),
        quantiles: opts.credible_levels.iter().copied().zip(quantiles).collect(),
        raw: opts.raw.then_some(raw),
    })
}

fn check_pair(y_true: &Matrix, y_pred: &Matrix) -> Result<()> {
    if y_true.rows() == 0 || y_true.cols() == 0 {
        return Err(BdeError::Data("metric needs at least one observation".into()));
    }
    if (y_true.rows(), y_true.cols()) != (y_pred.rows(), y_pred.cols()) {
        return Err(BdeError::Shape(format!(
            "y_true is {}x{}, y_pred is {}x{}",
            y_true.rows(),
            y_true.cols(),
            y_pred.rows(),
            y_pred.cols()
        )));
    }
    Ok(())
}

pub fn metric_rmse(y_true: &Matrix, y_pred: &Matrix) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    let n = y_true.as_slice().len() as f64;
    let sse: f64 = y_true
        .as_slice()
        .iter()
        .zip(y_pred.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sse / n).sqrt())
}

/// Mean Gaussian NLL with the homoscedastic plug-in `sigma = max(rmse, 1e-6)`.
pub fn metric_nll_mean_regression(y_true: &Matrix, y_pred: &Matrix) -> Result<f64> {
    let sigma = metric_rmse(y_true, y_pred)?.max(MIN_PLUGIN_SIGMA);
    let n = y_true.as_slice().len() as f64;
    let total: f64 = y_true
        .as_slice()
        .iter()
        .zip(y_pred.as_slice())
        .map(|(a, b)| {
            let z = (a - b) / sigma;
            0.5 * (2.0 * PI * sigma * sigma).ln() + 0.5 * z * z
        })
        .sum();
    Ok(total / n)
}

/// Mean over test points of `-ln` predictive mixture density (summed over targets).
pub fn metric_nll_distributional(ens: &PosteriorEnsemble, x: &Matrix, y: &Matrix) -> Result<f64> {
    let t = regression_targets(ens)?;
    if y.rows() == 0 {
        return Err(BdeError::Data("metric needs at least one observation".into()));
    }
    if y.rows() != x.rows() || y.cols() != t {
        return Err(BdeError::Shape(format!(
            "targets are {}x{}, expected {}x{t}",
            y.rows(),
            y.cols(),
            x.rows()
        )));
    }
    let raw = predict_raw(ens, x)?;
    let mut total = 0.0;
    for i in 0..raw.rows {
        for j in 0..t {
            let (mus, sigmas) = components(&raw, t, i, j);
            total -= mixture_log_density(&mus, &sigmas, y.get(i, j));
        }
    }
    Ok(total / raw.rows as f64)
}

/// Fraction of targets inside `[quantile(lo), quantile(hi)]`.
pub fn metric_coverage(ens: &PosteriorEnsemble, x: &Matrix, y: &Matrix, interval: (f64, f64)) -> Result<f64> {
    let (lo, hi) = interval;
    if !(lo < hi) {
        return Err(BdeError::Config(format!(
            "coverage interval ({lo}, {hi}) is empty"
        )));
    }
    let q = predict_quantiles(ens, x, &[lo, hi])?;
    check_pair(y, &q[0])?;
    let inside = y
        .as_slice()
        .iter()
        .zip(q[0].as_slice().iter().zip(q[1].as_slice()))
        .filter(|(v, (a, b))| *a <= *v && *v <= *b)
        .count();
    Ok(inside as f64 / y.as_slice().len() as f64)
}
