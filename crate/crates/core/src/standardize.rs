//! Z-scoring of features and regression targets with training-set statistics.

use serde::{Deserialize, Serialize};

use crate::error::{BdeError, Result};
use crate::matrix::Matrix;
use crate::model::{Dataset, Targets};

/// Per-column `(mean, scale)` for features and, for regression, targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_scale: Vec<f64>,
}

/// Mean and population standard deviation. Constant columns get mean 0 and
/// scale 1, so they pass through unchanged.
fn column_stats(m: &Matrix) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let n = m.rows() as f64;
    let mut means = Vec::with_capacity(m.cols());
    let mut scales = Vec::with_capacity(m.cols());
    let mut constant = Vec::new();
    for j in 0..m.cols() {
        let col = m.column(j);
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 0.0 && sd.is_finite() {
            means.push(mean);
            scales.push(sd);
        } else {
            constant.push(j);
            means.push(0.0);
            scales.push(1.0);
        }
    }
    (means, scales, constant)
}

impl StandardizationStats {
    /// Identity transform for `features` inputs and `targets` regression outputs.
    pub fn identity(features: usize, targets: usize) -> Self {
        Self {
            feature_mean: vec![0.0; features],
            feature_scale: vec![1.0; features],
            target_mean: vec![0.0; targets],
            target_scale: vec![1.0; targets],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |m: &[f64], s: &[f64]| {
            m.len() == s.len()
                && m.iter().all(|v| v.is_finite())
                && s.iter().all(|v| *v > 0.0 && v.is_finite())
        };
        if !ok(&self.feature_mean, &self.feature_scale) || !ok(&self.target_mean, &self.target_scale)
        {
            return Err(BdeError::Data(
                "standardization statistics need finite means and positive scales".into(),
            ));
        }
        Ok(())
    }

    pub fn standardize_features(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.feature_mean.len() {
            return Err(BdeError::Shape(format!(
                "expected {} features, got {}",
                self.feature_mean.len(),
                x.cols()
            )));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out
                .row_mut(i)
                .iter_mut()
                .zip(&self.feature_mean)
                .zip(&self.feature_scale)
            {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    pub fn destandardize_features(&self, z: &Matrix) -> Matrix {
        let mut out = z.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out
                .row_mut(i)
                .iter_mut()
                .zip(&self.feature_mean)
                .zip(&self.feature_scale)
            {
                *v = *v * s + m;
            }
        }
        out
    }

    /// Target value in original units.
    #[inline]
    pub fn target_value(&self, j: usize, z: f64) -> f64 {
        z * self.target_scale[j] + self.target_mean[j]
    }

    /// Target spread in original units.
    #[inline]
    pub fn target_spread(&self, j: usize, s: f64) -> f64 {
        s * self.target_scale[j]
    }
}

/// Statistics of `train`. Constant columns keep scale 1 and are logged as warnings.
pub fn fit_standardizer(train: &Dataset) -> StandardizationStats {
    let (feature_mean, feature_scale, constant) = column_stats(&train.x);
    for j in constant {
        log::warn!("feature column {j} is constant; leaving it unscaled");
    }
    let (target_mean, target_scale) = match &train.targets {
        Targets::Regression(y) => {
            let (m, s, constant) = column_stats(y);
            for j in constant {
                log::warn!("target column {j} is constant; leaving it unscaled");
            }
            (m, s)
        }
        Targets::Classification { .. } => (Vec::new(), Vec::new()),
    };
    StandardizationStats {
        feature_mean,
        feature_scale,
        target_mean,
        target_scale,
    }
}

pub fn apply_standardizer(stats: &StandardizationStats, data: &Dataset) -> Result<Dataset> {
    let x = stats.standardize_features(&data.x)?;
    let targets = match &data.targets {
        Targets::Regression(y) => {
            if y.cols() != stats.target_mean.len() {
                return Err(BdeError::Shape(format!(
                    "expected {} targets, got {}",
                    stats.target_mean.len(),
                    y.cols()
                )));
            }
            let mut z = y.clone();
            for i in 0..z.rows() {
                for (j, v) in z.row_mut(i).iter_mut().enumerate() {
                    *v = (*v - stats.target_mean[j]) / stats.target_scale[j];
                }
            }
            Targets::Regression(z)
        }
        t @ Targets::Classification { .. } => t.clone(),
    };
    Ok(Dataset { x, targets })
}
