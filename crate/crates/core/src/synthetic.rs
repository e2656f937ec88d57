//! Synthetic regression problems with known generative noise.
//!
//! These back the `benchmark` suites and the calibration tests.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::matrix::Matrix;
use crate::model::Dataset;
use crate::rng::{self, Phase};

/// Stream counters, one per generator, so suites sharing a seed stay independent.
const LINEAR: u64 = 1;
const SINE: u64 = 2;
const FRIEDMAN: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Linear,
    SineHeteroscedastic,
    Friedman,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Linear, Suite::SineHeteroscedastic, Suite::Friedman];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Linear => "linear",
            Suite::SineHeteroscedastic => "sine_heteroscedastic",
            Suite::Friedman => "friedman",
        }
    }

    pub fn generate(self, n: usize, seed: u64) -> Dataset {
        match self {
            Suite::Linear => linear(n, seed),
            Suite::SineHeteroscedastic => sine_heteroscedastic(n, seed),
            Suite::Friedman => friedman(n, seed),
        }
    }
}

fn build(x: Vec<f64>, p: usize, y: Vec<f64>) -> Dataset {
    let n = y.len();
    Dataset::regression(
        Matrix::from_vec(n, p, x).expect("generator shape"),
        Matrix::from_vec(n, 1, y).expect("generator shape"),
    )
    .expect("generated data is finite")
}

/// `y = 1.5 x0 - 2 x1 + 0.5 x2 + N(0, 0.3^2)`, `x ~ U(-2, 2)^3`.
pub fn linear(n: usize, seed: u64) -> Dataset {
    let mut rng = rng::stream(seed, Phase::Synthetic, LINEAR);
    let mut x = Vec::with_capacity(3 * n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let r: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
        let eps: f64 = StandardNormal.sample(&mut rng);
        y.push(1.5 * r[0] - 2.0 * r[1] + 0.5 * r[2] + 0.3 * eps);
        x.extend_from_slice(&r);
    }
    build(x, 3, y)
}

/// Noise standard deviation of [`sine_heteroscedastic`] at `x`.
pub fn sine_noise_sd(x: f64) -> f64 {
    0.1 + 0.15 * x.abs()
}

/// `y = sin(x) + N(0, sine_noise_sd(x)^2)`, `x ~ U(-3, 3)`.
pub fn sine_heteroscedastic(n: usize, seed: u64) -> Dataset {
    let mut rng = rng::stream(seed, Phase::Synthetic, SINE);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: f64 = rng.gen_range(-3.0..3.0);
        let eps: f64 = StandardNormal.sample(&mut rng);
        y.push(xi.sin() + sine_noise_sd(xi) * eps);
        x.push(xi);
    }
    build(x, 1, y)
}

/// Friedman #1: `10 sin(pi x0 x1) + 20 (x2 - 0.5)^2 + 10 x3 + 5 x4 + N(0, 1)`, `x ~ U(0, 1)^5`.
pub fn friedman(n: usize, seed: u64) -> Dataset {
    let mut rng = rng::stream(seed, Phase::Synthetic, FRIEDMAN);
    let mut x = Vec::with_capacity(5 * n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let r: [f64; 5] = std::array::from_fn(|_| rng.gen::<f64>());
        let eps: f64 = StandardNormal.sample(&mut rng);
        y.push(
            10.0 * (PI * r[0] * r[1]).sin() + 20.0 * (r[2] - 0.5).powi(2) + 10.0 * r[3] + 5.0 * r[4] + eps,
        );
        x.extend_from_slice(&r);
    }
    build(x, 5, y)
}
