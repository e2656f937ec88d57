//! Fixtures shared by the criterion benchmarks in `benches/`.

use bde_core::model::{init_params, PosteriorTarget};
use bde_core::sampler::SamplerState;
use bde_core::{
    synthetic, Dataset, Matrix, MemberMeta, NetworkConfig, ParameterVector, PosteriorEnsemble,
    PriorSpec, StandardizationStats,
};

/// Friedman data with `n` rows and a regression network of the given widths.
pub struct Problem {
    pub data: Dataset,
    pub net: NetworkConfig,
    pub prior: PriorSpec,
    pub theta: ParameterVector,
}

impl Problem {
    pub fn new(n: usize, hidden: Vec<usize>) -> Self {
        let data = synthetic::friedman(n, 0);
        let net = NetworkConfig::regression(data.x.cols(), hidden, 1);
        let theta = init_params(&net, 1);
        Self {
            data,
            net,
            prior: PriorSpec::default(),
            theta,
        }
    }

    pub fn target(&self) -> PosteriorTarget<'_> {
        PosteriorTarget {
            config: &self.net,
            data: &self.data,
            prior: self.prior,
        }
    }

    pub fn state(&self, eps: f64) -> SamplerState {
        let l = (self.net.num_params() as f64).sqrt() * eps;
        SamplerState::new(self.theta.clone(), &self.target(), eps, l, 7).expect("finite start")
    }

    /// An ensemble of `samples` perturbed copies of the initial parameters.
    pub fn ensemble(&self, samples: usize) -> PosteriorEnsemble {
        let d = self.net.num_params();
        let mut flat = Vec::with_capacity(samples * d);
        for s in 0..samples {
            flat.extend(self.theta.iter().enumerate().map(|(j, t)| t + 0.01 * ((s * d + j) as f64).sin()));
        }
        let p = self.data.x.cols();
        let meta = MemberMeta {
            seed: 0,
            final_eps: 0.0,
            final_l: 0.0,
            map_valid_loss: 0.0,
            epochs_run: 0,
            divergences: 0,
            energy_var_per_dim: 0.0,
        };
        PosteriorEnsemble::new(
            Matrix::from_vec(samples, d, flat).expect("shape"),
            self.net.clone(),
            StandardizationStats {
                feature_mean: vec![0.0; p],
                feature_scale: vec![1.0; p],
                target_mean: vec![0.0],
                target_scale: vec![1.0],
            },
            vec![meta],
        )
        .expect("consistent ensemble")
    }
}
