//! Parallel orchestration of independent members: train, tune, sample.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BdeError, Result};
use crate::matrix::Matrix;
use crate::model::{Dataset, NetworkConfig, ParameterVector, PosteriorTarget};
use crate::optimizer::{self, OptimizerConfig};
use crate::rng;
use crate::sampler::{self, SamplerConfig};
use crate::standardize::{self, StandardizationStats};

pub use crate::rng::derive_member_seed;

/// Environment variable that overrides [`EnsembleConfig::max_workers`].
pub const MAX_WORKERS_ENV: &str = "BDE_MAX_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Workers {
    /// `min(n_members, available cores)`.
    #[default]
    Auto,
    #[serde(untagged)]
    Fixed(usize),
}

impl Workers {
    pub fn resolve(self, n_members: usize) -> usize {
        let n = match self {
            Workers::Auto => std::thread::available_parallelism().map_or(1, |c| c.get()),
            Workers::Fixed(n) => n,
        };
        n.clamp(1, n_members.max(1))
    }

    /// Reads [`MAX_WORKERS_ENV`]; `None` when unset.
    pub fn from_env() -> Result<Option<Self>> {
        match std::env::var(MAX_WORKERS_ENV) {
            Err(_) => Ok(None),
            Ok(v) if v.trim() == "auto" => Ok(Some(Workers::Auto)),
            Ok(v) => v
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .map(|n| Some(Workers::Fixed(n)))
                .ok_or_else(|| {
                    BdeError::Config(format!("{MAX_WORKERS_ENV}={v:?} is not a positive integer"))
                }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_members: usize,
    pub net: NetworkConfig,
    pub opt: OptimizerConfig,
    pub sampler: SamplerConfig,
    pub master_seed: u64,
    pub max_workers: Workers,
}

impl EnsembleConfig {
    /// Defaults of the reference usage: 8 members, AdamW at `1e-3`, 5000 warmup
    /// steps, 200 samples thinned by 10.
    pub fn new(net: NetworkConfig) -> Self {
        Self {
            n_members: 8,
            net,
            opt: OptimizerConfig::default(),
            sampler: SamplerConfig::default(),
            master_seed: 0,
            max_workers: Workers::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_members == 0 {
            return Err(BdeError::Config("n_members must be at least 1".into()));
        }
        if self.max_workers == Workers::Fixed(0) {
            return Err(BdeError::Config("max_workers must be positive".into()));
        }
        self.net.validate()?;
        self.opt.validate()?;
        self.sampler.validate()?;
        if self.sampler.retained_per_chain() == 0 {
            return Err(BdeError::Config(format!(
                "n_samples ({}) must be at least n_thinning ({}) to retain any sample",
                self.sampler.n_samples, self.sampler.n_thinning
            )));
        }
        Ok(())
    }

    /// `S = n_members * floor(n_samples / n_thinning)`.
    pub fn total_samples(&self) -> usize {
        self.n_members * self.sampler.retained_per_chain()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberMeta {
    pub seed: u64,
    pub final_eps: f64,
    pub final_l: f64,
    /// Mean validation NLL of the MAP parameters (standardized units).
    pub map_valid_loss: f64,
    pub epochs_run: usize,
    /// Divergences: warmup restarts plus discarded steps.
    pub divergences: usize,
    pub energy_var_per_dim: f64,
}

/// Retained posterior samples with everything needed to predict from them.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEnsemble {
    /// `S x d`, member-major then step order.
    pub samples: Matrix,
    pub net: NetworkConfig,
    pub standardization: StandardizationStats,
    pub member_meta: Vec<MemberMeta>,
}

impl PosteriorEnsemble {
    pub fn new(
        samples: Matrix,
        net: NetworkConfig,
        standardization: StandardizationStats,
        member_meta: Vec<MemberMeta>,
    ) -> Result<Self> {
        let ens = Self {
            samples,
            net,
            standardization,
            member_meta,
        };
        ens.validate()?;
        Ok(ens)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.samples.rows() == 0 {
            return Err(BdeError::Data("posterior ensemble has no samples".into()));
        }
        if self.samples.cols() != self.net.num_params() {
            return Err(BdeError::Shape(format!(
                "samples have {} columns, network has {} parameters",
                self.samples.cols(),
                self.net.num_params()
            )));
        }
        if let Some(i) = self.samples.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(BdeError::Data(format!(
                "non-finite value in posterior sample {}",
                i / self.samples.cols()
            )));
        }
        self.standardization.validate()?;
        if self.standardization.feature_mean.len() != self.net.input_dim {
            return Err(BdeError::Shape(
                "standardization width does not match the network input".into(),
            ));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.samples.rows()
    }

    pub fn sample(&self, s: usize) -> &[f64] {
        self.samples.row(s)
    }
}

struct MemberOutput {
    samples: Vec<ParameterVector>,
    meta: MemberMeta,
}

fn run_member(data: &Dataset, cfg: &EnsembleConfig, member: usize) -> Result<MemberOutput> {
    let seed = derive_member_seed(cfg.master_seed, member as u64);
    let wrap = |e: BdeError| BdeError::Member {
        member,
        seed,
        source: Box::new(e),
    };
    let (theta_map, history) =
        optimizer::train_member(data, &cfg.net, &cfg.opt, &cfg.sampler.prior, seed).map_err(wrap)?;
    let target = PosteriorTarget {
        config: &cfg.net,
        data,
        prior: cfg.sampler.prior,
    };
    let (samples, diag) =
        sampler::sample_chain(&theta_map, &cfg.sampler, &target, seed).map_err(wrap)?;
    Ok(MemberOutput {
        samples,
        meta: MemberMeta {
            seed,
            final_eps: diag.final_eps,
            final_l: diag.final_l,
            map_valid_loss: history.best_valid(),
            epochs_run: history.epochs.len(),
            divergences: diag.restarts + diag.discarded_steps,
            energy_var_per_dim: diag.energy_var_per_dim,
        },
    })
}

/// Runs `job` for every member on a pool of `workers` threads, returning results
/// in member order. The first failing member (by index) aborts the whole run.
fn run_members<T, F>(n_members: usize, workers: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| BdeError::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<T>> = pool.install(|| (0..n_members).into_par_iter().map(job).collect());
    results.into_iter().collect()
}

fn effective_workers(cfg: &EnsembleConfig) -> Result<usize> {
    let w = Workers::from_env()?.unwrap_or(cfg.max_workers);
    Ok(w.resolve(cfg.n_members))
}

/// Fits the full ensemble on `data` (original units).
///
/// Features and regression targets are standardized with statistics of `data`
/// before training; the statistics are stored in the result. Samples are
/// concatenated in member order, then step order, and do not depend on the
/// number of workers.
pub fn fit(data: &Dataset, cfg: &EnsembleConfig) -> Result<PosteriorEnsemble> {
    cfg.validate()?;
    data.check_compatible(&cfg.net)?;
    let stats = standardize::fit_standardizer(data);
    let z = standardize::apply_standardizer(&stats, data)?;
    let workers = effective_workers(cfg)?;

    let members = run_members(cfg.n_members, workers, |i| run_member(&z, cfg, i))?;
    let d = cfg.net.num_params();
    let mut flat = Vec::with_capacity(cfg.total_samples() * d);
    let mut meta = Vec::with_capacity(members.len());
    for m in members {
        for s in &m.samples {
            flat.extend_from_slice(s);
        }
        meta.push(m.meta);
    }
    let rows = flat.len() / d;
    PosteriorEnsemble::new(Matrix::from_vec(rows, d, flat)?, cfg.net.clone(), stats, meta)
}

/// Optimization-only ensemble: one MAP parameter vector per member, no sampling.
///
/// With `n_members = 1` this is a single network trained exactly like the first
/// stage of [`fit`].
pub fn fit_map(data: &Dataset, cfg: &EnsembleConfig) -> Result<PosteriorEnsemble> {
    if cfg.n_members == 0 {
        return Err(BdeError::Config("n_members must be at least 1".into()));
    }
    cfg.net.validate()?;
    cfg.opt.validate()?;
    cfg.sampler.prior.validate()?;
    data.check_compatible(&cfg.net)?;
    let stats = standardize::fit_standardizer(data);
    let z = standardize::apply_standardizer(&stats, data)?;
    let workers = effective_workers(cfg)?;
    let members = run_members(cfg.n_members, workers, |i| {
        let seed = derive_member_seed(cfg.master_seed, i as u64);
        let (theta, history) =
            optimizer::train_member(&z, &cfg.net, &cfg.opt, &cfg.sampler.prior, seed).map_err(
                |e| BdeError::Member {
                    member: i,
                    seed,
                    source: Box::new(e),
                },
            )?;
        Ok((theta, history, seed))
    })?;
    let d = cfg.net.num_params();
    let mut flat = Vec::with_capacity(members.len() * d);
    let mut meta = Vec::with_capacity(members.len());
    for (theta, history, seed) in members {
        flat.extend_from_slice(&theta);
        meta.push(MemberMeta {
            seed,
            final_eps: 0.0,
            final_l: 0.0,
            map_valid_loss: history.best_valid(),
            epochs_run: history.epochs.len(),
            divergences: 0,
            energy_var_per_dim: 0.0,
        });
    }
    PosteriorEnsemble::new(
        Matrix::from_vec(meta.len(), d, flat)?,
        cfg.net.clone(),
        stats,
        meta,
    )
}

/// Seed a member would get; exposed for reproducing single members by hand.
pub fn member_seeds(master_seed: u64, n_members: usize) -> Vec<u64> {
    (0..n_members as u64)
        .map(|i| rng::derive_member_seed(master_seed, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NetworkConfig, PriorSpec};
    use crate::synthetic;

    fn small_cfg(n_members: usize) -> EnsembleConfig {
        let mut cfg = EnsembleConfig::new(NetworkConfig::regression(1, vec![8], 1));
        cfg.n_members = n_members;
        cfg.opt.epochs = 60;
        cfg.opt.lr = 1e-2;
        cfg.sampler.warmup_steps = 60;
        cfg.sampler.n_samples = 40;
        cfg.sampler.n_thinning = 10;
        cfg.master_seed = 123;
        cfg
    }

    #[test]
    fn sample_count_and_metadata() {
        let data = synthetic::sine_heteroscedastic(60, 1);
        let ens = fit(&data, &small_cfg(3)).unwrap();
        assert_eq!(ens.num_samples(), 12);
        assert_eq!(ens.member_meta.len(), 3);
        let seeds: Vec<u64> = ens.member_meta.iter().map(|m| m.seed).collect();
        assert_eq!(seeds, member_seeds(123, 3));
    }

    #[test]
    fn single_member_equals_direct_pipeline() {
        let data = synthetic::sine_heteroscedastic(50, 2);
        let cfg = small_cfg(1);
        let ens = fit(&data, &cfg).unwrap();

        let stats = standardize::fit_standardizer(&data);
        let z = standardize::apply_standardizer(&stats, &data).unwrap();
        let seed = derive_member_seed(cfg.master_seed, 0);
        let (theta, _) =
            optimizer::train_member(&z, &cfg.net, &cfg.opt, &cfg.sampler.prior, seed).unwrap();
        let target = PosteriorTarget {
            config: &cfg.net,
            data: &z,
            prior: PriorSpec::default(),
        };
        let (samples, _) = sampler::sample_chain(&theta, &cfg.sampler, &target, seed).unwrap();
        for (s, row) in samples.iter().zip(ens.samples.iter_rows()) {
            assert_eq!(&s[..], row);
        }
    }

    #[test]
    fn dropping_a_member_keeps_the_others() {
        let data = synthetic::sine_heteroscedastic(50, 3);
        let cfg = small_cfg(3);
        let all = fit(&data, &cfg).unwrap();
        let per = cfg.sampler.retained_per_chain();
        let z = standardize::apply_standardizer(&standardize::fit_standardizer(&data), &data).unwrap();
        let only_two = run_member(&z, &cfg, 2).unwrap();
        for (k, s) in only_two.samples.iter().enumerate() {
            assert_eq!(&s[..], all.samples.row(2 * per + k));
        }
    }

    #[test]
    fn invalid_configs_fail_before_work() {
        let data = synthetic::sine_heteroscedastic(20, 1);
        let mut cfg = small_cfg(0);
        assert!(matches!(fit(&data, &cfg), Err(BdeError::Config(_))));
        cfg.n_members = 1;
        cfg.sampler.n_samples = 5;
        assert!(matches!(fit(&data, &cfg), Err(BdeError::Config(_))));
    }

    #[test]
    fn member_failure_reports_member_index() {
        let data = synthetic::sine_heteroscedastic(30, 1);
        let mut cfg = small_cfg(2);
        cfg.opt.lr = 1e300;
        match fit(&data, &cfg) {
            Err(BdeError::Member { member, .. }) => assert_eq!(member, 0),
            other => panic!("expected member error, got {other:?}"),
        }
    }
}
