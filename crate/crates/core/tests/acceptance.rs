//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.
//!
//! Run a subset with `cargo test --test acceptance -- 3 4`.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use bde_core::ensemble::{self, EnsembleConfig, PosteriorEnsemble, Workers};
use bde_core::error::BdeError;
use bde_core::io::container::{self, SavedModel};
use bde_core::matrix::Matrix;
use bde_core::model::{
    self, Activation, Dataset, NetworkConfig, PosteriorTarget, PriorSpec, Task, SIGMA_MIN,
};
use bde_core::optimizer::{self, OptimizerConfig};
use bde_core::predictive;
use bde_core::sampler::{
    self, IsotropicGaussian, LogDensity, SamplerConfig, SamplerState,
};
use bde_core::standardize::StandardizationStats;
use bde_core::synthetic;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within_budget(elapsed: Duration, budget_secs: u64) -> bool {
    elapsed <= Duration::from_secs(budget_secs)
}

// ---------------------------------------------------------------------------
// 1. gradient correctness

fn random_instance(rng: &mut ChaCha8Rng) -> (NetworkConfig, Vec<f64>, Dataset, PriorSpec) {
    loop {
        let input_dim = rng.gen_range(1..=4);
        let hidden: Vec<usize> = (0..rng.gen_range(0..=2)).map(|_| rng.gen_range(1..=6)).collect();
        let activation = if rng.gen_bool(0.5) { Activation::Relu } else { Activation::Tanh };
        let task = if rng.gen_bool(0.6) {
            Task::Regression { targets: rng.gen_range(1..=2) }
        } else {
            Task::Classification { classes: rng.gen_range(2..=3) }
        };
        let net = NetworkConfig { input_dim, hidden_layers: hidden, activation, task };
        let d = net.num_params();
        if d > 100 {
            continue;
        }
        let n = rng.gen_range(1..=8);
        let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        let x = Matrix::from_vec(n, input_dim, (0..n * input_dim).map(|_| normal(rng)).collect())
            .unwrap();
        let data = match task {
            Task::Regression { targets } => {
                let y = (0..n * targets).map(|_| 2.0 * normal(rng)).collect();
                Dataset::regression(x, Matrix::from_vec(n, targets, y).unwrap()).unwrap()
            }
            Task::Classification { classes } => {
                let labels = (0..n).map(|_| rng.gen_range(0..classes)).collect();
                Dataset::classification(x, labels, classes).unwrap()
            }
        };
        let theta: Vec<f64> = (0..d).map(|_| 0.7 * normal(rng)).collect();
        let prior = PriorSpec::new(rng.gen_range(0.3..3.0)).unwrap();
        return (net, theta, data, prior);
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_101);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut max_d = 0;
    for _ in 0..100 {
        let (net, theta, data, prior) = random_instance(&mut rng);
        max_d = max_d.max(theta.len());
        let analytic = model::grad_log_posterior(&net, &theta, &data, &prior).unwrap();
        let mut diff2 = 0.0;
        let mut ref2 = 0.0;
        let mut probe = theta.clone();
        for i in 0..theta.len() {
            probe[i] = theta[i] + h;
            let fp = model::log_posterior(&net, &probe, &data, &prior).unwrap();
            probe[i] = theta[i] - h;
            let fm = model::log_posterior(&net, &probe, &data, &prior).unwrap();
            probe[i] = theta[i];
            let fd = (fp - fm) / (2.0 * h);
            diff2 += (analytic[i] - fd).powi(2);
            ref2 += fd * fd;
        }
        worst = worst.max(diff2.sqrt() / ref2.sqrt().max(1e-12));
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-5 && max_d <= 100 && within_budget(elapsed, 60),
        format!("worst relative error {worst:.2e} over 100 instances (d <= {max_d}), {elapsed:.1?}"),
    )
}

// ---------------------------------------------------------------------------
// 2. momentum geometry

fn momentum_geometry() -> Outcome {
    let data = synthetic::sine_heteroscedastic(64, 3);
    let net = NetworkConfig::regression(1, vec![8, 8], 1).with_activation(Activation::Tanh);
    let target = PosteriorTarget { config: &net, data: &data, prior: PriorSpec::default() };
    let theta = model::init_params(&net, 5);
    let mut state = SamplerState::new(theta, &target, 0.02, 0.5, 11).unwrap();
    state.enter_phase(bde_core::rng::Phase::Sampling);
    let mut worst_norm = 0.0f64;
    for _ in 0..10_000 {
        state = sampler::mclmc_step(&state, &target).unwrap().0;
        let n = state.u.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst_norm = worst_norm.max((n - 1.0).abs());
    }

    let mut worst_identity = 0.0f64;
    for i in 0..=40 {
        let a = -1.0 + i as f64 / 20.0;
        for j in 0..=60 {
            let delta = if j == 0 { 0.0 } else { 10f64.powf(-6.0 + j as f64 * 0.125) };
            let e = [1.0, 0.0, 0.0, 0.0];
            let b = (1.0 - a * a).max(0.0).sqrt();
            let mut u = vec![a, b * 0.6, b * 0.8, 0.0];
            sampler::isokinetic_map(&mut u, &e, delta);
            let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            worst_identity = worst_identity.max((n - 1.0).abs());
        }
    }
    outcome(
        worst_norm < 1e-9 && worst_identity < 1e-12,
        format!(
            "max | |u| - 1 | over 1e4 steps (d = {}) {worst_norm:.2e}; norm identity over 41x61 (a, delta) grid {worst_identity:.2e}",
            net.num_params()
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. integrator order

/// `U = x^2 / (2 s0^2) + y^2 / (2 s1^2)`.
struct Quadratic {
    scales: [f64; 2],
}

impl LogDensity for Quadratic {
    fn dim(&self) -> usize {
        2
    }

    fn log_density(&self, theta: &[f64]) -> bde_core::Result<f64> {
        Ok(-0.5 * theta.iter().zip(self.scales).map(|(t, s)| (t / s).powi(2)).sum::<f64>())
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> bde_core::Result<f64> {
        for ((g, t), s) in grad.iter_mut().zip(theta).zip(self.scales) {
            *g = -t / (s * s);
        }
        self.log_density(theta)
    }
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn integrator_order() -> Outcome {
    let target = Quadratic { scales: [1.0, 2.0] };
    let start = vec![1.0, -0.5];
    // Same physical time for every step size; refresh disabled via L = infinity.
    let horizon = 3.2;
    let eps_grid = [0.2, 0.1, 0.05, 0.025];
    let mut max_step = Vec::new();
    let mut max_drift = Vec::new();
    for &eps in &eps_grid {
        let mut state =
            SamplerState::new(start.clone().into(), &target, eps, f64::INFINITY, 1).unwrap();
        state.u = vec![0.6, 0.8];
        let steps = (horizon / eps).round() as usize;
        let (mut worst, mut total, mut worst_total) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..steps {
            let (next, de) = sampler::mclmc_step(&state, &target).unwrap();
            worst = worst.max(de.abs());
            total += de;
            worst_total = worst_total.max(total.abs());
            state = next;
        }
        max_step.push(worst);
        max_drift.push(worst_total);
    }
    let lx: Vec<f64> = eps_grid.iter().map(|e: &f64| e.ln()).collect();
    let log = |v: &[f64]| v.iter().map(|x| x.ln()).collect::<Vec<_>>();
    let s = slope(&lx, &log(&max_step));
    let drift = slope(&lx, &log(&max_drift));
    outcome(
        (1.8..=2.2).contains(&s),
        format!(
            "slope of max per-step |dE| vs eps = {s:.3} (values {}); accumulated energy error over fixed time has slope {drift:.3}",
            max_step.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. sampler oracle

fn sampler_oracle() -> Outcome {
    let start = Instant::now();
    let target = IsotropicGaussian { dim: 10, scale: 1.0 };
    let cfg = SamplerConfig {
        warmup_steps: 2000,
        n_samples: 5000,
        n_thinning: 1,
        ..SamplerConfig::default()
    };
    let (samples, diag) =
        sampler::sample_chain(&vec![0.0; 10].into(), &cfg, &target, 42).unwrap();
    let n = samples.len() as f64;
    let mut worst_mean = 0.0f64;
    let (mut min_var, mut max_var) = (f64::INFINITY, f64::NEG_INFINITY);
    for j in 0..10 {
        let mean = samples.iter().map(|s| s[j]).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        worst_mean = worst_mean.max(mean.abs());
        min_var = min_var.min(var);
        max_var = max_var.max(var);
    }
    let end_target = cfg.desired_energy_var_end;
    let ev = diag.energy_var_per_dim;
    let ev_ok = (ev - end_target).abs() <= 0.3 * end_target;
    let elapsed = start.elapsed();
    outcome(
        samples.len() == 5000
            && worst_mean <= 0.1
            && min_var >= 0.85
            && max_var <= 1.15
            && ev_ok
            && within_budget(elapsed, 120),
        format!(
            "max |mean| {worst_mean:.3}, variance range [{min_var:.3}, {max_var:.3}], energy variance/dim {ev:.3} (target {end_target}), eps {:.3}, L {:.3}, {elapsed:.1?}",
            diag.final_eps, diag.final_l
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. sample accounting

fn sample_accounting() -> Outcome {
    let data = synthetic::linear(60, 9);
    let mut cfg = EnsembleConfig::new(NetworkConfig::regression(3, vec![4], 1));
    cfg.n_members = 8;
    cfg.opt.epochs = 50;
    cfg.sampler.warmup_steps = 100;
    cfg.sampler.n_samples = 200;
    cfg.sampler.n_thinning = 10;
    let ens = ensemble::fit(&data, &cfg).unwrap();
    outcome(
        ens.num_samples() == 160 && cfg.total_samples() == 160 && ens.member_meta.len() == 8,
        format!("{} posterior samples from 8 x 200 / 10", ens.num_samples()),
    )
}

// ---------------------------------------------------------------------------
// 6. determinism and scheduler independence

fn scheduler_independence() -> Outcome {
    let data = synthetic::friedman(80, 2);
    let mut cfg = EnsembleConfig::new(NetworkConfig::regression(5, vec![6], 1));
    cfg.n_members = 6;
    cfg.opt.epochs = 60;
    cfg.sampler.warmup_steps = 150;
    cfg.sampler.n_samples = 60;
    cfg.sampler.n_thinning = 3;
    cfg.master_seed = 77;
    let payload = |workers: usize| {
        let mut c = cfg.clone();
        c.max_workers = Workers::Fixed(workers);
        let ens = ensemble::fit(&data, &c).unwrap();
        let bytes = container::encode(&SavedModel::from(ens)).unwrap();
        let range = container::payload_range(&bytes).unwrap();
        bytes[range].to_vec()
    };
    let one = payload(1);
    let four = payload(4);
    outcome(
        one == four && !one.is_empty(),
        format!("{} payload bytes, 1 worker vs 4 workers identical: {}", one.len(), one == four),
    )
}

// ---------------------------------------------------------------------------
// 7. calibration at desk scale

fn calibration() -> Outcome {
    let start = Instant::now();
    let train = synthetic::sine_heteroscedastic(500, 1);
    let test = synthetic::sine_heteroscedastic(500, 2);
    let mut cfg = EnsembleConfig::new(NetworkConfig::regression(1, vec![16, 16], 1));
    cfg.n_members = 8;
    cfg.sampler.warmup_steps = 1000;
    cfg.sampler.n_samples = 200;
    cfg.sampler.n_thinning = 10;
    cfg.master_seed = 0;

    let ens = ensemble::fit(&train, &cfg).unwrap();
    let mut map_cfg = cfg.clone();
    map_cfg.n_members = 1;
    let map = ensemble::fit_map(&train, &map_cfg).unwrap();

    let model::Targets::Regression(y) = &test.targets else { unreachable!() };
    let coverage = predictive::metric_coverage(&ens, &test.x, y, (0.1, 0.9)).unwrap();
    let nll_bde = predictive::metric_nll_distributional(&ens, &test.x, y).unwrap();
    let nll_map = predictive::metric_nll_distributional(&map, &test.x, y).unwrap();
    let elapsed = start.elapsed();
    outcome(
        (0.80..=0.97).contains(&coverage) && nll_bde < nll_map && within_budget(elapsed, 600),
        format!(
            "coverage of (0.1, 0.9) interval {coverage:.3}; NLL ensemble {nll_bde:.4} vs single MAP {nll_map:.4}; {} samples, {elapsed:.1?}",
            ens.num_samples()
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. mixture-predictive correctness

fn mixture_model(mus: &[f64], sigmas: &[f64]) -> PosteriorEnsemble {
    // No hidden layers: output = W x + b, so a zero weight row makes the head constant.
    let net = NetworkConfig::regression(1, vec![], 1);
    let rows: Vec<Vec<f64>> = mus
        .iter()
        .zip(sigmas)
        .map(|(&m, &s)| vec![0.0, 0.0, m, (s - SIGMA_MIN).exp_m1().ln()])
        .collect();
    PosteriorEnsemble::new(
        Matrix::from_rows(&rows).unwrap(),
        net,
        StandardizationStats::identity(1, 1),
        Vec::new(),
    )
    .unwrap()
}

fn mixture_predictive() -> Outcome {
    let mus = [-0.4, 0.1, 0.5, 0.9, 0.35];
    let sigmas = [0.3, 0.4, 0.25, 0.35, 0.5];
    let ens = mixture_model(&mus, &sigmas);
    let x = Matrix::from_vec(1, 1, vec![0.0]).unwrap();
    let (mean, std) = predictive::predict_moments(&ens, &x).unwrap();
    let levels = [0.1, 0.5, 0.9];
    let q = predictive::predict_quantiles(&ens, &x, &levels).unwrap();

    let n = 10_000_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.gen_range(0..mus.len());
        let z: f64 = StandardNormal.sample(&mut rng);
        draws.push(mus[k] + sigmas[k] * z);
    }
    let nf = n as f64;
    let mc_mean = draws.iter().sum::<f64>() / nf;
    let m2 = draws.iter().map(|v| (v - mc_mean).powi(2)).sum::<f64>() / nf;
    let m4 = draws.iter().map(|v| (v - mc_mean).powi(4)).sum::<f64>() / nf;
    let se_mean = (m2 / nf).sqrt();
    let se_var = ((m4 - m2 * m2) / nf).sqrt();
    draws.sort_unstable_by(f64::total_cmp);

    let mean_z = (mean.get(0, 0) - mc_mean).abs() / se_mean;
    let var_z = (std.get(0, 0).powi(2) - m2).abs() / se_var;
    let mut worst_q = 0.0f64;
    for (level, qm) in levels.iter().zip(&q) {
        let empirical = draws[((level * nf).ceil() as usize).min(n) - 1];
        worst_q = worst_q.max((qm.get(0, 0) - empirical).abs());
    }
    outcome(
        mean_z <= 3.0 && var_z <= 3.0 && worst_q <= 1e-3,
        format!(
            "mean off by {mean_z:.2} SE, variance off by {var_z:.2} SE, worst quantile error {worst_q:.2e} (1e7 draws)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. early stopping

fn early_stopping() -> Outcome {
    let data = synthetic::linear(200, 4);
    let net = NetworkConfig::regression(3, vec![16], 1);
    // A step size this large overshoots after the first epoch, so validation loss climbs.
    let opt = OptimizerConfig { lr: 5.0, patience: 1, epochs: 500, ..OptimizerConfig::default() };
    let prior = PriorSpec::default();
    let (theta, history) = optimizer::train_member(&data, &net, &opt, &prior, 3).unwrap();
    let epochs_run = history.epochs.len();
    let recomputed = optimizer::validation_loss(&data, &net, &opt, &theta, 3).unwrap();
    let recorded_min = history.epochs.iter().map(|e| e.valid).fold(f64::INFINITY, f64::min);
    let exact = recomputed == history.best_valid() && history.best_valid() == recorded_min;
    outcome(
        history.early_stopped && epochs_run <= history.best_epoch + 2 && epochs_run <= 2 && exact,
        format!(
            "stopped after {epochs_run} epochs (best epoch {}), returned checkpoint loss {recomputed:e} vs recorded minimum {recorded_min:e}",
            history.best_epoch
        ),
    )
}

// ---------------------------------------------------------------------------
// 10. persistence

fn persistence() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bde");
    let mut cfg = EnsembleConfig::new(NetworkConfig::regression(1, vec![5], 1));
    cfg.n_members = 2;
    cfg.opt.epochs = 30;
    cfg.sampler.warmup_steps = 50;
    cfg.sampler.n_samples = 20;
    cfg.sampler.n_thinning = 2;
    let ens = ensemble::fit(&synthetic::sine_heteroscedastic(50, 7), &cfg).unwrap();
    container::save_model(&ens, &path).unwrap();
    let back = container::load_model(&path).unwrap();
    let bits = |e: &PosteriorEnsemble| -> Vec<u64> {
        e.samples.as_slice().iter().map(|v| v.to_bits()).collect()
    };
    let lossless = back == ens && bits(&back) == bits(&ens);

    let bytes = std::fs::read(&path).unwrap();
    let range = container::payload_range(&bytes).unwrap();
    let mut corrupted = bytes.clone();
    corrupted[range.start + range.len() / 2] ^= 0x10;
    let corrupt_err = container::decode(&corrupted).unwrap_err();

    // Rewrite the version and reseal the checksum, so only the version is wrong.
    let meta_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let meta = std::str::from_utf8(&bytes[12..12 + meta_len]).unwrap();
    let patched = meta.replacen("\"format_version\":1", "\"format_version\":2", 1);
    let mut future = Vec::new();
    future.extend_from_slice(&bytes[..4]);
    future.extend_from_slice(&(patched.len() as u64).to_le_bytes());
    future.extend_from_slice(patched.as_bytes());
    future.extend_from_slice(&bytes[12 + meta_len..bytes.len() - 8]);
    let sum = container::checksum(&future);
    future.extend_from_slice(&sum.to_le_bytes());
    let version_err = container::decode(&future).unwrap_err();

    let corrupt_ok = matches!(corrupt_err, BdeError::ChecksumMismatch { .. });
    let version_ok = matches!(version_err, BdeError::VersionMismatch { found: 2, .. });
    outcome(
        lossless && corrupt_ok && version_ok,
        format!(
            "round trip bitwise equal: {lossless}; corrupted byte -> \"{corrupt_err}\"; future version -> \"{version_err}\""
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 10] = [
    ("gradient correctness", gradient_correctness),
    ("momentum geometry", momentum_geometry),
    ("integrator order", integrator_order),
    ("sampler oracle", sampler_oracle),
    ("sample accounting", sample_accounting),
    ("scheduler independence", scheduler_independence),
    ("calibration", calibration),
    ("mixture predictive", mixture_predictive),
    ("early stopping", early_stopping),
    ("persistence", persistence),
];

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (i, (name, run)) in CRITERIA.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let Outcome { pass, detail } = run();
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {name:<24} {verdict}  {detail}");
        if !pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
