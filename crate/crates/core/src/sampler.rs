//! Stage two: microcanonical Langevin Monte Carlo (MCLMC).
//!
//! The momentum is a unit vector `u`. One step is a position half-step, an
//! isokinetic momentum update at the midpoint, a second position half-step,
//! and a partial refresh of `u` with Gaussian noise. There is no accept/reject
//! step; the step size is instead tuned so that the per-dimension variance of
//! the per-step energy error follows a schedule.

use serde::{Deserialize, Serialize};

use crate::error::{BdeError, Result};
use crate::model::{ParameterVector, PriorSpec};
use crate::rng::{self, Phase};

/// `|energy change|` above this ends a step with a divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// Weight of the previous value in the energy-variance moving average.
pub const EMA_SMOOTHING: f64 = 0.9;

/// Step-size multiplier applied once after a warmup divergence.
const RESTART_SHRINK: f64 = 0.1;
/// Back-to-back divergent sampling steps after which a chain is declared broken.
pub const MAX_CONSECUTIVE_DIVERGENCES: usize = 100;

/// Consecutive divergent steps that end a restarted warmup. Isolated spikes are
/// skipped, but a step size that fails repeatedly is not stable anywhere near
/// the current point.
pub const WARMUP_CONSECUTIVE_DIVERGENCES: usize = 3;

/// Halvings tried while probing for an automatic initial step size.
const MAX_PROBE_HALVINGS: usize = 60;
/// Consecutive steps a candidate initial step size must survive.
const PROBE_STEPS: usize = 20;

/// An unnormalized log-density with its gradient.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, theta: &[f64]) -> Result<f64>;

    /// Returns the log-density and overwrites `grad` with its gradient.
    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64>;
}

/// A positive real or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepSetting {
    #[default]
    Auto,
    #[serde(untagged)]
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub warmup_steps: usize,
    /// Post-warmup steps per member.
    pub n_samples: usize,
    pub n_thinning: usize,
    pub desired_energy_var_start: f64,
    pub desired_energy_var_end: f64,
    pub initial_step_size: StepSetting,
    pub decoherence_length: StepSetting,
    pub prior: PriorSpec,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            warmup_steps: 5000,
            n_samples: 200,
            n_thinning: 10,
            desired_energy_var_start: 0.5,
            desired_energy_var_end: 0.1,
            initial_step_size: StepSetting::Auto,
            decoherence_length: StepSetting::Auto,
            prior: PriorSpec::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_thinning == 0 {
            return Err(BdeError::Config("n_thinning must be at least 1".into()));
        }
        for (name, v) in [
            ("desired_energy_var_start", self.desired_energy_var_start),
            ("desired_energy_var_end", self.desired_energy_var_end),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(BdeError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, s) in [
            ("initial_step_size", self.initial_step_size),
            ("decoherence_length", self.decoherence_length),
        ] {
            if let StepSetting::Fixed(v) = s {
                if !(v > 0.0) {
                    return Err(BdeError::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        self.prior.validate()
    }

    /// Number of states `sample_chain` keeps.
    pub fn retained_per_chain(&self) -> usize {
        self.n_samples / self.n_thinning.max(1)
    }

    pub fn schedule(&self) -> EnergySchedule {
        EnergySchedule {
            start: self.desired_energy_var_start,
            end: self.desired_energy_var_end,
        }
    }
}

/// Linear schedule of the desired per-dimension energy variance over warmup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySchedule {
    pub start: f64,
    pub end: f64,
}

impl EnergySchedule {
    /// Target after warmup step `k` of `total` (1-based `k`).
    pub fn target(&self, k: usize, total: usize) -> f64 {
        let t = k as f64 / total as f64;
        (1.0 - t) * self.start + t * self.end
    }
}

/// Running statistics of the per-step energy change.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyStats {
    pub count: u64,
    pub mean: f64,
    m2: f64,
    mean_sq_per_dim: f64,
}

impl EnergyStats {
    pub fn push(&mut self, delta_e: f64, d: usize) {
        self.count += 1;
        let n = self.count as f64;
        let diff = delta_e - self.mean;
        self.mean += diff / n;
        self.m2 += diff * (delta_e - self.mean);
        self.mean_sq_per_dim += (delta_e * delta_e / d as f64 - self.mean_sq_per_dim) / n;
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Mean of `energy_change^2 / d`: the quantity the tuner targets.
    pub fn energy_variance_per_dim(&self) -> f64 {
        self.mean_sq_per_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerState {
    pub theta: ParameterVector,
    /// Unit momentum direction.
    pub u: Vec<f64>,
    pub eps: f64,
    pub l: f64,
    /// Key of this chain's random streams.
    pub seed: u64,
    pub phase: Phase,
    /// Steps taken in the current phase; addresses the refresh stream.
    pub step: u64,
    /// Cached log-density at `theta`.
    pub logp: f64,
    pub energy: EnergyStats,
}

impl SamplerState {
    /// Starts a chain at `theta` with momentum drawn uniformly on the sphere.
    pub fn new<T: LogDensity + ?Sized>(
        theta: ParameterVector,
        target: &T,
        eps: f64,
        l: f64,
        seed: u64,
    ) -> Result<Self> {
        let d = theta.len();
        if d != target.dim() {
            return Err(BdeError::Shape(format!(
                "start point has length {d}, target has dimension {}",
                target.dim()
            )));
        }
        if d < 2 {
            return Err(BdeError::Config(format!(
                "microcanonical dynamics need dimension >= 2, got {d}"
            )));
        }
        let logp = target.log_density(&theta)?;
        if !logp.is_finite() {
            return Err(BdeError::Numeric {
                what: "log-density at chain start",
                index: 0,
            });
        }
        let u = uniform_direction(d, &mut rng::stream(seed, Phase::MomentumInit, 0));
        Ok(Self {
            theta,
            u,
            eps,
            l,
            seed,
            phase: Phase::Warmup,
            step: 0,
            logp,
            energy: EnergyStats::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Discards the current step: keeps `theta`, draws a fresh momentum direction
    /// from this step's stream and advances the step counter.
    pub fn skip_step(&mut self) {
        let mut r = rng::stream(self.seed, self.phase, self.step);
        self.u = uniform_direction(self.dim(), &mut r);
        self.step += 1;
    }

    /// Switches the refresh stream to `phase` and clears the energy statistics.
    pub fn enter_phase(&mut self, phase: Phase) {
        self.phase = phase;
        self.step = 0;
        self.energy = EnergyStats::default();
    }
}

fn uniform_direction<R: rand::Rng>(d: usize, r: &mut R) -> Vec<f64> {
    let mut u = vec![0.0; d];
    loop {
        rng::fill_standard_normal(r, &mut u);
        if normalize(&mut u) > 0.0 {
            return u;
        }
    }
}

/// Scales `v` to unit length and returns its former norm.
fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentumKick {
    /// Kinetic energy change `(d-1) ln(cosh delta + a sinh delta)`.
    pub delta_k: f64,
    /// The gradient was zero and `u` was left unchanged.
    pub degenerate: bool,
}

/// Closed-form isokinetic map.
///
/// `e` is the unit direction of `-grad U`, `delta >= 0`. Writing `u = a e + w` with
/// `w` orthogonal to `e`, the exact map is
/// `u' = ((sinh delta + a cosh delta) e + w) / (cosh delta + a sinh delta)`.
/// Both parts are evaluated in the `exp(-delta)` form, and the orthogonal part is
/// rescaled to its analytic length, so the result has unit norm even near the
/// anti-aligned fixed point `a = -1`. Returns the log of the scale factor
/// `cosh delta + a sinh delta`.
pub fn isokinetic_map(u: &mut [f64], e: &[f64], delta: f64) -> f64 {
    let a: f64 = u.iter().zip(e).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0);
    let zeta = (-delta).exp();
    let z2 = zeta * zeta;
    // Numerator and denominator of the cosh/sinh form, both multiplied by 2 exp(-delta).
    let denom = (1.0 + a) + (1.0 - a) * z2;
    let along = ((1.0 + a) - (1.0 - a) * z2) / denom;
    let w_len = u
        .iter()
        .zip(e)
        .map(|(x, y)| (x - a * y) * (x - a * y))
        .sum::<f64>()
        .sqrt();
    let w_scale = if w_len > 0.0 {
        2.0 * zeta * ((1.0 - a) * (1.0 + a)).sqrt() / denom / w_len
    } else {
        0.0
    };
    for (ui, &ei) in u.iter_mut().zip(e) {
        *ui = along * ei + w_scale * (*ui - a * ei);
    }
    delta - std::f64::consts::LN_2 + denom.ln()
}

/// Rotates `u` toward `-grad_neg_logp` in place.
pub fn isokinetic_momentum_update(
    u: &mut [f64],
    grad_neg_logp: &[f64],
    eps: f64,
) -> Result<MomentumKick> {
    let d = u.len();
    if d < 2 {
        return Err(BdeError::Config(format!(
            "isokinetic update needs dimension >= 2, got {d}"
        )));
    }
    if grad_neg_logp.len() != d {
        return Err(BdeError::Shape(format!(
            "momentum has length {d}, gradient {}",
            grad_neg_logp.len()
        )));
    }
    let g_norm = grad_neg_logp.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !g_norm.is_finite() {
        return Err(BdeError::Numeric {
            what: "gradient norm",
            index: 0,
        });
    }
    if g_norm == 0.0 {
        return Ok(MomentumKick {
            delta_k: 0.0,
            degenerate: true,
        });
    }
    let e: Vec<f64> = grad_neg_logp.iter().map(|g| -g / g_norm).collect();
    let delta = eps * g_norm / (d - 1) as f64;
    let ln_scale = isokinetic_map(u, &e, delta);
    normalize(u);
    Ok(MomentumKick {
        delta_k: (d - 1) as f64 * ln_scale,
        degenerate: false,
    })
}

/// `theta + fraction * eps * u`, in place.
pub fn position_update(theta: &mut [f64], u: &[f64], eps: f64, fraction: f64) {
    let h = fraction * eps;
    for (t, &v) in theta.iter_mut().zip(u) {
        *t += h * v;
    }
}

/// Noise scale `sqrt((exp(2 eps / L) - 1) / d)` of the partial refresh.
pub fn refresh_noise_scale(eps: f64, l: f64, d: usize) -> f64 {
    ((2.0 * eps / l).exp_m1() / d as f64).sqrt()
}

/// `u <- normalize(u + nu z)` with `z` standard normal.
pub fn partial_refresh<R: rand::Rng>(u: &mut [f64], eps: f64, l: f64, rng: &mut R) {
    let nu = refresh_noise_scale(eps, l, u.len());
    if nu == 0.0 {
        return;
    }
    let mut z = vec![0.0; u.len()];
    rng::fill_standard_normal(rng, &mut z);
    for (ui, zi) in u.iter_mut().zip(&z) {
        *ui += nu * zi;
    }
    normalize(u);
}

fn as_divergence(state: &SamplerState, err: BdeError) -> BdeError {
    if err.is_numeric() {
        divergence(state, f64::NAN)
    } else {
        err
    }
}

fn divergence(state: &SamplerState, energy_change: f64) -> BdeError {
    BdeError::Divergence {
        step: state.step,
        energy_change,
    }
}

/// One MCLMC step. Returns the new state and the energy change
/// `U(theta') - U(theta) + delta_k` (the refresh does not enter it).
pub fn mclmc_step<T: LogDensity + ?Sized>(
    state: &SamplerState,
    target: &T,
) -> Result<(SamplerState, f64)> {
    let mut next = state.clone();
    let eps = state.eps;
    let d = state.dim();

    position_update(&mut next.theta, &state.u, eps, 0.5);
    let mut grad = vec![0.0; d];
    target
        .log_density_and_grad(&next.theta, &mut grad)
        .map_err(|e| as_divergence(state, e))?;
    for g in grad.iter_mut() {
        *g = -*g;
    }
    let kick = isokinetic_momentum_update(&mut next.u, &grad, eps)
        .map_err(|e| as_divergence(state, e))?;
    position_update(&mut next.theta, &next.u, eps, 0.5);

    let logp = target
        .log_density(&next.theta)
        .map_err(|e| as_divergence(state, e))?;
    let delta_e = state.logp - logp + kick.delta_k;
    if !delta_e.is_finite() || delta_e.abs() > DIVERGENCE_THRESHOLD {
        return Err(divergence(state, delta_e));
    }
    next.logp = logp;

    partial_refresh(
        &mut next.u,
        eps,
        state.l,
        &mut rng::stream(state.seed, state.phase, state.step),
    );
    next.step += 1;
    next.energy.push(delta_e, d);
    Ok((next, delta_e))
}

/// One multiplicative step-size update toward `target`, clamped to a factor of 2.
///
/// `predicted_var` is the smoothed per-dimension energy variance expected at `eps`.
pub fn adapt_step_size(eps: f64, predicted_var: f64, target: f64) -> f64 {
    if !(predicted_var > 0.0) {
        return 2.0 * eps;
    }
    (eps * (target / predicted_var).powf(0.25)).clamp(0.5 * eps, 2.0 * eps)
}

/// Moving average of `energy_change^2 / d`, stored relative to `eps^6` so that it
/// stays meaningful while the step size moves. The local energy error of one
/// step is third order in `eps`, so its square scales as `eps^6`.
///
/// The first `1 / (1 - EMA_SMOOTHING)` values are averaged plainly; a single
/// heavy-tailed first value is a poor seed for the exponential average.
#[derive(Debug, Clone, Copy, Default)]
struct EnergyEma {
    per_eps6: f64,
    count: usize,
}

impl EnergyEma {
    fn seed_len() -> usize {
        (1.0 / (1.0 - EMA_SMOOTHING)).round() as usize
    }

    fn push(&mut self, var_per_dim: f64, eps: f64) {
        let x = var_per_dim / eps.powi(6);
        self.count += 1;
        self.per_eps6 = if self.count <= Self::seed_len() {
            self.per_eps6 + (x - self.per_eps6) / self.count as f64
        } else {
            EMA_SMOOTHING * self.per_eps6 + (1.0 - EMA_SMOOTHING) * x
        };
    }

    fn ready(&self) -> bool {
        self.count >= Self::seed_len()
    }

    fn predicted(&self, eps: f64) -> f64 {
        self.per_eps6 * eps.powi(6)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningReport {
    /// Warmup restarts caused by divergences (0 or 1).
    pub restarts: usize,
    /// Divergent steps discarded in the restarted run.
    pub discarded_steps: usize,
    /// Smoothed per-dimension energy variance at the final step size.
    pub final_energy_var: f64,
}

fn run_warmup<T: LogDensity + ?Sized>(
    start: &SamplerState,
    schedule: EnergySchedule,
    warmup_steps: usize,
    target: &T,
    auto_l: bool,
    ceiling: f64,
    tolerate_spikes: bool,
) -> std::result::Result<(SamplerState, f64, usize), (BdeError, f64)> {
    let d = start.dim();
    let sqrt_d = (d as f64).sqrt();
    let mut state = start.clone();
    state.enter_phase(Phase::Warmup);
    if auto_l {
        state.l = sqrt_d * state.eps;
    }
    let mut ema = EnergyEma::default();
    let tail_from = warmup_steps - (warmup_steps / 4).max(1);
    let mut displacement_sum = 0.0;
    let calib_from = warmup_steps - (warmup_steps / 10).max(1);
    let mut tail_count = 0usize;
    let mut calib_energy_sum = 0.0;
    let mut calib_log_eps = 0.0;
    let mut calib_count = 0usize;
    let mut discarded = 0usize;
    let mut run = 0usize;

    for k in 1..=warmup_steps {
        let (mut next, delta_e) = match mclmc_step(&state, target) {
            Ok(step) => {
                run = 0;
                step
            }
            Err(e @ BdeError::Divergence { .. }) if tolerate_spikes => {
                run += 1;
                if run >= WARMUP_CONSECUTIVE_DIVERGENCES {
                    return Err((e, state.eps));
                }
                discarded += 1;
                state.skip_step();
                continue;
            }
            Err(e) => return Err((e, state.eps)),
        };
        log::trace!("warmup {k}: eps {:.4e} dE^2/d {:.4e}", state.eps, delta_e * delta_e / d as f64);
        ema.push(delta_e * delta_e / d as f64, state.eps);
        let tgt = schedule.target(k, warmup_steps);
        if ema.ready() {
            next.eps = adapt_step_size(state.eps, ema.predicted(state.eps), tgt).min(ceiling);
        }
        if auto_l {
            next.l = sqrt_d * next.eps;
        }
        if k > calib_from {
            calib_energy_sum += delta_e * delta_e / d as f64;
            calib_log_eps += state.eps.ln();
            calib_count += 1;
        }
        if k > tail_from {
            tail_count += 1;
            let disp: f64 = next
                .theta
                .iter()
                .zip(start.theta.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            displacement_sum += disp;
        }
        state = next;
    }

    // The running update settles near a typical value of the heavy-tailed energy
    // error rather than its mean, and its last iterate is noisy. Take the
    // geometric mean step size over the final tenth of warmup and apply the
    // quarter-power rule once with the mean energy error realized there.
    let realized = calib_energy_sum / calib_count.max(1) as f64;
    if calib_count > 0 && realized > 0.0 && realized.is_finite() {
        let typical = (calib_log_eps / calib_count as f64).exp();
        state.eps = (typical * (schedule.end / realized).powf(0.25)).min(ceiling);
    }
    if auto_l && tail_count > 0 {
        let mean_disp = displacement_sum / tail_count as f64;
        state.l = (1.5 * mean_disp).clamp(state.eps, 1e6 * state.eps);
    }
    let var = ema.predicted(state.eps);
    Ok((state, var, discarded))
}

/// Runs `warmup_steps` adaptive steps and returns the tuned state.
///
/// At warmup step `k` the target is the linear interpolation of `schedule`.
/// A divergence restarts warmup once from the starting point with a tenth of the
/// step size that diverged, and the restarted run never exceeds half of that step
/// size. In the restarted run an isolated divergent step is discarded like in the
/// sampling phase; [`WARMUP_CONSECUTIVE_DIVERGENCES`] in a row are returned as
/// an error. With `auto_l` the decoherence length follows `sqrt(d) * eps` during
/// warmup and is then set to 1.5 times the mean distance from the start over the
/// last quarter of warmup.
pub fn tune_step_size<T: LogDensity + ?Sized>(
    state: &SamplerState,
    schedule: EnergySchedule,
    warmup_steps: usize,
    target: &T,
    auto_l: bool,
) -> Result<(SamplerState, TuningReport)> {
    if warmup_steps == 0 {
        return Err(BdeError::Config("tuning needs at least one warmup step".into()));
    }
    let first = run_warmup(state, schedule, warmup_steps, target, auto_l, f64::INFINITY, false);
    let (tuned, var, restarts, discarded) = match first {
        Ok((s, v, _)) => (s, v, 0, 0),
        Err((BdeError::Divergence { step, energy_change }, diverged_at)) => {
            log::debug!(
                "warmup diverged at step {step} (dE {energy_change:.3e}, eps {diverged_at:.3e}); restarting"
            );
            // Everything at or above the failing step size is known to be unsafe here.
            let mut retry = state.clone();
            retry.eps = diverged_at * RESTART_SHRINK;
            let ceiling = 0.5 * diverged_at;
            let (s, v, discarded) =
                run_warmup(&retry, schedule, warmup_steps, target, auto_l, ceiling, true)
                    .map_err(|(e, _)| e)?;
            (s, v, 1, discarded)
        }
        Err((e, _)) => return Err(e),
    };
    Ok((
        tuned,
        TuningReport {
            restarts,
            discarded_steps: discarded,
            final_energy_var: var,
        },
    ))
}

/// Automatic initial step size: start at `sqrt(d) / 4` and halve until a short
/// trial run of `PROBE_STEPS` steps stays finite with every `energy_change^2 / d`
/// at most `target_var`.
///
/// A single step is not enough: at a MAP point the gradient nearly vanishes and
/// the first energy change says little about the curvature a step away.
pub fn probe_initial_step_size<T: LogDensity + ?Sized>(
    state: &SamplerState,
    target: &T,
    target_var: f64,
) -> f64 {
    let d = state.dim() as f64;
    let mut eps = 0.25 * d.sqrt();
    let mut start = state.clone();
    start.enter_phase(Phase::Warmup);
    'halving: for _ in 0..MAX_PROBE_HALVINGS {
        let mut trial = start.clone();
        trial.eps = eps;
        trial.l = d.sqrt() * eps;
        for _ in 0..PROBE_STEPS {
            match mclmc_step(&trial, target) {
                Ok((next, delta_e)) if delta_e * delta_e / d <= target_var => trial = next,
                _ => {
                    eps *= 0.5;
                    continue 'halving;
                }
            }
        }
        return eps;
    }
    eps
}

/// Everything a chain produces besides its samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDiagnostics {
    pub final_eps: f64,
    pub final_l: f64,
    pub restarts: usize,
    /// Divergent steps that were discarded (restarted warmup and sampling).
    pub discarded_steps: usize,
    /// Mean `energy_change^2 / d` over the accepted sampling steps.
    pub energy_var_per_dim: f64,
}

/// Warmup followed by `n_samples` steps, keeping every `n_thinning`-th state.
///
/// A divergent sampling step is discarded: the chain stays put, takes a fresh
/// momentum direction and the step still counts toward `n_samples`.
/// `MAX_CONSECUTIVE_DIVERGENCES` in a row are fatal.
///
/// Returns exactly `n_samples / n_thinning` (floored) parameter vectors.
pub fn sample_chain<T: LogDensity + ?Sized>(
    theta_map: &ParameterVector,
    cfg: &SamplerConfig,
    target: &T,
    seed: u64,
) -> Result<(Vec<ParameterVector>, ChainDiagnostics)> {
    cfg.validate()?;
    let d = target.dim();
    let mut state = SamplerState::new(theta_map.clone(), target, 1.0, 1.0, seed)?;
    state.eps = match cfg.initial_step_size {
        StepSetting::Fixed(e) => e,
        StepSetting::Auto => probe_initial_step_size(&state, target, cfg.desired_energy_var_start),
    };
    let auto_l = cfg.decoherence_length == StepSetting::Auto;
    state.l = match cfg.decoherence_length {
        StepSetting::Fixed(l) => l,
        StepSetting::Auto => (d as f64).sqrt() * state.eps,
    };

    let mut restarts = 0;
    let mut discarded = 0;
    if cfg.warmup_steps > 0 {
        let (tuned, report) =
            tune_step_size(&state, cfg.schedule(), cfg.warmup_steps, target, auto_l)?;
        state = tuned;
        restarts = report.restarts;
        discarded = report.discarded_steps;
    }

    state.enter_phase(Phase::Sampling);
    let mut samples = Vec::with_capacity(cfg.retained_per_chain());
    let mut run = 0;
    for k in 1..=cfg.n_samples {
        match mclmc_step(&state, target) {
            Ok((next, _)) => {
                state = next;
                run = 0;
            }
            Err(e @ BdeError::Divergence { .. }) => {
                run += 1;
                if run >= MAX_CONSECUTIVE_DIVERGENCES {
                    return Err(e);
                }
                discarded += 1;
                state.skip_step();
            }
            Err(e) => return Err(e),
        }
        if k % cfg.n_thinning == 0 {
            samples.push(state.theta.clone());
        }
    }
    let diagnostics = ChainDiagnostics {
        final_eps: state.eps,
        final_l: state.l,
        restarts,
        discarded_steps: discarded,
        energy_var_per_dim: state.energy.energy_variance_per_dim(),
    };
    Ok((samples, diagnostics))
}

/// Isotropic Gaussian `N(0, scale^2 I)`. Handy as a closed-form target.
#[derive(Debug, Clone, Copy)]
pub struct IsotropicGaussian {
    pub dim: usize,
    pub scale: f64,
}

impl LogDensity for IsotropicGaussian {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, theta: &[f64]) -> Result<f64> {
        let inv = 1.0 / (self.scale * self.scale);
        Ok(-0.5 * inv * theta.iter().map(|t| t * t).sum::<f64>())
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        let inv = 1.0 / (self.scale * self.scale);
        for (g, t) in grad.iter_mut().zip(theta) {
            *g = -t * inv;
        }
        self.log_density(theta)
    }
}
