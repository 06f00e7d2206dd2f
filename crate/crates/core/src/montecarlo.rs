//! Numerical rate evaluation: a discrete-time simulation of the chain and a
//! term-by-term average over the waiting-time law.
//!
//! Every trial owns a ChaCha8 stream selected by `(seed, trial index)`, and
//! per-trial results are reduced in index order, so output does not depend
//! on how many worker threads ran the trials.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amplify::{added_variance, resolve_strategy, AmplificationStrategy};
use crate::error::{check_probability, Error, Result};
use crate::gkpcode::{self, PauliModel};
use crate::model::{derive, DerivedParams, PhysicalConstants, RepeaterConfig};
use crate::protocol::geometric_unchecked;
use crate::rates::{analytic_rate_with, secret_fraction, RateOptions};
use crate::stats::{self, WaitTerms};

pub const DEFAULT_TRIALS: u64 = 5000;
pub const DEFAULT_INNER_ITERATIONS: u64 = 1000;
pub const DEFAULT_TRUNCATION: u64 = 50_000;
/// Truncated tail mass above which numeric averages are flagged.
pub const TAIL_WARNING: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub trials: u64,
    pub inner_iterations: u64,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            trials: DEFAULT_TRIALS,
            inner_iterations: DEFAULT_INNER_ITERATIONS,
            seed: 0,
            workers: None,
        }
    }
}

impl SimulationOptions {
    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be at least 1"));
        }
        if self.inner_iterations == 0 {
            return Err(Error::invalid("inner_iterations", "must be at least 1"));
        }
        if self.workers == Some(0) {
            return Err(Error::invalid("workers", "must be at least 1"));
        }
        Ok(())
    }
}

/// Summary of a sample without keeping the sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub count: u64,
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationStats {
    pub trials: u64,
    pub inner_iterations: u64,
    pub seed: u64,
    pub qber_mean: f64,
    pub qber_stderr: f64,
    pub mean_completion_steps: f64,
    pub completion_stderr: f64,
    /// Covariance of trial QBER and completion time, used for rate errors.
    pub qber_completion_cov: f64,
    /// Added variance over every simulated swap.
    pub per_swap_variance: SampleSummary,
}

impl SimulationStats {
    /// Simulated key per step, `r(qber_mean) / mean_completion_steps`, and its
    /// delta-method standard error.
    pub fn secret_rate(&self, qber_threshold: f64) -> Result<(f64, f64)> {
        let q = self.qber_mean.clamp(0.0, 1.0);
        let k = self.mean_completion_steps;
        let (r, dr) = if q > qber_threshold {
            (0.0, 0.0)
        } else {
            let r = secret_fraction(q)?;
            let dr = if r > 0.0 && q > 0.0 {
                -2.0 * ((1.0 - q) / q).log2()
            } else {
                0.0
            };
            (r, dr)
        };
        let s = r / k;
        let (gq, gk) = (dr / k, -r / (k * k));
        let var_q = self.qber_stderr * self.qber_stderr;
        let var_k = self.completion_stderr * self.completion_stderr;
        let cov = self.qber_completion_cov / self.trials as f64;
        let var = gq * gq * var_q + gk * gk * var_k + 2.0 * gq * gk * cov;
        Ok((s, var.max(0.0).sqrt()))
    }
}

/// Seed for the `index`-th point of a sweep (SplitMix64 finalizer).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Sum with O(log n) error growth and a fixed association order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 16 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

fn mean_and_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = pairwise_sum(values) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    (mean, pairwise_sum(&sq) / (n - 1.0))
}

fn in_pool<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(job()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::invalid("workers", e.to_string()))?;
            Ok(pool.install(job))
        }
    }
}

/// Order in which simultaneous swaps are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TieBreak {
    LeftToRight,
    #[cfg_attr(not(test), allow(dead_code))]
    RightToLeft,
}

/// Segment completion times and the wait at each station, listed in the
/// order the swaps are executed: by swap time, ties broken per `tie`.
pub(crate) fn sample_chain<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    p: f64,
    tie: TieBreak,
) -> (Vec<u64>, Vec<(usize, u64)>) {
    let done: Vec<u64> = (0..n).map(|_| geometric_unchecked(rng, p)).collect();
    let mut swaps: Vec<(u64, usize, u64)> = done
        .windows(2)
        .enumerate()
        .map(|(j, w)| (w[0].max(w[1]), j, w[0].abs_diff(w[1])))
        .collect();
    match tie {
        TieBreak::LeftToRight => swaps.sort_by_key(|&(t, j, _)| (t, j)),
        TieBreak::RightToLeft => swaps.sort_by_key(|&(t, j, _)| (t, std::cmp::Reverse(j))),
    }
    (done, swaps.into_iter().map(|(_, j, w)| (j, w)).collect())
}

struct TrialOutcome {
    qber: f64,
    completion: f64,
    var_sum: f64,
    var_sq_sum: f64,
    var_min: f64,
    var_max: f64,
}

struct ChainModel {
    n: usize,
    p: f64,
    alpha: f64,
    mean_wait: u64,
    strategy: AmplificationStrategy,
    base_variance: f64,
    pauli_model: PauliModel,
}

impl ChainModel {
    fn new(config: &RepeaterConfig, constants: &PhysicalConstants, pauli_model: PauliModel) -> Result<Self> {
        let d: DerivedParams = derive(config, constants)?;
        let strategy = resolve_strategy(config.strategy, d.l0, config.p_link, config.t_coh, constants)?;
        Ok(Self {
            n: usize::try_from(config.segments).map_err(|_| Error::invalid("n", "too many segments"))?,
            p: d.p,
            alpha: d.alpha,
            mean_wait: d.mean_wait_steps,
            strategy,
            base_variance: 2.0 * config.delta_sq + config.gamma_sq,
            pauli_model,
        })
    }

    fn trial(&self, seed: u64, index: u64, inner: u64, tie: TieBreak) -> Result<TrialOutcome> {
        let mut rng = trial_rng(seed, index);
        let (done, swaps) = sample_chain(&mut rng, self.n, self.p, tie);
        let mut flip = vec![0.0; self.n.saturating_sub(1)];
        let (mut var_sum, mut var_sq_sum) = (0.0, 0.0);
        let (mut var_min, mut var_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(station, wait) in &swaps {
            let add = added_variance(self.strategy, wait as i64, self.mean_wait, self.alpha)?;
            var_sum += add;
            var_sq_sum += add * add;
            var_min = var_min.min(add);
            var_max = var_max.max(add);
            // the simplified model passes 1/2 only for variances where the logical qubit is random anyway
            flip[station] = gkpcode::pauli_error_prob(self.base_variance + add, self.pauli_model)?.min(0.5);
        }
        // parity sampling walks stations left to right whatever the swap order
        let mut errors = 0u64;
        for _ in 0..inner {
            let mut parity = false;
            for &f in &flip {
                let u: f64 = rng.random();
                parity ^= u < f;
            }
            errors += parity as u64;
        }
        Ok(TrialOutcome {
            qber: errors as f64 / inner as f64,
            completion: *done.iter().max().expect("at least one segment") as f64,
            var_sum,
            var_sq_sum,
            var_min,
            var_max,
        })
    }
}

/// Monte Carlo estimate of the QBER and completion time of a chain.
pub fn simulate_chain(config: &RepeaterConfig, options: &SimulationOptions) -> Result<SimulationStats> {
    simulate_chain_with(config, options, &PhysicalConstants::FIBER, PauliModel::Simplified)
}

pub fn simulate_chain_with(
    config: &RepeaterConfig,
    options: &SimulationOptions,
    constants: &PhysicalConstants,
    pauli_model: PauliModel,
) -> Result<SimulationStats> {
    simulate_inner(config, options, constants, pauli_model, TieBreak::LeftToRight)
}

pub(crate) fn simulate_inner(
    config: &RepeaterConfig,
    options: &SimulationOptions,
    constants: &PhysicalConstants,
    pauli_model: PauliModel,
    tie: TieBreak,
) -> Result<SimulationStats> {
    options.validate()?;
    let model = ChainModel::new(config, constants, pauli_model)?;
    let outcomes: Vec<TrialOutcome> = in_pool(options.workers, || {
        (0..options.trials)
            .into_par_iter()
            .map(|i| model.trial(options.seed, i, options.inner_iterations, tie))
            .collect::<Result<Vec<_>>>()
    })??;

    let qbers: Vec<f64> = outcomes.iter().map(|o| o.qber).collect();
    let completions: Vec<f64> = outcomes.iter().map(|o| o.completion).collect();
    let (qber_mean, qber_var) = mean_and_var(&qbers);
    let (completion_mean, completion_var) = mean_and_var(&completions);
    let cross: Vec<f64> = outcomes
        .iter()
        .map(|o| (o.qber - qber_mean) * (o.completion - completion_mean))
        .collect();
    let trials = options.trials as f64;
    let cov = if outcomes.len() > 1 {
        pairwise_sum(&cross) / (trials - 1.0)
    } else {
        0.0
    };

    let swaps = options.trials * (model.n as u64).saturating_sub(1);
    let per_swap_variance = if swaps == 0 {
        SampleSummary {
            count: 0,
            mean: f64::NAN,
            variance: f64::NAN,
            min: f64::NAN,
            max: f64::NAN,
        }
    } else {
        let sum = pairwise_sum(&outcomes.iter().map(|o| o.var_sum).collect::<Vec<_>>());
        let sq = pairwise_sum(&outcomes.iter().map(|o| o.var_sq_sum).collect::<Vec<_>>());
        let c = swaps as f64;
        let mean = sum / c;
        let variance = if swaps > 1 {
            ((sq - c * mean * mean) / (c - 1.0)).max(0.0)
        } else {
            0.0
        };
        SampleSummary {
            count: swaps,
            mean,
            variance,
            min: outcomes.iter().map(|o| o.var_min).fold(f64::INFINITY, f64::min),
            max: outcomes.iter().map(|o| o.var_max).fold(f64::NEG_INFINITY, f64::max),
        }
    };

    Ok(SimulationStats {
        trials: options.trials,
        inner_iterations: options.inner_iterations,
        seed: options.seed,
        qber_mean,
        qber_stderr: (qber_var / trials).sqrt(),
        mean_completion_steps: completion_mean,
        completion_stderr: (completion_var / trials).sqrt(),
        qber_completion_cov: cov,
        per_swap_variance,
    })
}

/// Monte Carlo mean and standard error of the completion time `max_j N_j`.
pub fn estimate_completion_steps(n: u64, p: f64, trials: u64, seed: u64) -> Result<(f64, f64)> {
    check_probability(p)?;
    let n = n as usize;
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, i);
            (0..n).map(|_| geometric_unchecked(&mut rng, p)).max().unwrap_or(0) as f64
        })
        .collect();
    let (m, v) = mean_and_var(&samples);
    Ok((m, (v / trials as f64).sqrt()))
}

/// Monte Carlo mean and standard error of `exp(-alpha D_n)`, with `D_n` the
/// sum of station waits of a simulated chain (waits are not independent here).
pub fn estimate_dephasing_mean(n: u64, p: f64, alpha: f64, trials: u64, seed: u64) -> Result<(f64, f64)> {
    check_probability(p)?;
    let n = n as usize;
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, i);
            let (_, swaps) = sample_chain(&mut rng, n, p, TieBreak::LeftToRight);
            let total: u64 = swaps.iter().map(|&(_, w)| w).sum();
            (-alpha * total as f64).exp()
        })
        .collect();
    let (m, v) = mean_and_var(&samples);
    Ok((m, (v / trials as f64).sqrt()))
}

/// Error probability averaged over the waiting-time law, and the QBER it implies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericAverage {
    pub strategy: AmplificationStrategy,
    /// `E[sigma_add^2]` over the same truncated law.
    pub sigma_add_sq: f64,
    pub p_pauli: f64,
    pub qber: f64,
    /// Probability mass beyond the truncation.
    pub tail_mass: f64,
    /// Set when `tail_mass` exceeds [`TAIL_WARNING`].
    pub tail_warning: bool,
}

/// Averages the per-swap error probability over the first `truncation`
/// waiting times, then propagates it through the chain.
pub fn numeric_average_qber(config: &RepeaterConfig, truncation: u64, options: &RateOptions) -> Result<NumericAverage> {
    if truncation == 0 {
        return Err(Error::invalid("truncation", "must be at least 1"));
    }
    let constants = &options.constants;
    let d = derive(config, constants)?;
    let strategy = resolve_strategy(config.strategy, d.l0, config.p_link, config.t_coh, constants)?;
    let base = 2.0 * config.delta_sq + config.gamma_sq;
    let (mut p_sum, mut var_sum) = (0.0, 0.0);
    for (k, w) in WaitTerms::new(d.p, truncation) {
        let add = added_variance(strategy, k as i64, d.mean_wait_steps, d.alpha)?;
        var_sum += w * add;
        p_sum += w * gkpcode::pauli_error_prob(base + add, options.pauli_model)?;
    }
    let tail_mass = stats::waiting_tail_mass(d.p, truncation);
    let qber = gkpcode::qber(config.segments, p_sum.min(0.5))?;
    Ok(NumericAverage {
        strategy,
        sigma_add_sq: var_sum,
        p_pauli: p_sum,
        qber,
        tail_mass,
        tail_warning: tail_mass > TAIL_WARNING,
    })
}

/// Secret key per step from the numerically averaged QBER.
pub fn numeric_rate(config: &RepeaterConfig, truncation: u64, options: &RateOptions) -> Result<(f64, NumericAverage)> {
    let avg = numeric_average_qber(config, truncation, options)?;
    let d = derive(config, &options.constants)?;
    let r = if avg.qber > options.qber_threshold.value() {
        0.0
    } else {
        secret_fraction(avg.qber)?
    };
    Ok((r / stats::avg_total_steps(config.segments, d.p)?, avg))
}

/// One row of the three-method comparison. Rates are per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    #[serde(rename = "L")]
    pub length_km: f64,
    pub qber_analytic: f64,
    pub qber_numeric: f64,
    pub qber_simulated: f64,
    pub qber_stderr: f64,
    pub s_analytic: f64,
    pub s_numeric: f64,
    pub s_simulated: f64,
    pub s_simulated_stderr: f64,
    pub tail_warning: bool,
}

/// Evaluates the analytic, numeric and simulated rates at each length.
/// Grid point `i` is simulated with seed `derive_seed(sim.seed, i)`.
pub fn compare_methods(
    config: &RepeaterConfig,
    l_grid: &[f64],
    sim: &SimulationOptions,
    options: &RateOptions,
) -> Result<Vec<ComparisonRow>> {
    if l_grid.is_empty() {
        return Err(Error::invalid("L", "comparison grid is empty"));
    }
    l_grid
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let cfg = config.clone().with_length(l);
            let analytic = analytic_rate_with(&cfg, options)?;
            let (s_numeric, avg) = numeric_rate(&cfg, DEFAULT_TRUNCATION, options)?;
            let point = SimulationOptions {
                seed: derive_seed(sim.seed, i as u64),
                ..*sim
            };
            let stats = simulate_chain_with(&cfg, &point, &options.constants, options.pauli_model)?;
            let (s_sim, s_err) = stats.secret_rate(options.qber_threshold.value())?;
            Ok(ComparisonRow {
                length_km: l,
                qber_analytic: analytic.qber,
                qber_numeric: avg.qber,
                qber_simulated: stats.qber_mean,
                qber_stderr: stats.qber_stderr,
                s_analytic: analytic.s,
                s_numeric,
                s_simulated: s_sim,
                s_simulated_stderr: s_err,
                tail_warning: avg.tail_warning,
            })
        })
        .collect()
}
