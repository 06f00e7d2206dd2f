//! Secret-key rates: the analytic pipeline, the repeaterless bound, the
//! correctionless baseline and the segment-count optimizer.

use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amplify::{expected_added_variance, resolve_strategy, AmplificationStrategy, ExpectationMode};
use crate::error::{Error, Result};
use crate::gkpcode::{self, PauliModel, QberThreshold};
use crate::model::{derive, PhysicalConstants, RepeaterConfig};
use crate::stats;

/// `h(x)` without range checks; callers guarantee `0 <= x <= 1`.
pub(crate) fn h2(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (-x).ln_1p() / std::f64::consts::LN_2
}

pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::invalid("x", format!("must lie in [0, 1], got {x}")));
    }
    Ok(h2(x))
}

/// BB84 secret fraction `max(0, 1 - 2h(qber))`.
pub fn secret_fraction(qber: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&qber) {
        return Err(Error::invalid("qber", format!("must lie in [0, 1], got {qber}")));
    }
    Ok((1.0 - 2.0 * h2(qber)).max(0.0))
}

/// Repeaterless bound in bits per channel use for fibre of length `length_km`.
pub fn plob_bound(length_km: f64) -> Result<f64> {
    plob_bound_with(length_km, PhysicalConstants::FIBER.l_att)
}

pub fn plob_bound_with(length_km: f64, l_att: f64) -> Result<f64> {
    if !(length_km > 0.0) {
        return Err(Error::invalid("L", format!("must be positive, got {length_km}")));
    }
    let x = length_km / l_att;
    // 1 - e^{-x} loses everything to rounding once e^{-x} < 2^-53
    if x < std::f64::consts::LN_2 {
        Ok(-(-(-x).exp_m1()).log2())
    } else {
        Ok(-(-(-x).exp()).ln_1p() / std::f64::consts::LN_2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateOptions {
    pub pauli_model: PauliModel,
    pub expectation: ExpectationMode,
    pub qber_threshold: QberThreshold,
    pub constants: PhysicalConstants,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            pauli_model: PauliModel::Simplified,
            expectation: ExpectationMode::ClosedForm,
            qber_threshold: QberThreshold::Working,
            constants: PhysicalConstants::FIBER,
        }
    }
}

/// One evaluated chain. Rates are per time step unless suffixed `_hz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    #[serde(rename = "L")]
    pub length_km: f64,
    pub n: u64,
    /// Resolved strategy; empty for the correctionless baseline.
    pub strategy: Option<AmplificationStrategy>,
    pub p: f64,
    pub alpha: f64,
    pub sigma_add_sq: f64,
    pub sigma_tot_sq: f64,
    pub p_pauli: f64,
    pub qber: f64,
    pub r: f64,
    #[serde(rename = "R")]
    pub raw_rate: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "S_hz")]
    pub s_hz: f64,
}

/// Applies the common `r`, `R`, `S` tail of the pipeline.
fn finish(
    config: &RepeaterConfig,
    constants: &PhysicalConstants,
    threshold: QberThreshold,
    qber: f64,
    p: f64,
) -> Result<(f64, f64, f64, f64)> {
    let r = if qber > threshold.value() {
        0.0
    } else {
        secret_fraction(qber)?
    };
    let raw_rate = 1.0 / stats::avg_total_steps(config.segments, p)?;
    let s = r * raw_rate;
    let s_hz = s * constants.c_fiber * config.segments as f64 / config.length_km;
    Ok((r, raw_rate, s, s_hz))
}

pub fn analytic_rate(config: &RepeaterConfig) -> Result<RateResult> {
    analytic_rate_with(config, &RateOptions::default())
}

/// Full deterministic pipeline from configuration to key rate.
pub fn analytic_rate_with(config: &RepeaterConfig, options: &RateOptions) -> Result<RateResult> {
    let constants = &options.constants;
    let d = derive(config, constants)?;
    let strategy = resolve_strategy(config.strategy, d.l0, config.p_link, config.t_coh, constants)?;
    let sigma_add_sq = expected_added_variance(strategy, d.p, d.alpha, options.expectation)?;
    let sigma_tot_sq = 2.0 * config.delta_sq + config.gamma_sq + sigma_add_sq;
    let p_pauli = gkpcode::pauli_error_prob(sigma_tot_sq, options.pauli_model)?;
    // the simplified model exceeds 1/2 only for absurd variances; QBER saturates there
    let qber = gkpcode::qber(config.segments, p_pauli.min(0.5))?;
    let (r, raw_rate, s, s_hz) = finish(config, constants, options.qber_threshold, qber, d.p)?;
    Ok(RateResult {
        length_km: config.length_km,
        n: config.segments,
        strategy: Some(strategy),
        p: d.p,
        alpha: d.alpha,
        sigma_add_sq,
        sigma_tot_sq,
        p_pauli,
        qber,
        r,
        raw_rate,
        s,
        s_hz,
    })
}

/// Power of `mu` applied in the correctionless QBER.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MuExponent {
    /// `mu^n`.
    #[default]
    Segments,
    /// `mu^(n-1)`.
    Swaps,
    Fixed(f64),
}

/// Maps depolarization and dephasing to the correctionless QBER:
/// `QBER = 1/2 (1 - mu^e E(exp(-alpha D_n)) F)`, where `F = exp(-alpha (n-1))`
/// books one step of unavoidable dephasing per intermediate station when
/// `initial_dephasing` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseMapping {
    pub mu_exponent: MuExponent,
    pub initial_dephasing: bool,
}

impl Default for NoiseMapping {
    fn default() -> Self {
        Self {
            mu_exponent: MuExponent::Segments,
            initial_dephasing: true,
        }
    }
}

impl NoiseMapping {
    pub fn qber(&self, n: u64, mu: f64, dephasing_mean: f64, alpha: f64) -> f64 {
        let e = match self.mu_exponent {
            MuExponent::Segments => n as f64,
            MuExponent::Swaps => n.saturating_sub(1) as f64,
            MuExponent::Fixed(e) => e,
        };
        let initial = if self.initial_dephasing {
            (-alpha * n.saturating_sub(1) as f64).exp()
        } else {
            1.0
        };
        let fidelity = mu.powf(e) * dephasing_mean * initial;
        (0.5 * (1.0 - fidelity)).clamp(0.0, 0.5)
    }
}

/// Rate of the single-spin-memory chain without error correction.
/// `sigma_add_sq`, `sigma_tot_sq` and `p_pauli` do not apply and are NaN.
pub fn correctionless_rate(
    config: &RepeaterConfig,
    mu: f64,
    mapping: &NoiseMapping,
    options: &RateOptions,
) -> Result<RateResult> {
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(Error::invalid("mu", format!("must lie in (0, 1], got {mu}")));
    }
    let constants = &options.constants;
    let d = derive(config, constants)?;
    let dephasing = stats::exp_dephasing_mean(config.segments, d.p, d.alpha)?;
    let qber = mapping.qber(config.segments, mu, dephasing, d.alpha);
    let (r, raw_rate, s, s_hz) = finish(config, constants, options.qber_threshold, qber, d.p)?;
    Ok(RateResult {
        length_km: config.length_km,
        n: config.segments,
        strategy: None,
        p: d.p,
        alpha: d.alpha,
        sigma_add_sq: f64::NAN,
        sigma_tot_sq: f64::NAN,
        p_pauli: f64::NAN,
        qber,
        r,
        raw_rate,
        s,
        s_hz,
    })
}

/// Best segment count found by [`optimize_n`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Optimum {
    pub n: u64,
    pub result: RateResult,
    /// Set when every evaluated count gives zero key.
    pub all_zero: bool,
}

/// Ranges up to this size are searched exhaustively.
pub const EXHAUSTIVE_SEARCH_LIMIT: u64 = 100_000;
const GRID_POINTS: usize = 2000;

/// Maximizes `S_hz` over segment counts in `n_range`, ties going to the
/// smallest `n`.
///
/// Ranges wider than [`EXHAUSTIVE_SEARCH_LIMIT`] are searched on a
/// logarithmic grid that is refined around the best point, which assumes a
/// single maximum.
pub fn optimize_n(template: &RepeaterConfig, n_range: RangeInclusive<u64>, options: &RateOptions) -> Result<Optimum> {
    let (lo, hi) = (*n_range.start(), *n_range.end());
    if lo == 0 || lo > hi {
        return Err(Error::invalid(
            "n",
            format!("need a non-empty range of positive counts, got {lo}..={hi}"),
        ));
    }
    let eval = |n: u64| analytic_rate_with(&template.clone().with_segments(n), options);
    let best = search(&eval, lo, hi)?;
    let all_zero = best.s_hz <= 0.0;
    Ok(Optimum {
        n: best.n,
        result: best,
        all_zero,
    })
}

fn better(a: &RateResult, b: &RateResult) -> bool {
    a.s_hz > b.s_hz || (a.s_hz == b.s_hz && a.n < b.n)
}

fn pick_best<I>(results: I) -> Result<RateResult>
where
    I: Iterator<Item = Result<RateResult>>,
{
    let mut best: Option<RateResult> = None;
    let mut first_err = None;
    for r in results {
        match r {
            Ok(r) => {
                if best.as_ref().map_or(true, |b| better(&r, b)) {
                    best = Some(r);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("non-empty search"))
}

fn search<F>(eval: &F, lo: u64, hi: u64) -> Result<RateResult>
where
    F: Fn(u64) -> Result<RateResult> + Sync,
{
    if hi - lo < EXHAUSTIVE_SEARCH_LIMIT {
        let results: Vec<_> = (lo..=hi).into_par_iter().map(eval).collect();
        return pick_best(results.into_iter());
    }
    let grid = log_grid(lo, hi, GRID_POINTS);
    let results: Vec<_> = grid.par_iter().map(|&n| eval(n)).collect();
    let best = pick_best(results.into_iter())?;
    let i = grid.binary_search(&best.n).expect("best point is on the grid");
    let left = grid[i.saturating_sub(1)];
    let right = grid[(i + 1).min(grid.len() - 1)];
    let refined = search(eval, left, right)?;
    Ok(if better(&best, &refined) { best } else { refined })
}

/// Sorted, deduplicated, roughly log-spaced integers covering `lo..=hi`.
fn log_grid(lo: u64, hi: u64, points: usize) -> Vec<u64> {
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut grid: Vec<u64> = (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp().round() as u64)
        .map(|n| n.clamp(lo, hi))
        .collect();
    grid.push(lo);
    grid.push(hi);
    grid.sort_unstable();
    grid.dedup();
    grid
}
