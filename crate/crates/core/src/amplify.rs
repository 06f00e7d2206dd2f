//! Conversion of memory loss into Gaussian shift noise.
//!
//! A mode that waits `t_wait` steps for its neighbour is amplified so the
//! loss becomes a Gaussian shift. Each strategy below turns the wait into an
//! added shift variance `sigma_add^2`; the expectation over the waiting-time
//! law is what enters the analytic rate.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{check_alpha, check_probability, Error, Result};
use crate::model::{rounded_mean_wait, PhysicalConstants};
use crate::stats::{self, WaitTerms, DEFAULT_TAIL_MASS};

/// Upper bound on the number of waiting-time terms a numeric expectation
/// may sum before giving up.
pub const MAX_NUMERIC_TERMS: u64 = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AmplificationStrategy {
    /// Preamplify one step at a time while waiting.
    PerStepPreamp,
    /// Amplify for the rounded mean wait `T` up front.
    MeanAdjusted,
    /// As `MeanAdjusted`, but early finishers receive artificial loss instead
    /// of waiting until `T`.
    #[serde(rename = "mean-adjusted-artificial-loss")]
    MeanAdjustedWithArtificialLoss,
    /// Equalize losses with artificial loss, then rescale classically.
    #[serde(rename = "cc")]
    CcAmplification,
    /// `CcAmplification` below the segment-length threshold, otherwise
    /// `PerStepPreamp`.
    #[default]
    Auto,
}

impl AmplificationStrategy {
    pub const ALL: [AmplificationStrategy; 5] = [
        AmplificationStrategy::PerStepPreamp,
        AmplificationStrategy::MeanAdjusted,
        AmplificationStrategy::MeanAdjustedWithArtificialLoss,
        AmplificationStrategy::CcAmplification,
        AmplificationStrategy::Auto,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AmplificationStrategy::PerStepPreamp => "per-step-preamp",
            AmplificationStrategy::MeanAdjusted => "mean-adjusted",
            AmplificationStrategy::MeanAdjustedWithArtificialLoss => "mean-adjusted-artificial-loss",
            AmplificationStrategy::CcAmplification => "cc",
            AmplificationStrategy::Auto => "auto",
        }
    }
}

impl fmt::Display for AmplificationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AmplificationStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            Error::invalid(
                "strategy",
                format!(
                    "unknown strategy {s:?}; expected one of per-step-preamp, mean-adjusted, \
                         mean-adjusted-artificial-loss, cc, auto"
                ),
            )
        })
    }
}

/// How an expectation over the waiting time is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpectationMode {
    /// Closed-form expressions, linearized in `alpha` where applicable.
    #[default]
    ClosedForm,
    /// Exact per-wait variances summed over the truncated waiting-time law.
    Numeric,
}

/// Additive shift variances entering one swap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceBudget {
    /// Variance added by waiting and amplification.
    pub sigma_add_sq: f64,
    /// Natural variance of the fresh Bell pair. Its one-step loss is booked
    /// inside `sigma_add_sq`.
    pub sigma_bell_sq: f64,
    /// Variance of the measured syndrome.
    pub sigma_tot_sq: f64,
}

impl VarianceBudget {
    /// `sigma_tot^2 = 2 delta^2 + sigma_add^2 + gamma^2`.
    pub fn new(delta_sq: f64, sigma_add_sq: f64, gamma_sq: f64) -> Self {
        Self {
            sigma_add_sq,
            sigma_bell_sq: delta_sq,
            sigma_tot_sq: 2.0 * delta_sq + sigma_add_sq + gamma_sq,
        }
    }
}

/// `1 - e^{-x}`.
#[inline]
fn loss(x: f64) -> f64 {
    -(-x).exp_m1()
}

#[inline]
fn added_variance_unchecked(strategy: AmplificationStrategy, t_wait: u64, mean_wait: u64, alpha: f64) -> f64 {
    let t = t_wait as f64;
    let big_t = mean_wait as f64;
    match strategy {
        AmplificationStrategy::PerStepPreamp => (t + 2.0) * loss(alpha),
        AmplificationStrategy::MeanAdjusted => {
            if t_wait <= mean_wait {
                loss((big_t + 1.0) * alpha) + loss((big_t - t + 1.0) * alpha)
            } else {
                loss((big_t + 1.0) * alpha) + (t - big_t + 1.0) * loss(alpha)
            }
        }
        AmplificationStrategy::MeanAdjustedWithArtificialLoss => {
            if t_wait <= mean_wait {
                loss((big_t + 1.0) * alpha) + loss(alpha)
            } else {
                loss((big_t + 1.0) * alpha) + (t - big_t + 1.0) * loss(alpha)
            }
        }
        // (1 - e^{-(t+1)a}) / e^{-(t+1)a}
        AmplificationStrategy::CcAmplification => ((t + 1.0) * alpha).exp_m1(),
        AmplificationStrategy::Auto => unreachable!("checked by callers"),
    }
}

/// Added shift variance for one realized wait of `t_wait` steps.
///
/// `mean_wait` is the rounded mean wait `T`, used only by the mean-adjusted
/// strategies. At `t_wait == T` the first branch of the piecewise laws applies.
pub fn added_variance(strategy: AmplificationStrategy, t_wait: i64, mean_wait: u64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if t_wait < 0 {
        return Err(Error::invalid("t_wait", format!("must be non-negative, got {t_wait}")));
    }
    if strategy == AmplificationStrategy::Auto {
        return Err(Error::UnresolvedStrategy("added_variance needs a concrete strategy"));
    }
    Ok(added_variance_unchecked(strategy, t_wait as u64, mean_wait, alpha))
}

/// Expected added variance over the single-swap waiting-time law.
pub fn expected_added_variance(
    strategy: AmplificationStrategy,
    p: f64,
    alpha: f64,
    mode: ExpectationMode,
) -> Result<f64> {
    check_probability(p)?;
    check_alpha(alpha)?;
    if strategy == AmplificationStrategy::Auto {
        return Err(Error::UnresolvedStrategy(
            "expected_added_variance needs a concrete strategy",
        ));
    }
    if alpha == 0.0 {
        return Ok(0.0);
    }
    match mode {
        ExpectationMode::ClosedForm => closed_form(strategy, p, alpha),
        ExpectationMode::Numeric => numeric(strategy, p, alpha),
    }
}

fn closed_form(strategy: AmplificationStrategy, p: f64, alpha: f64) -> Result<f64> {
    let q = 1.0 - p;
    let big_t = rounded_mean_wait(p) as f64;
    let one_minus_q_sq = p * (1.0 + q);
    // sum_{k > T} (k - T) P(k)
    let overshoot = 2.0 * q_pow(q, big_t + 1.0) / one_minus_q_sq;
    Ok(match strategy {
        AmplificationStrategy::PerStepPreamp => (big_t + 2.0) * alpha,
        AmplificationStrategy::MeanAdjustedWithArtificialLoss => (big_t + 2.0) * alpha + alpha * overshoot,
        AmplificationStrategy::MeanAdjusted => {
            // first order in alpha: (T + 2) + (T - E t) + 2 sum_{k>T} (k - T) P(k)
            let mean_wait = 2.0 * q / one_minus_q_sq;
            alpha * ((big_t + 2.0) + (big_t - mean_wait) + 2.0 * overshoot)
        }
        AmplificationStrategy::CcAmplification => cc_closed_form(p, alpha)?,
        AmplificationStrategy::Auto => unreachable!(),
    })
}

fn q_pow(q: f64, e: f64) -> f64 {
    if q == 0.0 {
        0.0
    } else {
        (e * q.ln()).exp()
    }
}

/// `p^2/(1-q^2) [ (1-e^{-a})/e^{-a} + 2 q e^{2a}/(1 - q e^a) - 2q/(1-q) ]`,
/// rearranged so small `alpha` does not cancel.
fn cc_closed_form(p: f64, alpha: f64) -> Result<f64> {
    let q = 1.0 - p;
    let em1 = alpha.exp_m1();
    // 1 - q e^a
    let denom = p - q * em1;
    if denom <= 0.0 {
        return Err(Error::SeriesDivergence(format!(
            "CC expectation requires q < exp(-alpha); q = {q}, exp(-alpha) = {}",
            (-alpha).exp()
        )));
    }
    // 2q e^{2a}/(1-qe^a) - 2q/(1-q) = 2q (e^{2a} - 1 - q e^a (e^a - 1)) / ((1-qe^a)(1-q))
    let bracket = em1 + 2.0 * q * ((2.0 * alpha).exp_m1() - q * alpha.exp() * em1) / (denom * p);
    Ok(stats::zero_wait_probability(p) * bracket)
}

fn numeric(strategy: AmplificationStrategy, p: f64, alpha: f64) -> Result<f64> {
    let q = 1.0 - p;
    if strategy == AmplificationStrategy::CcAmplification && p - q * alpha.exp_m1() <= 0.0 {
        return Err(Error::SeriesDivergence(format!(
            "CC expectation diverges for q = {q} >= exp(-alpha) = {}",
            (-alpha).exp()
        )));
    }
    let len = stats::truncation_len(p, DEFAULT_TAIL_MASS);
    if len > MAX_NUMERIC_TERMS {
        return Err(Error::TruncationLimit {
            needed: len,
            cap: MAX_NUMERIC_TERMS,
        });
    }
    let mean_wait = rounded_mean_wait(p);
    Ok(match strategy {
        AmplificationStrategy::PerStepPreamp => {
            let one = loss(alpha);
            WaitTerms::new(p, len).map(|(k, w)| w * (k as f64 + 2.0) * one).sum()
        }
        AmplificationStrategy::CcAmplification => WaitTerms::new(p, len)
            .map(|(k, w)| w * ((k as f64 + 1.0) * alpha).exp_m1())
            .sum(),
        _ => WaitTerms::new(p, len)
            .map(|(k, w)| w * added_variance_unchecked(strategy, k, mean_wait, alpha))
            .sum(),
    })
}

/// Outcome of the CC-vs-preamplification threshold search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "l0_km", rename_all = "kebab-case")]
pub enum CcThreshold {
    /// CC amplification has the smaller expected variance below this segment length.
    At(f64),
    /// No sign change inside the search bracket.
    NoCrossing,
}

impl CcThreshold {
    pub fn km(self) -> Option<f64> {
        match self {
            CcThreshold::At(km) => Some(km),
            CcThreshold::NoCrossing => None,
        }
    }
}

pub const THRESHOLD_BRACKET_KM: (f64, f64) = (0.1, 500.0);
pub const THRESHOLD_RESOLUTION_KM: f64 = 0.05;

/// Signed gap `E_cc - E_preamp` (numeric mode) at segment length `l0`.
/// A divergent CC expectation counts as `+inf`.
pub fn cc_preamp_gap(l0: f64, p_link: f64, t_coh: f64, constants: &PhysicalConstants) -> Result<f64> {
    let p = p_link * (-l0 / constants.l_att).exp();
    let alpha = l0 / constants.c_fiber / t_coh;
    if p == 0.0 {
        return Ok(f64::INFINITY);
    }
    let cc = match expected_added_variance(
        AmplificationStrategy::CcAmplification,
        p,
        alpha,
        ExpectationMode::Numeric,
    ) {
        Ok(v) => v,
        Err(Error::SeriesDivergence(_)) => return Ok(f64::INFINITY),
        Err(e) => return Err(e),
    };
    let pre = expected_added_variance(AmplificationStrategy::PerStepPreamp, p, alpha, ExpectationMode::Numeric)?;
    Ok(cc - pre)
}

/// Segment length below which CC amplification beats per-step preamplification.
pub fn cc_threshold_l0(p_link: f64, t_coh: f64, constants: &PhysicalConstants) -> Result<CcThreshold> {
    if !(p_link > 0.0 && p_link <= 1.0) {
        return Err(Error::invalid("p_link", format!("must lie in (0, 1], got {p_link}")));
    }
    if !(t_coh > 0.0) {
        return Err(Error::invalid("t_coh", format!("must be positive, got {t_coh}")));
    }
    let (mut lo, mut hi) = THRESHOLD_BRACKET_KM;
    let gap = |l0: f64| cc_preamp_gap(l0, p_link, t_coh, constants);
    if gap(lo)? >= 0.0 || gap(hi)? < 0.0 {
        return Ok(CcThreshold::NoCrossing);
    }
    while hi - lo > THRESHOLD_RESOLUTION_KM {
        let mid = 0.5 * (lo + hi);
        if gap(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CcThreshold::At(0.5 * (lo + hi)))
}

type ThresholdKey = (u64, u64, u64, u64);

fn threshold_cache() -> &'static Mutex<HashMap<ThresholdKey, CcThreshold>> {
    static CACHE: OnceLock<Mutex<HashMap<ThresholdKey, CcThreshold>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// [`cc_threshold_l0`] memoized per `(p_link, t_coh, constants)`.
pub fn cc_threshold_cached(p_link: f64, t_coh: f64, constants: &PhysicalConstants) -> Result<CcThreshold> {
    let key = (
        p_link.to_bits(),
        t_coh.to_bits(),
        constants.c_fiber.to_bits(),
        constants.l_att.to_bits(),
    );
    if let Some(hit) = threshold_cache().lock().unwrap().get(&key) {
        return Ok(*hit);
    }
    let value = cc_threshold_l0(p_link, t_coh, constants)?;
    threshold_cache().lock().unwrap().insert(key, value);
    Ok(value)
}

/// Resolves `Auto` for a chain with segment length `l0`; other strategies
/// pass through unchanged.
pub fn resolve_strategy(
    strategy: AmplificationStrategy,
    l0: f64,
    p_link: f64,
    t_coh: f64,
    constants: &PhysicalConstants,
) -> Result<AmplificationStrategy> {
    if strategy != AmplificationStrategy::Auto {
        return Ok(strategy);
    }
    // Lossless memories: both strategies add nothing.
    if t_coh.is_infinite() {
        return Ok(AmplificationStrategy::PerStepPreamp);
    }
    Ok(match cc_threshold_cached(p_link, t_coh, constants)? {
        CcThreshold::At(km) if l0 < km => AmplificationStrategy::CcAmplification,
        _ => AmplificationStrategy::PerStepPreamp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use AmplificationStrategy::*;

    const CONCRETE: [AmplificationStrategy; 4] = [
        PerStepPreamp,
        MeanAdjusted,
        MeanAdjustedWithArtificialLoss,
        CcAmplification,
    ];

    #[test]
    fn lossless_memory_adds_nothing() {
        assert_eq!(added_variance(PerStepPreamp, 0, 0, 0.0).unwrap(), 0.0);
        for s in CONCRETE {
            assert_eq!(added_variance(s, 5, 3, 0.0).unwrap(), 0.0);
            assert_eq!(
                expected_added_variance(s, 0.3, 0.0, ExpectationMode::ClosedForm).unwrap(),
                0.0
            );
            assert_eq!(
                expected_added_variance(s, 0.3, 0.0, ExpectationMode::Numeric).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn cc_at_minimal_wait() {
        let a = 0.013;
        let v = added_variance(CcAmplification, 0, 0, a).unwrap();
        assert!((v - (a.exp() - 1.0)).abs() < 1e-16);
    }

    #[test]
    fn mean_adjusted_branches_meet_at_mean() {
        let (big_t, a) = (7u64, 0.02);
        let first = added_variance(MeanAdjusted, big_t as i64, big_t, a).unwrap();
        let expected = 2.0 - (-(big_t as f64 + 1.0) * a).exp() - (-a).exp();
        assert!((first - expected).abs() < 1e-15);
        // second branch evaluated at t = T
        let second = loss((big_t as f64 + 1.0) * a) + 1.0 * loss(a);
        assert!((first - second).abs() < 1e-12);
        let modified = added_variance(MeanAdjustedWithArtificialLoss, big_t as i64, big_t, a).unwrap();
        assert!((modified - first).abs() < 1e-12);
    }

    #[test]
    fn negative_wait_and_auto_rejected() {
        assert!(matches!(
            added_variance(PerStepPreamp, -1, 0, 0.1),
            Err(Error::InvalidParameter { field: "t_wait", .. })
        ));
        assert!(matches!(
            added_variance(Auto, 1, 0, 0.1),
            Err(Error::UnresolvedStrategy(_))
        ));
    }

    #[test]
    fn monotone_in_wait_except_unmodified_mean_adjusted() {
        for s in [PerStepPreamp, MeanAdjustedWithArtificialLoss, CcAmplification] {
            let mut prev = -1.0;
            for t in 0..200 {
                let v = added_variance(s, t, 20, 1e-3).unwrap();
                assert!(v >= prev, "{s} t={t}");
                prev = v;
            }
        }
        // The unmodified method makes early finishers wait for T, so its
        // variance first falls, then rises past T.
        let at = |t| added_variance(MeanAdjusted, t, 20, 1e-3).unwrap();
        assert!(at(0) > at(10) && at(10) > at(20) && at(20) < at(30));
    }

    #[test]
    fn cc_with_certain_success() {
        let a = 0.05;
        for mode in [ExpectationMode::ClosedForm, ExpectationMode::Numeric] {
            let v = expected_added_variance(CcAmplification, 1.0, a, mode).unwrap();
            assert!((v - a.exp_m1()).abs() < 1e-15, "{mode:?}");
        }
    }

    #[test]
    fn preamp_closed_form_matches_numeric() {
        // the closed form uses the rounded mean wait, numeric averaging the exact mean
        for &(p, a) in &[(0.3, 1e-4), (0.05, 1e-5), (0.7, 1e-4), (0.01, 1e-6)] {
            let c = expected_added_variance(PerStepPreamp, p, a, ExpectationMode::ClosedForm).unwrap();
            let n = expected_added_variance(PerStepPreamp, p, a, ExpectationMode::Numeric).unwrap();
            let q = 1.0 - p;
            let mean = 2.0 * q / (1.0 - q * q);
            let bound = 0.5 / (mean + 2.0) + 1e-3;
            assert!((c - n).abs() <= bound * n, "p={p}: {c} vs {n}");
        }
    }

    #[test]
    fn cc_closed_form_matches_numeric() {
        for &p in &[0.05, 0.2, 0.5, 0.9] {
            for &a in &[1e-5_f64, 1e-3, 1e-2] {
                if (1.0 - p) >= (-a).exp() {
                    continue;
                }
                let c = expected_added_variance(CcAmplification, p, a, ExpectationMode::ClosedForm).unwrap();
                let n = expected_added_variance(CcAmplification, p, a, ExpectationMode::Numeric).unwrap();
                assert!((c - n).abs() <= 1e-6 * c, "p={p} a={a}: {c} vs {n}");
            }
        }
    }

    #[test]
    fn cc_divergence_is_distinct() {
        // q e^a >= 1
        let err = expected_added_variance(CcAmplification, 0.001, 0.01, ExpectationMode::ClosedForm);
        assert!(matches!(err, Err(Error::SeriesDivergence(_))));
    }

    #[test]
    fn linearized_closed_forms_track_numeric_in_small_alpha_regime() {
        for s in [MeanAdjusted, MeanAdjustedWithArtificialLoss] {
            for &p in &[0.05, 0.3, 0.7] {
                let a = 1e-6;
                let c = expected_added_variance(s, p, a, ExpectationMode::ClosedForm).unwrap();
                let n = expected_added_variance(s, p, a, ExpectationMode::Numeric).unwrap();
                assert!((c - n).abs() < 1e-3 * n, "{s} p={p}: {c} vs {n}");
            }
        }
    }

    #[test]
    fn first_method_beats_modified_second() {
        for &p in &[0.01, 0.05, 0.2, 0.5, 0.9] {
            for &a in &[1e-6, 1e-4, 1e-2] {
                let pre = expected_added_variance(PerStepPreamp, p, a, ExpectationMode::ClosedForm).unwrap();
                let m2 =
                    expected_added_variance(MeanAdjustedWithArtificialLoss, p, a, ExpectationMode::ClosedForm).unwrap();
                assert!(pre <= m2, "p={p} a={a}");
                // exact averages keep the order while alpha T stays small
                if a * rounded_mean_wait(p) as f64 <= 0.1 {
                    let pre = expected_added_variance(PerStepPreamp, p, a, ExpectationMode::Numeric).unwrap();
                    let m2 = expected_added_variance(MeanAdjustedWithArtificialLoss, p, a, ExpectationMode::Numeric)
                        .unwrap();
                    assert!(pre <= m2 * (1.0 + 1e-12), "numeric p={p} a={a}");
                }
            }
        }
    }

    #[test]
    fn threshold_grid_corner_cells() {
        let c = PhysicalConstants::FIBER;
        let t = cc_threshold_l0(0.7, 1e-3, &c).unwrap().km().unwrap();
        assert!((t - 16.0).abs() <= 1.0, "{t}");
        let t = cc_threshold_l0(0.05, 1e-3, &c).unwrap().km().unwrap();
        assert!((t - 0.5).abs() <= 0.5, "{t}");
    }

    #[test]
    fn crossing_is_unique_on_grid() {
        let c = PhysicalConstants::FIBER;
        for &(p_link, t_coh) in &[(0.7, 1e-3), (1.0, 0.1), (0.05, 10.0)] {
            let th = cc_threshold_l0(p_link, t_coh, &c).unwrap().km().unwrap();
            let mut sign_changes = 0;
            let mut prev = None;
            for i in 1..=200 {
                let l0 = i as f64 * 1.0;
                let below = cc_preamp_gap(l0, p_link, t_coh, &c).unwrap() < 0.0;
                if let Some(pb) = prev {
                    if pb != below {
                        sign_changes += 1;
                    }
                }
                prev = Some(below);
                if l0 < th - 0.1 {
                    assert!(below, "CC should win at l0={l0}");
                } else if l0 > th + 0.1 {
                    assert!(!below, "preamp should win at l0={l0}");
                }
            }
            assert_eq!(sign_changes, 1);
        }
    }

    #[test]
    fn auto_resolution_uses_threshold() {
        let c = PhysicalConstants::FIBER;
        assert_eq!(resolve_strategy(Auto, 5.0, 0.7, 1e-3, &c).unwrap(), CcAmplification);
        assert_eq!(resolve_strategy(Auto, 30.0, 0.7, 1e-3, &c).unwrap(), PerStepPreamp);
        assert_eq!(
            resolve_strategy(MeanAdjusted, 30.0, 0.7, 1e-3, &c).unwrap(),
            MeanAdjusted
        );
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in AmplificationStrategy::ALL {
            assert_eq!(s.name().parse::<AmplificationStrategy>().unwrap(), s);
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(json, format!("\"{}\"", s.name()));
        }
        assert!("bogus".parse::<AmplificationStrategy>().is_err());
    }

    #[test]
    fn budget_sums_components() {
        let b = VarianceBudget::new(0.05, 0.01, 0.002);
        assert!((b.sigma_tot_sq - 0.112).abs() < 1e-15);
        assert_eq!(b.sigma_bell_sq, 0.05);
    }
}
