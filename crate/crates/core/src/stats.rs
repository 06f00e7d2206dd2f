//! Waiting-time statistics of a swap-as-soon-as-possible repeater chain.
//!
//! Every segment succeeds after a geometric number of attempts `N >= 1`.
//! The wait at one swap is `|N1 - N2|` for the two adjacent segments, and
//! the chain completes after `max_i N_i` steps.

use crate::error::{check_alpha, check_probability, Error, Result};

/// Tail mass at which tabulated and summed waiting-time laws are cut.
pub const DEFAULT_TAIL_MASS: f64 = 1e-12;

/// Above this segment count the alternating binomial sum for the mean
/// completion time is replaced by a tail sum.
const ALTERNATING_SUM_MAX_N: u64 = 30;

/// `p^2 / (1 - q^2)`, written as `p / (1 + q)` to avoid cancellation.
#[inline]
pub(crate) fn zero_wait_probability(p: f64) -> f64 {
    p / (2.0 - p)
}

/// `P(|N1 - N2| = k)` for two independent geometric variables.
pub fn geom_abs_diff_pmf(k: u64, p: f64) -> Result<f64> {
    check_probability(p)?;
    Ok(abs_diff_pmf_unchecked(k, p))
}

#[inline]
pub(crate) fn abs_diff_pmf_unchecked(k: u64, p: f64) -> f64 {
    let c = zero_wait_probability(p);
    if k == 0 {
        return c;
    }
    let q = 1.0 - p;
    if q == 0.0 {
        return 0.0;
    }
    2.0 * c * (k as f64 * (-p).ln_1p()).exp()
}

/// `E|N1 - N2| = 2q / (1 - q^2)`.
pub fn geom_abs_diff_mean(p: f64) -> Result<f64> {
    check_probability(p)?;
    let q = 1.0 - p;
    Ok(2.0 * q / (p * (1.0 + q)))
}

/// Probability mass of all waits `k >= len`, i.e. what a table with `len`
/// entries leaves out.
pub fn waiting_tail_mass(p: f64, len: u64) -> f64 {
    if len == 0 {
        return 1.0;
    }
    let q = 1.0 - p;
    if q == 0.0 {
        return 0.0;
    }
    // sum_{k >= len} 2 p q^k / (1 + q) / ... simplifies to 2 q^len / (1 + q)
    2.0 * (len as f64 * (-p).ln_1p()).exp() / (1.0 + q)
}

/// Smallest table length whose tail mass does not exceed `tail`.
pub fn truncation_len(p: f64, tail: f64) -> u64 {
    let q = 1.0 - p;
    if q == 0.0 {
        return 1;
    }
    let target = tail * (1.0 + q) / 2.0;
    let len = (target.ln() / (-p).ln_1p()).ceil();
    let mut len = if len.is_finite() && len > 1.0 { len as u64 } else { 1 };
    // ln/ceil can land one short of the bound near integer boundaries
    while len < u64::MAX && waiting_tail_mass(p, len) > tail {
        len += 1;
    }
    len
}

/// Tabulated single-swap waiting-time law.
#[derive(Debug, Clone, PartialEq)]
pub struct WaitingTimePmf {
    pub p: f64,
    /// `entries[k] = P(t_wait = k)`.
    pub entries: Vec<f64>,
    /// Mass beyond the last entry.
    pub tail_mass: f64,
}

impl WaitingTimePmf {
    /// Tabulates entries until the remaining mass is at most `tail`.
    pub fn tabulate(p: f64, tail: f64) -> Result<Self> {
        check_probability(p)?;
        if !(tail > 0.0 && tail < 1.0) {
            return Err(Error::invalid("tail", "must lie in (0, 1)"));
        }
        let len = truncation_len(p, tail);
        if len > crate::amplify::MAX_NUMERIC_TERMS {
            return Err(Error::TruncationLimit {
                needed: len,
                cap: crate::amplify::MAX_NUMERIC_TERMS,
            });
        }
        let entries = (0..len).map(|k| abs_diff_pmf_unchecked(k, p)).collect();
        Ok(Self {
            p,
            entries,
            tail_mass: waiting_tail_mass(p, len),
        })
    }

    pub fn mean(&self) -> f64 {
        self.entries.iter().enumerate().map(|(k, w)| k as f64 * w).sum()
    }
}

/// Streams `(k, P(t_wait = k))` for `k < len` using a running product, which
/// keeps long sums cheap.
#[derive(Debug, Clone)]
pub(crate) struct WaitTerms {
    k: u64,
    len: u64,
    weight: f64,
    q: f64,
}

impl WaitTerms {
    pub(crate) fn new(p: f64, len: u64) -> Self {
        Self {
            k: 0,
            len,
            weight: zero_wait_probability(p),
            q: 1.0 - p,
        }
    }
}

impl Iterator for WaitTerms {
    type Item = (u64, f64);

    fn next(&mut self) -> Option<(u64, f64)> {
        if self.k >= self.len {
            return None;
        }
        let k = self.k;
        let w = self.weight;
        self.weight *= if k == 0 { 2.0 * self.q } else { self.q };
        self.k += 1;
        Some((k, w))
    }
}

fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let k = k.min(n - k);
    (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
}

/// `P(S = j)` for the sum `S` of `m` independent single-swap waits.
///
/// Evaluated in log space so large `j` and `m` do not overflow.
pub fn sum_waiting_pmf(j: u64, m: u32, p: f64) -> Result<f64> {
    check_probability(p)?;
    if m == 0 {
        return Err(Error::invalid("m", "summand count must be at least 1"));
    }
    let ln_c = zero_wait_probability(p).ln();
    let base = m as f64 * ln_c;
    if j == 0 {
        return Ok(base.exp());
    }
    let q = 1.0 - p;
    if q == 0.0 {
        return Ok(0.0);
    }
    let terms: Vec<f64> = (1..=u64::from(m).min(j))
        .map(|i| i as f64 * std::f64::consts::LN_2 + ln_binomial(u64::from(m), i) + ln_binomial(j - 1, i - 1))
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ln_sum = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    Ok((base + j as f64 * (-p).ln_1p() + ln_sum).exp())
}

/// `E[exp(-alpha D_n)]` for the total wait `D_n` of an `n`-segment chain,
/// treating the `n - 1` per-swap waits as independent.
pub fn exp_dephasing_mean(n: u64, p: f64, alpha: f64) -> Result<f64> {
    check_probability(p)?;
    check_alpha(alpha)?;
    if n == 0 {
        return Err(Error::invalid("n", "segment count must be at least 1"));
    }
    if n == 1 || alpha == 0.0 {
        return Ok(1.0);
    }
    let q = 1.0 - p;
    let x = q * (-alpha).exp();
    // (1 + x) / (1 - x) * p / (1 + q), with 1 - x = p + q (1 - e^-a)
    let one_minus_x = p - q * (-alpha).exp_m1();
    let per_swap = (1.0 + x) / one_minus_x * zero_wait_probability(p);
    Ok(((n - 1) as f64 * per_swap.ln()).exp())
}

/// Mean number of steps until all `n` segments hold a pair, `E[max_i N_i]`.
pub fn avg_total_steps(n: u64, p: f64) -> Result<f64> {
    check_probability(p)?;
    if n == 0 {
        return Err(Error::invalid("n", "segment count must be at least 1"));
    }
    if n == 1 {
        return Ok(1.0 / p);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    if n <= ALTERNATING_SUM_MAX_N {
        Ok(avg_total_steps_alternating(n, p))
    } else {
        Ok(avg_total_steps_tail_sum(n, p))
    }
}

fn avg_total_steps_alternating(n: u64, p: f64) -> f64 {
    let ln_q = (-p).ln_1p();
    let mut binom = 1.0;
    let mut total = 0.0;
    for i in 1..=n {
        binom *= (n - i + 1) as f64 / i as f64;
        let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
        // 1 - q^i without cancellation
        let denom = -(i as f64 * ln_q).exp_m1();
        total += sign * binom / denom;
    }
    total
}

/// `1 + sum_{k >= 0} (1 - (1 - q^{k+1})^n)`.
fn avg_total_steps_tail_sum(n: u64, p: f64) -> f64 {
    let ln_q = (-p).ln_1p();
    let nf = n as f64;
    let mut total = 1.0;
    let mut k = 1.0;
    loop {
        let qk = (k * ln_q).exp();
        let term = -(nf * (-qk).ln_1p()).exp_m1();
        total += term;
        if term <= total * 1e-17 {
            break;
        }
        k += 1.0;
    }
    total
}
