//! GKP shift-noise model: logical error probabilities, chain QBER and the
//! variance thresholds that keep the key rate positive.

use std::f64::consts::PI;

use libm::erfc;
use serde::{Deserialize, Serialize};

use crate::error::{check_alpha, check_probability, Error, Result};
use crate::rates::h2;

/// QBER above which the secret fraction is taken to vanish.
pub const WORKING_QBER_THRESHOLD: f64 = 0.11;

/// Bisection tolerance of [`gamma_threshold`].
pub const GAMMA_RESOLUTION: f64 = 1e-10;

/// Noise parameters of a realistic GKP state in the Gaussian-shift picture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GkpNoiseParams {
    /// Variance of each peak.
    pub delta_sq: f64,
    /// Per-swap operation noise.
    pub gamma_sq: f64,
}

impl GkpNoiseParams {
    pub fn new(delta_sq: f64, gamma_sq: f64) -> Result<Self> {
        if !(delta_sq > 0.0 && delta_sq.is_finite()) {
            return Err(Error::invalid(
                "delta_sq",
                format!("must be positive and finite, got {delta_sq}"),
            ));
        }
        if !(gamma_sq >= 0.0 && gamma_sq.is_finite()) {
            return Err(Error::invalid(
                "gamma_sq",
                format!("must be finite and non-negative, got {gamma_sq}"),
            ));
        }
        Ok(Self { delta_sq, gamma_sq })
    }

    /// Envelope variance under the symmetric convention.
    pub fn envelope_sq(&self) -> f64 {
        1.0 / self.delta_sq
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PauliModel {
    /// Any shift outside the central stripe is an error.
    #[default]
    Simplified,
    /// Only shifts landing in odd stripes are errors.
    Striped,
}

/// Which QBER level marks the end of positive key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QberThreshold {
    /// The rounded value 0.11.
    #[default]
    Working,
    /// Root of `1 - 2h(Q) = 0`.
    ExactRoot,
}

impl QberThreshold {
    pub fn value(self) -> f64 {
        match self {
            QberThreshold::Working => WORKING_QBER_THRESHOLD,
            QberThreshold::ExactRoot => exact_qber_root(),
        }
    }
}

fn exact_qber_root() -> f64 {
    let (mut lo, mut hi) = (0.05_f64, 0.2_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 1.0 - 2.0 * h2(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn check_variance(sigma_tot_sq: f64) -> Result<()> {
    if !(sigma_tot_sq > 0.0) {
        return Err(Error::invalid(
            "sigma_tot_sq",
            format!("variance must be positive, got {sigma_tot_sq}"),
        ));
    }
    Ok(())
}

/// Probability that a Gaussian shift of variance `sigma_tot_sq` is decoded
/// into the wrong logical state.
pub fn pauli_error_prob(sigma_tot_sq: f64, model: PauliModel) -> Result<f64> {
    check_variance(sigma_tot_sq)?;
    if sigma_tot_sq.is_infinite() {
        return Ok(match model {
            PauliModel::Simplified => 1.0,
            PauliModel::Striped => 0.5,
        });
    }
    let sigma = sigma_tot_sq.sqrt();
    // half stripe width in units of sqrt(2) sigma
    let z = PI.sqrt() / (2.0 * std::f64::consts::SQRT_2 * sigma);
    Ok(match model {
        PauliModel::Simplified => erfc(z),
        PauliModel::Striped if sigma_tot_sq <= 0.5 => striped_direct(z),
        PauliModel::Striped => striped_fourier(sigma_tot_sq),
    })
}

/// Sum over odd stripes `[(4k+1) z, (4k+3) z]` of both half-lines.
fn striped_direct(z: f64) -> f64 {
    let mut total = 0.0;
    let mut k = 0u32;
    loop {
        let lo = erfc((4 * k + 1) as f64 * z);
        if lo == 0.0 {
            break;
        }
        total += lo - erfc((4 * k + 3) as f64 * z);
        k += 1;
    }
    total
}

/// Fourier series of the odd-stripe indicator, fast for wide Gaussians.
fn striped_fourier(sigma_tot_sq: f64) -> f64 {
    let mut sum = 0.0;
    let mut m = 1u32;
    loop {
        let mf = m as f64;
        let term = (-mf * mf * PI * sigma_tot_sq / 2.0).exp() / mf;
        if term < 1e-18 {
            break;
        }
        sum += if m % 4 == 1 { term } else { -term };
        m += 2;
    }
    0.5 - 2.0 / PI * sum
}

/// End-to-end QBER after `n - 1` swaps with independent flip probability `p_pauli`.
pub fn qber(n: u64, p_pauli: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("n", "segment count must be at least 1"));
    }
    if !(0.0..=0.5).contains(&p_pauli) {
        return Err(Error::invalid(
            "p_pauli",
            format!("must lie in [0, 1/2], got {p_pauli}"),
        ));
    }
    if n == 1 || p_pauli == 0.0 {
        return Ok(0.0);
    }
    // 1/2 [1 - (1 - 2p)^{n-1}]
    Ok(-0.5 * ((n - 1) as f64 * (-2.0 * p_pauli).ln_1p()).exp_m1())
}

/// Largest per-swap error probability that keeps the QBER at 0.11.
pub fn pauli_threshold(n: u64) -> Result<f64> {
    pauli_threshold_with(n, QberThreshold::Working)
}

pub fn pauli_threshold_with(n: u64, threshold: QberThreshold) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid(
            "n",
            format!("threshold needs at least 2 segments, got {n}"),
        ));
    }
    let ln_base = (-2.0 * threshold.value()).ln_1p();
    Ok(-0.5 * (ln_base / (n - 1) as f64).exp_m1())
}

/// Largest operation-noise variance for which the lossless-memory chain
/// still reaches the QBER threshold. Zero if `2 delta_sq` alone exceeds it.
pub fn gamma_threshold(n: u64, delta_sq: f64) -> Result<f64> {
    gamma_threshold_with(n, delta_sq, QberThreshold::Working)
}

pub fn gamma_threshold_with(n: u64, delta_sq: f64, threshold: QberThreshold) -> Result<f64> {
    if !(delta_sq > 0.0 && delta_sq.is_finite()) {
        return Err(Error::invalid(
            "delta_sq",
            format!("must be positive and finite, got {delta_sq}"),
        ));
    }
    let p_max = pauli_threshold_with(n, threshold)?;
    let excess = |g: f64| erfc(PI.sqrt() / (2.0 * std::f64::consts::SQRT_2 * (2.0 * delta_sq + g).sqrt())) - p_max;
    if excess(0.0) >= 0.0 {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while excess(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > GAMMA_RESOLUTION {
        let mid = 0.5 * (lo + hi);
        if excess(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Smallest peak variance reachable by an atomic ensemble of `n_atoms`
/// confined to rotation angles below `theta_max`.
pub fn hp_min_variance(n_atoms: f64, theta_max: f64) -> Result<f64> {
    if !(n_atoms >= 1.0) {
        return Err(Error::invalid("n_atoms", format!("must be at least 1, got {n_atoms}")));
    }
    if !(theta_max > 0.0 && theta_max.is_finite()) {
        return Err(Error::invalid(
            "theta_max",
            format!("must be positive and finite, got {theta_max}"),
        ));
    }
    Ok(1.0 / (n_atoms * theta_max * theta_max))
}

/// Second derivative of the simplified error probability with respect to
/// the variance.
pub fn pauli_second_derivative(sigma_sq: f64) -> Result<f64> {
    check_variance(sigma_sq)?;
    let s = sigma_sq.sqrt();
    let s5 = sigma_sq * sigma_sq * s;
    let s7 = s5 * sigma_sq;
    Ok((-PI / (8.0 * sigma_sq)).exp() / 8f64.sqrt() * (PI / (8.0 * s7) - 1.5 / s5))
}

/// Variance of the per-step-preamplification added variance over the
/// waiting-time law.
pub fn preamp_added_variance_spread(p: f64, alpha: f64) -> Result<f64> {
    check_probability(p)?;
    check_alpha(alpha)?;
    let q = 1.0 - p;
    let one = -(-alpha).exp_m1();
    let e_t = 2.0 * q / (p * (1.0 + q));
    let e_t_sq = 2.0 * q / (p * p);
    Ok(one * one * (e_t_sq - e_t * e_t))
}

/// Second-order estimate of the error made by inserting the mean added
/// variance into the error probability instead of averaging over waits.
pub fn averaging_error_estimate(delta_sq: f64, p: f64, alpha: f64) -> Result<f64> {
    if !(delta_sq > 0.0) {
        return Err(Error::invalid("delta_sq", format!("must be positive, got {delta_sq}")));
    }
    let spread = preamp_added_variance_spread(p, alpha)?;
    if spread == 0.0 {
        return Ok(0.0);
    }
    Ok(0.5 * pauli_second_derivative(2.0 * delta_sq)? * spread)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Adaptive Simpson on the Gaussian density, independent of erfc.
    fn central_mass(sigma_sq: f64) -> f64 {
        let s = sigma_sq.sqrt();
        let pdf = |x: f64| (-x * x / (2.0 * sigma_sq)).exp() / (s * (2.0 * PI).sqrt());
        #[allow(clippy::too_many_arguments)]
        fn simpson(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            eps: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
                return left + right + (left + right - whole) / 15.0;
            }
            simpson(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
                + simpson(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
        }
        let (a, b) = (0.0, PI.sqrt() / 2.0);
        let (fa, fm, fb) = (pdf(a), pdf(0.5 * (a + b)), pdf(b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        2.0 * simpson(&pdf, a, b, fa, fm, fb, whole, 1e-15, 50)
    }

    #[test]
    fn simplified_matches_quadrature() {
        let p = pauli_error_prob(0.04, PauliModel::Simplified).unwrap();
        assert!((p - 9.3e-6).abs() < 0.1e-6, "{p}");
        for &s in &[0.04, 0.1, 0.2, 0.5, 1.0] {
            let oracle = 1.0 - central_mass(s);
            let got = pauli_error_prob(s, PauliModel::Simplified).unwrap();
            assert!((got - oracle).abs() < 1e-12, "{s}: {got} vs {oracle}");
        }
    }

    #[test]
    fn limits() {
        for model in [PauliModel::Simplified, PauliModel::Striped] {
            assert!(pauli_error_prob(1e-6, model).unwrap() < 1e-300);
        }
        assert!((pauli_error_prob(1e6, PauliModel::Striped).unwrap() - 0.5).abs() < 1e-6);
        assert!((pauli_error_prob(1e6, PauliModel::Simplified).unwrap() - 1.0).abs() < 1e-3);
        assert!(pauli_error_prob(0.0, PauliModel::Simplified).is_err());
        assert!(pauli_error_prob(-1.0, PauliModel::Striped).is_err());
    }

    #[test]
    fn striped_branches_agree_at_switch() {
        for &s in &[0.3f64, 0.45, 0.5, 0.55, 0.8] {
            let z = PI.sqrt() / (2.0 * std::f64::consts::SQRT_2 * s.sqrt());
            let d = striped_direct(z);
            let f = striped_fourier(s);
            assert!((d - f).abs() < 1e-13, "{s}: {d} vs {f}");
        }
    }

    #[test]
    fn striped_below_simplified() {
        let mut prev_striped = 0.0;
        let mut prev_simple = 0.0;
        for i in 1..400 {
            let s = i as f64 * 0.01;
            let st = pauli_error_prob(s, PauliModel::Striped).unwrap();
            let si = pauli_error_prob(s, PauliModel::Simplified).unwrap();
            assert!(st <= si + 1e-15);
            assert!(st >= prev_striped && si > prev_simple);
            assert!(st <= 0.5 + 1e-15);
            prev_striped = st;
            prev_simple = si;
        }
    }

    #[test]
    fn outer_stripes_negligible_at_low_error() {
        for i in 1..200 {
            let s = i as f64 * 0.002;
            let si = pauli_error_prob(s, PauliModel::Simplified).unwrap();
            if si < 0.1 {
                let st = pauli_error_prob(s, PauliModel::Striped).unwrap();
                assert!(si - st < 1e-6, "{s}");
            }
        }
    }

    #[test]
    fn qber_examples() {
        assert_eq!(qber(5, 0.0).unwrap(), 0.0);
        assert!((qber(5, 0.5).unwrap() - 0.5).abs() < 1e-15);
        assert!((qber(2, 0.1).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(qber(1, 0.3).unwrap(), 0.0);
        assert!(qber(0, 0.1).is_err());
        assert!(qber(3, 0.6).is_err());
    }

    #[test]
    fn pauli_threshold_examples() {
        assert!((pauli_threshold(2).unwrap() - 0.11).abs() < 1e-15);
        let t = pauli_threshold(256).unwrap();
        assert!((t - 4.87e-4).abs() < 0.01e-4, "{t}");
        // invert qber(256, .) = 0.11 by bisection
        let (mut lo, mut hi) = (0.0, 0.5);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if qber(256, mid).unwrap() < 0.11 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lo - t).abs() < 1e-12);
        assert!(pauli_threshold(1).is_err());
        assert!(pauli_threshold(1 << 40).unwrap() < 1e-12);
    }

    #[test]
    fn exact_root_threshold() {
        let q = QberThreshold::ExactRoot.value();
        assert!((q - 0.110028).abs() < 1e-6, "{q}");
        assert!(pauli_threshold_with(2, QberThreshold::ExactRoot).unwrap() > 0.11);
    }

    #[test]
    fn gamma_threshold_examples() {
        let g = gamma_threshold(2, 0.05).unwrap();
        assert!((g - 0.2075).abs() < 0.002, "{g}");
        let g = gamma_threshold(256, 0.01).unwrap();
        assert!((g - 0.0446).abs() < 0.001, "{g}");
        assert!(gamma_threshold(32, 0.05).unwrap() <= 0.0010);
    }

    #[test]
    fn gamma_threshold_hits_qber_target() {
        for n in [2, 4, 8, 16, 32, 64, 128, 256] {
            for d in [0.01, 0.02, 0.03, 0.05] {
                let g = gamma_threshold(n, d).unwrap();
                if g == 0.0 {
                    continue;
                }
                let p = pauli_error_prob(2.0 * d + g, PauliModel::Simplified).unwrap();
                assert!((qber(n, p).unwrap() - 0.11).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn hp_bound() {
        let theta = 10f64.to_radians();
        assert!((hp_min_variance(1e3, theta).unwrap() - 0.0328).abs() < 1e-4);
        assert!((hp_min_variance(1e4, theta).unwrap() - 0.00328).abs() < 1e-5);
        let ratio = hp_min_variance(1e3, theta).unwrap() / hp_min_variance(1e3, 2.0 * theta).unwrap();
        assert!((ratio - 4.0).abs() < 1e-12);
        assert!(hp_min_variance(0.5, theta).is_err());
    }

    #[test]
    fn second_derivative_matches_finite_difference() {
        for &s in &[0.05, 0.1, 0.3, 1.0] {
            let h = 1e-4 * s;
            let f = |x: f64| pauli_error_prob(x, PauliModel::Simplified).unwrap();
            let fd = (f(s + h) - 2.0 * f(s) + f(s - h)) / (h * h);
            let an = pauli_second_derivative(s).unwrap();
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-6), "{s}: {fd} vs {an}");
        }
    }

    #[test]
    fn averaging_estimate_regime() {
        assert_eq!(averaging_error_estimate(0.02, 0.3, 0.0).unwrap(), 0.0);
        assert_eq!(averaging_error_estimate(0.02, 1.0, 1e-3).unwrap(), 0.0);
        let (d, p, a) = (0.02, 0.3, 1e-4);
        let est = averaging_error_estimate(d, p, a).unwrap();
        let q = 1.0 - p;
        let t = (2.0 * q / (1.0 - q * q) + 0.5).floor();
        let pp = pauli_error_prob(2.0 * d + (t + 2.0) * a, PauliModel::Simplified).unwrap();
        assert!((est / pp).abs() <= 1e-2, "{}", est / pp);
    }

    #[test]
    fn spread_matches_direct_sum() {
        let (p, a) = (0.2f64, 1e-3f64);
        let q = 1.0 - p;
        let one = 1.0 - (-a).exp();
        let (mut m1, mut m2) = (0.0, 0.0);
        for k in 0..2000u64 {
            let w = if k == 0 {
                p / (1.0 + q)
            } else {
                2.0 * p * q.powi(k as i32) / (1.0 + q)
            };
            let v = (k as f64 + 2.0) * one;
            m1 += w * v;
            m2 += w * v * v;
        }
        let direct = m2 - m1 * m1;
        let got = preamp_added_variance_spread(p, a).unwrap();
        assert!((got - direct).abs() < 1e-9 * direct);
    }
}
