//! Discrete protocol pieces: heralding patterns, Bell-state decoding from
//! homodyne outcomes, Pauli-frame bookkeeping and the quadrature algebra of
//! the ensemble-mediated Bell measurement.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{SMatrix, SVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};

/// Photon counts in modes `(a_H, a_V, b_H, b_V)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DetectionPattern {
    pub counts: [u8; 4],
}

impl DetectionPattern {
    pub const fn new(counts: [u8; 4]) -> Self {
        Self { counts }
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().map(|&c| c as u32).sum()
    }

    /// The ten ways of distributing two photons over four detectors.
    pub fn two_photon_patterns() -> Vec<DetectionPattern> {
        let mut out = Vec::with_capacity(10);
        for i in 0..4 {
            for j in i..4 {
                let mut counts = [0u8; 4];
                counts[i] += 1;
                counts[j] += 1;
                out.push(DetectionPattern { counts });
            }
        }
        out
    }
}

impl fmt::Display for DetectionPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.counts {
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for DetectionPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits: Vec<u8> = s
            .chars()
            .map(|c| c.to_digit(10).map(|d| d as u8))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::invalid("pattern", format!("non-digit in {s:?}")))?;
        let counts: [u8; 4] = digits
            .try_into()
            .map_err(|_| Error::invalid("pattern", format!("expected four digits, got {s:?}")))?;
        Ok(Self { counts })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectionOutcome {
    PsiPlus,
    PsiMinus,
    /// Both photons in one detector; no Bell pair.
    Bunched,
    /// Suppressed by two-photon interference.
    Forbidden,
    Invalid,
}

impl DetectionOutcome {
    pub fn heralds_pair(self) -> bool {
        matches!(self, DetectionOutcome::PsiPlus | DetectionOutcome::PsiMinus)
    }
}

pub fn classify_detection(pattern: DetectionPattern) -> DetectionOutcome {
    match pattern.counts {
        [1, 1, 0, 0] | [0, 0, 1, 1] => DetectionOutcome::PsiPlus,
        [1, 0, 0, 1] | [0, 1, 1, 0] => DetectionOutcome::PsiMinus,
        [2, 0, 0, 0] | [0, 2, 0, 0] | [0, 0, 2, 0] | [0, 0, 0, 2] => DetectionOutcome::Bunched,
        [1, 0, 1, 0] | [0, 1, 0, 1] => DetectionOutcome::Forbidden,
        _ => DetectionOutcome::Invalid,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BellLabel {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
}

impl BellLabel {
    pub const ALL: [BellLabel; 4] = [
        BellLabel::PhiPlus,
        BellLabel::PhiMinus,
        BellLabel::PsiPlus,
        BellLabel::PsiMinus,
    ];

    fn from_bits(is_phi: bool, is_minus: bool) -> Self {
        match (is_phi, is_minus) {
            (true, false) => BellLabel::PhiPlus,
            (true, true) => BellLabel::PhiMinus,
            (false, false) => BellLabel::PsiPlus,
            (false, true) => BellLabel::PsiMinus,
        }
    }

    fn bits(self) -> (bool, bool) {
        match self {
            BellLabel::PhiPlus => (true, false),
            BellLabel::PhiMinus => (true, true),
            BellLabel::PsiPlus => (false, false),
            BellLabel::PsiMinus => (false, true),
        }
    }

    /// Group product. `PsiPlus` is the identity and every element is its own inverse.
    pub fn compose(self, other: BellLabel) -> BellLabel {
        let (a, b) = self.bits();
        let (c, d) = other.bits();
        BellLabel::from_bits(a ^ c, b ^ d)
    }
}

/// Canonical shift representatives and parities of one Bell measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Syndrome {
    pub x_shift: f64,
    pub p_shift: f64,
    pub x_parity: bool,
    pub p_parity: bool,
}

/// Splits `value` into `k sqrt(pi) + r` with `r` in `(-sqrt(pi)/2, sqrt(pi)/2]`.
fn nearest_lattice(value: f64) -> (i64, f64) {
    let spacing = PI.sqrt();
    let k = (value / spacing - 0.5).ceil();
    (k as i64, value - k * spacing)
}

/// Decodes the Bell label from the homodyne values of `x_A + x_B` and
/// `p_A - p_B`. Inputs are the rescaled sum and difference, with the beam
/// splitter's `1/sqrt(2)` already removed.
pub fn decode_bell_parities(xbar_sum: f64, pbar_diff: f64) -> Result<(BellLabel, Syndrome)> {
    if !(xbar_sum.is_finite() && pbar_diff.is_finite()) {
        return Err(Error::invalid("homodyne", "outcomes must be finite"));
    }
    let (kx, x_shift) = nearest_lattice(xbar_sum);
    let (kp, p_shift) = nearest_lattice(pbar_diff);
    let x_parity = kx.rem_euclid(2) == 1;
    let p_parity = kp.rem_euclid(2) == 1;
    let label = BellLabel::from_bits(!x_parity, p_parity);
    Ok((
        label,
        Syndrome {
            x_shift,
            p_shift,
            x_parity,
            p_parity,
        },
    ))
}

/// Final Bell label of a chain given every swap outcome.
pub fn compose_pauli_frame(frames: &[BellLabel]) -> Result<BellLabel> {
    if frames.is_empty() {
        return Err(Error::invalid("frames", "need at least one Bell label"));
    }
    Ok(frames.iter().fold(BellLabel::PsiPlus, |acc, &f| acc.compose(f)))
}

/// Number of attempts until the first success, counting the success.
pub fn distribution_attempt<R: Rng + ?Sized>(rng: &mut R, p: f64) -> Result<u64> {
    check_probability(p)?;
    Ok(geometric_unchecked(rng, p))
}

#[inline]
pub(crate) fn geometric_unchecked<R: Rng + ?Sized>(rng: &mut R, p: f64) -> u64 {
    if p >= 1.0 {
        return 1;
    }
    let u: f64 = rng.random();
    let k = ((-u).ln_1p() / (-p).ln_1p()).ceil();
    if k < 1.0 {
        1
    } else {
        k as u64
    }
}

pub type Mat8 = SMatrix<f64, 8, 8>;
pub type Vec8 = SVector<f64, 8>;

/// Quadrature ordering used by the chain matrices.
pub const QUADRATURES: [&str; 8] = ["xA", "pA", "xB", "pB", "xC", "pC", "xD", "pD"];

const XA: usize = 0;
const PA: usize = 1;
const XB: usize = 2;
const PB: usize = 3;
const XC: usize = 4;
const PC: usize = 5;
const XD: usize = 6;
const PD: usize = 7;

/// Symplectic form for the ordering in [`QUADRATURES`].
pub fn symplectic_form() -> Mat8 {
    let mut omega = Mat8::zeros();
    for m in 0..4 {
        omega[(2 * m, 2 * m + 1)] = 1.0;
        omega[(2 * m + 1, 2 * m)] = -1.0;
    }
    omega
}

/// Interaction `p_dst x_src`: `x_dst += x_src`, `p_src -= p_dst`.
fn qnd(x_src: usize, p_src: usize, x_dst: usize, p_dst: usize) -> Mat8 {
    let mut s = Mat8::identity();
    s[(x_dst, x_src)] += 1.0;
    s[(p_src, p_dst)] -= 1.0;
    s
}

fn rotate_d(quarter_turns: u32) -> Mat8 {
    let mut s = Mat8::identity();
    let (c, sn) = match quarter_turns % 4 {
        0 => (1.0, 0.0),
        1 => (0.0, 1.0),
        2 => (-1.0, 0.0),
        _ => (0.0, -1.0),
    };
    // (x, p) -> (c x + s p, -s x + c p)
    s[(XD, XD)] = c;
    s[(XD, PD)] = sn;
    s[(PD, XD)] = -sn;
    s[(PD, PD)] = c;
    s
}

/// The six steps of the measurement chain, in application order.
pub fn tmsv_chain_steps() -> Vec<(&'static str, Mat8)> {
    vec![
        // p_C x_A: x_C += x_A, p_A -= p_C
        ("pC*xA", qnd(XA, PA, XC, PC)),
        ("rotate D by pi/2", rotate_d(1)),
        // p_D p_B: x_D += p_B, x_B += p_D
        ("pD*pB", {
            let mut s = Mat8::identity();
            s[(XD, PB)] += 1.0;
            s[(XB, PD)] += 1.0;
            s
        }),
        ("pC*xB", qnd(XB, PB, XC, PC)),
        ("rotate D by pi", rotate_d(2)),
        // p_D p_A: x_D += p_A, x_A += p_D
        ("pD*pA", {
            let mut s = Mat8::identity();
            s[(XD, PA)] += 1.0;
            s[(XA, PD)] += 1.0;
            s
        }),
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct TmsvStepCheck {
    pub name: &'static str,
    /// Largest entry of `S^T Omega S - Omega`.
    pub symplectic_error: f64,
    pub determinant: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TmsvReport {
    pub steps: Vec<TmsvStepCheck>,
    /// Row of the composed transform giving the final `x_C`.
    pub x_c_row: [f64; 8],
    /// Row of the composed transform giving the final `x_D`.
    pub x_d_row: [f64; 8],
    /// `x_C` reads `x_A + x_B` once `x_C - x_D = 0` is imposed.
    pub measures_x_sum: bool,
    /// `x_D` reads `p_A - p_B` once `p_C + p_D = 0` is imposed.
    pub measures_p_diff: bool,
    /// `(r, residual variance of x_C, residual variance of x_D)`.
    pub finite_squeezing: Vec<(f64, f64, f64)>,
}

impl TmsvReport {
    pub fn all_symplectic(&self, tol: f64) -> bool {
        self.steps
            .iter()
            .all(|s| s.symplectic_error <= tol && (s.determinant - 1.0).abs() <= tol)
    }
}

pub fn compose_chain(steps: &[(&'static str, Mat8)]) -> Mat8 {
    steps.iter().fold(Mat8::identity(), |acc, (_, s)| s * acc)
}

/// Covariance of a two-mode squeezed vacuum on modes C and D with vacuum
/// variance 1/2; modes A and B are left at zero so only ancilla noise shows.
pub fn tmsv_covariance(r: f64) -> Mat8 {
    let c = 0.5 * (2.0 * r).cosh();
    let s = 0.5 * (2.0 * r).sinh();
    let mut v = Mat8::zeros();
    v[(XC, XC)] = c;
    v[(PC, PC)] = c;
    v[(XD, XD)] = c;
    v[(PD, PD)] = c;
    v[(XC, XD)] = s;
    v[(XD, XC)] = s;
    v[(PC, PD)] = -s;
    v[(PD, PC)] = -s;
    v
}

/// Ancilla noise on the two measured quadratures for squeezing `r`.
pub fn tmsv_residual_variances(r: f64) -> (f64, f64) {
    let total = compose_chain(&tmsv_chain_steps());
    let v = tmsv_covariance(r);
    let row_c: Vec8 = total.row(XC).transpose();
    let row_d: Vec8 = total.row(XD).transpose();
    ((row_c.transpose() * v * row_c)[0], (row_d.transpose() * v * row_d)[0])
}

/// Builds the chain, checks every step, and reports the measured
/// combinations and the finite-squeezing residuals for `r = 0, 0.5, ..., 5`.
pub fn verify_tmsv_chain() -> TmsvReport {
    let steps = tmsv_chain_steps();
    let omega = symplectic_form();
    let checks = steps
        .iter()
        .map(|(name, s)| TmsvStepCheck {
            name,
            symplectic_error: (s.transpose() * omega * s - omega).abs().max(),
            determinant: s.determinant(),
        })
        .collect();
    let total = compose_chain(&steps);
    let row = |i: usize| -> [f64; 8] { std::array::from_fn(|j| total[(i, j)]) };
    let x_c_row = row(XC);
    let x_d_row = row(XD);

    // Impose x_C = x_D and p_D = -p_C on the input and compare with the ideal readout.
    let collapse = |r: &[f64; 8]| -> [f64; 8] {
        let mut out = *r;
        out[XC] += out[XD];
        out[XD] = 0.0;
        out[PC] -= out[PD];
        out[PD] = 0.0;
        out
    };
    let mut want_sum = [0.0; 8];
    want_sum[XA] = 1.0;
    want_sum[XB] = 1.0;
    let mut want_diff = [0.0; 8];
    want_diff[PA] = 1.0;
    want_diff[PB] = -1.0;

    let finite_squeezing = (0..=10)
        .map(|i| {
            let r = 0.5 * i as f64;
            let (vc, vd) = tmsv_residual_variances(r);
            (r, vc, vd)
        })
        .collect();

    TmsvReport {
        steps: checks,
        x_c_row,
        x_d_row,
        measures_x_sum: collapse(&x_c_row) == want_sum,
        measures_p_diff: collapse(&x_d_row) == want_diff,
        finite_squeezing,
    }
}
