//! Chain configuration and the per-run quantities derived from it.
//!
//! Lengths are kilometres and times are seconds throughout the library.

use serde::{Deserialize, Serialize};

use crate::amplify::AmplificationStrategy;
use crate::error::{Error, Result};

/// Fibre constants shared by every computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Speed of light in fibre, km/s.
    pub c_fiber: f64,
    /// Attenuation length, km.
    pub l_att: f64,
}

impl PhysicalConstants {
    /// Telecom fibre: two thirds of the vacuum speed of light, 22 km attenuation length.
    pub const FIBER: PhysicalConstants = PhysicalConstants {
        c_fiber: 2.0e5,
        l_att: 22.0,
    };
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::FIBER
    }
}

/// User-facing chain parameters.
///
/// The serialized field names (`L`, `n`, `p_link`, ...) are the names used by
/// JSON config files and by CLI output records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepeaterConfig {
    /// Total distance, km.
    #[serde(rename = "L")]
    pub length_km: f64,
    /// Number of segments.
    #[serde(rename = "n")]
    pub segments: u64,
    /// Link efficiency in [0, 1].
    pub p_link: f64,
    /// GKP single-peak variance.
    pub delta_sq: f64,
    /// Memory coherence time, s.
    pub t_coh: f64,
    /// Per-swap operation-noise variance.
    #[serde(default)]
    pub gamma_sq: f64,
    #[serde(default)]
    pub strategy: AmplificationStrategy,
    /// Ensemble size, only used for the squeezing bound check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_atoms: Option<f64>,
    /// Small-angle bound in radians, paired with `n_atoms`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_max: Option<f64>,
}

impl RepeaterConfig {
    pub fn new(length_km: f64, segments: u64, p_link: f64, delta_sq: f64, t_coh: f64) -> Self {
        Self {
            length_km,
            segments,
            p_link,
            delta_sq,
            t_coh,
            gamma_sq: 0.0,
            strategy: AmplificationStrategy::Auto,
            n_atoms: None,
            theta_max: None,
        }
    }

    pub fn with_gamma_sq(mut self, gamma_sq: f64) -> Self {
        self.gamma_sq = gamma_sq;
        self
    }

    pub fn with_strategy(mut self, strategy: AmplificationStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn with_length(mut self, length_km: f64) -> Self {
        self.length_km = length_km;
        self
    }

    pub fn with_segments(mut self, segments: u64) -> Self {
        self.segments = segments;
        self
    }

    /// Checks every field invariant, naming the first offending field.
    pub fn validate(&self) -> Result<()> {
        if !(self.length_km > 0.0 && self.length_km.is_finite()) {
            return Err(Error::invalid(
                "L",
                format!("total distance must be positive and finite, got {}", self.length_km),
            ));
        }
        if self.segments == 0 {
            return Err(Error::invalid("n", "segment count must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.p_link) {
            return Err(Error::invalid(
                "p_link",
                format!("must lie in [0, 1], got {}", self.p_link),
            ));
        }
        if !(self.delta_sq > 0.0 && self.delta_sq.is_finite()) {
            return Err(Error::invalid(
                "delta_sq",
                format!("must be positive and finite, got {}", self.delta_sq),
            ));
        }
        // t_coh = inf is accepted: it is the lossless-memory limit.
        if !(self.t_coh > 0.0) {
            return Err(Error::invalid(
                "t_coh",
                format!("coherence time must be positive, got {}", self.t_coh),
            ));
        }
        if !(self.gamma_sq >= 0.0 && self.gamma_sq.is_finite()) {
            return Err(Error::invalid(
                "gamma_sq",
                format!("must be finite and non-negative, got {}", self.gamma_sq),
            ));
        }
        if let Some(n_atoms) = self.n_atoms {
            if !(n_atoms >= 1.0) {
                return Err(Error::invalid("n_atoms", "ensemble size must be at least 1"));
            }
        }
        if let Some(theta) = self.theta_max {
            if !(theta > 0.0 && theta.is_finite()) {
                return Err(Error::invalid("theta_max", "must be positive and finite"));
            }
        }
        Ok(())
    }
}

/// Quantities computed once per configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedParams {
    /// Segment length, km.
    pub l0: f64,
    /// Duration of one time step, s.
    pub tau: f64,
    /// Dimensionless inverse coherence time, `tau / t_coh`.
    pub alpha: f64,
    /// Per-attempt distribution success probability.
    pub p: f64,
    pub q: f64,
    /// Mean single-swap waiting time rounded half-up, in steps.
    pub mean_wait_steps: u64,
}

/// `round(2q / (1 - q^2))`, half-up.
pub fn rounded_mean_wait(p: f64) -> u64 {
    let q = 1.0 - p;
    // 2q / (1 - q^2) == 2q / (p (1 + q))
    let mean = 2.0 * q / (p * (1.0 + q));
    (mean + 0.5).floor() as u64
}

pub fn derive(config: &RepeaterConfig, constants: &PhysicalConstants) -> Result<DerivedParams> {
    config.validate()?;
    let l0 = config.length_km / config.segments as f64;
    let tau = l0 / constants.c_fiber;
    let alpha = tau / config.t_coh;
    let p = config.p_link * (-l0 / constants.l_att).exp();
    if p == 0.0 {
        return Err(Error::ZeroSuccessProbability);
    }
    Ok(DerivedParams {
        l0,
        tau,
        alpha,
        p,
        q: 1.0 - p,
        mean_wait_steps: rounded_mean_wait(p),
    })
}
