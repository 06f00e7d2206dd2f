use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A user-facing parameter is outside its admissible domain.
    #[error("invalid {field}: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    /// Entanglement distribution can never succeed (p = 0).
    #[error("zero success probability: entanglement distribution never succeeds")]
    ZeroSuccessProbability,

    /// A geometric series in a closed-form expectation does not converge.
    #[error("series divergence: {0}")]
    SeriesDivergence(String),

    /// A numeric summation would need more terms than the configured cap.
    #[error("truncation limit exceeded: {needed} terms needed, cap is {cap}")]
    TruncationLimit { needed: u64, cap: u64 },

    /// The strategy must be resolved (e.g. `Auto`) before this operation.
    #[error("unresolved amplification strategy: {0}")]
    UnresolvedStrategy(&'static str),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad input, as opposed to numeric breakdown.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::InvalidParameter { .. } | Error::ZeroSuccessProbability)
    }
}

/// Checks `0 < p <= 1`. `p == 0` maps to [`Error::ZeroSuccessProbability`].
pub(crate) fn check_probability(p: f64) -> Result<()> {
    if p == 0.0 {
        return Err(Error::ZeroSuccessProbability);
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid("p", format!("must lie in (0, 1], got {p}")));
    }
    Ok(())
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(
            "alpha",
            format!("must be finite and non-negative, got {alpha}"),
        ));
    }
    Ok(())
}
