//! Secret-key rate analysis for quantum repeaters whose stationary qubits are
//! GKP-encoded in atomic-ensemble memories.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: configuration and derived per-step quantities
//! - [`stats`]: waiting-time and completion-time statistics
//! - [`amplify`]: loss-to-shift conversion strategies
//! - [`gkpcode`]: logical error probabilities and thresholds
//! - [`protocol`]: heralding, Bell decoding, Pauli frames, measurement algebra
//! - [`rates`]: the analytic rate pipeline and optimizer
//! - [`montecarlo`]: simulation and numeric averaging
//! - [`cli`]: the command-line front end

// `!(x > 0.0)` is how parameter checks reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod amplify;
pub mod cli;
pub mod error;
pub mod gkpcode;
pub mod model;
pub mod montecarlo;
pub mod protocol;
pub mod rates;
pub mod stats;

pub use amplify::{AmplificationStrategy, CcThreshold, ExpectationMode, VarianceBudget};
pub use error::{Error, Result};
pub use gkpcode::{PauliModel, QberThreshold};
pub use model::{derive, DerivedParams, PhysicalConstants, RepeaterConfig};
pub use montecarlo::{SimulationOptions, SimulationStats};
pub use rates::{analytic_rate, analytic_rate_with, RateOptions, RateResult};
