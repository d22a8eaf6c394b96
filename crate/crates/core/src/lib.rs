//! Simulation of weak measurements with postselection on finite-dimensional
//! system-detector models.
//!
//! A [`model::Scenario`] bundles the two Hilbert spaces, free Hamiltonians,
//! the coupled observables, initial states, the two measurements (as weighted
//! POVMs) and a time-dependent coupling profile. Two engines evaluate it:
//!
//! * [`exact`] builds the full time-ordered propagator on the composite space
//!   and computes the joint outcome distribution exactly (up to the time
//!   grid) - the ground truth;
//! * [`perturbation`] evaluates the second-order rational-form expansion:
//!   time-dependent weak values, the conditional-average formula, and the
//!   modified/ordinary Kubo linear-response estimates.
//!
//! [`harness`] compares the two over coupling-strength sweeps and randomized
//! scenario campaigns; [`model::config`] gives scenarios a declarative TOML
//! form for the command-line front end.

pub mod error;
pub mod exact;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod perturbation;
pub mod random;
pub mod tol;

pub use error::{Error, Result};
pub use linalg::{
    hermitian_exp, partial_trace_detector, partial_trace_system, tensor_product, Operator,
};
pub use model::{
    pointer_operator, retrodiction_state, validate_scenario, CouplingProfile, DensityState, Povm,
    PovmOutcome, Scenario, ValidationReport,
};
