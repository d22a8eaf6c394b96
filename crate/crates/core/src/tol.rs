//! Centralized numerical tolerances.
//!
//! Every threshold used by validation, engines, and property tests lives in
//! one record so the whole crate can be tightened or loosened from a single
//! place.

/// Tolerance record shared across the crate.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Structural matrix predicates: Hermiticity, positive semidefiniteness,
    /// unit trace of states.
    pub structural: f64,
    /// Algebraic identities expected to hold to near machine precision
    /// (group inverses, trace preservation, conjugate symmetries).
    pub algebraic: f64,
    /// Weighted POVM completeness, max-norm deviation from the identity.
    pub completeness: f64,
    /// Coupling-profile quadrature: |sum g_k dt - 1|.
    pub quadrature: f64,
    /// Max-norm unitarity defect allowed for the stepped full propagator.
    pub propagator_unitarity: f64,
    /// Floor below which postselection probabilities and weak-value
    /// denominators are treated as orthogonal pre/postselection.
    pub denominator_floor: f64,
    /// Probability entries in [-clamp_floor, 0] are treated as roundoff and
    /// clamped to zero; anything more negative is a genuine violation.
    pub clamp_floor: f64,
    /// Magnitude of the second-order terms in the conditional-average
    /// denominator beyond which results are flagged as nonperturbative.
    pub breakdown_second_order: f64,
}

/// Defaults: 1e-10 structural, 1e-12 algebraic.
pub const TOL: Tolerances = Tolerances {
    structural: 1e-10,
    algebraic: 1e-12,
    completeness: 1e-8,
    quadrature: 1e-8,
    propagator_unitarity: 1e-9,
    denominator_floor: 1e-12,
    clamp_floor: 1e-12,
    breakdown_second_order: 0.5,
};

/// Relaxed structural tolerance for presets built from truncated
/// infinite-dimensional operators (documented per preset).
pub const TRUNCATION_TOL: f64 = 1e-6;
