//! Canonical scenarios.
//!
//! * `qubit_qubit` - minimal 2x2 model with free Hamiltonians chosen so the
//!   measured observable and the readout both precess (neither is conserved),
//!   while the coupling operator on the detector commutes with its free
//!   Hamiltonian and squares to the identity. That last property cancels the
//!   leading correction to conditional means, so the rational-form estimate
//!   tracks the exact engine at third order in the coupling strength - the
//!   regime the accuracy sweeps probe.
//! * `aav_gaussian` - qubit measured by a truncated-oscillator pointer
//!   prepared in its Gaussian ground state, near-conjugate quadratures as
//!   coupling and readout, a narrow boxcar pulse standing in for an
//!   instantaneous interaction, and projective pre/postselection at a tunable
//!   overlap angle epsilon. Near-orthogonal selection (small epsilon) shows
//!   anomalous amplification: conditional pointer shifts beyond
//!   lambda * max eigenvalue.
//! * `random_seeded` - reproducible random valid scenario from one integer.
//! * `taylor_negativity` - pinned search result where a plain second-order
//!   Taylor expansion of the outcome probabilities goes negative while the
//!   rational form stays nonnegative.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::linalg::Operator;
use crate::random;
use crate::tol::{TOL, TRUNCATION_TOL};

use super::{CouplingProfile, DensityState, Povm, PovmOutcome, Scenario};

/// Optional parameter overrides accepted by [`preset`]. Each preset rejects
/// parameters it does not understand.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PresetParams {
    pub lambda: Option<f64>,
    /// Overlap angle between pre- and postselection (aav_gaussian).
    pub epsilon: Option<f64>,
    /// RNG seed (random_seeded).
    pub seed: Option<u64>,
    pub n_t: Option<usize>,
    /// Truncated pointer dimension (aav_gaussian).
    pub detector_dim: Option<usize>,
    /// Boxcar pulse width in grid samples (aav_gaussian).
    pub boxcar_width: Option<usize>,
}

impl PresetParams {
    fn reject(&self, preset: &str, allowed: &[&str]) -> Result<()> {
        let fields: [(&str, bool); 6] = [
            ("lambda", self.lambda.is_some()),
            ("epsilon", self.epsilon.is_some()),
            ("seed", self.seed.is_some()),
            ("n_t", self.n_t.is_some()),
            ("detector_dim", self.detector_dim.is_some()),
            ("boxcar_width", self.boxcar_width.is_some()),
        ];
        for (name, set) in fields {
            if set && !allowed.contains(&name) {
                return Err(Error::InvalidParam(format!(
                    "preset '{preset}' does not accept parameter '{name}'"
                )));
            }
        }
        Ok(())
    }
}

/// Builds a named preset scenario with parameter overrides.
pub fn preset(name: &str, params: &PresetParams) -> Result<Scenario> {
    match name {
        "qubit_qubit" => qubit_qubit(params),
        "aav_gaussian" => aav_gaussian(params),
        "random_seeded" => random_seeded(params),
        "taylor_negativity" => taylor_negativity(params),
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

fn bloch_ket(theta: f64, phi: f64) -> [Complex64; 2] {
    [
        Complex64::new((theta / 2.0).cos(), 0.0),
        Complex64::from_polar((theta / 2.0).sin(), phi),
    ]
}

/// 2x2 basis matrix with columns |k> and its orthogonal complement.
fn qubit_basis(ket: [Complex64; 2]) -> Operator {
    Operator::new(
        2,
        vec![ket[0], -ket[1].conj(), ket[1], ket[0].conj()],
    )
    .expect("2x2 construction")
}

fn pauli_x() -> Operator {
    Operator::new(
        2,
        vec![
            Complex64::ZERO,
            Complex64::ONE,
            Complex64::ONE,
            Complex64::ZERO,
        ],
    )
    .expect("2x2 construction")
}

fn pauli_z() -> Operator {
    Operator::diagonal(&[1.0, -1.0])
}

/// Bloch-vector mixed qubit state (I + b . sigma)/2.
fn bloch_mixed(bx: f64, by: f64, bz: f64) -> Operator {
    Operator::new(
        2,
        vec![
            Complex64::new(0.5 * (1.0 + bz), 0.0),
            Complex64::new(0.5 * bx, -0.5 * by),
            Complex64::new(0.5 * bx, 0.5 * by),
            Complex64::new(0.5 * (1.0 - bz), 0.0),
        ],
    )
    .expect("2x2 construction")
}

/// Minimal two-qubit scenario. Defaults: lambda 0.05, n_t 1024.
pub fn qubit_qubit(params: &PresetParams) -> Result<Scenario> {
    params.reject("qubit_qubit", &["lambda", "n_t"])?;
    let lambda = params.lambda.unwrap_or(0.05);
    let n_t = params.n_t.unwrap_or(1024);
    if n_t == 0 {
        return Err(Error::InvalidParam("n_t must be positive".into()));
    }

    // system: observable sigma_z precessing under H_S ~ sigma_x
    let omega = 0.9;
    let h_s = pauli_x().scale_re(0.5 * omega);
    let a_obs = pauli_z();
    let rho_i = DensityState::pure(&bloch_ket(1.0, 0.5))?;
    let sys_povm = Povm::projective(&qubit_basis(bloch_ket(2.0, 1.2)), &[1.0, -1.0], &["+", "-"])?;

    // detector: coupling operator sigma_z conserved (and squaring to I),
    // readout sigma_x precessing under H_D ~ sigma_z
    let nu = 1.3;
    let h_d = pauli_z().scale_re(0.5 * nu);
    let x_obs = pauli_z();
    let (beta, phi, b) = (1.1_f64, 0.7_f64, 0.8);
    let rho_0 = DensityState::new(bloch_mixed(
        b * phi.cos() * beta.sin(),
        b * phi.sin() * beta.sin(),
        b * beta.cos(),
    ))?;
    let det_povm = Povm::projective(
        &qubit_basis(bloch_ket(std::f64::consts::FRAC_PI_2, 0.0)),
        &[1.0, -1.0],
        &["up", "dn"],
    )?;

    Ok(Scenario {
        dim_s: 2,
        dim_d: 2,
        h_s,
        h_d,
        a_obs,
        x_obs,
        rho_i,
        rho_0,
        sys_povm,
        det_povm,
        coupling: CouplingProfile::uniform(1.0, n_t, lambda),
        n_t,
        povm_tol: TOL.completeness,
    })
}

/// Truncated annihilation operator on `dim` oscillator levels.
fn lowering(dim: usize) -> Operator {
    Operator::from_fn(dim, |i, j| {
        if j == i + 1 {
            Complex64::new((j as f64).sqrt(), 0.0)
        } else {
            Complex64::ZERO
        }
    })
}

/// Position-like quadrature (a + a^dag)/sqrt(2) on the truncated space.
pub fn position_quadrature(dim: usize) -> Operator {
    let a = lowering(dim);
    (&a + &a.adjoint()).scale_re(1.0 / 2.0_f64.sqrt())
}

/// Momentum-like quadrature i(a^dag - a)/sqrt(2) on the truncated space.
pub fn momentum_quadrature(dim: usize) -> Operator {
    let a = lowering(dim);
    (&a.adjoint() - &a).scale(Complex64::new(0.0, 1.0 / 2.0_f64.sqrt()))
}

/// Gaussian-pointer weak measurement of a qubit. Defaults: epsilon 0.1,
/// lambda 0.01, detector_dim 60, n_t 1024, boxcar_width 8.
///
/// The detector POVM projects onto the eigenbasis of the truncated momentum
/// quadrature, so the readout operator is that quadrature itself. Free
/// Hamiltonians are zero: with the delta-like pulse the interaction is
/// effectively instantaneous and the standard single-number weak value
/// -cot(epsilon) governs the pointer shift. The truncated quadratures are
/// only near-conjugate, hence the relaxed structural tolerance recorded in
/// `povm_tol`.
pub fn aav_gaussian(params: &PresetParams) -> Result<Scenario> {
    params.reject(
        "aav_gaussian",
        &["lambda", "epsilon", "n_t", "detector_dim", "boxcar_width"],
    )?;
    let epsilon = params.epsilon.unwrap_or(0.1);
    let lambda = params.lambda.unwrap_or(0.01);
    let dim_d = params.detector_dim.unwrap_or(60);
    let n_t = params.n_t.unwrap_or(1024);
    let width = params.boxcar_width.unwrap_or(8);
    if !(epsilon > 0.0 && epsilon < std::f64::consts::PI) {
        return Err(Error::InvalidParam(format!(
            "epsilon {epsilon} outside (0, pi)"
        )));
    }
    if dim_d < 40 {
        return Err(Error::InvalidParam(format!(
            "detector_dim {dim_d} too small for a faithful truncated pointer (need >= 40)"
        )));
    }

    let a_obs = pauli_z();
    let pre = bloch_ket(std::f64::consts::FRAC_PI_2, 0.0);
    let rho_i = DensityState::pure(&pre)?;
    // Postselection ket: the preselection rotated by (pi - 2 eps) about an
    // axis perpendicular to it and tilted off the measurement plane, so the
    // overlap is sin(eps) (orthogonal as eps -> 0, the preselection itself at
    // eps = pi/2) and the weak value cot(eps) (-sin chi + i cos chi) carries
    // both a large real part and a nonzero imaginary part.
    let chi = 1.2_f64;
    let alpha = std::f64::consts::PI - 2.0 * epsilon;
    let (c, sn) = ((alpha / 2.0).cos(), (alpha / 2.0).sin());
    // R = cos(a/2) I - i sin(a/2) (sin chi sigma_y + cos chi sigma_z)
    let rot = Operator::new(
        2,
        vec![
            Complex64::new(c, -sn * chi.cos()),
            Complex64::new(-sn * chi.sin(), 0.0),
            Complex64::new(sn * chi.sin(), 0.0),
            Complex64::new(c, sn * chi.cos()),
        ],
    )
    .expect("2x2 construction");
    let post = [
        rot.get(0, 0) * pre[0] + rot.get(0, 1) * pre[1],
        rot.get(1, 0) * pre[0] + rot.get(1, 1) * pre[1],
    ];
    let sys_povm = Povm::projective(&qubit_basis(post), &[1.0, -1.0], &["post", "rest"])?;

    let x_obs = position_quadrature(dim_d);
    let p_obs = momentum_quadrature(dim_d);
    let (p_vals, p_vecs) = p_obs.hermitian_eigen()?;
    let labels: Vec<String> = (0..dim_d).map(|k| format!("p{k}")).collect();
    let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    let det_povm = Povm::projective(&p_vecs, &p_vals, &label_refs)?;

    let mut ground = vec![Complex64::ZERO; dim_d];
    ground[0] = Complex64::ONE;
    let rho_0 = DensityState::pure(&ground)?;

    Ok(Scenario {
        dim_s: 2,
        dim_d,
        h_s: Operator::zeros(2),
        h_d: Operator::zeros(dim_d),
        a_obs,
        x_obs,
        rho_i,
        rho_0,
        sys_povm,
        det_povm,
        coupling: CouplingProfile::boxcar(1.0, n_t, width, lambda)?,
        n_t,
        povm_tol: TRUNCATION_TOL,
    })
}

/// Normalizes a random Hermitian to unit spectral radius.
fn unit_spectral(op: Operator) -> Result<Operator> {
    let (vals, _) = op.hermitian_eigen()?;
    let radius = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if radius < 1e-6 {
        return Err(Error::InvalidParam("degenerate random operator".into()));
    }
    Ok(op.scale_re(1.0 / radius))
}

/// Smeared random projective POVM: (1-s) P_k + (s/d) I, readout values
/// spread uniformly over [-1, 1].
fn smeared_povm(dim: usize, prefix: &str, rng: &mut impl Rng) -> Result<Povm> {
    let basis = random::unitary(dim, rng);
    let s: f64 = rng.gen_range(0.05..0.5);
    let outcomes = (0..dim)
        .map(|k| {
            let col: Vec<Complex64> = (0..dim).map(|i| basis.get(i, k)).collect();
            let effect = &Operator::projector(&col).scale_re(1.0 - s)
                + &Operator::identity(dim).scale_re(s / dim as f64);
            let value = if dim == 1 {
                0.0
            } else {
                -1.0 + 2.0 * k as f64 / (dim - 1) as f64
            };
            PovmOutcome::new(format!("{prefix}{k}"), value, effect, 1.0)
        })
        .collect();
    Povm::new(outcomes)
}

/// Smooth strictly positive coupling profile: a low-order trigonometric
/// modulation of a constant, sampled at the grid midpoints and normalized so
/// the midpoint quadrature is exactly 1.
fn smooth_profile(tau: f64, n_t: usize, lambda: f64, rng: &mut impl Rng) -> CouplingProfile {
    let amps: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let phases: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    let dt = tau / n_t as f64;
    let mut samples: Vec<f64> = (0..n_t)
        .map(|k| {
            let t = (k as f64 + 0.5) * dt;
            let mut v = 1.0;
            for m in 0..3 {
                v += amps[m]
                    * (std::f64::consts::TAU * (m + 1) as f64 * t / tau + phases[m]).cos();
            }
            v
        })
        .collect();
    let quad: f64 = samples.iter().sum::<f64>() * dt;
    for s in &mut samples {
        *s /= quad;
    }
    CouplingProfile::new_unchecked(tau, samples, lambda)
}

/// Reproducible random valid scenario. Defaults: lambda 0.1, n_t 64, seed 0.
///
/// Draw order (fixed for reproducibility): dims, H_S, H_D, coupled
/// observables, states, system POVM, detector POVM, coupling profile.
pub fn random_seeded(params: &PresetParams) -> Result<Scenario> {
    params.reject("random_seeded", &["lambda", "seed", "n_t"])?;
    let seed = params.seed.unwrap_or(0);
    let lambda = params.lambda.unwrap_or(0.1);
    let n_t = params.n_t.unwrap_or(64);
    if n_t == 0 {
        return Err(Error::InvalidParam("n_t must be positive".into()));
    }
    let mut rng = random::SeedRng::seed_from_u64(seed);

    let dim_s = rng.gen_range(2..=3usize);
    let dim_d = rng.gen_range(2..=3usize);
    let h_s = random::hermitian(dim_s, &mut rng);
    let h_d = random::hermitian(dim_d, &mut rng);
    let a_obs = unit_spectral(random::hermitian(dim_s, &mut rng))?;
    let x_obs = unit_spectral(random::hermitian(dim_d, &mut rng))?;
    let rho_i = DensityState::new(random::density(dim_s, &mut rng))?;
    let rho_0 = DensityState::new(random::density(dim_d, &mut rng))?;
    let sys_povm = smeared_povm(dim_s, "s", &mut rng)?;
    let det_povm = smeared_povm(dim_d, "d", &mut rng)?;
    let coupling = smooth_profile(1.0, n_t, lambda, &mut rng);

    Ok(Scenario {
        dim_s,
        dim_d,
        h_s,
        h_d,
        a_obs,
        x_obs,
        rho_i,
        rho_0,
        sys_povm,
        det_povm,
        coupling,
        n_t,
        povm_tol: TOL.completeness,
    })
}

/// Master seed whose negativity search produced the pinned scenario below;
/// the acceptance suite replays the search and checks it lands here.
pub const TAYLOR_NEGATIVITY_SEARCH_SEED: u64 = 1;
/// Scenario seed and coupling strength pinned from
/// `harness::negativity_search(TAYLOR_NEGATIVITY_SEARCH_SEED, 200)`.
pub const TAYLOR_NEGATIVITY_SEED: u64 = 1482817706323250795;
pub const TAYLOR_NEGATIVITY_LAMBDA: f64 = 2.0;

/// The pinned scenario on which the plain second-order Taylor expansion of
/// the joint probabilities produces an entry below -1e-3 while the rational
/// form stays nonnegative.
pub fn taylor_negativity(params: &PresetParams) -> Result<Scenario> {
    params.reject("taylor_negativity", &[])?;
    let base = random_seeded(&PresetParams {
        seed: Some(TAYLOR_NEGATIVITY_SEED),
        lambda: Some(TAYLOR_NEGATIVITY_LAMBDA),
        ..Default::default()
    })?;
    Ok(base)
}
