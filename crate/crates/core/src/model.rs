//! Domain types for weak-measurement scenarios: states, weighted POVMs,
//! coupling profiles, and the composite [`Scenario`] with validation.
//!
//! All types are immutable after construction and safe to share across
//! threads. Constructors validate; the `*_unchecked` variants exist so the
//! config loader and fault-injection tests can build deliberately broken
//! scenarios and have [`validate_scenario`] report the damage instead of
//! never being able to represent it.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::Operator;
use crate::tol::TOL;

pub mod config;
pub mod presets;

/// Positive semidefinite, unit-trace operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityState {
    op: Operator,
}

impl DensityState {
    /// Validates Hermiticity, positivity and unit trace at the structural
    /// tolerance.
    pub fn new(op: Operator) -> Result<Self> {
        let state = Self { op };
        if let Some(msg) = state.defect() {
            return Err(Error::InvalidParam(format!("not a density state: {msg}")));
        }
        Ok(state)
    }

    /// Wraps without checking; pair with [`validate_scenario`].
    pub fn new_unchecked(op: Operator) -> Self {
        Self { op }
    }

    /// Pure state |psi><psi| (input normalized internally).
    pub fn pure(psi: &[Complex64]) -> Result<Self> {
        let norm2: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
        if norm2 < TOL.denominator_floor {
            return Err(Error::InvalidParam("zero state vector".into()));
        }
        Self::new(Operator::projector(psi))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            op: Operator::identity(dim).scale_re(1.0 / dim as f64),
        }
    }

    pub fn operator(&self) -> &Operator {
        &self.op
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    /// First violated invariant, if any.
    fn defect(&self) -> Option<String> {
        let h = self.op.hermiticity_defect();
        if h >= TOL.structural {
            return Some(format!("hermiticity defect {h:.3e}"));
        }
        let tr = self.op.trace();
        if (tr.re - 1.0).abs() >= TOL.structural || tr.im.abs() >= TOL.structural {
            return Some(format!("trace {tr}"));
        }
        match self.op.hermitian_eigen() {
            Ok((vals, _)) => {
                let min = vals.first().copied().unwrap_or(0.0);
                if min < -TOL.structural {
                    return Some(format!("negative eigenvalue {min:.3e}"));
                }
            }
            Err(e) => return Some(e.to_string()),
        }
        None
    }
}

/// One measurement outcome: a labelled PSD effect with a real readout value
/// and a measure weight (the discrete stand-in for the outcome measure).
#[derive(Debug, Clone, PartialEq)]
pub struct PovmOutcome {
    pub label: String,
    pub value: f64,
    pub effect: Operator,
    pub weight: f64,
}

impl PovmOutcome {
    pub fn new(label: impl Into<String>, value: f64, effect: Operator, weight: f64) -> Self {
        Self {
            label: label.into(),
            value,
            effect,
            weight,
        }
    }
}

/// Weighted family of outcomes with weighted completeness
/// `sum_k weight_k * effect_k = I`. Labels are the identity key; duplicate
/// readout values are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct Povm {
    outcomes: Vec<PovmOutcome>,
}

impl Povm {
    pub fn new(outcomes: Vec<PovmOutcome>) -> Result<Self> {
        let p = Self { outcomes };
        if let Some(msg) = p.defect(TOL.completeness) {
            return Err(Error::InvalidParam(format!("invalid POVM: {msg}")));
        }
        Ok(p)
    }

    pub fn new_unchecked(outcomes: Vec<PovmOutcome>) -> Self {
        Self { outcomes }
    }

    /// Single identity effect: measurement that learns nothing
    /// (no postselection when used on the system side).
    pub fn trivial(dim: usize) -> Self {
        Self {
            outcomes: vec![PovmOutcome::new("all", 0.0, Operator::identity(dim), 1.0)],
        }
    }

    /// Projective measurement onto the columns of `basis` with the given
    /// readout values, unit weights.
    pub fn projective(basis: &Operator, values: &[f64], labels: &[&str]) -> Result<Self> {
        let dim = basis.dim();
        if values.len() != dim || labels.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "Povm::projective values/labels",
                expected: dim,
                actual: values.len().min(labels.len()),
            });
        }
        let outcomes = (0..dim)
            .map(|k| {
                let col: Vec<Complex64> = (0..dim).map(|i| basis.get(i, k)).collect();
                PovmOutcome::new(labels[k], values[k], Operator::projector(&col), 1.0)
            })
            .collect();
        Self::new(outcomes)
    }

    pub fn outcomes(&self) -> &[PovmOutcome] {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.outcomes.first().map_or(0, |o| o.effect.dim())
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.outcomes
            .iter()
            .position(|o| o.label == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// Max-norm deviation of the weighted effect sum from the identity.
    pub fn completeness_defect(&self) -> f64 {
        let dim = self.dim();
        if dim == 0 {
            return f64::INFINITY;
        }
        let mut sum = Operator::zeros(dim);
        for o in &self.outcomes {
            sum = &sum + &o.effect.scale_re(o.weight);
        }
        sum.max_abs_diff(&Operator::identity(dim))
    }

    fn defect(&self, completeness_tol: f64) -> Option<String> {
        if self.outcomes.is_empty() {
            return Some("no outcomes".into());
        }
        let dim = self.dim();
        for o in &self.outcomes {
            if o.effect.dim() != dim {
                return Some(format!("outcome '{}' has mismatched dimension", o.label));
            }
            if !(o.weight >= 0.0 && o.weight.is_finite()) {
                return Some(format!("outcome '{}' has weight {}", o.label, o.weight));
            }
            if !o.value.is_finite() {
                return Some(format!("outcome '{}' has value {}", o.label, o.value));
            }
            if !o.effect.is_psd(TOL.structural) {
                return Some(format!("outcome '{}' effect is not PSD", o.label));
            }
        }
        for (i, a) in self.outcomes.iter().enumerate() {
            if self.outcomes[..i].iter().any(|b| b.label == a.label) {
                return Some(format!("duplicate label '{}'", a.label));
            }
        }
        let c = self.completeness_defect();
        if c >= completeness_tol {
            return Some(format!(
                "completeness defect {c:.3e} (tolerance {completeness_tol:.1e})"
            ));
        }
        None
    }
}

/// The readout operator of a weighted POVM:
/// `sum_k weight_k * value_k * effect_k`.
pub fn pointer_operator(p: &Povm) -> Operator {
    let mut sum = Operator::zeros(p.dim());
    for o in p.outcomes() {
        sum = &sum + &o.effect.scale_re(o.weight * o.value);
    }
    sum
}

/// Normalized effect `E / Tr(E)`: the state that best describes the system
/// in the past given this outcome.
pub fn retrodiction_state(o: &PovmOutcome) -> Result<DensityState> {
    let tr = o.effect.trace().re;
    if tr <= TOL.denominator_floor {
        return Err(Error::ZeroTraceEffect(tr));
    }
    DensityState::new(o.effect.scale_re(1.0 / tr))
}

/// Sampled coupling profile `g(t)` on `[0, tau]` with strength `lambda`.
///
/// `samples[k]` is the value at the k-th of `samples.len()` uniform midpoints;
/// the function vanishes outside the window by construction and the midpoint
/// quadrature of the samples must equal 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingProfile {
    tau: f64,
    samples: Vec<f64>,
    lambda: f64,
}

impl CouplingProfile {
    pub fn new(tau: f64, samples: Vec<f64>, lambda: f64) -> Result<Self> {
        let p = Self {
            tau,
            samples,
            lambda,
        };
        if let Some(msg) = p.defect() {
            return Err(Error::InvalidParam(format!("invalid coupling profile: {msg}")));
        }
        Ok(p)
    }

    pub fn new_unchecked(tau: f64, samples: Vec<f64>, lambda: f64) -> Self {
        Self {
            tau,
            samples,
            lambda,
        }
    }

    /// Constant profile g = 1/tau over the whole window.
    pub fn uniform(tau: f64, n: usize, lambda: f64) -> Self {
        Self {
            tau,
            samples: vec![1.0 / tau; n],
            lambda,
        }
    }

    /// Pulse on the first `width` of `n` samples, zero after; approximates an
    /// instantaneous coupling at t = 0 as `width/n -> 0`.
    pub fn boxcar(tau: f64, n: usize, width: usize, lambda: f64) -> Result<Self> {
        if width == 0 || width > n {
            return Err(Error::InvalidParam(format!(
                "boxcar width {width} out of range 1..={n}"
            )));
        }
        let mut samples = vec![0.0; n];
        let height = n as f64 / (width as f64 * tau);
        samples[..width].fill(height);
        Ok(Self {
            tau,
            samples,
            lambda,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Midpoint quadrature of the samples over [0, tau].
    pub fn integral(&self) -> f64 {
        let dt = self.tau / self.samples.len() as f64;
        self.samples.iter().sum::<f64>() * dt
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }

    /// Resamples to `n` pieces, treating the profile as piecewise constant
    /// and averaging by exact interval overlap, which preserves the integral.
    /// Integer refinement reproduces the profile exactly.
    pub fn resampled(&self, n: usize) -> Self {
        let old_n = self.samples.len();
        if n == old_n || n == 0 {
            return self.clone();
        }
        let mut out = vec![0.0; n];
        for (j, o) in out.iter_mut().enumerate() {
            // new piece j covers [j/n, (j+1)/n) in window units
            let lo = j as f64 / n as f64;
            let hi = (j + 1) as f64 / n as f64;
            let mut acc = 0.0;
            let k_lo = (lo * old_n as f64).floor() as usize;
            let k_hi = ((hi * old_n as f64).ceil() as usize).min(old_n);
            for k in k_lo..k_hi {
                let p_lo = k as f64 / old_n as f64;
                let p_hi = (k + 1) as f64 / old_n as f64;
                let overlap = (hi.min(p_hi) - lo.max(p_lo)).max(0.0);
                acc += self.samples[k] * overlap;
            }
            *o = acc * n as f64;
        }
        Self {
            tau: self.tau,
            samples: out,
            lambda: self.lambda,
        }
    }

    fn defect(&self) -> Option<String> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Some(format!("tau {} not positive", self.tau));
        }
        if self.samples.is_empty() {
            return Some("no samples".into());
        }
        if self.samples.iter().any(|s| !s.is_finite()) {
            return Some("non-finite sample".into());
        }
        if !self.lambda.is_finite() {
            return Some(format!("lambda {}", self.lambda));
        }
        let q = self.integral();
        if (q - 1.0).abs() >= TOL.quadrature {
            return Some(format!("quadrature {q} != 1"));
        }
        None
    }
}

/// Uniform midpoint time grid shared by both engines.
#[derive(Debug, Clone)]
pub struct TimeGrid {
    pub dt: f64,
    pub midpoints: Vec<f64>,
    pub g: Vec<f64>,
}

impl TimeGrid {
    /// Indices where the coupling is nonzero.
    pub fn support(&self) -> Vec<usize> {
        (0..self.g.len()).filter(|&k| self.g[k] != 0.0).collect()
    }
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub dim_s: usize,
    pub dim_d: usize,
    /// Free system Hamiltonian.
    pub h_s: Operator,
    /// Free detector Hamiltonian.
    pub h_d: Operator,
    /// Measured system observable entering the coupling.
    pub a_obs: Operator,
    /// Detector operator entering the coupling.
    pub x_obs: Operator,
    pub rho_i: DensityState,
    pub rho_0: DensityState,
    /// Later measurement on the system (postselection).
    pub sys_povm: Povm,
    /// Readout measurement on the detector.
    pub det_povm: Povm,
    pub coupling: CouplingProfile,
    /// Time-grid resolution; must match the coupling sample count.
    pub n_t: usize,
    /// Completeness tolerance for the POVMs; presets built from truncated
    /// infinite-dimensional operators document a relaxed value.
    pub povm_tol: f64,
}

impl Scenario {
    pub fn composite_dim(&self) -> usize {
        self.dim_s * self.dim_d
    }

    pub fn grid(&self) -> TimeGrid {
        let n = self.n_t;
        let dt = self.coupling.tau() / n as f64;
        TimeGrid {
            dt,
            midpoints: (0..n).map(|k| (k as f64 + 0.5) * dt).collect(),
            g: self.coupling.samples().to_vec(),
        }
    }

    pub fn lambda(&self) -> f64 {
        self.coupling.lambda()
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            coupling: self.coupling.with_lambda(lambda),
            ..self.clone()
        }
    }

    pub fn with_n_t(&self, n_t: usize) -> Self {
        Self {
            coupling: self.coupling.resampled(n_t),
            n_t,
            ..self.clone()
        }
    }

    /// Replaces the system measurement with the trivial (no-postselection)
    /// single-effect POVM.
    pub fn without_postselection(&self) -> Self {
        Self {
            sys_povm: Povm::trivial(self.dim_s),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> ValidationReport {
        validate_scenario(self)
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    /// Stable machine-readable code, e.g. `povm.sys.completeness`.
    pub code: String,
    pub message: String,
}

/// Outcome of [`validate_scenario`]: empty means valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn findings(&self) -> &[Finding] {
        &self.findings
    }

    fn push(&mut self, code: &str, message: impl Into<String>) {
        self.findings.push(Finding {
            code: code.to_string(),
            message: message.into(),
        });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.findings.is_empty() {
            return write!(f, "valid");
        }
        for (i, finding) in self.findings.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  [{}] {}", finding.code, finding.message)?;
        }
        Ok(())
    }
}

/// Checks every scenario invariant and returns the list of violations.
/// Never mutates the input; an empty report means the scenario is valid.
pub fn validate_scenario(s: &Scenario) -> ValidationReport {
    let mut r = ValidationReport::default();
    if s.dim_s == 0 || s.dim_d == 0 {
        r.push("dims", "dimensions must be positive");
        return r;
    }

    let mut dim_check = |code: &str, op: &Operator, want: usize| {
        if op.dim() != want {
            r.push(code, format!("dimension {} != {}", op.dim(), want));
            false
        } else {
            true
        }
    };
    let ok_hs = dim_check("h_s.dim", &s.h_s, s.dim_s);
    let ok_hd = dim_check("h_d.dim", &s.h_d, s.dim_d);
    let ok_a = dim_check("a_obs.dim", &s.a_obs, s.dim_s);
    let ok_x = dim_check("x_obs.dim", &s.x_obs, s.dim_d);
    dim_check("rho_i.dim", s.rho_i.operator(), s.dim_s);
    dim_check("rho_0.dim", s.rho_0.operator(), s.dim_d);

    for (code, op, ok) in [
        ("h_s", &s.h_s, ok_hs),
        ("h_d", &s.h_d, ok_hd),
        ("a_obs", &s.a_obs, ok_a),
        ("x_obs", &s.x_obs, ok_x),
    ] {
        if ok && !op.is_hermitian(TOL.structural) {
            r.push(
                &format!("{code}.hermitian"),
                format!("defect {:.3e}", op.hermiticity_defect()),
            );
        }
    }

    for (code, state, want) in [
        ("rho_i", &s.rho_i, s.dim_s),
        ("rho_0", &s.rho_0, s.dim_d),
    ] {
        if state.dim() == want {
            if let Some(msg) = state.defect() {
                r.push(&format!("{code}.state"), msg);
            }
        }
    }

    for (code, povm, want) in [
        ("povm.sys", &s.sys_povm, s.dim_s),
        ("povm.det", &s.det_povm, s.dim_d),
    ] {
        if povm.dim() != want {
            r.push(
                &format!("{code}.dim"),
                format!("dimension {} != {}", povm.dim(), want),
            );
            continue;
        }
        if let Some(msg) = povm.defect(s.povm_tol) {
            r.push(code, msg);
        }
    }

    if let Some(msg) = s.coupling.defect() {
        r.push("coupling", msg);
    }
    if s.n_t == 0 {
        r.push("n_t", "time grid must have at least one step");
    } else if s.n_t != s.coupling.len() {
        r.push(
            "n_t",
            format!(
                "time grid resolution {} != coupling sample count {}",
                s.n_t,
                s.coupling.len()
            ),
        );
    }
    if !(s.povm_tol > 0.0 && s.povm_tol.is_finite()) {
        r.push("povm_tol", format!("tolerance {} not positive", s.povm_tol));
    }
    r
}
