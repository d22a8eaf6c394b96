//! Perturbation engine: interaction-picture sampling, time-dependent weak
//! values, the rational-form joint distribution, the conditional-average
//! formula, and the linear-response (Kubo) estimates.
//!
//! The expansion is controlled but deliberately not polynomial: numerators
//! are assembled as the quadratic form `M rho M^dag` with `M = 1 + i lambda V`,
//! so every outcome weight is nonnegative for *any* coupling strength, and
//! probabilities are ratios `Q(lambda) / N(lambda)`. A plain second-order
//! Taylor expansion of the same ratios is provided as a comparator; it can
//! and does go negative.
//!
//! All time integrals use the same midpoint grid as the exact engine, so
//! comparisons between the two probe only the expansion error.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::exact::reduce_system_effect;
use crate::linalg::{tensor_product, Operator};
use crate::model::{pointer_operator, Scenario, TimeGrid};
use crate::tol::TOL;

/// Operator families of a scenario in the interaction representation,
/// sampled on the midpoint grid.
///
/// Observables carry the free evolution forward, `O(t) = U0(t)^dag O U0(t)`;
/// effects are states and evolve with the opposite propagator, which lands on
/// the same conjugation evaluated at the window end: `E(-tau) = U0(tau)^dag E
/// U0(tau)`. Samples on the coupling support are cached; everything else is
/// produced on demand from one eigendecomposition per free Hamiltonian.
pub struct InteractionPicture {
    grid: TimeGrid,
    support: Vec<usize>,
    s_basis: EigenBasis,
    d_basis: EigenBasis,
    a_tilde: Operator,
    x_tilde: Operator,
    a_sup: Vec<Operator>,
    x_sup: Vec<Operator>,
    e_back: Vec<Operator>,
    f_back: Vec<Operator>,
    r_tau: Operator,
}

struct EigenBasis {
    vals: Vec<f64>,
    vecs: Operator,
}

impl EigenBasis {
    fn new(h: &Operator) -> Result<Self> {
        let (vals, vecs) = h.hermitian_eigen()?;
        Ok(Self { vals, vecs })
    }

    /// V (phases . tilde) V^dag where tilde = V^dag O V:
    /// the interaction-picture sample O(t).
    fn sample(&self, tilde: &Operator, t: f64) -> Operator {
        let n = tilde.dim();
        let phased = Operator::from_fn(n, |a, b| {
            tilde.get(a, b) * Complex64::from_polar(1.0, (self.vals[a] - self.vals[b]) * t)
        });
        &(&self.vecs * &phased) * &self.vecs.adjoint()
    }

    fn propagator(&self, t: f64) -> Operator {
        let n = self.vecs.dim();
        let mut scaled = self.vecs.clone();
        for (j, w) in self.vals.iter().enumerate() {
            let phase = Complex64::from_polar(1.0, -t * w);
            for i in 0..n {
                let v = scaled.get(i, j) * phase;
                scaled.set(i, j, v);
            }
        }
        &scaled * &self.vecs.adjoint()
    }
}

impl InteractionPicture {
    pub fn new(s: &Scenario) -> Result<Self> {
        let report = s.validate();
        if !report.is_valid() {
            return Err(Error::InvalidScenario(report));
        }
        let grid = s.grid();
        let support = grid.support();
        let s_basis = EigenBasis::new(&s.h_s)?;
        let d_basis = EigenBasis::new(&s.h_d)?;
        let a_tilde = s.a_obs.conjugated_by(&s_basis.vecs);
        let x_tilde = s.x_obs.conjugated_by(&d_basis.vecs);

        let a_sup = support
            .iter()
            .map(|&k| s_basis.sample(&a_tilde, grid.midpoints[k]))
            .collect();
        let x_sup = support
            .iter()
            .map(|&k| d_basis.sample(&x_tilde, grid.midpoints[k]))
            .collect();

        let tau = s.coupling.tau();
        let u_s = s_basis.propagator(tau);
        let u_d = d_basis.propagator(tau);
        let e_back = s
            .sys_povm
            .outcomes()
            .iter()
            .map(|o| o.effect.conjugated_by(&u_s))
            .collect();
        let f_back = s
            .det_povm
            .outcomes()
            .iter()
            .map(|o| o.effect.conjugated_by(&u_d))
            .collect();
        let r_tau = pointer_operator(&s.det_povm).conjugated_by(&u_d);

        Ok(Self {
            grid,
            support,
            s_basis,
            d_basis,
            a_tilde,
            x_tilde,
            a_sup,
            x_sup,
            e_back,
            f_back,
            r_tau,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Grid indices where the coupling is nonzero.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// A(t_k) at any midpoint index.
    pub fn a_at(&self, k: usize) -> Operator {
        self.s_basis.sample(&self.a_tilde, self.grid.midpoints[k])
    }

    /// X(t_k) at any midpoint index.
    pub fn x_at(&self, k: usize) -> Operator {
        self.d_basis.sample(&self.x_tilde, self.grid.midpoints[k])
    }

    /// Backward-propagated system effect for outcome `j`.
    pub fn e_backward(&self, j: usize) -> &Operator {
        &self.e_back[j]
    }

    /// Backward-propagated detector effect for outcome `k`.
    pub fn f_backward(&self, k: usize) -> &Operator {
        &self.f_back[k]
    }

    /// Readout operator at the window end, R(tau).
    pub fn r_tau(&self) -> &Operator {
        &self.r_tau
    }
}

/// Time-dependent weak values for one postselection outcome. `a_w` carries
/// the `lambda g(t)` factor and `b_w` the `lambda^2 g(t) g(t')` factor, so
/// quadratures over them need only the grid measure.
pub struct WeakValueTrace {
    f_label: String,
    support: Vec<usize>,
    /// A_w at the support points, parallel to `support`.
    a_w_sup: Vec<Complex64>,
    /// B_w on support x support, row-major.
    b_w_sup: Vec<Complex64>,
    denom: f64,
}

impl WeakValueTrace {
    pub fn f_label(&self) -> &str {
        &self.f_label
    }

    /// Tr_S[E_f(-tau) rho_i], the common denominator.
    pub fn denom(&self) -> f64 {
        self.denom
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// A_w(t_k); zero off the coupling support.
    pub fn a_w(&self, k: usize) -> Complex64 {
        match self.support.iter().position(|&s| s == k) {
            Some(p) => self.a_w_sup[p],
            None => Complex64::ZERO,
        }
    }

    /// B_w(t_k, t_l); zero off the support.
    pub fn b_w(&self, k: usize, l: usize) -> Complex64 {
        let (Some(p), Some(q)) = (
            self.support.iter().position(|&s| s == k),
            self.support.iter().position(|&s| s == l),
        ) else {
            return Complex64::ZERO;
        };
        self.b_w_sup[p * self.support.len() + q]
    }

    pub fn max_im_a_w(&self) -> f64 {
        self.a_w_sup.iter().map(|c| c.im.abs()).fold(0.0, f64::max)
    }

    /// Max-norm of B_w(t,t')^* - B_w(t',t).
    pub fn b_w_symmetry_defect(&self) -> f64 {
        let m = self.support.len();
        let mut worst: f64 = 0.0;
        for p in 0..m {
            for q in 0..m {
                worst =
                    worst.max((self.b_w_sup[p * m + q].conj() - self.b_w_sup[q * m + p]).norm());
            }
        }
        worst
    }
}

fn weak_values_from(
    ip: &InteractionPicture,
    lambda: f64,
    j: usize,
    label: &str,
    rho_i: &Operator,
    floor: f64,
) -> Result<WeakValueTrace> {
    let e = ip.e_backward(j);
    let denom = e.product_trace(rho_i).re;
    if denom <= floor {
        return Err(Error::DenominatorFloor {
            label: label.to_string(),
            value: denom,
            floor,
        });
    }
    let m = ip.support.len();
    // P_p = E(-tau) A(t_p) rho_i; then
    //   A_w numerator at p = Tr[P_p], B_w numerator at (p,q) = Tr[P_p A(t_q)]
    let products: Vec<Operator> = ip.a_sup.iter().map(|a| &(e * a) * rho_i).collect();
    let mut a_w_sup = Vec::with_capacity(m);
    let mut b_w_sup = vec![Complex64::ZERO; m * m];
    for p in 0..m {
        let g_p = ip.grid.g[ip.support[p]];
        a_w_sup.push(products[p].trace() * (lambda * g_p / denom));
        for q in 0..m {
            let g_q = ip.grid.g[ip.support[q]];
            b_w_sup[p * m + q] =
                products[p].product_trace(&ip.a_sup[q]) * (lambda * lambda * g_p * g_q / denom);
        }
    }
    Ok(WeakValueTrace {
        f_label: label.to_string(),
        support: ip.support.clone(),
        a_w_sup,
        b_w_sup,
        denom,
    })
}

/// Time-dependent weak values A_w(t), B_w(t,t') for the postselection
/// outcome `f_label`.
pub fn weak_value_trace(s: &Scenario, f_label: &str) -> Result<WeakValueTrace> {
    weak_value_trace_with_floor(s, f_label, TOL.denominator_floor)
}

/// Same with an explicit denominator floor, for callers knowingly probing
/// near-orthogonal pre/postselection.
pub fn weak_value_trace_with_floor(
    s: &Scenario,
    f_label: &str,
    floor: f64,
) -> Result<WeakValueTrace> {
    let ip = InteractionPicture::new(s)?;
    let j = s.sys_povm.index_of(f_label)?;
    weak_values_from(&ip, s.lambda(), j, f_label, s.rho_i.operator(), floor)
}

/// Rational-form joint distribution: numerators Q[k,j] and their sum N.
#[derive(Debug, Clone)]
pub struct PerturbativeDistribution {
    det_labels: Vec<String>,
    det_values: Vec<f64>,
    sys_labels: Vec<String>,
    /// Row-major `[k * n_sys + j]` numerators, measure weights included.
    q: Vec<f64>,
    n_lambda: f64,
}

impl PerturbativeDistribution {
    pub fn n_det(&self) -> usize {
        self.det_labels.len()
    }

    pub fn n_sys(&self) -> usize {
        self.sys_labels.len()
    }

    pub fn numerator(&self, k: usize, j: usize) -> f64 {
        self.q[k * self.n_sys() + j]
    }

    /// N(lambda) = sum of all numerators; probabilities are Q/N.
    pub fn n_lambda(&self) -> f64 {
        self.n_lambda
    }

    pub fn prob(&self, k: usize, j: usize) -> f64 {
        self.numerator(k, j) / self.n_lambda
    }

    pub fn min_prob(&self) -> f64 {
        self.q
            .iter()
            .map(|q| q / self.n_lambda)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn det_values(&self) -> &[f64] {
        &self.det_values
    }

    pub fn sys_labels(&self) -> &[String] {
        &self.sys_labels
    }

    pub fn det_labels(&self) -> &[String] {
        &self.det_labels
    }

    pub fn sys_index(&self, label: &str) -> Result<usize> {
        self.sys_labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// Marginal probability of system outcome `j`.
    pub fn sys_marginal(&self, j: usize) -> f64 {
        (0..self.n_det()).map(|k| self.prob(k, j)).sum()
    }

    /// First moment of the conditional readout distribution for outcome `j`.
    pub fn conditional_mean(&self, j: usize, floor: f64) -> Result<f64> {
        let pf: f64 = (0..self.n_det()).map(|k| self.numerator(k, j)).sum();
        if pf / self.n_lambda <= floor {
            return Err(Error::PostselectionFloor {
                label: self.sys_labels[j].clone(),
                value: pf / self.n_lambda,
                floor,
            });
        }
        Ok((0..self.n_det())
            .map(|k| self.det_values[k] * self.numerator(k, j))
            .sum::<f64>()
            / pf)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.q
            .iter()
            .zip(&other.q)
            .map(|(a, b)| (a / self.n_lambda - b / other.n_lambda).abs())
            .fold(0.0, f64::max)
    }
}

fn labels_of(s: &Scenario) -> (Vec<String>, Vec<f64>, Vec<String>) {
    (
        s.det_povm
            .outcomes()
            .iter()
            .map(|o| o.label.clone())
            .collect(),
        s.det_povm.outcomes().iter().map(|o| o.value).collect(),
        s.sys_povm
            .outcomes()
            .iter()
            .map(|o| o.label.clone())
            .collect(),
    )
}

/// Midpoint quadrature of the coupled interaction generator:
/// `V = sum_k g_k A(t_k) (x) X(t_k) dt`.
fn interaction_quadrature(ip: &InteractionPicture) -> Operator {
    let dim = ip.a_tilde.dim() * ip.x_tilde.dim();
    let mut v = Operator::zeros(dim);
    for (p, &k) in ip.support.iter().enumerate() {
        let w = ip.grid.g[k] * ip.grid.dt;
        v = &v + &tensor_product(&ip.a_sup[p], &ip.x_sup[p]).scale_re(w);
    }
    v
}

/// Rational-form joint distribution via the quadratic form
/// `Q[k,j] = w_j w_k Tr[(E_j(-tau) (x) F_k(-tau)) M rho M^dag]`,
/// `M = 1 + i lambda V`. Nonnegativity of every numerator is structural:
/// both factors under the trace are positive semidefinite.
pub fn perturbative_joint(s: &Scenario) -> Result<PerturbativeDistribution> {
    let ip = InteractionPicture::new(s)?;
    perturbative_joint_with(&ip, s)
}

fn perturbative_joint_with(
    ip: &InteractionPicture,
    s: &Scenario,
) -> Result<PerturbativeDistribution> {
    let v = interaction_quadrature(ip);
    let m_op = &Operator::identity(v.dim()) + &v.scale(Complex64::new(0.0, s.lambda()));
    let rho = tensor_product(s.rho_i.operator(), s.rho_0.operator());
    let w = &(&m_op * &rho) * &m_op.adjoint();

    let n_sys = s.sys_povm.len();
    let mut q = vec![0.0; s.det_povm.len() * n_sys];
    for (j, so) in s.sys_povm.outcomes().iter().enumerate() {
        let reduced = reduce_system_effect(&w, ip.e_backward(j), s.dim_s, s.dim_d);
        for (k, dk) in s.det_povm.outcomes().iter().enumerate() {
            q[k * n_sys + j] = so.weight * dk.weight * ip.f_backward(k).product_trace(&reduced).re;
        }
    }
    let n_lambda = q.iter().sum();
    let (det_labels, det_values, sys_labels) = labels_of(s);
    Ok(PerturbativeDistribution {
        det_labels,
        det_values,
        sys_labels,
        q,
        n_lambda,
    })
}

/// The same distribution assembled from detector-only traces weighted by the
/// weak values:
/// `Q[k,j] proportional to Tr_D[F rho_0] + (i int A_w Tr_D[F X rho_0] + c.c.)
///  + int int B_w Tr_D[F X rho_0 X]`.
///
/// Must agree with [`perturbative_joint`] to roundoff; the agreement is what
/// validates the weak-value factorization.
pub fn perturbative_joint_weakvalue_form(s: &Scenario) -> Result<PerturbativeDistribution> {
    let ip = InteractionPicture::new(s)?;
    let dt = ip.grid.dt;
    let m = ip.support.len();
    let rho_0 = s.rho_0.operator();

    // detector tables: FX[k][p] = F_k(-tau) X(t_p), RX0[p] = rho_0 X(t_p)
    let rx0: Vec<Operator> = ip.x_sup.iter().map(|x| rho_0 * x).collect();
    let n_sys = s.sys_povm.len();
    let mut q = vec![0.0; s.det_povm.len() * n_sys];
    let mut traces: Vec<WeakValueTrace> = Vec::with_capacity(n_sys);
    for (j, so) in s.sys_povm.outcomes().iter().enumerate() {
        traces.push(weak_values_from(
            &ip,
            s.lambda(),
            j,
            &so.label,
            s.rho_i.operator(),
            TOL.denominator_floor,
        )?);
    }

    for (k, dk) in s.det_povm.outcomes().iter().enumerate() {
        let f = ip.f_backward(k);
        let t0 = f.product_trace(rho_0);
        let fx: Vec<Operator> = ip.x_sup.iter().map(|x| f * x).collect();
        let t1: Vec<Complex64> = fx.iter().map(|fxp| fxp.product_trace(rho_0)).collect();
        for (j, so) in s.sys_povm.outcomes().iter().enumerate() {
            let wvt = &traces[j];
            let mut acc = t0;
            for (p, t1_p) in t1.iter().enumerate() {
                let first = Complex64::I * wvt.a_w_sup[p] * t1_p * dt;
                acc += first + first.conj();
            }
            for (p, fx_p) in fx.iter().enumerate() {
                for (l, rx0_l) in rx0.iter().enumerate() {
                    acc += wvt.b_w_sup[p * m + l] * fx_p.product_trace(rx0_l) * (dt * dt);
                }
            }
            q[k * n_sys + j] = so.weight * dk.weight * wvt.denom * acc.re;
        }
    }
    let n_lambda = q.iter().sum();
    let (det_labels, det_values, sys_labels) = labels_of(s);
    Ok(PerturbativeDistribution {
        det_labels,
        det_values,
        sys_labels,
        q,
        n_lambda,
    })
}

/// Second-order pieces of the conditional-average denominator
/// `D = 1 - 2 int <X>_0 A_w'' + int int <X X>_0 B_w` for one outcome.
struct DenominatorTerms {
    first: Complex64,
    second: Complex64,
}

impl DenominatorTerms {
    fn total(&self) -> Complex64 {
        Complex64::ONE + self.first + self.second
    }

    fn magnitude(&self) -> f64 {
        self.first.norm() + self.second.norm()
    }
}

fn denominator_terms(
    ip: &InteractionPicture,
    wvt: &WeakValueTrace,
    rho_0: &Operator,
    rx0: &[Operator],
) -> DenominatorTerms {
    let dt = ip.grid.dt;
    let m = ip.support.len();
    let mut first = Complex64::ZERO;
    for p in 0..m {
        let xmean = ip.x_sup[p].product_trace(rho_0).re;
        first += Complex64::new(-2.0 * xmean * wvt.a_w_sup[p].im * dt, 0.0);
    }
    let mut second = Complex64::ZERO;
    for (p, x_p) in ip.x_sup.iter().enumerate() {
        for (l, rx0_l) in rx0.iter().enumerate() {
            // <X(t_l) X(t_p)>_0 = Tr[X(t_p) rho_0 X(t_l)]
            let corr = x_p.product_trace(rx0_l);
            second += wvt.b_w_sup[p * m + l] * corr * (dt * dt);
        }
    }
    DenominatorTerms { first, second }
}

/// Postselection probability from the expansion:
/// `P(f) = w_f Tr_S[E_f(-tau) rho_i] D_f / N(lambda)`.
/// Agrees with the f-marginal of [`perturbative_joint`] to roundoff.
pub fn postselection_probability(s: &Scenario, f_label: &str) -> Result<f64> {
    let ip = InteractionPicture::new(s)?;
    let j = s.sys_povm.index_of(f_label)?;
    let wvt = weak_values_from(
        &ip,
        s.lambda(),
        j,
        f_label,
        s.rho_i.operator(),
        TOL.denominator_floor,
    )?;
    let rho_0 = s.rho_0.operator();
    let rx0: Vec<Operator> = ip.x_sup.iter().map(|x| rho_0 * x).collect();
    let d = denominator_terms(&ip, &wvt, rho_0, &rx0).total();
    let n_lambda = perturbative_joint_with(&ip, s)?.n_lambda();
    let weight = s.sys_povm.outcomes()[j].weight;
    Ok(weight * wvt.denom * d.re / n_lambda)
}

/// Conditional-average estimate with its regime diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct ConditionalAverage {
    pub value: f64,
    /// Set when the second-order denominator terms are large enough that the
    /// expansion should not be trusted.
    pub nonperturbative: bool,
    /// Full complex numerator and denominator, for diagnostics; both are
    /// real up to roundoff.
    pub numerator: Complex64,
    pub denominator: Complex64,
}

/// The main conditional-average formula:
///
/// numerator   `<R(tau)>_0 + int dt (i A_w' <[R(tau),X(t)]>_0
///              - A_w'' <{R(tau),X(t)}>_0) + int int B_w <X(t') R(tau) X(t)>_0`
/// denominator `1 - 2 int <X(t)>_0 A_w'' + int int <X(t') X(t)>_0 B_w(t,t')`
///
/// evaluated with grid quadratures. Equals the first moment of the rational
/// conditional distribution up to roundoff.
pub fn conditional_average_main(s: &Scenario, f_label: &str) -> Result<ConditionalAverage> {
    conditional_average_main_with_floor(s, f_label, TOL.denominator_floor)
}

pub fn conditional_average_main_with_floor(
    s: &Scenario,
    f_label: &str,
    floor: f64,
) -> Result<ConditionalAverage> {
    let ip = InteractionPicture::new(s)?;
    conditional_average_with(&ip, s.lambda(), s, f_label, floor)
}

fn conditional_average_with(
    ip: &InteractionPicture,
    lambda: f64,
    s: &Scenario,
    f_label: &str,
    floor: f64,
) -> Result<ConditionalAverage> {
    let j = s.sys_povm.index_of(f_label)?;
    let wvt = weak_values_from(ip, lambda, j, f_label, s.rho_i.operator(), floor)?;
    let rho_0 = s.rho_0.operator();
    let dt = ip.grid.dt;
    let m = ip.support.len();
    let r = ip.r_tau();

    let rx0: Vec<Operator> = ip.x_sup.iter().map(|x| rho_0 * x).collect();
    // RX[p] = R(tau) X(t_p)
    let rx: Vec<Operator> = ip.x_sup.iter().map(|x| r * x).collect();
    let r_rho0 = r * rho_0;

    let mut num = Complex64::new(r.product_trace(rho_0).re, 0.0);
    for (p, rx_p) in rx.iter().enumerate() {
        let aw = wvt.a_w_sup[p];
        // <R X>_0 = Tr[R X rho_0], <X R>_0 = Tr[X R rho_0]
        let r_then_x = rx_p.product_trace(rho_0);
        let x_then_r = ip.x_sup[p].product_trace(&r_rho0);
        let comm = r_then_x - x_then_r;
        let acom = r_then_x + x_then_r;
        num += (Complex64::new(0.0, aw.re) * comm - Complex64::new(aw.im, 0.0) * acom) * dt;
    }
    for (p, rx_p) in rx.iter().enumerate() {
        for (l, rx0_l) in rx0.iter().enumerate() {
            // <X(t_l) R(tau) X(t_p)>_0 = Tr[R X(t_p) rho_0 X(t_l)]
            let triple = rx_p.product_trace(rx0_l);
            num += wvt.b_w_sup[p * m + l] * triple * (dt * dt);
        }
    }

    let terms = denominator_terms(ip, &wvt, rho_0, &rx0);
    let den = terms.total();
    if den.re <= 0.0 {
        return Err(Error::RegimeBreakdown { value: den.re });
    }
    Ok(ConditionalAverage {
        value: num.re / den.re,
        nonperturbative: terms.magnitude() > TOL.breakdown_second_order,
        numerator: num,
        denominator: den,
    })
}

/// The complex force term `W(t_k) = A_w(t_k) [X(t_k) - <X(t_k)>_0]`.
/// Hermitian exactly when the weak value is real.
pub fn force_term(s: &Scenario, f_label: &str, k: usize) -> Result<Operator> {
    let ip = InteractionPicture::new(s)?;
    let j = s.sys_povm.index_of(f_label)?;
    let wvt = weak_values_from(
        &ip,
        s.lambda(),
        j,
        f_label,
        s.rho_i.operator(),
        TOL.denominator_floor,
    )?;
    let x = ip.x_at(k);
    let xmean = x.product_trace(s.rho_0.operator()).re;
    let centered = &x - &Operator::identity(x.dim()).scale_re(xmean);
    Ok(centered.scale(wvt.a_w(k)))
}

fn kubo_sum(ip: &InteractionPicture, rho_0: &Operator, a_w: &[Complex64]) -> f64 {
    let dt = ip.grid.dt;
    let r = ip.r_tau();
    let r_mean = r.product_trace(rho_0).re;
    let r_rho0 = r * rho_0;
    let mut acc = Complex64::new(r_mean, 0.0);
    for (p, x) in ip.x_sup.iter().enumerate() {
        let xmean = x.product_trace(rho_0).re;
        // <R Xc>_0 and <Xc R>_0 with Xc = X - <X>_0
        let r_xc = (r * x).product_trace(rho_0) - r_mean * xmean;
        let xc_r = x.product_trace(&r_rho0) - r_mean * xmean;
        acc += Complex64::I * (a_w[p] * r_xc - a_w[p].conj() * xc_r) * dt;
    }
    acc.re
}

/// Linear-response conditional average with the complex force term:
/// `<R>_f ~ <R(tau)>_0 + i int dt <R(tau) W(t) - W(t)^dag R(tau)>_0`.
///
/// This is the linearization of the main formula; with no postselection the
/// force term is Hermitian and the ordinary response expression is recovered.
pub fn modified_kubo(s: &Scenario, f_label: &str) -> Result<f64> {
    modified_kubo_with_floor(s, f_label, TOL.denominator_floor)
}

pub fn modified_kubo_with_floor(s: &Scenario, f_label: &str, floor: f64) -> Result<f64> {
    let ip = InteractionPicture::new(s)?;
    let j = s.sys_povm.index_of(f_label)?;
    let wvt = weak_values_from(&ip, s.lambda(), j, f_label, s.rho_i.operator(), floor)?;
    Ok(kubo_sum(&ip, s.rho_0.operator(), &wvt.a_w_sup))
}

/// Ordinary linear response: the same expression with the weak value
/// replaced by the plain (real) source average `lambda g(t) Tr[A(t) rho_i]`.
/// Takes no postselection input.
pub fn ordinary_kubo(s: &Scenario) -> Result<f64> {
    let ip = InteractionPicture::new(s)?;
    let lambda = s.lambda();
    let a_avg: Vec<Complex64> = ip
        .support
        .iter()
        .enumerate()
        .map(|(p, &k)| {
            let avg = ip.a_sup[p].product_trace(s.rho_i.operator()).re;
            Complex64::new(lambda * ip.grid.g[k] * avg, 0.0)
        })
        .collect();
    Ok(kubo_sum(&ip, s.rho_0.operator(), &a_avg))
}

/// Signed distribution from the plain second-order Taylor expansion of the
/// rational probabilities (`Q/N` divided through to order lambda^2).
#[derive(Debug, Clone)]
pub struct TaylorDistribution {
    det_labels: Vec<String>,
    det_values: Vec<f64>,
    sys_labels: Vec<String>,
    /// Row-major `[k * n_sys + j]`, unclamped; entries may be negative.
    entries: Vec<f64>,
    /// Any entry below the roundoff floor -1e-12.
    pub negative: bool,
}

impl TaylorDistribution {
    pub fn n_det(&self) -> usize {
        self.det_labels.len()
    }

    pub fn n_sys(&self) -> usize {
        self.sys_labels.len()
    }

    pub fn prob(&self, k: usize, j: usize) -> f64 {
        self.entries[k * self.n_sys() + j]
    }

    pub fn min_entry(&self) -> f64 {
        self.entries.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sys_index(&self, label: &str) -> Result<usize> {
        self.sys_labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// Conditional readout mean from the signed entries; `None` when the
    /// signed marginal is too small to divide by.
    pub fn conditional_mean(&self, j: usize) -> Option<f64> {
        let pf: f64 = (0..self.n_det()).map(|k| self.prob(k, j)).sum();
        if pf.abs() <= TOL.denominator_floor {
            return None;
        }
        Some(
            (0..self.n_det())
                .map(|k| self.det_values[k] * self.prob(k, j))
                .sum::<f64>()
                / pf,
        )
    }
}

/// Plain second-order Taylor expansion of the joint probabilities: the
/// rational form `Q(lambda)/N(lambda)` Taylor-divided through lambda^2.
/// Unlike the rational form this truncation has no positivity guarantee.
pub fn naive_taylor_probability(s: &Scenario) -> Result<TaylorDistribution> {
    let ip = InteractionPicture::new(s)?;
    let lambda = s.lambda();
    let v = interaction_quadrature(&ip);
    let rho = tensor_product(s.rho_i.operator(), s.rho_0.operator());
    let v_rho = &v * &rho;
    let rho_v = &rho * &v;
    let v_rho_v = &v_rho * &v;

    let n_sys = s.sys_povm.len();
    let n_det = s.det_povm.len();
    let (mut q0, mut q1, mut q2) = (
        vec![0.0; n_det * n_sys],
        vec![0.0; n_det * n_sys],
        vec![0.0; n_det * n_sys],
    );
    for (j, so) in s.sys_povm.outcomes().iter().enumerate() {
        let e = ip.e_backward(j);
        let red0 = reduce_system_effect(&rho, e, s.dim_s, s.dim_d);
        let red_comm = reduce_system_effect(&(&v_rho - &rho_v), e, s.dim_s, s.dim_d);
        let red2 = reduce_system_effect(&v_rho_v, e, s.dim_s, s.dim_d);
        for (k, dk) in s.det_povm.outcomes().iter().enumerate() {
            let w = so.weight * dk.weight;
            let f = ip.f_backward(k);
            q0[k * n_sys + j] = w * f.product_trace(&red0).re;
            q1[k * n_sys + j] = w * (Complex64::I * f.product_trace(&red_comm)).re;
            q2[k * n_sys + j] = w * f.product_trace(&red2).re;
        }
    }
    let n0: f64 = q0.iter().sum();
    let n1: f64 = q1.iter().sum();
    let n2: f64 = q2.iter().sum();

    // Taylor-divide (q0 + q1 L + q2 L^2) / (n0 + n1 L + n2 L^2) through L^2
    let entries: Vec<f64> = (0..n_det * n_sys)
        .map(|i| {
            let c0 = q0[i] / n0;
            let c1 = q1[i] / n0 - q0[i] * n1 / (n0 * n0);
            let c2 = q2[i] / n0 - q1[i] * n1 / (n0 * n0)
                + q0[i] * (n1 * n1 / (n0 * n0 * n0) - n2 / (n0 * n0));
            c0 + c1 * lambda + c2 * lambda * lambda
        })
        .collect();
    let negative = entries.iter().any(|&e| e < -TOL.clamp_floor);
    let (det_labels, det_values, sys_labels) = labels_of(s);
    Ok(TaylorDistribution {
        det_labels,
        det_values,
        sys_labels,
        entries,
        negative,
    })
}

/// Scenario-level entry point used by sweeps: one interaction picture,
/// many coupling strengths.
pub struct EstimatorSet<'a> {
    ip: InteractionPicture,
    scenario: &'a Scenario,
}

impl<'a> EstimatorSet<'a> {
    pub fn new(scenario: &'a Scenario) -> Result<Self> {
        Ok(Self {
            ip: InteractionPicture::new(scenario)?,
            scenario,
        })
    }

    /// Main-formula estimate at an overridden coupling strength. The free
    /// evolution (and so the interaction picture) is independent of lambda.
    pub fn conditional_average(&self, lambda: f64, f_label: &str) -> Result<ConditionalAverage> {
        conditional_average_with(
            &self.ip,
            lambda,
            self.scenario,
            f_label,
            TOL.denominator_floor,
        )
    }
}
