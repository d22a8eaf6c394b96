//! Exact engine: time-ordered propagation of the full composite system.
//!
//! Ground truth for every perturbative claim. The propagator steps the
//! composite Hamiltonian `H(t) = H_S (x) I + I (x) H_D - lambda g(t) A (x) X`
//! across the midpoint grid with one unitary factor per step, later times
//! composed on the left. Each factor comes from a Hermitian
//! eigendecomposition, so unitarity holds to roundoff regardless of grid
//! resolution; accuracy in the time dependence of `g` is bought with `n_t`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_exp, tensor_product, Operator};
use crate::model::Scenario;
use crate::tol::TOL;

/// Joint outcome distribution P(R, f), detector outcome indexing rows and
/// system outcome indexing columns, measure weights included.
#[derive(Debug, Clone)]
pub struct JointDistribution {
    det_labels: Vec<String>,
    det_values: Vec<f64>,
    sys_labels: Vec<String>,
    /// Row-major `[k * n_sys + j]`.
    p: Vec<f64>,
    clamped: usize,
}

impl JointDistribution {
    pub(crate) fn from_raw(
        det_labels: Vec<String>,
        det_values: Vec<f64>,
        sys_labels: Vec<String>,
        raw: Vec<f64>,
    ) -> Self {
        let mut clamped = 0;
        let p = raw
            .into_iter()
            .map(|v| {
                if (-TOL.clamp_floor..0.0).contains(&v) {
                    clamped += 1;
                    0.0
                } else {
                    v
                }
            })
            .collect();
        if clamped > 0 {
            log::debug!("clamped {clamped} roundoff-negative probability entries to zero");
        }
        Self {
            det_labels,
            det_values,
            sys_labels,
            p,
            clamped,
        }
    }

    pub fn n_det(&self) -> usize {
        self.det_labels.len()
    }

    pub fn n_sys(&self) -> usize {
        self.sys_labels.len()
    }

    pub fn prob(&self, k: usize, j: usize) -> f64 {
        self.p[k * self.n_sys() + j]
    }

    pub fn det_labels(&self) -> &[String] {
        &self.det_labels
    }

    pub fn det_values(&self) -> &[f64] {
        &self.det_values
    }

    pub fn sys_labels(&self) -> &[String] {
        &self.sys_labels
    }

    /// Number of roundoff-negative entries clamped to zero at construction.
    pub fn clamped_entries(&self) -> usize {
        self.clamped
    }

    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }

    pub fn min_entry(&self) -> f64 {
        self.p.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Postselection probability P(f) for system outcome `j`.
    pub fn sys_marginal(&self, j: usize) -> f64 {
        (0..self.n_det()).map(|k| self.prob(k, j)).sum()
    }

    pub fn det_marginal(&self, k: usize) -> f64 {
        (0..self.n_sys()).map(|j| self.prob(k, j)).sum()
    }

    pub fn sys_index(&self, label: &str) -> Result<usize> {
        self.sys_labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// Conditional readout distribution P(R_k | f_j); errors when P(f) is
    /// below `floor`.
    pub fn conditional(&self, j: usize, floor: f64) -> Result<Vec<f64>> {
        let pf = self.sys_marginal(j);
        if pf <= floor {
            return Err(Error::PostselectionFloor {
                label: self.sys_labels[j].clone(),
                value: pf,
                floor,
            });
        }
        Ok((0..self.n_det()).map(|k| self.prob(k, j) / pf).collect())
    }

    /// Conditional readout mean `sum_k value_k P(R_k | f_j)`.
    pub fn conditional_mean(&self, j: usize, floor: f64) -> Result<f64> {
        let cond = self.conditional(j, floor)?;
        Ok(cond
            .iter()
            .zip(&self.det_values)
            .map(|(p, v)| p * v)
            .sum())
    }
}

fn validated(s: &Scenario) -> Result<()> {
    let report = s.validate();
    if report.is_valid() {
        Ok(())
    } else {
        Err(Error::InvalidScenario(report))
    }
}

/// Exact-to-grid composite propagator over the full window.
///
/// Consecutive steps sharing the same coupling value are merged into one
/// exponential of the same Hamiltonian over the combined interval, which is
/// algebraically identical to the per-step product.
pub fn full_propagator(s: &Scenario) -> Result<Operator> {
    validated(s)?;
    let grid = s.grid();
    let lambda = s.lambda();
    let h0 = &tensor_product(&s.h_s, &Operator::identity(s.dim_d))
        + &tensor_product(&Operator::identity(s.dim_s), &s.h_d);
    let ax = tensor_product(&s.a_obs, &s.x_obs);

    let mut u = Operator::identity(s.composite_dim());
    let mut k = 0;
    while k < grid.g.len() {
        let g = grid.g[k];
        let mut run = 1;
        while k + run < grid.g.len() && grid.g[k + run] == g {
            run += 1;
        }
        let h = &h0 - &ax.scale_re(lambda * g);
        let step = hermitian_exp(&h, grid.dt * run as f64)?;
        u = &step * &u;
        k += run;
    }
    Ok(u)
}

/// Exact joint distribution:
/// `P[k,j] = w_j w_k Tr[(E_j (x) F_k) U (rho_i (x) rho_0) U^dag]`.
pub fn exact_joint(s: &Scenario) -> Result<JointDistribution> {
    let u = full_propagator(s)?;
    let rho = tensor_product(s.rho_i.operator(), s.rho_0.operator());
    let evolved = &(&u * &rho) * &u.adjoint();

    let n_sys = s.sys_povm.len();
    let n_det = s.det_povm.len();
    let mut raw = vec![0.0; n_det * n_sys];
    for (j, sys_out) in s.sys_povm.outcomes().iter().enumerate() {
        let reduced = reduce_system_effect(&evolved, &sys_out.effect, s.dim_s, s.dim_d);
        for (k, det_out) in s.det_povm.outcomes().iter().enumerate() {
            let tr = det_out.effect.product_trace(&reduced);
            raw[k * n_sys + j] = sys_out.weight * det_out.weight * tr.re;
        }
    }
    Ok(JointDistribution::from_raw(
        s.det_povm.outcomes().iter().map(|o| o.label.clone()).collect(),
        s.det_povm.outcomes().iter().map(|o| o.value).collect(),
        s.sys_povm.outcomes().iter().map(|o| o.label.clone()).collect(),
        raw,
    ))
}

/// Contracts the system effect against a composite operator:
/// `W[k,l] = sum_ij E[i,j] M[(j,k),(i,l)]`, so that
/// `Tr[(E (x) F) M] = Tr[F W]`.
pub(crate) fn reduce_system_effect(
    m: &Operator,
    e: &Operator,
    dim_s: usize,
    dim_d: usize,
) -> Operator {
    Operator::from_fn(dim_d, |k, l| {
        let mut acc = Complex64::ZERO;
        for i in 0..dim_s {
            for j in 0..dim_s {
                acc += e.get(i, j) * m.get(j * dim_d + k, i * dim_d + l);
            }
        }
        acc
    })
}

/// Exact conditional readout average for the system outcome labelled
/// `f_label`, with the default postselection floor.
pub fn exact_conditional_average(s: &Scenario, f_label: &str) -> Result<f64> {
    exact_conditional_average_with_floor(s, f_label, TOL.denominator_floor)
}

/// Same with an explicit floor, for callers knowingly probing
/// near-orthogonal postselection.
pub fn exact_conditional_average_with_floor(
    s: &Scenario,
    f_label: &str,
    floor: f64,
) -> Result<f64> {
    let joint = exact_joint(s)?;
    let j = joint.sys_index(f_label)?;
    joint.conditional_mean(j, floor)
}
