//! Dense complex matrix kernel.
//!
//! Everything downstream (states, POVMs, propagators, perturbative traces)
//! is built on [`Operator`]: a dense square complex matrix in row-major
//! layout. Operations are value-semantic and thread-safe. Hermitian
//! eigenproblems are delegated to nalgebra; tensor products, partial traces
//! and unitary exponentials are implemented here.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tol::TOL;

/// Dense square complex matrix.
///
/// Entries are stored row-major: element `(i, j)` lives at `entries[i * dim + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    dim: usize,
    entries: Vec<Complex64>,
}

impl Operator {
    /// Builds an operator from row-major entries; `entries.len()` must be `dim * dim`.
    pub fn new(dim: usize, entries: Vec<Complex64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                context: "Operator::new entries",
                expected: dim * dim,
                actual: entries.len(),
            });
        }
        Ok(Self { dim, entries })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: vec![Complex64::ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.entries[i * dim + i] = Complex64::ONE;
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut entries = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                entries.push(f(i, j));
            }
        }
        Self { dim, entries }
    }

    /// Diagonal matrix from real values.
    pub fn diagonal(values: &[f64]) -> Self {
        let dim = values.len();
        Self::from_fn(dim, |i, j| {
            if i == j {
                Complex64::new(values[i], 0.0)
            } else {
                Complex64::ZERO
            }
        })
    }

    /// Rank-one projector |psi><psi| from a (not necessarily normalized) vector.
    pub fn projector(psi: &[Complex64]) -> Self {
        let norm2: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
        let dim = psi.len();
        Self::from_fn(dim, |i, j| psi[i] * psi[j].conj() / norm2)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.entries[i * self.dim + j] = v;
    }

    /// Row-major entry slice.
    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self.get(j, i).conj())
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|e| e * c).collect(),
        }
    }

    pub fn scale_re(&self, c: f64) -> Self {
        self.scale(Complex64::new(c, 0.0))
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Max-norm: largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim, "max_abs_diff dimension mismatch");
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Tr(self * other) in O(dim^2), without forming the product.
    pub fn product_trace(&self, other: &Self) -> Complex64 {
        assert_eq!(self.dim, other.dim, "product_trace dimension mismatch");
        let n = self.dim;
        let mut acc = Complex64::ZERO;
        for a in 0..n {
            for b in 0..n {
                acc += self.entries[a * n + b] * other.entries[b * n + a];
            }
        }
        acc
    }

    /// u^dagger * self * u.
    pub fn conjugated_by(&self, u: &Self) -> Self {
        &u.adjoint() * &(self * u)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() < tol
    }

    /// Max-norm of (self - self^dagger).
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    /// Hermitian within `tol` and all eigenvalues >= -tol.
    pub fn is_psd(&self, tol: f64) -> bool {
        if !self.is_hermitian(tol) {
            return false;
        }
        match self.hermitian_eigen() {
            Ok((vals, _)) => vals.iter().all(|&v| v >= -tol),
            Err(_) => false,
        }
    }

    /// ||U^dagger U - I||_max < tol.
    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_defect() < tol
    }

    pub fn unitarity_defect(&self) -> f64 {
        let prod = &self.adjoint() * self;
        prod.max_abs_diff(&Operator::identity(self.dim))
    }

    /// Eigendecomposition of a Hermitian operator.
    ///
    /// Returns eigenvalues in ascending order and the matrix whose columns
    /// are the corresponding orthonormal eigenvectors. The ordering is
    /// deterministic so seeded constructions are reproducible.
    pub fn hermitian_eigen(&self) -> Result<(Vec<f64>, Operator)> {
        let defect = self.hermiticity_defect();
        if defect >= TOL.structural {
            return Err(Error::NotHermitian {
                deviation: defect,
                tol: TOL.structural,
            });
        }
        let n = self.dim;
        let na = self.to_nalgebra();
        // symmetrize to kill roundoff-level defects before factorizing
        let h = (&na + na.adjoint()).scale(0.5);
        let eig = h.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let vals: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vecs = Operator::from_fn(n, |i, j| eig.eigenvectors[(i, order[j])]);
        Ok((vals, vecs))
    }

    fn to_nalgebra(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }
}

impl std::ops::Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim, "operator add dimension mismatch");
        Operator {
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .zip(&rhs.entries)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl std::ops::Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim, "operator sub dimension mismatch");
        Operator {
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .zip(&rhs.entries)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

/// Matrix product, naive i-k-j loop over row-major storage.
impl std::ops::Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim, "operator mul dimension mismatch");
        let n = self.dim;
        let mut out = vec![Complex64::ZERO; n * n];
        for i in 0..n {
            for k in 0..n {
                let aik = self.entries[i * n + k];
                if aik == Complex64::ZERO {
                    continue;
                }
                let row = &rhs.entries[k * n..(k + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for (d, r) in dst.iter_mut().zip(row) {
                    *d += aik * r;
                }
            }
        }
        Operator {
            dim: n,
            entries: out,
        }
    }
}

/// Kronecker product: entry ((i,k),(j,l)) = a[i,j] * b[k,l] with composite
/// row index i * b.dim + k.
pub fn tensor_product(a: &Operator, b: &Operator) -> Operator {
    let (da, db) = (a.dim, b.dim);
    let n = da * db;
    let mut out = vec![Complex64::ZERO; n * n];
    for i in 0..da {
        for j in 0..da {
            let aij = a.entries[i * da + j];
            if aij == Complex64::ZERO {
                continue;
            }
            for k in 0..db {
                for l in 0..db {
                    out[(i * db + k) * n + (j * db + l)] = aij * b.entries[k * db + l];
                }
            }
        }
    }
    Operator {
        dim: n,
        entries: out,
    }
}

fn check_composite(m: &Operator, dim_s: usize, dim_d: usize) -> Result<()> {
    if m.dim != dim_s * dim_d {
        return Err(Error::DimensionMismatch {
            context: "partial trace",
            expected: dim_s * dim_d,
            actual: m.dim,
        });
    }
    Ok(())
}

/// Trace over the system factor: (dim_s * dim_d) -> dim_d.
pub fn partial_trace_system(m: &Operator, dim_s: usize, dim_d: usize) -> Result<Operator> {
    check_composite(m, dim_s, dim_d)?;
    let n = m.dim;
    Ok(Operator::from_fn(dim_d, |k, l| {
        (0..dim_s)
            .map(|i| m.entries[(i * dim_d + k) * n + (i * dim_d + l)])
            .sum()
    }))
}

/// Trace over the detector factor: (dim_s * dim_d) -> dim_s.
pub fn partial_trace_detector(m: &Operator, dim_s: usize, dim_d: usize) -> Result<Operator> {
    check_composite(m, dim_s, dim_d)?;
    let n = m.dim;
    Ok(Operator::from_fn(dim_s, |i, j| {
        (0..dim_d)
            .map(|k| m.entries[(i * dim_d + k) * n + (j * dim_d + k)])
            .sum()
    }))
}

/// exp(-i s h) for Hermitian h, via eigendecomposition.
///
/// Unitary to roundoff by construction: the eigenbasis is orthonormal and
/// the spectrum is mapped onto the unit circle.
pub fn hermitian_exp(h: &Operator, s: f64) -> Result<Operator> {
    let (vals, vecs) = h.hermitian_eigen()?;
    let n = h.dim();
    // V * diag(e^{-i s w}) * V^dagger
    let mut scaled = vecs.clone();
    for (j, w) in vals.iter().enumerate() {
        let phase = Complex64::from_polar(1.0, -s * w);
        for i in 0..n {
            let v = scaled.get(i, j) * phase;
            scaled.set(i, j, v);
        }
    }
    Ok(&scaled * &vecs.adjoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{rand_hermitian, rand_operator};
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_tensor_identity() {
        let t = tensor_product(&Operator::identity(2), &Operator::identity(3));
        assert_eq!(t.dim(), 6);
        assert_abs_diff_eq!(t.max_abs_diff(&Operator::identity(6)), 0.0, epsilon = 0.0);
    }

    #[test]
    fn tensor_dimension_law() {
        let a = rand_operator(2, 11);
        let b = rand_operator(3, 12);
        assert_eq!(tensor_product(&a, &b).dim(), 6);
    }

    #[test]
    fn tensor_trace_multiplicative() {
        // oracle: direct entrywise trace of the Kronecker product
        let a = rand_operator(3, 21);
        let b = rand_operator(3, 22);
        let t = tensor_product(&a, &b);
        let mut direct = Complex64::ZERO;
        for i in 0..3 {
            for k in 0..3 {
                direct += a.get(i, i) * b.get(k, k);
            }
        }
        assert!((t.trace() - direct).norm() < 1e-13);
        assert!((t.trace() - a.trace() * b.trace()).norm() < 1e-13);
    }

    #[test]
    fn tensor_mixed_product_identity() {
        let (a, b) = (rand_operator(2, 1), rand_operator(3, 2));
        let (c, d) = (rand_operator(2, 3), rand_operator(3, 4));
        let lhs = &tensor_product(&a, &b) * &tensor_product(&c, &d);
        let rhs = tensor_product(&(&a * &c), &(&b * &d));
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn partial_trace_of_product_state() {
        let rho_s = Operator::projector(&[Complex64::ONE, Complex64::ZERO]);
        let rho_d = Operator::from_fn(3, |i, j| {
            if i == j {
                Complex64::new([0.5, 0.3, 0.2][i], 0.0)
            } else {
                Complex64::ZERO
            }
        });
        let m = tensor_product(&rho_s, &rho_d);
        let back = partial_trace_system(&m, 2, 3).unwrap();
        assert!(back.max_abs_diff(&rho_d) < 1e-14);
        let front = partial_trace_detector(&m, 2, 3).unwrap();
        assert!(front.max_abs_diff(&rho_s) < 1e-14);
    }

    #[test]
    fn partial_trace_of_identity() {
        let m = Operator::identity(6);
        let t = partial_trace_system(&m, 2, 3).unwrap();
        assert!(t.max_abs_diff(&Operator::identity(3).scale_re(2.0)) < 1e-14);
    }

    #[test]
    fn partial_trace_preserves_trace() {
        let m = rand_operator(6, 33);
        let t = partial_trace_system(&m, 2, 3).unwrap();
        assert!((t.trace() - m.trace()).norm() < 1e-12);
        let t = partial_trace_detector(&m, 2, 3).unwrap();
        assert!((t.trace() - m.trace()).norm() < 1e-12);
    }

    #[test]
    fn partial_trace_dimension_mismatch() {
        let m = Operator::identity(5);
        assert!(partial_trace_system(&m, 2, 3).is_err());
    }

    #[test]
    fn exp_at_zero_time_is_identity() {
        let h = rand_hermitian(4, 7);
        let u = hermitian_exp(&h, 0.0).unwrap();
        assert!(u.max_abs_diff(&Operator::identity(4)) < 1e-14);
    }

    #[test]
    fn exp_of_diagonal() {
        let h = Operator::diagonal(&[0.7, -1.3]);
        let s = 0.9;
        let u = hermitian_exp(&h, s).unwrap();
        let expect = Operator::from_fn(2, |i, j| {
            if i == j {
                Complex64::from_polar(1.0, -s * [0.7, -1.3][i])
            } else {
                Complex64::ZERO
            }
        });
        assert!(u.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn exp_group_inverse() {
        let h = rand_hermitian(5, 91);
        let u = hermitian_exp(&h, 1.7).unwrap();
        let v = hermitian_exp(&h, -1.7).unwrap();
        assert!((&u * &v).max_abs_diff(&Operator::identity(5)) < 1e-12);
    }

    #[test]
    fn exp_is_unitary() {
        for seed in 0..5u64 {
            let h = rand_hermitian(6, 100 + seed);
            let u = hermitian_exp(&h, 2.3).unwrap();
            assert!(u.unitarity_defect() < 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn exp_rejects_non_hermitian() {
        let m = rand_operator(3, 5);
        assert!(matches!(
            hermitian_exp(&m, 1.0),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn eigen_reconstructs() {
        let h = rand_hermitian(6, 17);
        let (vals, vecs) = h.hermitian_eigen().unwrap();
        let rec = &(&vecs * &Operator::diagonal(&vals)) * &vecs.adjoint();
        assert!(rec.max_abs_diff(&h) < 1e-12);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn product_trace_matches_full_product() {
        let a = rand_operator(4, 41);
        let b = rand_operator(4, 42);
        let full = (&a * &b).trace();
        assert!((a.product_trace(&b) - full).norm() < 1e-12);
    }
}
