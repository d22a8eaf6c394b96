//! Seeded random operators and states.
//!
//! All randomized machinery in this crate (the `random_seeded` preset, the
//! property campaigns, the negativity search) draws from these generators
//! with a [`ChaCha8Rng`] so every object is reproducible from one integer.
//! The parametrization: Haar-like unitaries from QR of complex Gaussian
//! matrices, Hermitian operators and states as unitary conjugations of
//! random diagonals.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::Operator;

pub type SeedRng = ChaCha8Rng;

/// Standard-normal sample (Box-Muller).
fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn gaussian_matrix(dim: usize, rng: &mut impl Rng) -> Operator {
    Operator::from_fn(dim, |_, _| Complex64::new(normal(rng), normal(rng)))
}

/// Haar-like random unitary: QR of a complex Gaussian matrix with the phases
/// of R's diagonal folded into Q.
pub fn unitary(dim: usize, rng: &mut impl Rng) -> Operator {
    let g = gaussian_matrix(dim, rng);
    let na = DMatrix::from_fn(dim, dim, |i, j| g.get(i, j));
    let qr = na.qr();
    let r = qr.r();
    let q = qr.q();
    Operator::from_fn(dim, |i, j| {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            Complex64::ONE
        };
        q[(i, j)] * phase
    })
}

/// Random Hermitian operator with eigenvalues drawn uniformly from
/// [-1, 1], conjugated by a Haar-like unitary (spectral radius <= 1).
pub fn hermitian(dim: usize, rng: &mut impl Rng) -> Operator {
    let vals: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let u = unitary(dim, rng);
    Operator::diagonal(&vals).conjugated_by(&u)
}

/// Random density operator: unitary conjugation of a random probability
/// diagonal (exponential weights, normalized).
pub fn density(dim: usize, rng: &mut impl Rng) -> Operator {
    let mut probs: Vec<f64> = (0..dim).map(|_| -rng.gen_range(f64::MIN_POSITIVE..1.0f64).ln()).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    let u = unitary(dim, rng);
    Operator::diagonal(&probs).conjugated_by(&u)
}

/// Arbitrary (non-Hermitian) random operator with Gaussian entries.
pub fn operator(dim: usize, rng: &mut impl Rng) -> Operator {
    gaussian_matrix(dim, rng)
}
