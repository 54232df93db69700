//! Quadratic-form stability test for linear fields `f(x, m) = A x + B mean(m)`.
//!
//! For a tangent field `xi` at `m_hat` the form is
//! `q(xi, xi) = int xi^T A xi dm_hat + (int xi dm_hat)^T B (int xi dm_hat)`,
//! and the equilibrium is stable when `q <= 0` on the whole tangent space.
//! Here the tangent space is replaced by the span of finitely many polynomial
//! gradients, so a pass is evidence over that span only.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::basis::{monomial_gradients, TestGradient};
use crate::dynamics::spectral_norm;
use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;

/// Gradients of the monomials `x_j` (degree 1) and additionally `x_j x_l`,
/// `j <= l` (degree 2).
pub fn tangent_basis(dim: usize, degree: usize) -> Result<Vec<TestGradient>> {
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be >= 1".into()));
    }
    if !(1..=2).contains(&degree) {
        return Err(Error::InvalidParameter(format!("unsupported basis degree {degree}; use 1 or 2")));
    }
    Ok(monomial_gradients(dim, degree))
}

#[derive(Debug, Clone, Serialize)]
pub struct QuadraticFormReport {
    pub basis: Vec<String>,
    /// Symmetrized Gram matrix `Q_jl = (q(xi_j, xi_l) + q(xi_l, xi_j)) / 2`.
    pub gram: Vec<Vec<f64>>,
    /// Contribution of `A` to `Q`.
    pub a_part: Vec<Vec<f64>>,
    /// Contribution of `B` to `Q`.
    pub b_part: Vec<Vec<f64>>,
    /// `q(xi_j, xi_j)` evaluated directly from the unsymmetrized form.
    pub diagonal: Vec<f64>,
    /// Ascending eigenvalues of `Q`.
    pub eigenvalues: Vec<f64>,
    pub max_eigenvalue: f64,
    pub tol: f64,
    pub passed: bool,
    pub scope: &'static str,
}

const SCOPE: &str = "evidence over the span of the listed gradient fields, not a certificate over the full tangent space";

/// Default verdict tolerance `1e-9 (1 + |A| + |B|)`.
pub fn default_tolerance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    1e-9 * (1.0 + spectral_norm(a) + spectral_norm(b))
}

fn check_square(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<usize> {
    let d = a.nrows();
    if d == 0 || a.ncols() != d {
        return Err(Error::InvalidParameter("A must be a non-empty square matrix".into()));
    }
    if b.nrows() != d || b.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, found: b.nrows().max(b.ncols()) });
    }
    Ok(d)
}

fn bilinear(m: &DMatrix<f64>, u: &[f64], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (r, ur) in u.iter().enumerate() {
        for (c, vc) in v.iter().enumerate() {
            acc += ur * m[(r, c)] * vc;
        }
    }
    acc
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

/// Gram matrix of the symmetrized form over `basis`, with particle averages
/// over `m_hat`. `tol = None` uses [`default_tolerance`].
pub fn quadratic_form(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    m_hat: &EmpiricalMeasure,
    basis: &[TestGradient],
    tol: Option<f64>,
) -> Result<QuadraticFormReport> {
    let d = check_square(a, b)?;
    if m_hat.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, found: m_hat.dim() });
    }
    if basis.is_empty() {
        return Err(Error::InvalidParameter("basis is empty".into()));
    }
    for g in basis {
        if let Some(j) = g.max_index() {
            if j >= d {
                return Err(Error::DimensionMismatch { expected: d, found: j + 1 });
            }
        }
    }
    let n = m_hat.len();
    let k = basis.len();

    // xi_j evaluated at every particle, and its mean.
    let samples: Vec<Vec<f64>> = basis
        .iter()
        .map(|g| {
            let mut vals = vec![0.0; n * d];
            for (x, out) in m_hat.points().zip(vals.chunks_exact_mut(d)) {
                g.eval(x, out);
            }
            vals
        })
        .collect();
    let means: Vec<Vec<f64>> = samples.iter().map(|v| crate::measures::mean_of(d, v)).collect();

    let a_sym = (a + a.transpose()) * 0.5;
    let b_sym = (b + b.transpose()) * 0.5;

    let mut a_part = DMatrix::zeros(k, k);
    let mut b_part = DMatrix::zeros(k, k);
    for j in 0..k {
        for l in j..k {
            let pointwise: f64 = samples[j]
                .chunks_exact(d)
                .zip(samples[l].chunks_exact(d))
                .map(|(u, v)| bilinear(&a_sym, u, v))
                .sum::<f64>()
                / n as f64;
            let coupled = bilinear(&b_sym, &means[j], &means[l]);
            a_part[(j, l)] = pointwise;
            a_part[(l, j)] = pointwise;
            b_part[(j, l)] = coupled;
            b_part[(l, j)] = coupled;
        }
    }
    let gram = &a_part + &b_part;

    let diagonal: Vec<f64> = (0..k)
        .map(|j| {
            let pointwise: f64 = samples[j]
                .chunks_exact(d)
                .map(|u| bilinear(a, u, u))
                .sum::<f64>()
                / n as f64;
            pointwise + bilinear(b, &means[j], &means[j])
        })
        .collect();

    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(gram.clone()).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let max_eigenvalue = *eigenvalues.last().expect("non-empty basis");
    let tol = tol.unwrap_or_else(|| default_tolerance(a, b));

    Ok(QuadraticFormReport {
        basis: basis.iter().map(TestGradient::label).collect(),
        gram: rows(&gram),
        a_part: rows(&a_part),
        b_part: rows(&b_part),
        diagonal,
        eigenvalues,
        max_eigenvalue,
        tol,
        passed: max_eigenvalue <= tol,
        scope: SCOPE,
    })
}

/// Spectrum of `A + B`, which drives the cloud mean: `mu' = (A + B) mu`.
#[derive(Debug, Clone, Serialize)]
pub struct MeanDynamics {
    pub matrix: Vec<Vec<f64>>,
    /// `[re, im]` pairs.
    pub eigenvalues: Vec<[f64; 2]>,
    pub max_real_part: f64,
    /// All eigenvalues strictly in the left half-plane.
    pub hurwitz: bool,
}

pub fn mean_dynamics_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<MeanDynamics> {
    check_square(a, b)?;
    let sum = a + b;
    let mut eigenvalues: Vec<[f64; 2]> = sum
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| [z.re, z.im])
        .collect();
    eigenvalues.sort_by(|x, y| x[0].total_cmp(&y[0]).then(x[1].total_cmp(&y[1])));
    let max_real_part = eigenvalues.iter().map(|z| z[0]).fold(f64::NEG_INFINITY, f64::max);
    Ok(MeanDynamics {
        matrix: rows(&sum),
        eigenvalues,
        max_real_part,
        hurwitz: max_real_part < 0.0,
    })
}
