//! Ready-made systems with closed-form structure: a quadratic gradient flow
//! contracting to `delta_0`, and the mean-field pendulum chain whose Gibbs
//! measure is an equilibrium.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::VectorFieldSpec;
use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;

/// Interaction energy `v(x, m) = |x|^2 / 2 + (lambda / 2) int |x - y|^2 m(dy)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientFlowSystem {
    pub lambda: f64,
    pub dim: usize,
}

impl GradientFlowSystem {
    pub fn new(lambda: f64, dim: usize) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("interaction strength must be >= 0, got {lambda}")));
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        Ok(Self { lambda, dim })
    }

    /// `v(x, m)`.
    pub fn potential(&self, x: &[f64], m: &EmpiricalMeasure) -> f64 {
        let own = 0.5 * norm_sq(x);
        let pair: f64 = m.points().map(|y| dist_sq(x, y)).sum::<f64>() / m.len() as f64;
        own + 0.5 * self.lambda * pair
    }

    /// `grad_x v(x, m) = x + lambda (x - mean(m))`.
    pub fn grad_x(&self, x: &[f64], m: &EmpiricalMeasure, out: &mut [f64]) {
        let mean = m.mean();
        for ((o, xi), yi) in out.iter_mut().zip(x).zip(&mean) {
            *o = xi + self.lambda * (xi - yi);
        }
    }

    /// Intrinsic derivative of `m -> v(y, m)` evaluated at `x`:
    /// `grad_m v(y, m, x) = lambda (x - y)`.
    pub fn grad_m(&self, y: &[f64], _m: &EmpiricalMeasure, x: &[f64], out: &mut [f64]) {
        for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
            *o = self.lambda * (xi - yi);
        }
    }
}

/// `n_pend` pendulums in phase space `R^(2 n_pend)` with mean-field coupling
/// `B = -kappa I` and Gibbs temperature `1 / beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumSystem {
    pub n_pend: usize,
    pub kappa: f64,
    pub beta: f64,
}

impl PendulumSystem {
    pub fn new(n_pend: usize, kappa: f64, beta: f64) -> Result<Self> {
        if n_pend == 0 {
            return Err(Error::InvalidParameter("need at least one pendulum".into()));
        }
        if !kappa.is_finite() {
            return Err(Error::InvalidParameter("kappa must be finite".into()));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
        }
        Ok(Self { n_pend, kappa, beta })
    }

    pub fn dim(&self) -> usize {
        2 * self.n_pend
    }

    /// `[[0, I], [-I, 0]]`.
    pub fn a(&self) -> DMatrix<f64> {
        let n = self.n_pend;
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            a[(i, n + i)] = 1.0;
            a[(n + i, i)] = -1.0;
        }
        a
    }

    pub fn b(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) * -self.kappa
    }

    /// `H(x) = |x_1|^2 / 2 + |x_2|^2 / 2`.
    pub fn hamiltonian(&self, x: &[f64]) -> f64 {
        0.5 * norm_sq(x)
    }
}

/// `f(x, m) = -grad_m phi(m, x) = -(1 + 2 lambda) x + 2 lambda mean(m)`.
pub fn gradient_flow_field(sys: &GradientFlowSystem) -> VectorFieldSpec {
    VectorFieldSpec::GradientFlow(*sys)
}

/// `f(x, m) = A x + B mean(m)` with the pendulum block `A` and `B = -kappa I`.
pub fn pendulum_field(sys: &PendulumSystem) -> VectorFieldSpec {
    VectorFieldSpec::Linear { a: sys.a(), b: sys.b() }
}

/// `n` draws from the Gibbs measure `N(0, I / beta)`, shifted to have mean
/// exactly zero. Deterministic for a given seed.
pub fn gibbs_cloud(sys: &PendulumSystem, n: usize, seed: u64) -> Result<EmpiricalMeasure> {
    if n == 0 {
        return Err(Error::InvalidParameter("cloud size must be >= 1".into()));
    }
    let d = sys.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = sys.beta.recip().sqrt();
    let mut coords: Vec<f64> = (0..n * d)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    center(d, &mut coords);
    EmpiricalMeasure::from_flat(d, coords)
}

/// `n` i.i.d. standard normal points in `R^d`, not centered.
pub fn standard_normal_cloud(dim: usize, n: usize, seed: u64) -> Result<EmpiricalMeasure> {
    if n == 0 || dim == 0 {
        return Err(Error::InvalidParameter("cloud size and dimension must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = (0..n * dim)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    EmpiricalMeasure::from_flat(dim, coords)
}

fn center(dim: usize, coords: &mut [f64]) {
    let mean = crate::measures::mean_of(dim, coords);
    for p in coords.chunks_exact_mut(dim) {
        for (v, m) in p.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn dist_sq(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}
