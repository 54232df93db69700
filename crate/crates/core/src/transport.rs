//! Exact Wasserstein distances between equal-size uniform clouds.
//!
//! For two clouds of `n` equally weighted atoms every optimal plan can be
//! taken to be a permutation, so `W_p` reduces to a linear assignment on the
//! matrix of `|x_i - y_j|^p`. The barycentric projection of such a plan gives
//! a supergradient of `W_2^2 / 2` in the barycentric sense.

use itertools::Itertools;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Serialize, Serializer};

use crate::assignment;
use crate::error::{Error, Result};
use crate::measures::{EmpiricalMeasure, PerturbationField};

/// Largest `n` accepted by [`optimal_plan_bruteforce`].
pub const BRUTE_FORCE_MAX: usize = 8;

/// Optimal pairing of `source` particle `i` with `target` particle
/// `assignment[i]`, together with the resulting `W_p`.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    source: EmpiricalMeasure,
    target: EmpiricalMeasure,
    assignment: Vec<usize>,
    cost: f64,
    p: f64,
    duals: Option<(Vec<f64>, Vec<f64>)>,
}

impl TransportPlan {
    pub fn source(&self) -> &EmpiricalMeasure {
        &self.source
    }

    pub fn target(&self) -> &EmpiricalMeasure {
        &self.target
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// `W_p(source, target)`.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Whether the optimal assignment is the only one within `slack` of the
    /// optimal total cost, relative to the largest pairing cost. `None` when
    /// the plan carries no dual certificate (brute-force plans).
    pub fn is_unique(&self, slack: f64) -> Option<bool> {
        let (u, v) = self.duals.as_ref()?;
        let n = self.assignment.len();
        let p = self.p;
        let entry = |i: usize, j: usize| pair_cost(self.source.point(i), self.target.point(j), p);
        let scale = (0..n).map(|i| entry(i, self.assignment[i])).fold(0.0, f64::max);
        let reduced = |i: usize, j: usize| entry(i, j) - u[i] - v[j];
        Some(!assignment::has_alternative(
            n,
            reduced,
            &self.assignment,
            slack * (1.0 + scale),
        ))
    }
}

impl Serialize for TransportPlan {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Dump<'a> {
            assignment: &'a [usize],
            cost: f64,
        }
        Dump { assignment: &self.assignment, cost: self.cost }.serialize(serializer)
    }
}

#[inline]
fn pair_cost(x: &[f64], y: &[f64], p: f64) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if p == 2.0 {
        sq
    } else {
        sq.sqrt().powf(p)
    }
}

fn check_pair(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Result<()> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::InvalidParameter(format!("transport order p must exceed 1, got {p}")));
    }
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), found: nu.dim() });
    }
    if mu.len() != nu.len() {
        return Err(Error::SizeMismatch { expected: mu.len(), found: nu.len() });
    }
    Ok(())
}

/// `(sum_i |x_i - y_{sigma(i)}|^p / n)^(1/p)` for a given pairing.
pub fn pairing_cost(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, assignment: &[usize], p: f64) -> f64 {
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| pair_cost(mu.point(i), nu.point(j), p))
        .sum();
    (total / assignment.len() as f64).powf(1.0 / p)
}

fn cost_matrix(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Vec<f64> {
    let n = mu.len();
    let mut cost = vec![0.0; n * n];
    let fill = |(i, row): (usize, &mut [f64])| {
        let x = mu.point(i);
        for (j, c) in row.iter_mut().enumerate() {
            *c = pair_cost(x, nu.point(j), p);
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        cost.par_chunks_mut(n).enumerate().for_each(fill);
    }
    #[cfg(not(feature = "parallel"))]
    cost.chunks_mut(n).enumerate().for_each(fill);
    cost
}

/// Exact `W_p` and an optimal pairing between two clouds of equal size.
pub fn wasserstein(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Result<TransportPlan> {
    check_pair(mu, nu, p)?;
    let n = mu.len();
    let cost = cost_matrix(mu, nu, p);
    let solved = assignment::solve(n, &cost);
    let value = pairing_cost(mu, nu, &solved.row_to_col, p);
    Ok(TransportPlan {
        source: mu.clone(),
        target: nu.clone(),
        assignment: solved.row_to_col,
        cost: value,
        p,
        duals: Some((solved.u, solved.v)),
    })
}

/// Exhaustive search over all `n!` pairings; ties go to the
/// lexicographically smallest permutation. Test oracle, `n <= 8`.
pub fn optimal_plan_bruteforce(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Result<TransportPlan> {
    check_pair(mu, nu, p)?;
    let n = mu.len();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::TooLarge { n, max: BRUTE_FORCE_MAX });
    }
    let cost = cost_matrix(mu, nu, p);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in (0..n).permutations(n) {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, perm));
        }
    }
    let (_, assignment) = best.expect("at least one permutation");
    let value = pairing_cost(mu, nu, &assignment, p);
    Ok(TransportPlan {
        source: mu.clone(),
        target: nu.clone(),
        assignment,
        cost: value,
        p,
        duals: None,
    })
}

/// Per-particle covector `gamma(x_i)` on the measure where it was taken.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupergradientField {
    dim: usize,
    values: Vec<f64>,
}

impl SupergradientField {
    pub fn from_flat(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 {
            return Err(Error::InvalidParameter("supergradient buffer has the wrong shape".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: pos / dim });
        }
        Ok(Self { dim, values })
    }

    pub fn zeros(dim: usize, n: usize) -> Self {
        Self { dim, values: vec![0.0; dim * n] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    /// `||gamma||_{L_2(m)}`.
    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() / self.len() as f64
    }

    /// `<gamma, b>_{L_2(m)} = (1/n) sum_i gamma(x_i) . b(x_i)`.
    pub fn pairing(&self, b: &PerturbationField) -> Result<f64> {
        if b.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: b.dim() });
        }
        if b.len() != self.len() {
            return Err(Error::SizeMismatch { expected: self.len(), found: b.len() });
        }
        let dot: f64 = self.values.iter().zip(b.as_flat()).map(|(g, v)| g * v).sum();
        Ok(dot / self.len() as f64)
    }

    pub(crate) fn check_matches(&self, m: &EmpiricalMeasure) -> Result<()> {
        if self.dim != m.dim() {
            return Err(Error::DimensionMismatch { expected: m.dim(), found: self.dim });
        }
        if self.len() != m.len() {
            return Err(Error::SizeMismatch { expected: m.len(), found: self.len() });
        }
        Ok(())
    }
}

/// Barycentric projection `gamma(x) = x - x_hat` of a `W_2`-optimal plan from
/// `m_hat` (source) to `m` (target), indexed by the particles of `m`.
pub fn barycentric_projection(plan: &TransportPlan) -> Result<SupergradientField> {
    if plan.p != 2.0 {
        return Err(Error::InvalidParameter(format!(
            "barycentric projection requires a W_2 plan, got p = {}",
            plan.p
        )));
    }
    let dim = plan.target.dim();
    let mut values = vec![0.0; plan.target.as_flat().len()];
    for (i, &j) in plan.assignment.iter().enumerate() {
        let x_hat = plan.source.point(i);
        let x = plan.target.point(j);
        for ((g, a), b) in values[j * dim..(j + 1) * dim].iter_mut().zip(x).zip(x_hat) {
            *g = a - b;
        }
    }
    Ok(SupergradientField { dim, values })
}

fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let scale = 1.0 + m.amax();
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::InvalidParameter(format!("{what} is not symmetric (asymmetry {asym:e})")));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    if min < -1e-12 * scale {
        return Err(Error::InvalidParameter(format!("{what} is indefinite (eigenvalue {min:e})")));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Closed-form `W_2` between `N(mean1, cov1)` and `N(mean2, cov2)`.
pub fn gaussian_w2(mean1: &[f64], cov1: &DMatrix<f64>, mean2: &[f64], cov2: &DMatrix<f64>) -> Result<f64> {
    let d = mean1.len();
    if mean2.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: mean2.len() });
    }
    for cov in [cov1, cov2] {
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, found: cov.nrows().max(cov.ncols()) });
        }
    }
    let root2 = psd_sqrt(cov2, "cov2")?;
    psd_sqrt(cov1, "cov1")?;
    let inner = &root2 * cov1 * &root2;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = psd_sqrt(&inner, "cross covariance")?;
    let shift: f64 = mean1.iter().zip(mean2).map(|(a, b)| (a - b) * (a - b)).sum();
    let bures = cov1.trace() + cov2.trace() - 2.0 * cross.trace();
    Ok((shift + bures).max(0.0).sqrt())
}
