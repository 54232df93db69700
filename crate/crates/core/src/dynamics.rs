//! Particle solver for the non-local continuity equation
//! `d/dt m_t + div(f(x, m_t) m_t) = 0`.
//!
//! The solution is represented in the Kantorovich sense: each particle follows
//! `x' = f(x, m_t)` where `m_t` is the current cloud, and the snapshot at time
//! `t` is the push-forward of `m_0` under the discrete flow. Particle identity
//! is preserved across snapshots.
//!
//! RK4 re-evaluates the interaction term (the cloud mean for linear and
//! gradient-flow fields) at every stage, so the scheme is RK4 applied to the
//! coupled `n * d` system.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::TestGradient;
use crate::error::{Error, Result};
use crate::measures::{fmt_f64, mean_of, EmpiricalMeasure};
use crate::systems::GradientFlowSystem;
use crate::transport::wasserstein;

/// Coordinates beyond this magnitude abort integration.
pub const BLOW_UP_LIMIT: f64 = 1e12;

#[cfg(feature = "parallel")]
const PARALLEL_THRESHOLD: usize = 4096;

type CustomFn = dyn Fn(&[f64], &EmpiricalMeasure) -> std::result::Result<Vec<f64>, String> + Send + Sync;

/// Host-provided `f(x, m)`.
#[derive(Clone)]
pub struct CustomField {
    pub label: String,
    pub dim: usize,
    eval: Arc<CustomFn>,
}

impl CustomField {
    pub fn new<F>(label: impl Into<String>, dim: usize, eval: F) -> Self
    where
        F: Fn(&[f64], &EmpiricalMeasure) -> std::result::Result<Vec<f64>, String> + Send + Sync + 'static,
    {
        Self { label: label.into(), dim, eval: Arc::new(eval) }
    }
}

impl fmt::Debug for CustomField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomField").field("label", &self.label).field("dim", &self.dim).finish()
    }
}

/// The velocity field `f(x, m)`.
#[derive(Debug, Clone)]
pub enum VectorFieldSpec {
    /// `f(x, m) = A x + B mean(m)`.
    Linear { a: DMatrix<f64>, b: DMatrix<f64> },
    /// `f(x, m) = -grad_m phi(m, x)` for `phi(m) = int v(x, m) m(dx)`.
    GradientFlow(GradientFlowSystem),
    Custom(CustomField),
}

impl VectorFieldSpec {
    pub fn linear(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let d = a.nrows();
        if d == 0 || a.ncols() != d {
            return Err(Error::InvalidParameter("A must be a non-empty square matrix".into()));
        }
        if b.nrows() != d || b.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, found: b.nrows().max(b.ncols()) });
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("A and B must be finite".into()));
        }
        Ok(VectorFieldSpec::Linear { a, b })
    }

    pub fn dim(&self) -> usize {
        match self {
            VectorFieldSpec::Linear { a, .. } => a.nrows(),
            VectorFieldSpec::GradientFlow(sys) => sys.dim,
            VectorFieldSpec::Custom(c) => c.dim,
        }
    }

    /// Sublinear growth constant `C1` with `|f(x,m)| <= C1 (1 + |x| + sigma_p(m))`.
    /// Unknown for custom fields.
    pub fn growth_constant(&self) -> Option<f64> {
        match self {
            VectorFieldSpec::Linear { a, b } => Some(spectral_norm(a).max(spectral_norm(b))),
            VectorFieldSpec::GradientFlow(sys) => Some(1.0 + 2.0 * sys.lambda),
            VectorFieldSpec::Custom(_) => None,
        }
    }

    /// `|A| + |B|` for linear fields; the analogous coefficient sum for the
    /// gradient-flow family; zero for custom fields.
    pub fn coefficient_scale(&self) -> f64 {
        match self {
            VectorFieldSpec::Linear { a, b } => spectral_norm(a) + spectral_norm(b),
            VectorFieldSpec::GradientFlow(sys) => 1.0 + 4.0 * sys.lambda,
            VectorFieldSpec::Custom(_) => 0.0,
        }
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: dim });
        }
        Ok(())
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Field evaluation with the interaction term precomputed for one cloud.
enum Prepared<'a> {
    Affine { a: &'a DMatrix<f64>, shift: Vec<f64> },
    Contraction { rate: f64, shift: Vec<f64> },
    Custom { field: &'a CustomField, cloud: EmpiricalMeasure },
}

impl<'a> Prepared<'a> {
    fn new(spec: &'a VectorFieldSpec, dim: usize, coords: &[f64]) -> Self {
        match spec {
            VectorFieldSpec::Linear { a, b } => {
                let mean = DVector::from_vec(mean_of(dim, coords));
                Prepared::Affine { a, shift: (b * mean).as_slice().to_vec() }
            }
            VectorFieldSpec::GradientFlow(sys) => {
                let mean = mean_of(dim, coords);
                Prepared::Contraction {
                    rate: 1.0 + 2.0 * sys.lambda,
                    shift: mean.iter().map(|v| 2.0 * sys.lambda * v).collect(),
                }
            }
            VectorFieldSpec::Custom(field) => Prepared::Custom {
                field,
                cloud: EmpiricalMeasure::from_flat_unchecked(dim, coords.to_vec()),
            },
        }
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            Prepared::Affine { a, shift } => {
                let d = x.len();
                for (r, o) in out.iter_mut().enumerate() {
                    let mut acc = shift[r];
                    for c in 0..d {
                        acc += a[(r, c)] * x[c];
                    }
                    *o = acc;
                }
            }
            Prepared::Contraction { rate, shift } => {
                for ((o, v), s) in out.iter_mut().zip(x).zip(shift) {
                    *o = -rate * v + s;
                }
            }
            Prepared::Custom { field, cloud } => {
                let v = (field.eval)(x, cloud).map_err(Error::Callback)?;
                if v.len() != out.len() {
                    return Err(Error::Callback(format!(
                        "field returned {} components, expected {}",
                        v.len(),
                        out.len()
                    )));
                }
                out.copy_from_slice(&v);
            }
        }
        Ok(())
    }

    fn eval_all(&self, dim: usize, coords: &[f64], out: &mut [f64]) -> Result<()> {
        #[cfg(feature = "parallel")]
        if coords.len() / dim >= PARALLEL_THRESHOLD {
            use rayon::prelude::*;
            return out
                .par_chunks_mut(dim)
                .zip(coords.par_chunks(dim))
                .try_for_each(|(o, x)| self.eval(x, o));
        }
        for (o, x) in out.chunks_mut(dim).zip(coords.chunks(dim)) {
            self.eval(x, o)?;
        }
        Ok(())
    }
}

/// `f(x, m)` at a single point.
pub fn evaluate_field(spec: &VectorFieldSpec, x: &[f64], m: &EmpiricalMeasure) -> Result<Vec<f64>> {
    spec.check_dim(m.dim())?;
    if x.len() != m.dim() {
        return Err(Error::DimensionMismatch { expected: m.dim(), found: x.len() });
    }
    let mut out = vec![0.0; x.len()];
    Prepared::new(spec, m.dim(), m.as_flat()).eval(x, &mut out)?;
    Ok(out)
}

/// `f(x_i, m)` for every particle of `m`, row-major.
pub fn evaluate_on_cloud(spec: &VectorFieldSpec, m: &EmpiricalMeasure) -> Result<Vec<f64>> {
    spec.check_dim(m.dim())?;
    let mut out = vec![0.0; m.as_flat().len()];
    Prepared::new(spec, m.dim(), m.as_flat()).eval_all(m.dim(), m.as_flat(), &mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Rk4,
}

/// Fixed-step integration schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationSettings {
    pub t_final: f64,
    pub dt: f64,
    pub method: Method,
    /// Keep every `record_every`-th step (the final time is always kept).
    pub record_every: usize,
}

impl IntegrationSettings {
    pub fn new(t_final: f64, dt: f64, method: Method) -> Self {
        Self { t_final, dt, method, record_every: 1 }
    }

    pub fn record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            return Err(Error::InvalidParameter(format!("T must be positive, got {}", self.t_final)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if self.dt > self.t_final {
            return Err(Error::InvalidParameter(format!(
                "dt = {} exceeds T = {}",
                self.dt, self.t_final
            )));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be >= 1".into()));
        }
        Ok(())
    }

    /// Time grid `t_0 = 0 < ... < t_K = T`; the last step is shortened when
    /// `T` is not a multiple of `dt`.
    pub fn grid(&self) -> Vec<f64> {
        let ratio = self.t_final / self.dt;
        let rounded = ratio.round();
        let steps = if (ratio - rounded).abs() <= 1e-9 * ratio.max(1.0) {
            rounded as usize
        } else {
            ratio.ceil() as usize
        };
        let mut grid: Vec<f64> = (0..steps).map(|k| k as f64 * self.dt).collect();
        grid.push(self.t_final);
        grid
    }
}

/// Snapshots `m_{t_k}` of one particle ensemble, with particle `i` in every
/// snapshot being the same trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    times: Vec<f64>,
    states: Vec<EmpiricalMeasure>,
}

impl TrajectoryEnsemble {
    pub fn new(times: Vec<f64>, states: Vec<EmpiricalMeasure>) -> Result<Self> {
        if times.is_empty() || times.len() != states.len() {
            return Err(Error::InvalidParameter("times and states must be non-empty and aligned".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("times must be strictly increasing".into()));
        }
        let (n, d) = (states[0].len(), states[0].dim());
        for s in &states {
            if s.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, found: s.dim() });
            }
            if s.len() != n {
                return Err(Error::SizeMismatch { expected: n, found: s.len() });
            }
        }
        Ok(Self { times, states })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[EmpiricalMeasure] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn initial(&self) -> &EmpiricalMeasure {
        &self.states[0]
    }

    pub fn terminal(&self) -> &EmpiricalMeasure {
        self.states.last().expect("non-empty trajectory")
    }

    pub fn duration(&self) -> f64 {
        self.times.last().unwrap() - self.times[0]
    }

    /// Writes `t, particle_id, x_1..x_d` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let d = self.states[0].dim();
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string(), "particle_id".to_string()];
        header.extend((1..=d).map(|j| format!("x_{j}")));
        wtr.write_record(&header)?;
        for (t, state) in self.times.iter().zip(&self.states) {
            for (i, p) in state.points().enumerate() {
                let mut row = vec![fmt_f64(*t), i.to_string()];
                row.extend(p.iter().map(|v| fmt_f64(*v)));
                wtr.write_record(&row)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Writes `t, sigma2, mean_1..mean_d` rows, plus one column per entry of
    /// `extra` (each a name and one value per snapshot).
    pub fn write_summary_csv<W: Write>(&self, writer: W, extra: &[(&str, &[f64])]) -> Result<()> {
        let d = self.states[0].dim();
        for (name, values) in extra {
            if values.len() != self.len() {
                return Err(Error::InvalidParameter(format!("column {name} has the wrong length")));
            }
        }
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string(), "sigma2".to_string()];
        header.extend((1..=d).map(|j| format!("mean_{j}")));
        header.extend(extra.iter().map(|(name, _)| name.to_string()));
        wtr.write_record(&header)?;
        for (k, (t, state)) in self.times.iter().zip(&self.states).enumerate() {
            let mut row = vec![fmt_f64(*t), fmt_f64(state.moment_root(2.0)?)];
            row.extend(state.mean().iter().map(|v| fmt_f64(*v)));
            row.extend(extra.iter().map(|(_, values)| fmt_f64(values[k])));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn axpy(out: &mut [f64], base: &[f64], h: f64, k: &[f64]) {
    for ((o, b), v) in out.iter_mut().zip(base).zip(k) {
        *o = b + h * v;
    }
}

fn rhs(spec: &VectorFieldSpec, dim: usize, state: &[f64], out: &mut [f64]) -> Result<()> {
    Prepared::new(spec, dim, state).eval_all(dim, state, out)
}

/// Integrates the particle system and hands every recorded snapshot to
/// `observe`, which may stop the run early by returning `false`.
pub fn integrate_observed<F>(
    spec: &VectorFieldSpec,
    m0: &EmpiricalMeasure,
    settings: &IntegrationSettings,
    mut observe: F,
) -> Result<()>
where
    F: FnMut(f64, &EmpiricalMeasure) -> bool,
{
    settings.validate()?;
    spec.check_dim(m0.dim())?;
    let dim = m0.dim();
    let grid = settings.grid();
    let steps = grid.len() - 1;

    let mut state = m0.as_flat().to_vec();
    let len = state.len();
    let mut k1 = vec![0.0; len];
    let mut k2 = vec![0.0; len];
    let mut k3 = vec![0.0; len];
    let mut k4 = vec![0.0; len];
    let mut stage = vec![0.0; len];

    if !observe(grid[0], m0) {
        return Ok(());
    }
    for step in 0..steps {
        let h = grid[step + 1] - grid[step];
        match settings.method {
            Method::Euler => {
                rhs(spec, dim, &state, &mut k1)?;
                for (x, v) in state.iter_mut().zip(&k1) {
                    *x += h * v;
                }
            }
            Method::Rk4 => {
                rhs(spec, dim, &state, &mut k1)?;
                axpy(&mut stage, &state, 0.5 * h, &k1);
                rhs(spec, dim, &stage, &mut k2)?;
                axpy(&mut stage, &state, 0.5 * h, &k2);
                rhs(spec, dim, &stage, &mut k3)?;
                axpy(&mut stage, &state, h, &k3);
                rhs(spec, dim, &stage, &mut k4)?;
                for i in 0..len {
                    state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        if state.iter().any(|v| !(v.abs() <= BLOW_UP_LIMIT)) {
            return Err(Error::BlowUp { time: grid[step + 1] });
        }
        let last = step + 1 == steps;
        if last || (step + 1) % settings.record_every == 0 {
            let snapshot = EmpiricalMeasure::from_flat_unchecked(dim, state.clone());
            if !observe(grid[step + 1], &snapshot) {
                return Ok(());
            }
        }
    }
    Ok(())
}

/// Integrates `x' = f(x, m_t)` from `m0` and keeps the recorded snapshots.
pub fn integrate_ensemble(
    spec: &VectorFieldSpec,
    m0: &EmpiricalMeasure,
    settings: &IntegrationSettings,
) -> Result<TrajectoryEnsemble> {
    let mut times = Vec::new();
    let mut states = Vec::new();
    integrate_observed(spec, m0, settings, |t, m| {
        times.push(t);
        states.push(m.clone());
        true
    })?;
    TrajectoryEnsemble::new(times, states)
}

/// Weak stationarity residual against a finite set of test gradients.
#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumReport {
    /// `max_j |(1/n) sum_i grad phi_j(x_i) . f(x_i, m)|`.
    pub residual: f64,
    pub labels: Vec<String>,
    pub terms: Vec<f64>,
    pub note: &'static str,
}

const EQUILIBRIUM_NOTE: &str =
    "residual is tested against the listed test functions only; zero is necessary, not sufficient, for stationarity";

/// `max_j |int grad phi_j(x) . f(x, m) m(dx)|` over the given basis.
pub fn equilibrium_residual(
    spec: &VectorFieldSpec,
    m_hat: &EmpiricalMeasure,
    basis: &[TestGradient],
) -> Result<EquilibriumReport> {
    if basis.is_empty() {
        return Err(Error::InvalidParameter("test-function basis is empty".into()));
    }
    let dim = m_hat.dim();
    for g in basis {
        if let Some(j) = g.max_index() {
            if j >= dim {
                return Err(Error::DimensionMismatch { expected: dim, found: j + 1 });
            }
        }
    }
    let velocities = evaluate_on_cloud(spec, m_hat)?;
    let mut grad = vec![0.0; dim];
    let terms: Vec<f64> = basis
        .iter()
        .map(|g| {
            let total: f64 = m_hat
                .points()
                .zip(velocities.chunks_exact(dim))
                .map(|(x, v)| {
                    g.eval(x, &mut grad);
                    grad.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
                })
                .sum();
            total / m_hat.len() as f64
        })
        .collect();
    Ok(EquilibriumReport {
        residual: terms.iter().fold(0.0, |acc, t| acc.max(t.abs())),
        labels: basis.iter().map(TestGradient::label).collect(),
        terms,
        note: EQUILIBRIUM_NOTE,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PairCheck {
    pub s: f64,
    pub r: f64,
    pub w2: f64,
    pub bound: f64,
}

/// Comparison of a simulated ensemble against the a-priori growth bounds
/// `sigma_2(m_t) <= G1`, per-particle path increments `<= G3 (1 + |z| + G1) dt`
/// and `W_2(m_s, m_r) <= G4 (r - s)`.
#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    /// `None` when the field has no known growth constant; then nothing is checked.
    pub c1: Option<f64>,
    pub alpha: f64,
    pub horizon: f64,
    pub g1: f64,
    pub g3: f64,
    pub g4: f64,
    pub sigma2: Vec<f64>,
    /// `min_t (G1 - sigma_2(m_t)) / G1`.
    pub moment_margin: f64,
    /// Smallest relative slack of the per-particle increment bound.
    pub path_margin: f64,
    pub pairs: Vec<PairCheck>,
    /// `min (G4 (r-s) - W_2) / (G4 (r-s))` over the sampled pairs.
    pub w2_margin: f64,
    pub violations: usize,
    pub passed: bool,
}

const GROWTH_PAIR_SNAPSHOTS: usize = 6;

/// Checks the growth bounds with the field's own growth constant.
pub fn check_growth_bounds(traj: &TrajectoryEnsemble, spec: &VectorFieldSpec) -> Result<GrowthReport> {
    check_growth_bounds_with(traj, spec.growth_constant())
}

/// Checks the growth bounds for an explicit growth constant `c1`.
pub fn check_growth_bounds_with(traj: &TrajectoryEnsemble, c1: Option<f64>) -> Result<GrowthReport> {
    let sigma2 = traj
        .states()
        .iter()
        .map(|m| m.moment_root(2.0))
        .collect::<Result<Vec<_>>>()?;
    let alpha = sigma2[0];
    let horizon = traj.duration();
    let Some(c1) = c1 else {
        return Ok(GrowthReport {
            c1: None,
            alpha,
            horizon,
            g1: f64::NAN,
            g3: f64::NAN,
            g4: f64::NAN,
            sigma2,
            moment_margin: f64::NAN,
            path_margin: f64::NAN,
            pairs: Vec::new(),
            w2_margin: f64::NAN,
            violations: 0,
            passed: true,
        });
    };

    let g1 = (c1 * horizon + alpha) * (2.0 * c1 * horizon).exp();
    let g3 = c1 * (c1 * horizon).exp();
    let g4 = g3 * (1.0 + 2.0 * g1);
    let mut violations = 0;

    let mut moment_margin = f64::INFINITY;
    for s in &sigma2 {
        let margin = if g1 > 0.0 { (g1 - s) / g1 } else if *s == 0.0 { 0.0 } else { -1.0 };
        moment_margin = moment_margin.min(margin);
        if *s > g1 {
            violations += 1;
        }
    }

    let mut path_margin = f64::INFINITY;
    let states = traj.states();
    let times = traj.times();
    for k in 0..traj.len().saturating_sub(1) {
        let dt = times[k + 1] - times[k];
        for (z, y) in states[k].points().zip(states[k + 1].points()) {
            let norm_z = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let step = z.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let bound = g3 * (1.0 + norm_z + g1) * dt;
            if step > bound {
                violations += 1;
            }
            if bound > 0.0 {
                path_margin = path_margin.min((bound - step) / bound);
            }
        }
    }

    let picks = sample_indices(traj.len(), GROWTH_PAIR_SNAPSHOTS);
    let mut pairs = Vec::new();
    let mut w2_margin = f64::INFINITY;
    for (a, &i) in picks.iter().enumerate() {
        for &j in &picks[a + 1..] {
            let w2 = wasserstein(&states[i], &states[j], 2.0)?.cost();
            let bound = g4 * (times[j] - times[i]);
            if w2 > bound {
                violations += 1;
            }
            if bound > 0.0 {
                w2_margin = w2_margin.min((bound - w2) / bound);
            }
            pairs.push(PairCheck { s: times[i], r: times[j], w2, bound });
        }
    }

    Ok(GrowthReport {
        c1: Some(c1),
        alpha,
        horizon,
        g1,
        g3,
        g4,
        sigma2,
        moment_margin,
        path_margin,
        pairs,
        w2_margin,
        violations,
        passed: violations == 0,
    })
}

/// Up to `count` evenly spaced indices in `0..len`, always including both ends.
pub(crate) fn sample_indices(len: usize, count: usize) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    let mut picks: Vec<usize> = (0..count)
        .map(|k| ((k as f64) * (len - 1) as f64 / (count - 1) as f64).round() as usize)
        .collect();
    picks.dedup();
    picks
}
