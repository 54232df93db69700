//! Lyapunov functionals on clouds, their barycentric supergradients, descent
//! checks along simulated trajectories, and a Monte Carlo stability probe.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::dynamics::{evaluate_on_cloud, integrate_observed, IntegrationSettings, Method, VectorFieldSpec};
use crate::error::{Error, Result};
use crate::measures::{EmpiricalMeasure, PerturbationField};
use crate::systems::GradientFlowSystem;
use crate::transport::{barycentric_projection, wasserstein, SupergradientField};
use crate::TrajectoryEnsemble;

/// Assignment slack below which two optimal plans count as tied.
pub const PLAN_TIE_SLACK: f64 = 1e-10;

type ValueFn = dyn Fn(&EmpiricalMeasure) -> std::result::Result<f64, String> + Send + Sync;
type GradFn = dyn Fn(&EmpiricalMeasure) -> std::result::Result<SupergradientField, String> + Send + Sync;

/// Caller-supplied functional with a supergradient. Superdifferentiability
/// on a ball around the equilibrium is the caller's responsibility.
#[derive(Clone)]
pub struct CustomLyapunov {
    pub label: String,
    value: Arc<ValueFn>,
    supergradient: Arc<GradFn>,
}

impl CustomLyapunov {
    pub fn new<V, G>(label: impl Into<String>, value: V, supergradient: G) -> Self
    where
        V: Fn(&EmpiricalMeasure) -> std::result::Result<f64, String> + Send + Sync + 'static,
        G: Fn(&EmpiricalMeasure) -> std::result::Result<SupergradientField, String> + Send + Sync + 'static,
    {
        Self { label: label.into(), value: Arc::new(value), supergradient: Arc::new(supergradient) }
    }
}

impl fmt::Debug for CustomLyapunov {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomLyapunov").field("label", &self.label).finish()
    }
}

#[derive(Debug, Clone)]
pub enum LyapunovSpec {
    /// `phi(m) = W_2(m, reference)^2 / 2`; clouds must have the reference's size.
    HalfW2Sq { reference: EmpiricalMeasure },
    /// `phi(m) = int v(x, m) m(dx)` for the quadratic interaction family.
    IntegralV(GradientFlowSystem),
    Custom(CustomLyapunov),
}

impl LyapunovSpec {
    pub fn half_w2_sq(reference: EmpiricalMeasure) -> Self {
        LyapunovSpec::HalfW2Sq { reference }
    }

    pub fn label(&self) -> String {
        match self {
            LyapunovSpec::HalfW2Sq { .. } => "half_w2_sq".into(),
            LyapunovSpec::IntegralV(_) => "integral_v".into(),
            LyapunovSpec::Custom(c) => c.label.clone(),
        }
    }
}

struct Evaluation {
    value: f64,
    gamma: SupergradientField,
    unique_plan: Option<bool>,
}

fn check_dims(spec: &LyapunovSpec, m: &EmpiricalMeasure) -> Result<()> {
    match spec {
        LyapunovSpec::HalfW2Sq { reference } => {
            if reference.dim() != m.dim() {
                return Err(Error::DimensionMismatch { expected: reference.dim(), found: m.dim() });
            }
            if reference.len() != m.len() {
                return Err(Error::SizeMismatch { expected: reference.len(), found: m.len() });
            }
        }
        LyapunovSpec::IntegralV(sys) => {
            if sys.dim != m.dim() {
                return Err(Error::DimensionMismatch { expected: sys.dim, found: m.dim() });
            }
        }
        LyapunovSpec::Custom(_) => {}
    }
    Ok(())
}

fn integral_v_value(sys: &GradientFlowSystem, m: &EmpiricalMeasure) -> f64 {
    m.points().map(|x| sys.potential(x, m)).sum::<f64>() / m.len() as f64
}

fn integral_v_gradient(sys: &GradientFlowSystem, m: &EmpiricalMeasure) -> SupergradientField {
    let d = m.dim();
    let n = m.len();
    let mut values = vec![0.0; n * d];
    let mut own = vec![0.0; d];
    let mut cross = vec![0.0; d];
    for (x, g) in m.points().zip(values.chunks_exact_mut(d)) {
        sys.grad_x(x, m, &mut own);
        g.copy_from_slice(&own);
        let mut acc = vec![0.0; d];
        for y in m.points() {
            sys.grad_m(y, m, x, &mut cross);
            for (a, c) in acc.iter_mut().zip(&cross) {
                *a += c;
            }
        }
        for (gi, a) in g.iter_mut().zip(&acc) {
            *gi += a / n as f64;
        }
    }
    SupergradientField::from_flat(d, values).expect("finite gradient of a finite cloud")
}

fn evaluate(spec: &LyapunovSpec, m: &EmpiricalMeasure, want_gradient: bool) -> Result<Evaluation> {
    check_dims(spec, m)?;
    match spec {
        LyapunovSpec::HalfW2Sq { reference } => {
            let plan = wasserstein(reference, m, 2.0)?;
            let gamma = if want_gradient {
                barycentric_projection(&plan)?
            } else {
                SupergradientField::zeros(m.dim(), m.len())
            };
            let unique_plan = if want_gradient { plan.is_unique(PLAN_TIE_SLACK) } else { None };
            Ok(Evaluation { value: 0.5 * plan.cost() * plan.cost(), gamma, unique_plan })
        }
        LyapunovSpec::IntegralV(sys) => Ok(Evaluation {
            value: integral_v_value(sys, m),
            gamma: if want_gradient {
                integral_v_gradient(sys, m)
            } else {
                SupergradientField::zeros(m.dim(), m.len())
            },
            unique_plan: None,
        }),
        LyapunovSpec::Custom(c) => {
            let value = (c.value)(m).map_err(Error::Callback)?;
            let gamma = if want_gradient {
                let g = (c.supergradient)(m).map_err(Error::Callback)?;
                g.check_matches(m)?;
                g
            } else {
                SupergradientField::zeros(m.dim(), m.len())
            };
            Ok(Evaluation { value, gamma, unique_plan: None })
        }
    }
}

/// `phi(m)`.
pub fn lyap_value(spec: &LyapunovSpec, m: &EmpiricalMeasure) -> Result<f64> {
    Ok(evaluate(spec, m, false)?.value)
}

/// An element of the barycentric superdifferential of `phi` at `m`.
pub fn supergradient(spec: &LyapunovSpec, m: &EmpiricalMeasure) -> Result<SupergradientField> {
    let eval = evaluate(spec, m, true)?;
    if eval.unique_plan == Some(false) {
        log::warn!("optimal assignment to the reference is not unique; supergradient depends on the tie-break");
    }
    Ok(eval.gamma)
}

/// `int gamma(x) . f(x, m) m(dx)`.
pub fn descent_integral(gamma: &SupergradientField, spec_f: &VectorFieldSpec, m: &EmpiricalMeasure) -> Result<f64> {
    gamma.check_matches(m)?;
    let velocities = evaluate_on_cloud(spec_f, m)?;
    let dot: f64 = gamma.as_flat().iter().zip(&velocities).map(|(g, v)| g * v).sum();
    Ok(dot / m.len() as f64)
}

/// Lyapunov values and descent integrals along one trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct DescentReport {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub descent_integrals: Vec<f64>,
    /// `max_k (values[k+1] - values[k])`, or 0 for a single snapshot.
    pub max_increase: f64,
    /// `values[K] - values[0]`.
    pub total_change: f64,
    pub tol: f64,
    pub passed: bool,
    /// Snapshots where the optimal plan to the reference was not unique.
    pub tied_plans: usize,
}

impl DescentReport {
    /// Verdict: every step satisfies `phi_{k+1} - phi_k <= tol (t_{k+1} - t_k)`
    /// and `phi_K - phi_0 <= tol (t_K - t_0)`.
    pub fn from_values(times: Vec<f64>, values: Vec<f64>, descent_integrals: Vec<f64>, tol: f64) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() || descent_integrals.len() != values.len() {
            return Err(Error::InvalidParameter("report series must be non-empty and aligned".into()));
        }
        let mut max_increase = 0.0f64;
        let mut passed = true;
        for k in 0..values.len() - 1 {
            let rise = values[k + 1] - values[k];
            max_increase = if k == 0 { rise } else { max_increase.max(rise) };
            if rise > tol * (times[k + 1] - times[k]) {
                passed = false;
            }
        }
        let total_change = values[values.len() - 1] - values[0];
        if total_change > tol * (times[times.len() - 1] - times[0]) {
            passed = false;
        }
        Ok(Self {
            times,
            values,
            descent_integrals,
            max_increase,
            total_change,
            tol,
            passed,
            tied_plans: 0,
        })
    }
}

/// Evaluates `phi` and the descent integral at every snapshot and applies
/// the non-increase test at tolerance `tol` (per unit time).
pub fn check_monotone(
    traj: &TrajectoryEnsemble,
    spec_f: &VectorFieldSpec,
    spec: &LyapunovSpec,
    tol: f64,
) -> Result<DescentReport> {
    if !(tol >= 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be >= 0, got {tol}")));
    }
    let evals = map_snapshots(traj.states(), |m| {
        let e = evaluate(spec, m, true)?;
        let descent = descent_integral(&e.gamma, spec_f, m)?;
        Ok((e.value, descent, e.unique_plan == Some(false)))
    })?;
    let tied = evals.iter().filter(|e| e.2).count();
    if tied > 0 {
        log::warn!("{tied} snapshot(s) have a non-unique optimal plan to the reference");
    }
    let mut report = DescentReport::from_values(
        traj.times().to_vec(),
        evals.iter().map(|e| e.0).collect(),
        evals.iter().map(|e| e.1).collect(),
        tol,
    )?;
    report.tied_plans = tied;
    Ok(report)
}

fn map_snapshots<T, F>(states: &[EmpiricalMeasure], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&EmpiricalMeasure) -> Result<T> + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        states.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    states.iter().map(f).collect()
}

/// `tol = c1 dt + c2 / sqrt(n)` with `c1 = c1_factor (1 + |A| + |B|) phi_0`
/// and `c2 = c2_factor phi_0`: step-size plus sampling slack for the
/// non-increase test on finite clouds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotoneTolerance {
    pub c1_factor: f64,
    pub c2_factor: f64,
}

impl Default for MonotoneTolerance {
    fn default() -> Self {
        Self { c1_factor: 1.0, c2_factor: 1.0 }
    }
}

impl MonotoneTolerance {
    pub fn resolve(&self, spec_f: &VectorFieldSpec, phi0: f64, dt: f64, n: usize) -> f64 {
        let c1 = self.c1_factor * (1.0 + spec_f.coefficient_scale()) * phi0;
        let c2 = self.c2_factor * phi0;
        c1 * dt + c2 / (n as f64).sqrt()
    }
}

/// Parameters of the Monte Carlo stability probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeSettings {
    pub epsilon: f64,
    pub delta: f64,
    pub samples: usize,
    pub t_final: f64,
    pub dt: f64,
    pub method: Method,
    pub seed: u64,
    /// Evaluate `W_2(m_hat, m_t)` every this many integration steps.
    pub eval_every: usize,
}

impl ProbeSettings {
    pub fn new(epsilon: f64, delta: f64, samples: usize, t_final: f64, dt: f64, seed: u64) -> Self {
        Self { epsilon, delta, samples, t_final, dt, method: Method::Rk4, seed, eval_every: 1 }
    }

    pub fn eval_every(mut self, k: usize) -> Self {
        self.eval_every = k;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !(self.epsilon >= self.delta) || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "need 0 < delta <= epsilon, got delta = {}, epsilon = {}",
                self.delta, self.epsilon
            )));
        }
        if self.samples == 0 {
            return Err(Error::InvalidParameter("samples must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeSample {
    pub index: usize,
    pub initial_w2: f64,
    /// `sup_t W_2(m_hat, m_t)` over the evaluated times.
    pub sup_w2: f64,
    pub escaped: bool,
    /// Time at which the integration blew up, if it did.
    pub blow_up_time: Option<f64>,
    pub times: Vec<f64>,
    pub w2: Vec<f64>,
    pub means: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub epsilon: f64,
    pub delta: f64,
    pub t_final: f64,
    pub dt: f64,
    pub seed: u64,
    pub sup_w2: f64,
    pub escaped: bool,
    pub escaped_count: usize,
    pub samples: Vec<ProbeSample>,
}

/// Draws a cloud `m0` from `m_hat` by moving each particle along a random
/// direction with folded-Gaussian length, scaled so `W_2(m_hat, m0)` lands
/// in `(delta/2, delta)`.
pub fn perturbed_cloud<R: Rng>(m_hat: &EmpiricalMeasure, delta: f64, rng: &mut R) -> Result<(EmpiricalMeasure, f64)> {
    let d = m_hat.dim();
    let n = m_hat.len();
    let mut values = Vec::with_capacity(n * d);
    for _ in 0..n {
        let dir: Vec<f64> = loop {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|c: &f64| c * c).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|c| c / norm).collect();
            }
        };
        let length: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng).abs();
        values.extend(dir.into_iter().map(|c| c * length));
    }
    let b = PerturbationField::from_flat(d, values)?;
    let norm = b.lp_norm(2.0);
    if norm == 0.0 {
        return Err(Error::InvalidParameter("degenerate perturbation".into()));
    }

    let target = 0.75 * delta;
    let (low, high) = (0.55 * delta, 0.95 * delta);
    let distance = |s: f64| -> Result<(EmpiricalMeasure, f64)> {
        let m = m_hat.perturb(&b, s)?;
        let w = wasserstein(m_hat, &m, 2.0)?.cost();
        Ok((m, w))
    };

    let mut lo = 0.0;
    let mut hi = target / norm;
    let mut probe = distance(hi)?;
    let mut grow = 0;
    while probe.1 < target {
        if probe.1 > low {
            return Ok(probe);
        }
        lo = hi;
        hi *= 2.0;
        probe = distance(hi)?;
        grow += 1;
        if grow > 64 {
            return Err(Error::InvalidParameter("could not reach the requested perturbation size".into()));
        }
    }
    for _ in 0..200 {
        if probe.1 > low && probe.1 < high {
            return Ok(probe);
        }
        let mid = 0.5 * (lo + hi);
        probe = distance(mid)?;
        if probe.1 < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::InvalidParameter("perturbation rescaling did not converge".into()))
}

fn run_sample(
    spec_f: &VectorFieldSpec,
    m_hat: &EmpiricalMeasure,
    settings: &ProbeSettings,
    index: usize,
) -> Result<ProbeSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(index as u64);
    let (m0, initial_w2) = perturbed_cloud(m_hat, settings.delta, &mut rng)?;

    let schedule = IntegrationSettings::new(settings.t_final, settings.dt, settings.method)
        .record_every(settings.eval_every);
    let mut times = Vec::new();
    let mut w2 = Vec::new();
    let mut means = Vec::new();
    let mut failure = None;
    let outcome = integrate_observed(spec_f, &m0, &schedule, |t, m| match wasserstein(m_hat, m, 2.0) {
        Ok(plan) => {
            times.push(t);
            w2.push(plan.cost());
            means.push(m.mean());
            true
        }
        Err(e) => {
            failure = Some(e);
            false
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let blow_up_time = match outcome {
        Ok(()) => None,
        Err(Error::BlowUp { time }) => Some(time),
        Err(e) => return Err(e),
    };
    let sup_w2 = w2.iter().copied().fold(0.0, f64::max);
    Ok(ProbeSample {
        index,
        initial_w2,
        sup_w2,
        escaped: blow_up_time.is_some() || sup_w2 >= settings.epsilon,
        blow_up_time,
        times,
        w2,
        means,
    })
}

/// Samples initial clouds within `delta` of `m_hat`, integrates each and
/// reports whether any trajectory reached distance `epsilon`.
pub fn stability_probe(
    spec_f: &VectorFieldSpec,
    m_hat: &EmpiricalMeasure,
    settings: &ProbeSettings,
) -> Result<ProbeReport> {
    settings.validate()?;
    if spec_f.dim() != m_hat.dim() {
        return Err(Error::DimensionMismatch { expected: spec_f.dim(), found: m_hat.dim() });
    }
    let indices: Vec<usize> = (0..settings.samples).collect();
    #[cfg(feature = "parallel")]
    let samples: Vec<ProbeSample> = {
        use rayon::prelude::*;
        indices
            .par_iter()
            .map(|&i| run_sample(spec_f, m_hat, settings, i))
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let samples: Vec<ProbeSample> = indices
        .iter()
        .map(|&i| run_sample(spec_f, m_hat, settings, i))
        .collect::<Result<_>>()?;

    let escaped_count = samples.iter().filter(|s| s.escaped).count();
    Ok(ProbeReport {
        epsilon: settings.epsilon,
        delta: settings.delta,
        t_final: settings.t_final,
        dt: settings.dt,
        seed: settings.seed,
        sup_w2: samples.iter().map(|s| s.sup_w2).fold(0.0, f64::max),
        escaped: escaped_count > 0,
        escaped_count,
        samples,
    })
}
