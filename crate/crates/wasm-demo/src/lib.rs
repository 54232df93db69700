//! WebAssembly bindings for the demo page. Every export returns a JSON
//! string; the page parses it and draws on canvases.

use meanfield::{
    gibbs_cloud, integrate_ensemble, lyap_value, mean_dynamics_matrix, pendulum_field, quadratic_form,
    stability_probe, tangent_basis, IntegrationSettings, LyapunovSpec, Method, PendulumSystem, ProbeSettings,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct PendulumRun {
    pub n: usize,
    pub times: Vec<f64>,
    /// Flat `[q, p, q, p, ...]` particle coordinates per recorded time.
    pub frames: Vec<Vec<f64>>,
    /// Half squared `W_2` distance to the Gibbs cloud.
    pub lyapunov: Vec<f64>,
    pub means: Vec<Vec<f64>>,
}

/// Single pendulum started from the Gibbs cloud translated by `shift`.
pub fn run_pendulum(
    kappa: f64,
    beta: f64,
    n: usize,
    shift: [f64; 2],
    t_final: f64,
    dt: f64,
    record_every: usize,
    seed: u64,
) -> meanfield::Result<PendulumRun> {
    let sys = PendulumSystem::new(1, kappa, beta)?;
    let reference = gibbs_cloud(&sys, n, seed)?;
    let m0 = reference.push_forward(|x, out| {
        out[0] = x[0] + shift[0];
        out[1] = x[1] + shift[1];
    })?;
    let settings = IntegrationSettings::new(t_final, dt, Method::Rk4).record_every(record_every.max(1));
    let traj = integrate_ensemble(&pendulum_field(&sys), &m0, &settings)?;
    let spec = LyapunovSpec::half_w2_sq(reference);
    let lyapunov = traj.states().iter().map(|m| lyap_value(&spec, m)).collect::<meanfield::Result<_>>()?;
    Ok(PendulumRun {
        n,
        times: traj.times().to_vec(),
        frames: traj.states().iter().map(|m| m.as_flat().to_vec()).collect(),
        lyapunov,
        means: traj.states().iter().map(|m| m.mean()).collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct CriterionSummary {
    pub basis: Vec<String>,
    pub eigenvalues: Vec<f64>,
    pub max_eigenvalue: f64,
    pub passed: bool,
    pub mean_eigenvalues: Vec<[f64; 2]>,
    pub hurwitz: bool,
}

pub fn run_criterion(kappa: f64, beta: f64, n: usize, degree: usize, seed: u64) -> meanfield::Result<CriterionSummary> {
    let sys = PendulumSystem::new(1, kappa, beta)?;
    let cloud = gibbs_cloud(&sys, n, seed)?;
    let (a, b) = (sys.a(), sys.b());
    let report = quadratic_form(&a, &b, &cloud, &tangent_basis(2, degree)?, None)?;
    let mean = mean_dynamics_matrix(&a, &b)?;
    Ok(CriterionSummary {
        basis: report.basis,
        eigenvalues: report.eigenvalues,
        max_eigenvalue: report.max_eigenvalue,
        passed: report.passed,
        mean_eigenvalues: mean.eigenvalues,
        hurwitz: mean.hurwitz,
    })
}

#[derive(Debug, Serialize)]
pub struct ProbeCurve {
    pub times: Vec<f64>,
    pub w2: Vec<f64>,
    pub escaped: bool,
}

#[derive(Debug, Serialize)]
pub struct ProbeSummary {
    pub epsilon: f64,
    pub delta: f64,
    pub sup_w2: f64,
    pub escaped: bool,
    pub curves: Vec<ProbeCurve>,
}

#[allow(clippy::too_many_arguments)]
pub fn run_probe(
    kappa: f64,
    beta: f64,
    n: usize,
    epsilon: f64,
    delta: f64,
    samples: usize,
    t_final: f64,
    dt: f64,
    seed: u64,
) -> meanfield::Result<ProbeSummary> {
    let sys = PendulumSystem::new(1, kappa, beta)?;
    let m_hat = gibbs_cloud(&sys, n, seed)?;
    let eval_every = ((0.1 / dt).round() as usize).max(1);
    let settings = ProbeSettings::new(epsilon, delta, samples, t_final, dt, seed).eval_every(eval_every);
    let report = stability_probe(&pendulum_field(&sys), &m_hat, &settings)?;
    Ok(ProbeSummary {
        epsilon,
        delta,
        sup_w2: report.sup_w2,
        escaped: report.escaped,
        curves: report
            .samples
            .into_iter()
            .map(|s| ProbeCurve { times: s.times, w2: s.w2, escaped: s.escaped })
            .collect(),
    })
}

fn to_js<T: Serialize>(result: meanfield::Result<T>) -> Result<String, JsError> {
    let value = result.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn simulate_pendulum(
    kappa: f64,
    beta: f64,
    n: u32,
    shift_q: f64,
    shift_p: f64,
    t_final: f64,
    dt: f64,
    record_every: u32,
    seed: u32,
) -> Result<String, JsError> {
    to_js(run_pendulum(
        kappa,
        beta,
        n as usize,
        [shift_q, shift_p],
        t_final,
        dt,
        record_every as usize,
        seed as u64,
    ))
}

#[wasm_bindgen]
pub fn criterion(kappa: f64, beta: f64, n: u32, degree: u32, seed: u32) -> Result<String, JsError> {
    to_js(run_criterion(kappa, beta, n as usize, degree as usize, seed as u64))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn probe(
    kappa: f64,
    beta: f64,
    n: u32,
    epsilon: f64,
    delta: f64,
    samples: u32,
    t_final: f64,
    dt: f64,
    seed: u32,
) -> Result<String, JsError> {
    to_js(run_probe(kappa, beta, n as usize, epsilon, delta, samples as usize, t_final, dt, seed as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pendulum_run_shapes() {
        let run = run_pendulum(0.5, 1.0, 40, [1.0, 0.0], 1.0, 0.01, 10, 3).unwrap();
        assert_eq!(run.times.len(), 11);
        assert_eq!(run.frames.len(), 11);
        assert!(run.frames.iter().all(|f| f.len() == 80));
        assert!((run.lyapunov[0] - 0.5).abs() < 1e-12);
        assert!(run.lyapunov.last().unwrap() < &run.lyapunov[0]);
    }

    #[test]
    fn criterion_verdicts() {
        assert!(run_criterion(0.5, 1.0, 200, 2, 1).unwrap().passed);
        let unstable = run_criterion(-0.5, 1.0, 200, 1, 1).unwrap();
        assert!(!unstable.passed && !unstable.hurwitz);
    }

    #[test]
    fn probe_summary() {
        let s = run_probe(0.5, 1.0, 60, 2.0, 0.1, 2, 1.0, 0.05, 5).unwrap();
        assert_eq!(s.curves.len(), 2);
        assert!(!s.escaped);
    }
}
