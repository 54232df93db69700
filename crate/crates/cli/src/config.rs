//! Strict JSON experiment configuration.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use meanfield::{
    gibbs_cloud, gradient_flow_field, pendulum_field, EmpiricalMeasure, GradientFlowSystem, LyapunovSpec, Method,
    PendulumSystem, VectorFieldSpec,
};
use meanfield::systems::standard_normal_cloud;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub simulation: SimulationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion: Option<CriterionConfig>,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", content = "parameters", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    Pendulum(PendulumParams),
    GradientFlow(GradientFlowParams),
    Linear(LinearParams),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumParams {
    #[serde(default = "one")]
    pub n_pend: usize,
    #[serde(default = "half")]
    pub kappa: f64,
    #[serde(default = "unit")]
    pub beta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientFlowParams {
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "two")]
    pub dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearParams {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_particles: usize,
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(default = "rk4")]
    pub integrator: Method,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub record_every: usize,
}

/// Affine map `x -> scale x + shift` applied to the base cloud before a
/// simulation starts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default)]
    pub shift: Vec<f64>,
    #[serde(default = "unit")]
    pub scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub samples: usize,
    #[serde(default = "one")]
    pub eval_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LyapunovKind {
    HalfW2Sq,
    IntegralV,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovConfig {
    pub kind: LyapunovKind,
    #[serde(default = "unit")]
    pub tolerance_c1: f64,
    #[serde(default = "unit")]
    pub tolerance_c2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionConfig {
    #[serde(default = "two")]
    pub basis_degree: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    #[serde(default = "all_formats")]
    pub formats: BTreeSet<Format>,
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn half() -> f64 {
    0.5
}
fn unit() -> f64 {
    1.0
}
fn rk4() -> Method {
    Method::Rk4
}
fn all_formats() -> BTreeSet<Format> {
    [Format::Csv, Format::Json].into_iter().collect()
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn finite(name: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite")))
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(invalid(format!("system.parameters.{name} must be a non-empty square matrix")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(invalid(format!("system.parameters.{name} has non-finite entries")));
    }
    Ok(DMatrix::from_row_slice(d, d, &flat))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                invalid(e.into_inner().to_string())
            } else {
                invalid(format!("{path}: {}", e.into_inner()))
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let sim = &self.simulation;
        if sim.n_particles == 0 {
            return Err(invalid("simulation.n_particles must be >= 1"));
        }
        finite("simulation.dt", sim.dt)?;
        finite("simulation.T", sim.t_final)?;
        if sim.dt <= 0.0 {
            return Err(invalid("simulation.dt must be > 0"));
        }
        if sim.t_final < sim.dt {
            return Err(invalid(format!("simulation.T = {} must be >= dt = {}", sim.t_final, sim.dt)));
        }
        if sim.record_every == 0 {
            return Err(invalid("simulation.record_every must be >= 1"));
        }
        match &self.system {
            SystemConfig::Pendulum(p) => {
                if p.n_pend == 0 {
                    return Err(invalid("system.parameters.n_pend must be >= 1"));
                }
                finite("system.parameters.kappa", p.kappa)?;
                if !(p.beta > 0.0) || !p.beta.is_finite() {
                    return Err(invalid("system.parameters.beta must be finite and > 0"));
                }
            }
            SystemConfig::GradientFlow(g) => {
                if g.dim == 0 {
                    return Err(invalid("system.parameters.dim must be >= 1"));
                }
                if !(g.lambda >= 0.0) || !g.lambda.is_finite() {
                    return Err(invalid("system.parameters.lambda must be finite and >= 0"));
                }
            }
            SystemConfig::Linear(l) => {
                let a = matrix("a", &l.a)?;
                let b = matrix("b", &l.b)?;
                if a.nrows() != b.nrows() {
                    return Err(invalid("system.parameters.a and b must have the same size"));
                }
            }
        }
        if let Some(init) = &self.initial {
            finite("initial.scale", init.scale)?;
            if !init.shift.is_empty() && init.shift.len() != self.dim() {
                return Err(invalid(format!(
                    "initial.shift has {} components, system dimension is {}",
                    init.shift.len(),
                    self.dim()
                )));
            }
            for v in &init.shift {
                finite("initial.shift", *v)?;
            }
        }
        if let Some(p) = &self.probe {
            finite("probe.epsilon", p.epsilon)?;
            if !(p.delta > 0.0) || !(p.epsilon >= p.delta) {
                return Err(invalid(format!(
                    "probe requires epsilon >= delta > 0, got epsilon = {}, delta = {}",
                    p.epsilon, p.delta
                )));
            }
            if p.samples == 0 {
                return Err(invalid("probe.samples must be >= 1"));
            }
            if p.eval_every == 0 {
                return Err(invalid("probe.eval_every must be >= 1"));
            }
        }
        if let Some(l) = &self.lyapunov {
            for (name, v) in [("lyapunov.tolerance_c1", l.tolerance_c1), ("lyapunov.tolerance_c2", l.tolerance_c2)] {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(invalid(format!("{name} must be finite and >= 0")));
                }
            }
            if l.kind == LyapunovKind::IntegralV && !matches!(self.system, SystemConfig::GradientFlow(_)) {
                return Err(invalid("lyapunov.kind integral_v requires the gradient_flow system"));
            }
        }
        if let Some(c) = &self.criterion {
            if !(1..=2).contains(&c.basis_degree) {
                return Err(invalid("criterion.basis_degree must be 1 or 2"));
            }
            if let Some(t) = c.tol {
                if !(t >= 0.0) || !t.is_finite() {
                    return Err(invalid("criterion.tol must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match &self.system {
            SystemConfig::Pendulum(p) => 2 * p.n_pend,
            SystemConfig::GradientFlow(g) => g.dim,
            SystemConfig::Linear(l) => l.a.len(),
        }
    }

    pub fn field(&self) -> Result<VectorFieldSpec, CliError> {
        match &self.system {
            SystemConfig::Pendulum(p) => Ok(pendulum_field(&self.pendulum(p)?)),
            SystemConfig::GradientFlow(g) => Ok(gradient_flow_field(&self.gradient_flow(g)?)),
            SystemConfig::Linear(l) => {
                VectorFieldSpec::linear(matrix("a", &l.a)?, matrix("b", &l.b)?).map_err(|e| invalid(e.to_string()))
            }
        }
    }

    /// `(A, B)` for linear-kind systems.
    pub fn linear_parts(&self) -> Result<(DMatrix<f64>, DMatrix<f64>), CliError> {
        match &self.system {
            SystemConfig::Pendulum(p) => {
                let sys = self.pendulum(p)?;
                Ok((sys.a(), sys.b()))
            }
            SystemConfig::Linear(l) => Ok((matrix("a", &l.a)?, matrix("b", &l.b)?)),
            SystemConfig::GradientFlow(_) => Err(invalid(
                "the criterion needs a linear-kind system (pendulum or linear); gradient_flow is not accepted",
            )),
        }
    }

    fn pendulum(&self, p: &PendulumParams) -> Result<PendulumSystem, CliError> {
        PendulumSystem::new(p.n_pend, p.kappa, p.beta).map_err(|e| invalid(e.to_string()))
    }

    fn gradient_flow(&self, g: &GradientFlowParams) -> Result<GradientFlowSystem, CliError> {
        GradientFlowSystem::new(g.lambda, g.dim).map_err(|e| invalid(e.to_string()))
    }

    /// The equilibrium cloud: a centered Gibbs sample for the pendulum, the
    /// Dirac mass at the origin otherwise.
    pub fn equilibrium(&self, seed: u64) -> Result<EmpiricalMeasure, CliError> {
        let n = self.simulation.n_particles;
        let cloud = match &self.system {
            SystemConfig::Pendulum(p) => gibbs_cloud(&self.pendulum(p)?, n, seed),
            _ => EmpiricalMeasure::dirac_origin(self.dim(), n),
        };
        cloud.map_err(|e| invalid(e.to_string()))
    }

    /// The initial cloud of `simulate`: the Gibbs sample for the pendulum, a
    /// standard normal sample otherwise, then the `initial` affine map.
    pub fn initial_cloud(&self, seed: u64) -> Result<EmpiricalMeasure, CliError> {
        let base = match &self.system {
            SystemConfig::Pendulum(_) => self.equilibrium(seed)?,
            _ => standard_normal_cloud(self.dim(), self.simulation.n_particles, seed)
                .map_err(|e| invalid(e.to_string()))?,
        };
        let Some(init) = &self.initial else {
            return Ok(base);
        };
        base.push_forward(|x, out| {
            for (k, (o, xi)) in out.iter_mut().zip(x).enumerate() {
                *o = init.scale * xi + init.shift.get(k).copied().unwrap_or(0.0);
            }
        })
        .map_err(|e| invalid(e.to_string()))
    }

    pub fn lyapunov_spec(&self, seed: u64) -> Result<Option<LyapunovSpec>, CliError> {
        let Some(l) = &self.lyapunov else {
            return Ok(None);
        };
        Ok(Some(match (l.kind, &self.system) {
            (LyapunovKind::HalfW2Sq, _) => LyapunovSpec::half_w2_sq(self.equilibrium(seed)?),
            (LyapunovKind::IntegralV, SystemConfig::GradientFlow(g)) => {
                LyapunovSpec::IntegralV(self.gradient_flow(g)?)
            }
            (LyapunovKind::IntegralV, _) => {
                return Err(invalid("lyapunov.kind integral_v requires the gradient_flow system"))
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "system": {"name": "pendulum", "parameters": {"n_pend": 1, "kappa": 0.5, "beta": 1.0}},
        "simulation": {"n_particles": 10, "dt": 0.01, "T": 0.1, "integrator": "rk4", "seed": 3},
        "output": {"directory": "out", "formats": ["csv", "json"]}
    }"#;

    fn with(edit: impl FnOnce(&mut serde_json::Value)) -> String {
        let mut v: serde_json::Value = serde_json::from_str(BASE).unwrap();
        edit(&mut v);
        v.to_string()
    }

    fn message(text: &str) -> String {
        match ExperimentConfig::from_json(text) {
            Err(CliError::Config(m)) => m,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn parses_base() {
        let c = ExperimentConfig::from_json(BASE).unwrap();
        assert_eq!(c.dim(), 2);
        assert_eq!(c.simulation.integrator, Method::Rk4);
        assert!(c.probe.is_none());
    }

    #[test]
    fn unknown_fields_are_named() {
        let m = message(&with(|v| v["simulation"]["stepsize"] = 0.1.into()));
        assert!(m.contains("stepsize"), "{m}");
        let m = message(&with(|v| v["extra"] = 1.into()));
        assert!(m.contains("extra"), "{m}");
        let m = message(&with(|v| v["system"]["parameters"]["gamma"] = 1.into()));
        assert!(m.contains("gamma"), "{m}");
        let m = message(&with(|v| v["system"]["name"] = "lorenz".into()));
        assert!(m.contains("lorenz"), "{m}");
    }

    #[test]
    fn rejects_bad_values() {
        assert!(message(&with(|v| v["simulation"]["dt"] = 1.0.into())).contains("T"));
        assert!(message(&with(|v| v["simulation"]["n_particles"] = 0.into())).contains("n_particles"));
        let probe = serde_json::json!({"epsilon": 0.1, "delta": 0.5, "samples": 3});
        assert!(message(&with(|v| v["probe"] = probe)).contains("epsilon"));
        let lyap = serde_json::json!({"kind": "integral_v", "tolerance_c1": 1.0, "tolerance_c2": 1.0});
        assert!(message(&with(|v| v["lyapunov"] = lyap)).contains("gradient_flow"));
        assert!(message(&with(|v| v["output"]["formats"] = serde_json::json!(["xml"]))).contains("xml"));
    }

    #[test]
    fn gradient_flow_is_not_linear_kind() {
        let text = with(|v| v["system"] = serde_json::json!({"name": "gradient_flow", "parameters": {"lambda": 0.0}}));
        let c = ExperimentConfig::from_json(&text).unwrap();
        assert!(matches!(c.linear_parts(), Err(CliError::Config(_))));
    }

    #[test]
    fn initial_map_applies() {
        let text = with(|v| v["initial"] = serde_json::json!({"shift": [1.0, 0.0], "scale": 1.0}));
        let c = ExperimentConfig::from_json(&text).unwrap();
        let eq = c.equilibrium(3).unwrap();
        let m0 = c.initial_cloud(3).unwrap();
        for (x, y) in eq.points().zip(m0.points()) {
            assert_eq!(y[0], x[0] + 1.0);
            assert_eq!(y[1], x[1]);
        }
    }
}
