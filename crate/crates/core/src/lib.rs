//! Mean-field particle systems driven by non-local continuity equations, and
//! numerical Lyapunov stability checks for their equilibrium measures.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`measures`] | uniform particle clouds, moments, push-forwards, perturbations |
//! | [`transport`] | exact `W_p` by assignment, barycentric projection, Gaussian `W_2` |
//! | [`dynamics`] | `x' = f(x, m_t)` integration, stationarity residuals, growth bounds |
//! | [`lyapunov`] | Lyapunov functionals, supergradients, descent checks, stability probe |
//! | [`linear_stability`] | quadratic-form test for linear fields, mean spectrum |
//! | [`systems`] | quadratic gradient flow and mean-field pendulums |

mod assignment;
pub mod basis;
pub mod dynamics;
pub mod error;
pub mod linear_stability;
pub mod lyapunov;
pub mod measures;
pub mod systems;
pub mod transport;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use basis::{default_test_basis, TestGradient};
pub use dynamics::{
    check_growth_bounds, equilibrium_residual, evaluate_field, integrate_ensemble, IntegrationSettings, Method,
    TrajectoryEnsemble, VectorFieldSpec,
};
pub use error::{Error, Result};
pub use linear_stability::{mean_dynamics_matrix, quadratic_form, tangent_basis, QuadraticFormReport};
pub use lyapunov::{
    check_monotone, descent_integral, lyap_value, stability_probe, supergradient, DescentReport, LyapunovSpec,
    ProbeReport, ProbeSettings,
};
pub use measures::{EmpiricalMeasure, PerturbationField};
pub use systems::{gibbs_cloud, gradient_flow_field, pendulum_field, GradientFlowSystem, PendulumSystem};
pub use transport::{
    barycentric_projection, gaussian_w2, optimal_plan_bruteforce, wasserstein, SupergradientField, TransportPlan,
};
