//! Gradients of polynomial test functions, used both for weak stationarity
//! residuals and as a finite stand-in for the tangent space at a measure.

use std::fmt;
use std::sync::Arc;

type GradientFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// `grad phi` for a test function `phi: R^d -> R`.
#[derive(Clone)]
pub enum TestGradient {
    /// Gradient of `x_j`: the constant field `e_j`.
    Coordinate(usize),
    /// Gradient of `x_j * x_l`.
    Product(usize, usize),
    /// Gradient of `|x|^2`, i.e. `2x`.
    SquaredNorm,
    /// Caller-supplied gradient field.
    Custom { label: String, gradient: Arc<GradientFn> },
}

impl TestGradient {
    pub fn custom<F>(label: impl Into<String>, gradient: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        TestGradient::Custom { label: label.into(), gradient: Arc::new(gradient) }
    }

    /// Human-readable name of the test function whose gradient this is.
    pub fn label(&self) -> String {
        match self {
            TestGradient::Coordinate(j) => format!("grad x{}", j + 1),
            TestGradient::Product(j, l) if j == l => format!("grad x{}^2", j + 1),
            TestGradient::Product(j, l) => format!("grad x{}*x{}", j + 1, l + 1),
            TestGradient::SquaredNorm => "grad |x|^2".to_string(),
            TestGradient::Custom { label, .. } => label.clone(),
        }
    }

    /// Writes the gradient at `x` into `out` (same length as `x`).
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            TestGradient::Coordinate(j) => {
                out.fill(0.0);
                out[*j] = 1.0;
            }
            TestGradient::Product(j, l) => {
                out.fill(0.0);
                out[*j] += x[*l];
                out[*l] += x[*j];
            }
            TestGradient::SquaredNorm => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = 2.0 * v;
                }
            }
            TestGradient::Custom { gradient, .. } => gradient(x, out),
        }
    }

    /// Largest coordinate index the field touches, for dimension checks.
    pub(crate) fn max_index(&self) -> Option<usize> {
        match self {
            TestGradient::Coordinate(j) => Some(*j),
            TestGradient::Product(j, l) => Some((*j).max(*l)),
            _ => None,
        }
    }
}

impl fmt::Debug for TestGradient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Gradients of `x_j` and, for `degree == 2`, of `x_j x_l` with `j <= l`.
pub(crate) fn monomial_gradients(dim: usize, degree: usize) -> Vec<TestGradient> {
    let mut out: Vec<TestGradient> = (0..dim).map(TestGradient::Coordinate).collect();
    if degree >= 2 {
        for j in 0..dim {
            for l in j..dim {
                out.push(TestGradient::Product(j, l));
            }
        }
    }
    out
}

/// `{x_j, x_j x_l, |x|^2}` gradients, the default basis for weak
/// stationarity residuals.
pub fn default_test_basis(dim: usize) -> Vec<TestGradient> {
    let mut basis = monomial_gradients(dim, 2);
    basis.push(TestGradient::SquaredNorm);
    basis
}
