//! Stein kernels.
//!
//! A Stein kernel `K0` is built from a base kernel `k` and the score of a
//! target density `p0`. Only the score is ever needed, so targets known up to a
//! normalizing constant are fine. Two concrete kernels are provided:
//!
//! * [`LangevinStein`]: Langevin-Stein kernel on R^d with a Gaussian base kernel.
//! * [`DirectionalStein`]: Stein kernel on the sphere S^{d-1} in angular
//!   coordinates, with the von Mises-Fisher base kernel `exp(gamma x.y)`.
//!
//! Every kernel satisfies `E_{p0} K0(x, X) = 0` for all `x`, which is what
//! makes the null distribution of the V-statistic degenerate.

mod directional;
mod langevin;
mod score;
pub mod sphere;
mod verify;

use std::ops::Deref;

pub use directional::{directional_stein_eval, DirectionalStein};
pub use langevin::{langevin_stein_eval, LangevinStein};
pub use score::{FnScore, GaussianScore, UniformSphereScore, VmfScore};
pub use sphere::{log_jacobian_grad, sphere_to_cartesian};
pub use verify::verify_kernel_gradients;

use crate::error::{KsdError, Result};

/// A sample location. Cartesian coordinates on R^d, or the angular vector of
/// length `d-1` on S^{d-1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point(coords)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.0.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(KsdError::NonFinite(format!(
                "coordinate {i} = {}",
                self.0[i]
            ))),
            None => Ok(()),
        }
    }
}

impl Deref for Point {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Point {
    fn from(v: Vec<f64>) -> Self {
        Point(v)
    }
}

/// Sample space of a target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// R^d, Cartesian coordinates.
    Euclidean { d: usize },
    /// S^{d-1} embedded in R^d, angular coordinates.
    Sphere { d: usize },
}

impl Domain {
    /// Ambient dimension `d`.
    pub fn dim(&self) -> usize {
        match *self {
            Domain::Euclidean { d } | Domain::Sphere { d } => d,
        }
    }

    /// Length of a point's coordinate vector.
    pub fn coord_len(&self) -> usize {
        match *self {
            Domain::Euclidean { d } => d,
            Domain::Sphere { d } => d.saturating_sub(1),
        }
    }
}

/// Gradient of the log target.
///
/// On R^d this is `grad_x log p0(x)`. On the sphere it is the angular gradient
/// `d/dtheta_i log(p0(theta) J(theta))`, which includes the surface element.
pub trait ScoreModel: Send + Sync {
    fn domain(&self) -> Domain;

    fn grad(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Unnormalized log of the function whose gradient `grad` returns, when
    /// available. Only the gradient checker uses it.
    fn log_target(&self, _x: &[f64]) -> Option<f64> {
        None
    }
}

/// Base kernel choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseKernelSpec {
    /// `exp(-|x-y|^2 / (2 sigma^2))`
    Gaussian { sigma: f64 },
    /// `exp(gamma x.y)` on the unit sphere
    Vmf { gamma: f64 },
}

impl BaseKernelSpec {
    pub fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            BaseKernelSpec::Gaussian { sigma } => ("sigma", sigma),
            BaseKernelSpec::Vmf { gamma } => ("gamma", gamma),
        };
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(KsdError::InvalidParameter(format!(
                "{name} must be positive and finite, got {v}"
            )))
        }
    }
}

/// Per-point quantities a kernel caches so pairwise evaluation is cheap.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Cartesian location
    pub(crate) embed: Vec<f64>,
    pub(crate) score: Vec<f64>,
    /// `dx/dtheta_j` rows, `(d-1) x d`; empty on R^d
    pub(crate) tangents: Vec<f64>,
}

/// Analytic partial derivatives of the base kernel at `(x, y)`, in the
/// kernel's own coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BasePartials {
    pub value: f64,
    pub grad_x: Vec<f64>,
    pub grad_y: Vec<f64>,
    /// `d^2 k / dx_i dy_i`, one entry per coordinate
    pub cross: Vec<f64>,
}

/// A Stein kernel `K0`.
///
/// `eval_prepared` must be bitwise symmetric in its arguments; Gram builders
/// rely on that to fill only one triangle.
pub trait SteinKernel: Send + Sync {
    fn domain(&self) -> Domain;

    fn score(&self) -> &dyn ScoreModel;

    /// Validates a point and caches its embedding and score.
    fn prepare(&self, x: &[f64]) -> Result<Prepared>;

    fn eval_prepared(&self, a: &Prepared, b: &Prepared) -> f64;

    fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let a = self.prepare(x)?;
        let b = self.prepare(y)?;
        let v = self.eval_prepared(&a, &b);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(KsdError::NonFinite(format!("K0(x, y) = {v}")))
        }
    }

    fn base_value(&self, x: &[f64], y: &[f64]) -> Result<f64>;

    fn base_partials(&self, x: &[f64], y: &[f64]) -> Result<BasePartials>;
}

pub(crate) fn check_score(score: Vec<f64>, expected: usize) -> Result<Vec<f64>> {
    if score.len() != expected {
        return Err(KsdError::DimensionMismatch {
            expected,
            got: score.len(),
        });
    }
    if let Some(i) = score.iter().position(|v| !v.is_finite()) {
        return Err(KsdError::NonFinite(format!(
            "score component {i} = {}",
            score[i]
        )));
    }
    Ok(score)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
