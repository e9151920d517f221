use std::fmt;

use super::sphere::{embed, log_jacobian, log_jacobian_grad};
use super::{dot, Domain, ScoreModel};
use crate::error::{KsdError, Result};

/// Score of the isotropic Gaussian `N(mean, sigma^2 I)`: `-(x - mean) / sigma^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScore {
    mean: Vec<f64>,
    sigma: f64,
}

impl GaussianScore {
    pub fn new(mean: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(KsdError::InvalidParameter(format!(
                "gaussian sigma must be positive, got {sigma}"
            )));
        }
        if mean.is_empty() || mean.iter().any(|m| !m.is_finite()) {
            return Err(KsdError::InvalidParameter(
                "gaussian mean must be a nonempty finite vector".into(),
            ));
        }
        Ok(Self { mean, sigma })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.mean.len() {
            return Err(KsdError::DimensionMismatch {
                expected: self.mean.len(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

impl ScoreModel for GaussianScore {
    fn domain(&self) -> Domain {
        Domain::Euclidean { d: self.mean.len() }
    }

    fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let s2 = self.sigma * self.sigma;
        Ok(x.iter()
            .zip(&self.mean)
            .map(|(xi, mi)| -(xi - mi) / s2)
            .collect())
    }

    fn log_target(&self, x: &[f64]) -> Option<f64> {
        self.check(x).ok()?;
        let r2: f64 = x
            .iter()
            .zip(&self.mean)
            .map(|(xi, mi)| (xi - mi) * (xi - mi))
            .sum();
        Some(-r2 / (2.0 * self.sigma * self.sigma))
    }
}

/// Uniform density on S^{d-1}. Since `p0` is constant the angular score is
/// the gradient of `log J`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformSphereScore {
    d: usize,
}

impl UniformSphereScore {
    pub fn new(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(KsdError::InvalidParameter(format!(
                "sphere dimension d must be >= 2, got {d}"
            )));
        }
        Ok(Self { d })
    }
}

impl ScoreModel for UniformSphereScore {
    fn domain(&self) -> Domain {
        Domain::Sphere { d: self.d }
    }

    fn grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        log_jacobian_grad(theta, self.d)
    }

    fn log_target(&self, theta: &[f64]) -> Option<f64> {
        log_jacobian(theta, self.d).ok()
    }
}

/// von Mises-Fisher target `p0(x) ∝ exp(kappa mu.x)` on S^{d-1}.
#[derive(Debug, Clone, PartialEq)]
pub struct VmfScore {
    mu: Vec<f64>,
    kappa: f64,
}

impl VmfScore {
    pub fn new(mu: Vec<f64>, kappa: f64) -> Result<Self> {
        if mu.len() < 2 {
            return Err(KsdError::InvalidParameter(
                "vMF direction needs d >= 2".into(),
            ));
        }
        let norm = dot(&mu, &mu).sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(KsdError::InvalidParameter(format!(
                "vMF direction must be a unit vector, |mu| = {norm}"
            )));
        }
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(KsdError::InvalidParameter(format!(
                "vMF kappa must be nonnegative, got {kappa}"
            )));
        }
        Ok(Self { mu, kappa })
    }
}

impl ScoreModel for VmfScore {
    fn domain(&self) -> Domain {
        Domain::Sphere { d: self.mu.len() }
    }

    fn grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let d = self.mu.len();
        let mut g = log_jacobian_grad(theta, d)?;
        let (_, tangents) = embed(theta);
        for (j, gj) in g.iter_mut().enumerate() {
            *gj += self.kappa * dot(&self.mu, &tangents[j * d..(j + 1) * d]);
        }
        Ok(g)
    }

    fn log_target(&self, theta: &[f64]) -> Option<f64> {
        let lj = log_jacobian(theta, self.mu.len()).ok()?;
        let (x, _) = embed(theta);
        Some(self.kappa * dot(&self.mu, &x) + lj)
    }
}

type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type LogFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Score model backed by user closures.
pub struct FnScore {
    domain: Domain,
    grad: Box<GradFn>,
    log_target: Option<Box<LogFn>>,
}

impl FnScore {
    pub fn new<G>(domain: Domain, grad: G) -> Self
    where
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            domain,
            grad: Box::new(grad),
            log_target: None,
        }
    }

    pub fn with_log_target<L>(mut self, log_target: L) -> Self
    where
        L: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        self.log_target = Some(Box::new(log_target));
        self
    }
}

impl fmt::Debug for FnScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnScore")
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

impl ScoreModel for FnScore {
    fn domain(&self) -> Domain {
        self.domain
    }

    fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let len = self.domain.coord_len();
        if x.len() != len {
            return Err(KsdError::DimensionMismatch {
                expected: len,
                got: x.len(),
            });
        }
        Ok((self.grad)(x))
    }

    fn log_target(&self, x: &[f64]) -> Option<f64> {
        self.log_target.as_ref().map(|f| f(x))
    }
}
