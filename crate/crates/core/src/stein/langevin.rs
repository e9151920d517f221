use std::sync::Arc;

use super::{check_score, BasePartials, Domain, Prepared, ScoreModel, SteinKernel};
use crate::error::{KsdError, Result};

/// Langevin-Stein kernel on R^d with Gaussian base kernel
/// `k(x, y) = exp(-|x-y|^2 / (2 sigma^2))`:
///
/// ```text
/// K0(x, y) = s(x).s(y) k + s(y).grad_x k + s(x).grad_y k + sum_i d^2k/dx_i dy_i
/// ```
///
/// with `grad_x k = -(x-y) k / sigma^2`, `grad_y k = (x-y) k / sigma^2` and
/// `sum_i d^2k/dx_i dy_i = k (d / sigma^2 - |x-y|^2 / sigma^4)`.
#[derive(Clone)]
pub struct LangevinStein {
    score: Arc<dyn ScoreModel>,
    sigma: f64,
    d: usize,
}

impl std::fmt::Debug for LangevinStein {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LangevinStein")
            .field("sigma", &self.sigma)
            .field("d", &self.d)
            .finish()
    }
}

impl LangevinStein {
    pub fn new(score: Arc<dyn ScoreModel>, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(KsdError::InvalidParameter(format!(
                "bandwidth sigma must be positive, got {sigma}"
            )));
        }
        let d = match score.domain() {
            Domain::Euclidean { d } if d >= 1 => d,
            other => {
                return Err(KsdError::InvalidParameter(format!(
                    "Langevin-Stein kernel needs a Euclidean score model, got {other:?}"
                )))
            }
        };
        Ok(Self { score, sigma, d })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(KsdError::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(())
    }
}

impl SteinKernel for LangevinStein {
    fn domain(&self) -> Domain {
        Domain::Euclidean { d: self.d }
    }

    fn score(&self) -> &dyn ScoreModel {
        self.score.as_ref()
    }

    fn prepare(&self, x: &[f64]) -> Result<Prepared> {
        self.check_dim(x)?;
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(KsdError::NonFinite(format!("coordinate {i} = {}", x[i])));
        }
        let score = check_score(self.score.grad(x)?, self.d)?;
        Ok(Prepared {
            embed: x.to_vec(),
            score,
            tangents: Vec::new(),
        })
    }

    fn eval_prepared(&self, a: &Prepared, b: &Prepared) -> f64 {
        let inv_s2 = 1.0 / (self.sigma * self.sigma);
        let mut r2 = 0.0;
        let mut ss = 0.0;
        // s(x).(x-y) and s(y).(x-y); swapping arguments negates and swaps
        // them, so `sa - sb` is bitwise symmetric.
        let mut sa = 0.0;
        let mut sb = 0.0;
        for i in 0..self.d {
            let delta = a.embed[i] - b.embed[i];
            r2 += delta * delta;
            ss += a.score[i] * b.score[i];
            sa += a.score[i] * delta;
            sb += b.score[i] * delta;
        }
        let k = (-0.5 * r2 * inv_s2).exp();
        k * (ss + (sa - sb) * inv_s2 + self.d as f64 * inv_s2 - r2 * inv_s2 * inv_s2)
    }

    fn base_value(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok((-0.5 * r2 / (self.sigma * self.sigma)).exp())
    }

    fn base_partials(&self, x: &[f64], y: &[f64]) -> Result<BasePartials> {
        let k = self.base_value(x, y)?;
        let inv_s2 = 1.0 / (self.sigma * self.sigma);
        let delta: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        Ok(BasePartials {
            value: k,
            grad_x: delta.iter().map(|d| -d * k * inv_s2).collect(),
            grad_y: delta.iter().map(|d| d * k * inv_s2).collect(),
            cross: delta
                .iter()
                .map(|d| k * (inv_s2 - d * d * inv_s2 * inv_s2))
                .collect(),
        })
    }
}

/// `K0(x, y)` for a Euclidean score and Gaussian bandwidth `sigma`.
pub fn langevin_stein_eval(
    score: Arc<dyn ScoreModel>,
    sigma: f64,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    let kernel = LangevinStein::new(score, sigma)?;
    if y.len() != x.len() {
        return Err(KsdError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    kernel.eval(x, y)
}
