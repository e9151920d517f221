use std::sync::Arc;

use super::sphere::{check_angular_box, embed};
use super::{check_score, dot, BasePartials, Domain, Prepared, ScoreModel, SteinKernel};
use crate::error::{KsdError, Result};

/// Stein kernel on S^{d-1} in angular coordinates, with base kernel
/// `k(x, x~) = exp(gamma x.x~)` composed with the coordinate chart:
///
/// ```text
/// K0(t, t~) = sum_i [ k u_i u~_i + u_i dk/dt~_i + u~_i dk/dt_i + d^2k/dt_i dt~_i ]
/// ```
///
/// where `u = grad_theta log(p0 J)`. With `T_i = dx/dtheta_i` the chain rule
/// gives `dk/dt_i = gamma k T_i.x~` and
/// `d^2k/dt_i dt~_i = gamma k (T_i.T~_i + gamma (T_i.x~)(x.T~_i))`.
#[derive(Clone)]
pub struct DirectionalStein {
    score: Arc<dyn ScoreModel>,
    gamma: f64,
    d: usize,
}

impl std::fmt::Debug for DirectionalStein {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DirectionalStein")
            .field("gamma", &self.gamma)
            .field("d", &self.d)
            .finish()
    }
}

impl DirectionalStein {
    pub fn new(score: Arc<dyn ScoreModel>, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(KsdError::InvalidParameter(format!(
                "vMF kernel gamma must be positive, got {gamma}"
            )));
        }
        let d = match score.domain() {
            Domain::Sphere { d } if d >= 2 => d,
            other => return Err(KsdError::InvalidParameter(format!(
                "directional Stein kernel needs a spherical score model with d >= 2, got {other:?}"
            ))),
        };
        Ok(Self { score, gamma, d })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    fn check_len(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.d - 1 {
            return Err(KsdError::DimensionMismatch {
                expected: self.d - 1,
                got: theta.len(),
            });
        }
        Ok(())
    }
}

impl SteinKernel for DirectionalStein {
    fn domain(&self) -> Domain {
        Domain::Sphere { d: self.d }
    }

    fn score(&self) -> &dyn ScoreModel {
        self.score.as_ref()
    }

    fn prepare(&self, theta: &[f64]) -> Result<Prepared> {
        check_angular_box(theta, self.d)?;
        let score = check_score(self.score.grad(theta)?, self.d - 1)?;
        let (embed, tangents) = embed(theta);
        Ok(Prepared {
            embed,
            score,
            tangents,
        })
    }

    fn eval_prepared(&self, a: &Prepared, b: &Prepared) -> f64 {
        let d = self.d;
        let g = self.gamma;
        let k = (g * dot(&a.embed, &b.embed)).exp();
        let mut sum = 0.0;
        for i in 0..d - 1 {
            let ta = &a.tangents[i * d..(i + 1) * d];
            let tb = &b.tangents[i * d..(i + 1) * d];
            let p = dot(ta, &b.embed);
            let q = dot(&a.embed, tb);
            let tt = dot(ta, tb);
            let (ua, ub) = (a.score[i], b.score[i]);
            // Written so that swapping (a, b) swaps (p, q) and (ua, ub) and
            // leaves the result bitwise unchanged.
            sum += ua * ub + g * (ua * q + ub * p) + g * (tt + g * (p * q));
        }
        k * sum
    }

    fn base_value(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        self.check_len(y)?;
        let (ex, _) = embed(x);
        let (ey, _) = embed(y);
        Ok((self.gamma * dot(&ex, &ey)).exp())
    }

    fn base_partials(&self, x: &[f64], y: &[f64]) -> Result<BasePartials> {
        self.check_len(x)?;
        self.check_len(y)?;
        let d = self.d;
        let g = self.gamma;
        let (ex, tx) = embed(x);
        let (ey, ty) = embed(y);
        let k = (g * dot(&ex, &ey)).exp();
        let mut out = BasePartials {
            value: k,
            grad_x: Vec::with_capacity(d - 1),
            grad_y: Vec::with_capacity(d - 1),
            cross: Vec::with_capacity(d - 1),
        };
        for i in 0..d - 1 {
            let ta = &tx[i * d..(i + 1) * d];
            let tb = &ty[i * d..(i + 1) * d];
            let p = dot(ta, &ey);
            let q = dot(&ex, tb);
            out.grad_x.push(g * k * p);
            out.grad_y.push(g * k * q);
            out.cross.push(g * k * (dot(ta, tb) + g * p * q));
        }
        Ok(out)
    }
}

/// `K0(theta, theta~)` for a spherical score and vMF base kernel `gamma`.
pub fn directional_stein_eval(
    score: Arc<dyn ScoreModel>,
    gamma: f64,
    theta: &[f64],
    theta_t: &[f64],
) -> Result<f64> {
    DirectionalStein::new(score, gamma)?.eval(theta, theta_t)
}
