//! Independent oracles and spectral diagnostics.
//!
//! [`projection_oracle`] recomputes Nyström quantities as the squared norm of
//! a projected (signed) mean embedding, solving the normal equations with a
//! cyclic Jacobi eigensolver written here. It shares no linear algebra with
//! the estimator path, which goes through `nalgebra`'s symmetric eigensolver.
//!
//! The spectral summary uses the eigenvalues of the doubly centered Gram
//! divided by `n` as a plug-in for the spectrum of the centered covariance
//! operator. It is a diagnostic, not a check of any rate.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::error::{KsdError, Result};
use crate::estimators::{prepare_points, GramMatrix, DEFAULT_PINV_TOL};
use crate::stein::{Point, SteinKernel};

/// `H G H` with `H = I - 11^T / n`.
pub fn centered_gram(gram: &GramMatrix) -> GramMatrix {
    let g = gram.values();
    let n = gram.n();
    let nf = n as f64;
    let col_mean: Vec<f64> = g.column_iter().map(|c| c.sum() / nf).collect();
    let grand = col_mean.iter().sum::<f64>() / nf;
    let mut c = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            // Row means equal column means for a symmetric matrix.
            let v = g[(i, j)] - col_mean[i] - col_mean[j] + grand;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    GramMatrix::from_matrix(c).expect("centering preserves symmetry")
}

/// Shape of an eigenvalue decay, fitted on the top half of the spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecayLabel {
    /// `lambda_i ~ i^{-1/gamma}`, so that `N(lambda) ~ lambda^{-gamma}`.
    Polynomial {
        gamma: f64,
        r2: f64,
    },
    /// `lambda_i ~ exp(-rate i)`.
    Exponential {
        rate: f64,
        r2: f64,
    },
    Inconclusive,
}

impl fmt::Display for DecayLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecayLabel::Polynomial { gamma, r2 } => {
                write!(f, "polynomial(gamma={gamma:.4},r2={r2:.4})")
            }
            DecayLabel::Exponential { rate, r2 } => {
                write!(f, "exponential(rate={rate:.4},r2={r2:.4})")
            }
            DecayLabel::Inconclusive => f.write_str("inconclusive"),
        }
    }
}

/// Minimum R^2 a fit needs before it is reported.
const DECAY_R2_MIN: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSummary {
    /// Descending, clipped at zero.
    pub eigenvalues: Vec<f64>,
    pub decay: DecayLabel,
}

impl SpectrumSummary {
    pub fn from_gram(gram: &GramMatrix) -> Self {
        let c = centered_gram(gram);
        let n = gram.n() as f64;
        let mut eigenvalues: Vec<f64> = SymmetricEigen::new(c.into_inner())
            .eigenvalues
            .iter()
            .map(|v| (v / n).max(0.0))
            .collect();
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        let decay = classify_decay(&eigenvalues);
        Self { eigenvalues, decay }
    }

    /// `sum_i lambda_i / (lambda_i + lambda)`.
    pub fn effective_dimension(&self, lambda: f64) -> f64 {
        self.eigenvalues.iter().map(|&l| l / (l + lambda)).sum()
    }
}

/// Least-squares line `y = a + b x`; returns `(slope, r2)`.
fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    (slope, r2)
}

/// Fits `log lambda_i` against `log i` and against `i` over the top half of a
/// descending spectrum and keeps the better fit.
pub fn classify_decay(eigenvalues: &[f64]) -> DecayLabel {
    let Some(&top) = eigenvalues.first() else {
        return DecayLabel::Inconclusive;
    };
    if !(top > 0.0) {
        return DecayLabel::Inconclusive;
    }
    let half = eigenvalues.len().div_ceil(2);
    let pts: Vec<(f64, f64)> = eigenvalues[..half]
        .iter()
        .enumerate()
        .take_while(|(_, &l)| l > 1e-12 * top)
        .map(|(i, &l)| ((i + 1) as f64, l.ln()))
        .collect();
    if pts.len() < 3 {
        return DecayLabel::Inconclusive;
    }
    let idx: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let log_idx: Vec<f64> = idx.iter().map(|i| i.ln()).collect();
    let log_l: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (p_slope, p_r2) = linear_fit(&log_idx, &log_l);
    let (e_slope, e_r2) = linear_fit(&idx, &log_l);
    let poly = (p_slope < 0.0 && p_r2 >= DECAY_R2_MIN).then_some(DecayLabel::Polynomial {
        gamma: -1.0 / p_slope,
        r2: p_r2,
    });
    let expo = (e_slope < 0.0 && e_r2 >= DECAY_R2_MIN).then_some(DecayLabel::Exponential {
        rate: -e_slope,
        r2: e_r2,
    });
    match (poly, expo) {
        (Some(p), Some(e)) => {
            if p_r2 >= e_r2 {
                p
            } else {
                e
            }
        }
        (Some(p), None) => p,
        (None, Some(e)) => e,
        (None, None) => DecayLabel::Inconclusive,
    }
}

/// Empirical effective dimension of the centered Gram at `lambda`.
pub fn effective_dimension(gram: &GramMatrix, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(KsdError::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    Ok(SpectrumSummary::from_gram(gram).effective_dimension(lambda))
}

/// Spectral regime used to pick a landmark budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecayRegime {
    /// `N(lambda) <~ lambda^{-gamma}`, `gamma` in `(0, 1]`
    Polynomial(f64),
    Exponential,
}

/// Landmark budget with no loss in rate: `(n log n)^{1/(2-gamma)}` for
/// polynomial decay and `sqrt(n) log n` for exponential decay, rounded up and
/// capped at `n`. The constants hidden in the asymptotic bounds are taken to
/// be 1.
pub fn suggest_m(n: usize, regime: DecayRegime) -> Result<usize> {
    if n < 2 {
        return Err(KsdError::InvalidParameter(format!(
            "n must be >= 2, got {n}"
        )));
    }
    let nf = n as f64;
    let raw = match regime {
        DecayRegime::Polynomial(gamma) => {
            if !(gamma > 0.0 && gamma <= 1.0) {
                return Err(KsdError::InvalidParameter(format!(
                    "polynomial decay exponent must be in (0, 1], got {gamma}"
                )));
            }
            (nf * nf.ln()).powf(1.0 / (2.0 - gamma))
        }
        DecayRegime::Exponential => nf.sqrt() * nf.ln(),
    };
    Ok((raw.ceil() as usize).clamp(1, n))
}

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix.
/// Returns eigenvalues and eigenvectors as columns.
fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let k = a.nrows();
    let mut a = a.clone();
    let mut v = DMatrix::<f64>::identity(k, k);
    for _sweep in 0..100 {
        let off: f64 = (0..k)
            .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        let diag: f64 = (0..k).map(|i| a[(i, i)] * a[(i, i)]).sum();
        if off <= 1e-32 * diag || off == 0.0 {
            break;
        }
        for p in 0..k {
            for q in p + 1..k {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..k {
                    let arp = a[(r, p)];
                    let arq = a[(r, q)];
                    a[(r, p)] = c * arp - s * arq;
                    a[(r, q)] = s * arp + c * arq;
                }
                for r in 0..k {
                    let apr = a[(p, r)];
                    let aqr = a[(q, r)];
                    a[(p, r)] = c * apr - s * aqr;
                    a[(q, r)] = s * apr + c * aqr;
                }
                for r in 0..k {
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = c * vrp - s * vrq;
                    v[(r, q)] = s * vrp + c * vrq;
                }
            }
        }
    }
    ((0..k).map(|i| a[(i, i)]).collect(), v)
}

/// Largest instance [`projection_oracle`] accepts.
pub const ORACLE_MAX_N: usize = 200;

/// `|| P mu_w ||^2` where `mu_w = (1/n) sum_i w_i K0(., X_i)` and `P` projects
/// onto the span of the landmark features.
///
/// Solves `G_mm alpha = beta`, `beta = G_mn w / n`, for the minimum-norm
/// `alpha` via a Jacobi eigendecomposition (eigenvalues at or below
/// `1e-10 * lambda_max` are dropped) and returns `alpha^T G_mm alpha`.
pub fn projection_oracle(
    kernel: &dyn SteinKernel,
    points: &[Point],
    indices: &[usize],
    weights: &[f64],
) -> Result<f64> {
    let n = points.len();
    if n == 0 || n > ORACLE_MAX_N {
        return Err(KsdError::InvalidParameter(format!(
            "projection oracle supports 1..={ORACLE_MAX_N} points, got {n}"
        )));
    }
    if weights.len() != n {
        return Err(KsdError::DimensionMismatch {
            expected: n,
            got: weights.len(),
        });
    }
    if indices.is_empty() || indices.iter().any(|&i| i >= n) {
        return Err(KsdError::InvalidParameter(
            "invalid landmark indices".into(),
        ));
    }
    let m = indices.len();
    let landmarks: Vec<Point> = indices.iter().map(|&i| points[i].clone()).collect();
    let lp = prepare_points(kernel, &landmarks)?;
    let xp = prepare_points(kernel, points)?;

    let g_mm = DMatrix::from_fn(m, m, |a, b| kernel.eval_prepared(&lp[a], &lp[b]));
    let beta: Vec<f64> = (0..m)
        .map(|a| {
            (0..n)
                .map(|j| weights[j] * kernel.eval_prepared(&lp[a], &xp[j]))
                .sum::<f64>()
                / n as f64
        })
        .collect();

    let (vals, vecs) = jacobi_eigen(&g_mm);
    let lmax = vals.iter().cloned().fold(0.0f64, f64::max);
    let mut alpha = vec![0.0; m];
    for (l, &val) in vals.iter().enumerate() {
        if !(val > DEFAULT_PINV_TOL * lmax) {
            continue;
        }
        let q = vecs.column(l);
        let coeff = q.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() / val;
        for (a, qa) in alpha.iter_mut().zip(q.iter()) {
            *a += coeff * qa;
        }
    }
    let mut value = 0.0;
    for a in 0..m {
        for b in 0..m {
            value += alpha[a] * g_mm[(a, b)] * alpha[b];
        }
    }
    Ok(value)
}

/// z-score of the sample mean of `K0(x*, X_i)`, `X_i ~ p0`; near-standard
/// normal when the kernel's score matches the sampler.
pub fn stein_identity_check<R, S>(
    kernel: &dyn SteinKernel,
    sampler: S,
    x_star: &Point,
    n: usize,
    rng: &mut R,
) -> Result<f64>
where
    R: Rng + ?Sized,
    S: FnOnce(usize, &mut R) -> Result<Vec<Point>>,
{
    if n < 2 {
        return Err(KsdError::InvalidParameter(format!(
            "n must be >= 2, got {n}"
        )));
    }
    let samples = sampler(n, rng)?;
    let star = kernel.prepare(x_star)?;
    let prep = prepare_points(kernel, &samples)?;
    let values: Vec<f64> = prep
        .iter()
        .map(|p| kernel.eval_prepared(&star, p))
        .collect();
    let nf = values.len() as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    Ok(mean / (var.sqrt() / nf.sqrt()))
}
