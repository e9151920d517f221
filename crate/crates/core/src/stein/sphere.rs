//! Hyperspherical coordinates on S^{d-1}.
//!
//! Angles `theta = (theta_1, ..., theta_{d-1})` map to Cartesian coordinates by
//!
//! ```text
//! x_k = cos(theta_k) * prod_{i<k} sin(theta_i)     k = 1..d-1
//! x_d = prod_{i<=d-1} sin(theta_i)
//! ```
//!
//! with `theta_i` in `[0, pi]` for `i <= d-2` and `theta_{d-1}` in `[0, 2pi)`.
//! The surface element is `J(theta) = prod_{i=1}^{d-2} sin^{d-i-1}(theta_i)`.

use std::f64::consts::{PI, TAU};

use crate::error::{KsdError, Result};

/// `|sin(theta_i)|` below this is treated as sitting on a pole.
pub(crate) const POLE_EPS: f64 = 1e-15;

fn check_len(theta: &[f64], d: usize) -> Result<()> {
    if d < 2 {
        return Err(KsdError::InvalidParameter(format!(
            "sphere dimension d must be >= 2, got {d}"
        )));
    }
    if theta.len() != d - 1 {
        return Err(KsdError::DimensionMismatch {
            expected: d - 1,
            got: theta.len(),
        });
    }
    Ok(())
}

/// Checks that `theta` lies in the admissible angular box for `S^{d-1}`.
pub fn check_angular_box(theta: &[f64], d: usize) -> Result<()> {
    check_len(theta, d)?;
    for (i, &t) in theta.iter().enumerate() {
        if !t.is_finite() {
            return Err(KsdError::NonFinite(format!("theta[{i}] = {t}")));
        }
        let ok = if i + 1 < d - 1 {
            (0.0..=PI).contains(&t)
        } else {
            (0.0..TAU).contains(&t)
        };
        if !ok {
            return Err(KsdError::Domain(format!(
                "theta[{i}] = {t} outside its admissible range"
            )));
        }
    }
    Ok(())
}

/// Maps angular coordinates to a unit vector in R^d.
pub fn sphere_to_cartesian(theta: &[f64], d: usize) -> Result<Vec<f64>> {
    check_angular_box(theta, d)?;
    Ok(embed(theta).0)
}

/// Cartesian image of `theta` and the tangent vectors `dx/dtheta_j`, stored
/// row-major as `(d-1) x d`. No range checks; callers validate.
pub(crate) fn embed(theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let a = theta.len();
    let d = a + 1;
    let sin: Vec<f64> = theta.iter().map(|t| t.sin()).collect();
    let cos: Vec<f64> = theta.iter().map(|t| t.cos()).collect();

    let mut x = vec![0.0; d];
    let mut prefix = 1.0;
    for k in 0..a {
        x[k] = cos[k] * prefix;
        prefix *= sin[k];
    }
    x[a] = prefix;

    // Product of sin(theta_i) over i < upto, skipping i == skip.
    let prod_except = |upto: usize, skip: usize| -> f64 {
        (0..upto)
            .filter(|&i| i != skip)
            .map(|i| sin[i])
            .product::<f64>()
    };

    let mut tangents = vec![0.0; a * d];
    for j in 0..a {
        let row = &mut tangents[j * d..(j + 1) * d];
        for k in 0..a {
            row[k] = if j < k {
                cos[k] * cos[j] * prod_except(k, j)
            } else if j == k {
                -sin[k] * prod_except(k, usize::MAX)
            } else {
                0.0
            };
        }
        row[a] = cos[j] * prod_except(a, j);
    }
    (x, tangents)
}

/// `log J(theta)`; `-inf` on a pole.
pub fn log_jacobian(theta: &[f64], d: usize) -> Result<f64> {
    check_len(theta, d)?;
    Ok(theta
        .iter()
        .take(d - 2)
        .enumerate()
        .map(|(i, t)| (d - i - 2) as f64 * t.sin().ln())
        .sum())
}

/// Gradient of `log J(theta)`: `(d-i-1) cot(theta_i)` for `i <= d-2`, and 0
/// for the last angle.
pub fn log_jacobian_grad(theta: &[f64], d: usize) -> Result<Vec<f64>> {
    check_len(theta, d)?;
    let mut g = vec![0.0; d - 1];
    for (i, t) in theta.iter().take(d - 2).enumerate() {
        let s = t.sin();
        if s.abs() < POLE_EPS {
            return Err(KsdError::Domain(format!(
                "theta[{i}] = {t} sits on a pole of the coordinate chart"
            )));
        }
        g[i] = (d - i - 2) as f64 * t.cos() / s;
    }
    Ok(g)
}
