//! Seeded samplers for the targets and alternatives, and their score models.
//!
//! Spherical samplers return angular coordinates in the chart used by the
//! directional Stein kernel.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::error::{KsdError, Result};
use crate::stein::{GaussianScore, Point, UniformSphereScore};

/// Polar angles closer than this to 0 or pi are pushed inward so the
/// coordinate chart never sees an exact pole.
pub const POLE_NUDGE: f64 = 1e-12;

/// von Mises-Fisher parameters: density `∝ exp(kappa mu.x)` on S^{d-1}.
#[derive(Debug, Clone, PartialEq)]
pub struct VmfSpec {
    mu: Vec<f64>,
    kappa: f64,
}

impl VmfSpec {
    pub fn new(mu: Vec<f64>, kappa: f64) -> Result<Self> {
        if mu.len() < 2 {
            return Err(KsdError::InvalidParameter(
                "vMF direction needs d >= 2".into(),
            ));
        }
        let norm = mu.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= 1e-12) {
            return Err(KsdError::InvalidParameter(format!(
                "vMF direction must be a unit vector, |mu| = {norm}"
            )));
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(KsdError::InvalidParameter(format!(
                "vMF kappa must be >= 0, got {kappa}"
            )));
        }
        Ok(Self { mu, kappa })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn d(&self) -> usize {
        self.mu.len()
    }
}

/// Inverse of the hyperspherical chart. `x` need not be normalized but must
/// be nonzero. Polar angles are nudged off the poles by [`POLE_NUDGE`]; the
/// azimuth lands in `[0, 2pi)`.
pub fn cartesian_to_sphere(x: &[f64]) -> Result<Vec<f64>> {
    let d = x.len();
    if d < 2 {
        return Err(KsdError::InvalidParameter(format!(
            "sphere dimension d must be >= 2, got {d}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(KsdError::NonFinite("cartesian point".into()));
    }
    // tail[k] = |x_k..x_{d-1}|
    let mut tail = vec![0.0; d + 1];
    for k in (0..d).rev() {
        tail[k] = (tail[k + 1] * tail[k + 1] + x[k] * x[k]).sqrt();
    }
    if tail[0] == 0.0 {
        return Err(KsdError::Domain("zero vector has no direction".into()));
    }
    let mut theta = Vec::with_capacity(d - 1);
    for k in 0..d - 2 {
        let t = tail[k + 1].atan2(x[k]);
        theta.push(t.clamp(POLE_NUDGE, PI - POLE_NUDGE));
    }
    let mut last = x[d - 1].atan2(x[d - 2]).rem_euclid(TAU);
    if last >= TAU {
        last = 0.0;
    }
    theta.push(last);
    Ok(theta)
}

fn standard_normal_vec<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// `n` i.i.d. draws from `N(mean, sigma^2 I)`.
pub fn sample_gaussian<R: Rng + ?Sized>(
    mean: &[f64],
    sigma: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Point>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(KsdError::InvalidParameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    Ok((0..n)
        .map(|_| {
            Point::new(
                mean.iter()
                    .map(|m| m + sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            )
        })
        .collect())
}

fn random_unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let z = standard_normal_vec(d, rng);
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            return z.into_iter().map(|v| v / norm).collect();
        }
    }
}

/// `n` uniform draws on S^{d-1}, as angular coordinates.
pub fn sample_uniform_sphere<R: Rng + ?Sized>(
    d: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Point>> {
    if d < 2 {
        return Err(KsdError::InvalidParameter(format!(
            "sphere dimension d must be >= 2, got {d}"
        )));
    }
    (0..n)
        .map(|_| cartesian_to_sphere(&random_unit_vector(d, rng)).map(Point::new))
        .collect()
}

/// Exact vMF draws in Cartesian coordinates (Wood's rejection scheme).
///
/// `w = mu.x` is drawn from its marginal `∝ exp(kappa w) (1-w^2)^{(d-3)/2}`
/// using a Beta((d-1)/2, (d-1)/2) envelope; the tangent component is a
/// uniform direction orthogonal to `mu`.
pub fn sample_vmf_cartesian<R: Rng + ?Sized>(
    spec: &VmfSpec,
    n: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let d = spec.d();
    let dm1 = (d - 1) as f64;
    let kappa = spec.kappa;
    // b = (-2k + sqrt(4k^2 + (d-1)^2)) / (d-1), rearranged to avoid cancellation.
    let b = dm1 / (2.0 * kappa + (4.0 * kappa * kappa + dm1 * dm1).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + dm1 * (1.0 - x0 * x0).ln();
    let beta = Beta::new(dm1 / 2.0, dm1 / 2.0).expect("valid beta parameters");

    (0..n)
        .map(|_| {
            let w = loop {
                let z: f64 = beta.sample(rng);
                let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
                let u: f64 = rng.random();
                if kappa * w + dm1 * (1.0 - x0 * w).ln() - c >= u.ln() {
                    break w.clamp(-1.0, 1.0);
                }
            };
            let v = loop {
                let z = standard_normal_vec(d, rng);
                let along: f64 = z.iter().zip(&spec.mu).map(|(a, m)| a * m).sum();
                let perp: Vec<f64> = z.iter().zip(&spec.mu).map(|(a, m)| a - along * m).collect();
                let norm = perp.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1e-300 {
                    break perp.into_iter().map(|p| p / norm).collect::<Vec<_>>();
                }
            };
            let r = (1.0 - w * w).max(0.0).sqrt();
            spec.mu.iter().zip(&v).map(|(m, t)| w * m + r * t).collect()
        })
        .collect()
}

/// `n` vMF draws as angular coordinates.
pub fn sample_vmf<R: Rng + ?Sized>(spec: &VmfSpec, n: usize, rng: &mut R) -> Result<Vec<Point>> {
    sample_vmf_cartesian(spec, n, rng)
        .into_iter()
        .map(|x| cartesian_to_sphere(&x).map(Point::new))
        .collect()
}

/// Score of `N(mean, sigma^2 I)`.
pub fn score_gaussian(mean: Vec<f64>, sigma: f64) -> Result<GaussianScore> {
    GaussianScore::new(mean, sigma)
}

/// Angular score of the uniform distribution on S^{d-1}.
pub fn score_uniform_sphere(d: usize) -> Result<UniformSphereScore> {
    UniformSphereScore::new(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::stein::sphere::{check_angular_box, sphere_to_cartesian};

    /// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
    fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    /// Asymptotic KS critical value at level 0.01.
    fn ks_crit_01(n: usize) -> f64 {
        1.628 / (n as f64).sqrt()
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = RngStream::new(1, 0).rng();
        let x = sample_gaussian(&[0.0], 1.0, 100_000, &mut rng).unwrap();
        let n = x.len() as f64;
        let mean = x.iter().map(|p| p[0]).sum::<f64>() / n;
        let var = x.iter().map(|p| (p[0] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 0.016, "mean {mean}");
        assert!((0.97..=1.03).contains(&var), "var {var}");
    }

    #[test]
    fn gaussian_is_deterministic_per_stream() {
        let a = sample_gaussian(&[1.0, 2.0], 0.5, 10, &mut RngStream::new(5, 1).rng()).unwrap();
        let b = sample_gaussian(&[1.0, 2.0], 0.5, 10, &mut RngStream::new(5, 1).rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn streams_are_uncorrelated() {
        let n = 100_000;
        let a = sample_gaussian(&[0.0], 1.0, n, &mut RngStream::new(5, 1).rng()).unwrap();
        let b = sample_gaussian(&[0.0], 1.0, n, &mut RngStream::new(5, 2).rng()).unwrap();
        let corr = a.iter().zip(&b).map(|(x, y)| x[0] * y[0]).sum::<f64>() / n as f64;
        assert!(corr.abs() < 5.0 / (n as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn cartesian_round_trip() {
        for d in 2..6 {
            let mut rng = RngStream::new(d as u64, 0).rng();
            for _ in 0..200 {
                let x = random_unit_vector(d, &mut rng);
                let theta = cartesian_to_sphere(&x).unwrap();
                check_angular_box(&theta, d).unwrap();
                let back = sphere_to_cartesian(&theta, d).unwrap();
                for (a, b) in x.iter().zip(&back) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn cartesian_poles_are_nudged() {
        let theta = cartesian_to_sphere(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(theta[0], POLE_NUDGE);
        let theta = cartesian_to_sphere(&[-1.0, 0.0, 0.0]).unwrap();
        assert_eq!(theta[0], PI - POLE_NUDGE);
        assert!(cartesian_to_sphere(&[0.0, 0.0]).is_err());
        let theta = cartesian_to_sphere(&[1.0, -1e-300]).unwrap();
        assert!(theta[0] < TAU);
    }

    #[test]
    fn uniform_sphere_mean_resultant() {
        for d in [2usize, 3] {
            let n = 100_000;
            let x = sample_uniform_sphere(d, n, &mut RngStream::new(21, d as u64).rng()).unwrap();
            let mut mean = vec![0.0; d];
            for p in &x {
                let c = sphere_to_cartesian(p, d).unwrap();
                let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-12);
                for (m, v) in mean.iter_mut().zip(&c) {
                    *m += v / n as f64;
                }
            }
            let r = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(r <= 5.0 / ((n * d) as f64).sqrt(), "d={d} r={r}");
        }
    }

    #[test]
    fn uniform_circle_angles_pass_ks() {
        let n = 10_000;
        let x = sample_uniform_sphere(2, n, &mut RngStream::new(3, 3).rng()).unwrap();
        let ks = ks_statistic(x.iter().map(|p| p[0]).collect(), |t| t / TAU);
        assert!(ks < ks_crit_01(n), "ks {ks}");
    }

    #[test]
    fn vmf_zero_concentration_is_uniform() {
        let n = 10_000;
        let spec = VmfSpec::new(vec![1.0, 0.0, 0.0], 0.0).unwrap();
        let x = sample_vmf_cartesian(&spec, n, &mut RngStream::new(8, 0).rng());
        // On S^2 the marginal of mu.x is uniform on [-1, 1].
        let ks = ks_statistic(x.iter().map(|v| v[0]).collect(), |w| (w + 1.0) / 2.0);
        assert!(ks < ks_crit_01(n), "ks {ks}");
    }

    #[test]
    fn vmf_mean_resultant_length() {
        let n = 100_000;
        let spec = VmfSpec::new(vec![1.0, 0.0, 0.0], 2.0).unwrap();
        let w: Vec<f64> = sample_vmf_cartesian(&spec, n, &mut RngStream::new(9, 0).rng())
            .into_iter()
            .map(|v| v[0])
            .collect();
        let mean = w.iter().sum::<f64>() / n as f64;
        let sd = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        let expected = 1.0 / 2.0f64.tanh() - 0.5;
        assert!((expected - 0.537_314).abs() < 1e-6);
        assert!(
            (mean - expected).abs() <= 5.0 * sd / (n as f64).sqrt(),
            "{mean}"
        );
    }

    #[test]
    fn vmf_high_concentration() {
        let spec = VmfSpec::new(vec![1.0, 0.0, 0.0], 50.0).unwrap();
        let x = sample_vmf(&spec, 10_000, &mut RngStream::new(10, 0).rng()).unwrap();
        let close = x
            .iter()
            .filter(|t| sphere_to_cartesian(t, 3).unwrap()[0] > 0.8)
            .count();
        assert!(close as f64 / 10_000.0 >= 0.99);
    }

    #[test]
    fn vmf_stays_in_box_and_rejects_bad_spec() {
        for d in [2usize, 3, 5] {
            let mut mu = vec![0.0; d];
            mu[d - 1] = 1.0;
            let spec = VmfSpec::new(mu, 3.0).unwrap();
            for p in sample_vmf(&spec, 2_000, &mut RngStream::new(2, d as u64).rng()).unwrap() {
                check_angular_box(&p, d).unwrap();
            }
        }
        assert!(VmfSpec::new(vec![1.0, 0.0], -1.0).is_err());
        assert!(VmfSpec::new(vec![1.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn von_mises_on_circle() {
        // d = 2: mean of cos(theta - 0) is I1(k)/I0(k); for k = 0.5 that is 0.242_7.
        let spec = VmfSpec::new(vec![1.0, 0.0], 0.5).unwrap();
        let n = 100_000;
        let c: Vec<f64> = sample_vmf_cartesian(&spec, n, &mut RngStream::new(12, 0).rng())
            .into_iter()
            .map(|v| v[0])
            .collect();
        let mean = c.iter().sum::<f64>() / n as f64;
        // Series for the Bessel ratio at k = 0.5.
        let i = |nu: i32| -> f64 {
            (0..30)
                .map(|m| {
                    let mf = (1..=m).map(|j| j as f64).product::<f64>();
                    let mnf = (1..=(m + nu)).map(|j| j as f64).product::<f64>();
                    0.25f64.powi(2 * m + nu) / (mf * mnf)
                })
                .sum()
        };
        let expected = i(1) / i(0);
        assert!(
            (mean - expected).abs() < 5.0 * 0.71 / (n as f64).sqrt(),
            "{mean} vs {expected}"
        );
    }
}
