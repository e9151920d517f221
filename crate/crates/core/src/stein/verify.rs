use super::{Point, SteinKernel};

/// Step used for the mixed second derivative stencil, relative to the
/// first-derivative step. A plain `h` would leave roundoff at `eps / h^2`.
const CROSS_STEP_FACTOR: f64 = 10.0;

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1.0)
}

fn shifted(v: &[f64], i: usize, by: f64) -> Vec<f64> {
    let mut w = v.to_vec();
    w[i] += by;
    w
}

/// Checks every analytic derivative a Stein kernel uses against central
/// finite differences of the base kernel and of the log target.
///
/// Compared quantities per pair and coordinate: `dk/dx_i`, `dk/dy_i`,
/// `d^2k/dx_i dy_i`, and the score at both points when the score model
/// exposes `log_target`. The error of one comparison is
/// `|a - f| / max(|a|, |f|, 1)`. Returns the maximum over all comparisons;
/// any NaN (including a failed evaluation) makes the result NaN.
pub fn verify_kernel_gradients(
    kernel: &dyn SteinKernel,
    pairs: &[(Point, Point)],
    step: f64,
) -> f64 {
    let h = step;
    let h2 = step * CROSS_STEP_FACTOR;
    let score = kernel.score();
    let k = |a: &[f64], b: &[f64]| kernel.base_value(a, b).unwrap_or(f64::NAN);
    let mut worst = 0.0f64;
    let mut record = |e: f64| {
        if e.is_nan() || worst.is_nan() {
            worst = f64::NAN;
        } else {
            worst = worst.max(e);
        }
    };

    for (x, y) in pairs {
        let partials = match kernel.base_partials(x, y) {
            Ok(p) => p,
            Err(_) => {
                record(f64::NAN);
                continue;
            }
        };
        for i in 0..x.len() {
            let gx = (k(&shifted(x, i, h), y) - k(&shifted(x, i, -h), y)) / (2.0 * h);
            let gy = (k(x, &shifted(y, i, h)) - k(x, &shifted(y, i, -h))) / (2.0 * h);
            let (xp, xm) = (shifted(x, i, h2), shifted(x, i, -h2));
            let (yp, ym) = (shifted(y, i, h2), shifted(y, i, -h2));
            let cross = (k(&xp, &yp) - k(&xp, &ym) - k(&xm, &yp) + k(&xm, &ym)) / (4.0 * h2 * h2);
            record(rel_err(partials.grad_x[i], gx));
            record(rel_err(partials.grad_y[i], gy));
            record(rel_err(partials.cross[i], cross));
        }
        for p in [x, y] {
            if score.log_target(p).is_none() {
                continue;
            }
            let g = match score.grad(p) {
                Ok(g) => g,
                Err(_) => {
                    record(f64::NAN);
                    continue;
                }
            };
            let lt = |v: &[f64]| score.log_target(v).unwrap_or(f64::NAN);
            for (i, gi) in g.iter().enumerate() {
                let fd = (lt(&shifted(p, i, h)) - lt(&shifted(p, i, -h))) / (2.0 * h);
                record(rel_err(*gi, fd));
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::stein::{
        DirectionalStein, GaussianScore, LangevinStein, ScoreModel, UniformSphereScore,
    };
    use rand::Rng;
    use std::sync::Arc;

    fn gaussian_pairs(n: usize) -> Vec<(Point, Point)> {
        let mut rng = RngStream::new(11, 0).rng();
        (0..n)
            .map(|_| {
                let mut p = || Point::new((0..3).map(|_| rng.random_range(-2.0..2.0)).collect());
                (p(), p())
            })
            .collect()
    }

    fn angular_pairs(n: usize) -> Vec<(Point, Point)> {
        let mut rng = RngStream::new(12, 0).rng();
        (0..n)
            .map(|_| {
                let mut p = || {
                    Point::new(vec![
                        rng.random_range(0.2..std::f64::consts::PI - 0.2),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    ])
                };
                (p(), p())
            })
            .collect()
    }

    fn langevin() -> LangevinStein {
        let score: Arc<dyn ScoreModel> = Arc::new(GaussianScore::new(vec![0.0; 3], 1.0).unwrap());
        LangevinStein::new(score, 1.0).unwrap()
    }

    fn directional() -> DirectionalStein {
        DirectionalStein::new(Arc::new(UniformSphereScore::new(3).unwrap()), 0.28).unwrap()
    }

    #[test]
    fn gaussian_kernel_derivatives() {
        let err = verify_kernel_gradients(&langevin(), &gaussian_pairs(100), 1e-5);
        assert!(err <= 1e-5, "max rel err {err:e}");
    }

    #[test]
    fn vmf_kernel_derivatives() {
        let err = verify_kernel_gradients(&directional(), &angular_pairs(100), 1e-5);
        assert!(err <= 1e-5, "max rel err {err:e}");
    }

    #[test]
    fn halving_the_step_does_not_hurt() {
        let pairs = gaussian_pairs(20);
        let e1 = verify_kernel_gradients(&langevin(), &pairs, 1e-4);
        let e2 = verify_kernel_gradients(&langevin(), &pairs, 5e-5);
        assert!(e2 <= e1.max(1e-7), "{e1:e} -> {e2:e}");
        let pairs = angular_pairs(20);
        let e1 = verify_kernel_gradients(&directional(), &pairs, 1e-4);
        let e2 = verify_kernel_gradients(&directional(), &pairs, 5e-5);
        assert!(e2 <= e1.max(1e-7), "{e1:e} -> {e2:e}");
    }

    #[test]
    fn failed_evaluation_is_nan() {
        let pairs = vec![(Point::new(vec![0.0, 1.0]), Point::new(vec![0.0]))];
        assert!(verify_kernel_gradients(&langevin(), &pairs, 1e-5).is_nan());
    }
}
