//! Wild bootstrap, its Nyström acceleration, and the goodness-of-fit test.
//!
//! The test computes `n D^2` (exact) or `n D~^2` (Nyström), draws `c_b`
//! bootstrap replicates `n B^2` / `n B~^2` with i.i.d. Rademacher weights, and
//! rejects when the statistic strictly exceeds the empirical `1 - alpha`
//! quantile of the replicates.
//!
//! Replicate `b` draws its weights from stream `b` of the test seed, so the
//! replicates can be computed in any order or in parallel and the result is
//! the same bit for bit. The Nyström path draws one landmark set per test
//! (from [`LANDMARK_STREAM`]) and reuses it for the statistic and every
//! replicate.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{KsdError, Result};
use crate::estimators::{
    gram_from_prepared, ksd_nystrom, ksd_v_statistic, prepare_points, sample_landmarks,
    sketch_from_prepared, GramMatrix, NystromSketch, DEFAULT_PINV_TOL,
};
use crate::rng::RngStream;
use crate::stein::{Point, SteinKernel};

/// Stream id reserved for landmark selection.
pub const LANDMARK_STREAM: u64 = u64::MAX;

/// i.i.d. signs, stored as `±1.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RademacherVector(Vec<f64>);

impl RademacherVector {
    /// Wraps a sign vector; every entry must be exactly `1.0` or `-1.0`.
    pub fn from_signs(signs: Vec<f64>) -> Result<Self> {
        if signs.iter().all(|&s| s == 1.0 || s == -1.0) {
            Ok(Self(signs))
        } else {
            Err(KsdError::InvalidParameter(
                "Rademacher entries must be +1 or -1".into(),
            ))
        }
    }

    pub fn signs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Neg for RademacherVector {
    type Output = RademacherVector;
    fn neg(self) -> Self {
        RademacherVector(self.0.into_iter().map(|s| -s).collect())
    }
}

/// `n` fair signs, 64 per generator word.
pub fn draw_rademacher<R: Rng + ?Sized>(n: usize, rng: &mut R) -> RademacherVector {
    let mut signs = Vec::with_capacity(n);
    while signs.len() < n {
        let bits: u64 = rng.random();
        let take = (n - signs.len()).min(64);
        signs.extend((0..take).map(|k| if (bits >> k) & 1 == 1 { 1.0 } else { -1.0 }));
    }
    RademacherVector(signs)
}

/// Fixed-order dot product. Four accumulators so the loop vectorizes; the
/// order does not depend on threading.
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `B^2 = (1/n^2) R^T G R`.
pub fn wild_bootstrap_stat(gram: &GramMatrix, r: &RademacherVector) -> Result<f64> {
    let n = gram.n();
    if r.len() != n {
        return Err(KsdError::DimensionMismatch {
            expected: n,
            got: r.len(),
        });
    }
    let g = gram.values().as_slice();
    let s = r.signs();
    let total: f64 = (0..n).map(|j| s[j] * dot4(&g[j * n..(j + 1) * n], s)).sum();
    Ok(total / (n * n) as f64)
}

/// `B~^2 = (1/n^2) (G_mn R)^T G_mm^- (G_mn R)`, in `O(nm + m^2)`.
pub fn nystrom_bootstrap_stat(
    sketch: &NystromSketch,
    r: &RademacherVector,
    n: usize,
) -> Result<f64> {
    if sketch.n() != n {
        return Err(KsdError::DimensionMismatch {
            expected: sketch.n(),
            got: n,
        });
    }
    if r.len() != n {
        return Err(KsdError::DimensionMismatch {
            expected: n,
            got: r.len(),
        });
    }
    Ok(sketch.projected_norm2(r.signs()))
}

/// The `ceil(level * len)`-th smallest draw (1-indexed).
pub fn empirical_quantile(draws: &[f64], level: f64) -> Result<f64> {
    if draws.is_empty() {
        return Err(KsdError::Empty("bootstrap draws".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(KsdError::InvalidParameter(format!(
            "quantile level must be in (0, 1), got {level}"
        )));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let c = sorted.len();
    // The slack absorbs products like 0.95 * 100 landing one ulp above 95.
    let rank = ((level * c as f64) - 1e-9).ceil() as usize;
    Ok(sorted[rank.clamp(1, c) - 1])
}

/// Exact quadratic-time test or its Nyström acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Exact,
    Nystrom,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Exact => "exact",
            Method::Nystrom => "nystrom",
        })
    }
}

impl FromStr for Method {
    type Err = KsdError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "exact" => Ok(Method::Exact),
            "nystrom" => Ok(Method::Nystrom),
            other => Err(KsdError::Parse(format!(
                "unknown method '{other}' (expected exact or nystrom)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestConfig {
    pub alpha: f64,
    /// Number of bootstrap replicates.
    pub c_b: usize,
    pub method: Method,
    /// Landmark count; required for [`Method::Nystrom`].
    pub m: Option<usize>,
    pub pinv_tol: f64,
    pub seed: u64,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            c_b: 1000,
            method: Method::Exact,
            m: None,
            pinv_tol: DEFAULT_PINV_TOL,
            seed: 0,
        }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(KsdError::InvalidParameter(format!(
                "alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.c_b == 0 {
            return Err(KsdError::InvalidParameter("c_b must be at least 1".into()));
        }
        if self.m == Some(0) {
            return Err(KsdError::InvalidParameter("m must be at least 1".into()));
        }
        if self.method == Method::Nystrom && self.m.is_none() {
            return Err(KsdError::InvalidParameter(
                "the Nystrom test needs a landmark count m".into(),
            ));
        }
        if !(self.pinv_tol >= 0.0) {
            return Err(KsdError::InvalidParameter(format!(
                "pinv_tol must be >= 0, got {}",
                self.pinv_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseTimes {
    /// Kernel evaluations and the test statistic.
    pub statistic: Duration,
    /// All bootstrap replicates.
    pub bootstrap: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub method: Method,
    pub n: usize,
    pub m: Option<usize>,
    /// `n D^2` or `n D~^2`
    pub statistic: f64,
    /// Empirical `1 - alpha` quantile of the replicates.
    pub threshold: f64,
    pub reject: bool,
    /// `n B^2` or `n B~^2`, in replicate order.
    pub bootstrap_draws: Vec<f64>,
    pub wall_times: PhaseTimes,
}

fn replicate_signs(seed: u64, b: usize, n: usize) -> RademacherVector {
    draw_rademacher(n, &mut RngStream::new(seed, b as u64).rng())
}

/// Runs the goodness-of-fit test of `points` against the kernel's target.
pub fn gof_test(
    kernel: &dyn SteinKernel,
    points: &[Point],
    cfg: &TestConfig,
) -> Result<TestResult> {
    cfg.validate()?;
    let n = points.len();
    if n < 2 {
        return Err(KsdError::InvalidParameter(format!(
            "the test needs at least 2 samples, got {n}"
        )));
    }
    let nf = n as f64;

    let start = Instant::now();
    let prep = prepare_points(kernel, points)?;
    let (statistic, draws, stat_time, boot_time) = match cfg.method {
        Method::Exact => {
            let gram = gram_from_prepared(kernel, &prep)?;
            let statistic = nf * ksd_v_statistic(&gram).value;
            let stat_time = start.elapsed();
            let boot_start = Instant::now();
            let draws = (0..cfg.c_b)
                .into_par_iter()
                .map(|b| {
                    wild_bootstrap_stat(&gram, &replicate_signs(cfg.seed, b, n)).map(|v| nf * v)
                })
                .collect::<Result<Vec<_>>>()?;
            (statistic, draws, stat_time, boot_start.elapsed())
        }
        Method::Nystrom => {
            let m = cfg.m.expect("validated");
            let mut rng = RngStream::new(cfg.seed, LANDMARK_STREAM).rng();
            let indices = sample_landmarks(n, m, &mut rng);
            let sketch = sketch_from_prepared(kernel, &prep, &indices, cfg.pinv_tol)?;
            let statistic = nf * ksd_nystrom(&sketch, n)?.value;
            let stat_time = start.elapsed();
            let boot_start = Instant::now();
            let draws = (0..cfg.c_b)
                .into_par_iter()
                .map(|b| {
                    nystrom_bootstrap_stat(&sketch, &replicate_signs(cfg.seed, b, n), n)
                        .map(|v| nf * v)
                })
                .collect::<Result<Vec<_>>>()?;
            (statistic, draws, stat_time, boot_start.elapsed())
        }
    };
    let threshold = empirical_quantile(&draws, 1.0 - cfg.alpha)?;
    Ok(TestResult {
        method: cfg.method,
        n,
        m: match cfg.method {
            Method::Exact => None,
            Method::Nystrom => cfg.m,
        },
        statistic,
        threshold,
        reject: statistic > threshold,
        bootstrap_draws: draws,
        wall_times: PhaseTimes {
            statistic: stat_time,
            bootstrap: boot_time,
        },
    })
}
