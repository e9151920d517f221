use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;

use super::spec::{build_kernel, ExperimentKind, ExperimentSpec};
use crate::bootstrap::{gof_test, Method, TestConfig, TestResult};
use crate::error::Result;
use crate::rng::{derive_seed, RngStream};

/// Output CSV header, byte for byte.
pub const CSV_HEADER: &str =
    "method,n,m,kappa,rep,reject,statistic,threshold,runtime_ms_stat,runtime_ms_bootstrap";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub n: usize,
    /// `None` for the exact test.
    pub m: Option<usize>,
    pub kappa: Option<f64>,
    pub rep: usize,
    pub reject: bool,
    pub statistic: f64,
    pub threshold: f64,
    pub runtime_ms_stat: f64,
    pub runtime_ms_bootstrap: f64,
}

impl ResultRow {
    fn from_test(r: &TestResult, kappa: Option<f64>, rep: usize) -> Self {
        Self {
            method: r.method,
            n: r.n,
            m: r.m,
            kappa,
            rep,
            reject: r.reject,
            statistic: r.statistic,
            threshold: r.threshold,
            runtime_ms_stat: r.wall_times.statistic.as_secs_f64() * 1e3,
            runtime_ms_bootstrap: r.wall_times.bootstrap.as_secs_f64() * 1e3,
        }
    }

    pub fn runtime_ms_total(&self) -> f64 {
        self.runtime_ms_stat + self.runtime_ms_bootstrap
    }
}

/// One grid point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub n: usize,
    pub kappa: Option<f64>,
}

pub fn grid(spec: &ExperimentSpec) -> Vec<GridPoint> {
    use super::spec::AlternativeSpec;
    let kappas: Vec<Option<f64>> = match (spec.kind, &spec.alternative) {
        (ExperimentKind::Power, Some(AlternativeSpec::Vmf { kappa: None, .. })) => {
            spec.kappa_grid.iter().map(|&k| Some(k)).collect()
        }
        (ExperimentKind::Power, Some(AlternativeSpec::Vmf { kappa: Some(k), .. })) => {
            vec![Some(*k)]
        }
        _ => vec![None],
    };
    spec.n_grid
        .iter()
        .flat_map(|&n| kappas.iter().map(move |&kappa| GridPoint { n, kappa }))
        .collect()
}

/// Runs every (grid point, repetition) of `spec`, with all methods applied to
/// the same data and the same bootstrap signs. Rows come back ordered by
/// method, grid point, then repetition.
///
/// Repetitions run in parallel, except for timing sweeps where concurrent
/// repetitions would distort the wall times.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let kernel = build_kernel(spec.target.score()?, &spec.kernel)?;
    let points = grid(spec);
    let mut per_method: Vec<Vec<ResultRow>> = vec![Vec::new(); spec.methods.len()];

    for (g, gp) in points.iter().enumerate() {
        let m = spec.m_rule.m(gp.n)?;
        let one_rep = |rep: usize| -> Result<Vec<ResultRow>> {
            let data_seed = derive_seed(spec.seed, &[g as u64, rep as u64, 0]);
            let mut rng = RngStream::new(data_seed, 0).rng();
            let x = match spec.kind {
                ExperimentKind::Power => spec
                    .alternative
                    .as_ref()
                    .expect("validated")
                    .sample(gp.n, gp.kappa, &mut rng)?,
                ExperimentKind::Level | ExperimentKind::Bench => {
                    spec.target.sample(gp.n, &mut rng)?
                }
            };
            let test_seed = derive_seed(spec.seed, &[g as u64, rep as u64, 1]);
            spec.methods
                .iter()
                .map(|&method| {
                    let cfg = TestConfig {
                        alpha: spec.alpha,
                        c_b: spec.c_b,
                        method,
                        m: (method == Method::Nystrom).then_some(m),
                        pinv_tol: spec.pinv_tol,
                        seed: test_seed,
                    };
                    gof_test(kernel.as_ref(), &x, &cfg)
                        .map(|r| ResultRow::from_test(&r, gp.kappa, rep))
                })
                .collect()
        };
        let reps: Vec<Vec<ResultRow>> = if spec.kind == ExperimentKind::Bench {
            (0..spec.reps).map(one_rep).collect::<Result<_>>()?
        } else {
            (0..spec.reps)
                .into_par_iter()
                .map(one_rep)
                .collect::<Result<_>>()?
        };
        for rows in reps {
            for (k, row) in rows.into_iter().enumerate() {
                per_method[k].push(row);
            }
        }
    }
    Ok(per_method.into_iter().flatten().collect())
}

fn fmt_real(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v}")
    }
}

/// Writes rows under [`CSV_HEADER`]. Reals use the shortest representation
/// that round-trips; `m` is 0 for the exact test and `kappa` is `NaN` outside
/// vMF power sweeps. With `timings = false` both runtime columns are written
/// as 0 so that output depends only on the seed.
pub fn write_csv<W: Write>(mut w: W, rows: &[ResultRow], timings: bool) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        let (ts, tb) = if timings {
            (
                format!("{:.6}", r.runtime_ms_stat),
                format!("{:.6}", r.runtime_ms_bootstrap),
            )
        } else {
            ("0".to_string(), "0".to_string())
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.n,
            r.m.unwrap_or(0),
            fmt_real(r.kappa.unwrap_or(f64::NAN)),
            r.rep,
            u8::from(r.reject),
            fmt_real(r.statistic),
            fmt_real(r.threshold),
            ts,
            tb
        )?;
    }
    Ok(())
}

/// `P(X <= k)` for `X ~ Binomial(n, p)`, summed in log space.
pub fn binomial_cdf(k: usize, n: usize, p: f64) -> f64 {
    if k >= n || p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return 0.0;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut log_pmf = n as f64 * lq;
    let mut total = log_pmf.exp();
    for j in 0..k {
        log_pmf += ((n - j) as f64).ln() - ((j + 1) as f64).ln() + lp - lq;
        total += log_pmf.exp();
    }
    total.min(1.0)
}

/// Equal-tailed acceptance band of rejection *rates* for `reps` tests at true
/// level `alpha`: the smallest count `lo` with `P(X <= lo) >= tail` and the
/// largest count `hi` with `P(X >= hi) >= tail`, where `tail = (1 - coverage) / 2`.
pub fn binomial_band(reps: usize, alpha: f64, coverage: f64) -> (f64, f64) {
    let tail = (1.0 - coverage) / 2.0;
    let lo = (0..=reps)
        .find(|&k| binomial_cdf(k, reps, alpha) >= tail)
        .unwrap_or(reps);
    let hi = (0..=reps)
        .rev()
        .find(|&k| k == 0 || 1.0 - binomial_cdf(k - 1, reps, alpha) >= tail)
        .unwrap_or(0);
    (lo as f64 / reps as f64, hi as f64 / reps as f64)
}

/// Aggregate over the repetitions of one (method, grid point).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub method: Method,
    pub n: usize,
    pub m: Option<usize>,
    pub kappa: Option<f64>,
    pub reps: usize,
    pub rejections: usize,
    pub mean_ms_stat: f64,
    pub mean_ms_bootstrap: f64,
}

impl GroupSummary {
    pub fn rate(&self) -> f64 {
        self.rejections as f64 / self.reps as f64
    }

    pub fn mean_ms_total(&self) -> f64 {
        self.mean_ms_stat + self.mean_ms_bootstrap
    }
}

/// Groups rows in the order they first appear.
pub fn summarize(rows: &[ResultRow]) -> Vec<GroupSummary> {
    let mut out: Vec<GroupSummary> = Vec::new();
    for r in rows {
        let same = |s: &GroupSummary| {
            s.method == r.method
                && s.n == r.n
                && s.kappa.map(f64::to_bits) == r.kappa.map(f64::to_bits)
        };
        let s = match out.iter_mut().position(|s| same(s)) {
            Some(i) => &mut out[i],
            None => {
                out.push(GroupSummary {
                    method: r.method,
                    n: r.n,
                    m: r.m,
                    kappa: r.kappa,
                    reps: 0,
                    rejections: 0,
                    mean_ms_stat: 0.0,
                    mean_ms_bootstrap: 0.0,
                });
                out.last_mut().unwrap()
            }
        };
        s.reps += 1;
        s.rejections += usize::from(r.reject);
        s.mean_ms_stat += r.runtime_ms_stat;
        s.mean_ms_bootstrap += r.runtime_ms_bootstrap;
    }
    for s in &mut out {
        s.mean_ms_stat /= s.reps as f64;
        s.mean_ms_bootstrap /= s.reps as f64;
    }
    out
}

/// Counts adjacent kappa steps where power drops by more than `tol`, per
/// (method, n). Groups must be ordered by kappa within each (method, n).
pub fn power_decreases(groups: &[GroupSummary], tol: f64) -> Vec<(Method, usize, usize)> {
    let mut out: Vec<(Method, usize, usize)> = Vec::new();
    for w in groups.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.method != b.method || a.n != b.n {
            continue;
        }
        let entry = match out.iter().position(|e| e.0 == a.method && e.1 == a.n) {
            Some(i) => i,
            None => {
                out.push((a.method, a.n, 0));
                out.len() - 1
            }
        };
        if b.rate() < a.rate() - tol {
            out[entry].2 += 1;
        }
    }
    out
}

/// Human-readable report for stdout.
pub fn report(spec: &ExperimentSpec, rows: &[ResultRow]) -> String {
    let groups = summarize(rows);
    let mut s = String::new();
    let m_str = |m: Option<usize>| m.map_or("-".to_string(), |m| m.to_string());
    match spec.kind {
        ExperimentKind::Level => {
            let _ = writeln!(
                s,
                "level: target {}, alpha {}, c_b {}",
                spec.target, spec.alpha, spec.c_b
            );
            for g in &groups {
                let (lo, hi) = binomial_band(g.reps, spec.alpha, 0.99);
                let inside = (lo..=hi).contains(&g.rate());
                let _ = writeln!(
                    s,
                    "{:<8} n={:<6} m={:<5} reps={:<5} rate={:.4} band99=[{:.4}, {:.4}] {}",
                    g.method,
                    g.n,
                    m_str(g.m),
                    g.reps,
                    g.rate(),
                    lo,
                    hi,
                    if inside { "inside" } else { "OUTSIDE" }
                );
            }
        }
        ExperimentKind::Power => {
            let _ = writeln!(
                s,
                "power: target {}, alpha {}, c_b {}",
                spec.target, spec.alpha, spec.c_b
            );
            for g in &groups {
                let kappa = g.kappa.map_or("-".to_string(), |k| k.to_string());
                let _ = writeln!(
                    s,
                    "{:<8} n={:<6} m={:<5} kappa={:<6} reps={:<5} power={:.4}",
                    g.method,
                    g.n,
                    m_str(g.m),
                    kappa,
                    g.reps,
                    g.rate()
                );
            }
            for (method, n, drops) in power_decreases(&groups, 0.05) {
                if drops > 1 {
                    let _ = writeln!(s, "warning: {method} n={n}: power drops by more than 0.05 at {drops} kappa steps");
                }
            }
        }
        ExperimentKind::Bench => {
            let _ = writeln!(s, "bench: target {}, c_b {}", spec.target, spec.c_b);
            for g in &groups {
                let _ = writeln!(
                    s,
                    "{:<8} n={:<6} m={:<5} reps={:<3} stat_ms={:.3} bootstrap_ms={:.3} total_ms={:.3}",
                    g.method,
                    g.n,
                    m_str(g.m),
                    g.reps,
                    g.mean_ms_stat,
                    g.mean_ms_bootstrap,
                    g.mean_ms_total()
                );
            }
            for &n in &spec.n_grid {
                let total = |method| {
                    groups
                        .iter()
                        .find(|g| g.method == method && g.n == n)
                        .map(GroupSummary::mean_ms_total)
                };
                if let (Some(e), Some(ny)) = (total(Method::Exact), total(Method::Nystrom)) {
                    let _ = writeln!(s, "n={n}: exact/nystrom total time ratio {:.2}", e / ny);
                }
            }
        }
    }
    s
}
