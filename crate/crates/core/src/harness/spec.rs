//! Experiment configuration.
//!
//! A config file holds one `key = value` pair per line; `#` starts a comment.
//!
//! ```text
//! kind = power
//! target = sphere:3
//! alternative = vmf:1,0,0
//! kernel = vmf:0.28
//! n_grid = 200
//! kappa_grid = 1,2,4,6
//! alpha = 0.01
//! c_b = 500
//! reps = 200
//! methods = exact,nystrom
//! m_rule = sqrt_n
//! seed = 1
//! ```
//!
//! Distribution syntax:
//!
//! * `gaussian:MEAN,SIGMA[,D]`: isotropic normal on `R^D` (default `D = 1`)
//!   with every mean coordinate equal to `MEAN`
//! * `sphere:D`: uniform on `S^{D-1}`
//! * `vmf:MU_1,...,MU_D[;KAPPA]`: von Mises-Fisher alternative; without
//!   `KAPPA` the concentration comes from `kappa_grid`
//!
//! Kernels are `gaussian:SIGMA` (Langevin) and `vmf:GAMMA` (directional).

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::bootstrap::Method;
use crate::diagnostics::{suggest_m, DecayRegime};
use crate::error::{KsdError, Result};
use crate::estimators::DEFAULT_PINV_TOL;
use crate::samplers::{
    sample_gaussian, sample_uniform_sphere, sample_vmf, score_gaussian, score_uniform_sphere,
    VmfSpec,
};
use crate::stein::{
    BaseKernelSpec, DirectionalStein, Domain, LangevinStein, Point, ScoreModel, SteinKernel,
};

fn parse_reals(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| KsdError::Parse(format!("'{t}' is not a finite number")))
        })
        .collect()
}

fn parse_count(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| KsdError::Parse(format!("'{}' is not a non-negative integer", s.trim())))
}

fn split_spec(s: &str) -> Result<(&str, &str)> {
    s.trim()
        .split_once(':')
        .ok_or_else(|| KsdError::Parse(format!("'{}' has no ':' after the family name", s.trim())))
}

/// Null distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    Gaussian { mean: f64, sigma: f64, d: usize },
    UniformSphere { d: usize },
}

impl TargetSpec {
    pub fn domain(&self) -> Domain {
        match *self {
            TargetSpec::Gaussian { d, .. } => Domain::Euclidean { d },
            TargetSpec::UniformSphere { d } => Domain::Sphere { d },
        }
    }

    pub fn score(&self) -> Result<Arc<dyn ScoreModel>> {
        Ok(match *self {
            TargetSpec::Gaussian { mean, sigma, d } => {
                Arc::new(score_gaussian(vec![mean; d], sigma)?)
            }
            TargetSpec::UniformSphere { d } => Arc::new(score_uniform_sphere(d)?),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Point>> {
        match *self {
            TargetSpec::Gaussian { mean, sigma, d } => {
                sample_gaussian(&vec![mean; d], sigma, n, rng)
            }
            TargetSpec::UniformSphere { d } => sample_uniform_sphere(d, n, rng),
        }
    }

    /// Base kernel used when none is configured.
    pub fn default_kernel(&self) -> BaseKernelSpec {
        match *self {
            TargetSpec::Gaussian { .. } => BaseKernelSpec::Gaussian { sigma: 1.0 },
            TargetSpec::UniformSphere { d: 2 } => BaseKernelSpec::Vmf { gamma: 0.12 },
            TargetSpec::UniformSphere { .. } => BaseKernelSpec::Vmf { gamma: 0.28 },
        }
    }
}

impl FromStr for TargetSpec {
    type Err = KsdError;
    fn from_str(s: &str) -> Result<Self> {
        let (family, args) = split_spec(s)?;
        match family {
            "gaussian" => {
                let v = parse_reals(args)?;
                let (mean, sigma, d) = match v.as_slice() {
                    [m, s] => (*m, *s, 1.0),
                    [m, s, d] => (*m, *s, *d),
                    _ => return Err(KsdError::Parse("gaussian takes MEAN,SIGMA[,D]".into())),
                };
                if !(sigma > 0.0) || d < 1.0 || d.fract() != 0.0 {
                    return Err(KsdError::Parse(format!(
                        "gaussian needs SIGMA > 0 and integer D >= 1, got {sigma}, {d}"
                    )));
                }
                Ok(TargetSpec::Gaussian {
                    mean,
                    sigma,
                    d: d as usize,
                })
            }
            "sphere" => {
                let d = parse_count(args)?;
                if d < 2 {
                    return Err(KsdError::Parse(format!("sphere needs D >= 2, got {d}")));
                }
                Ok(TargetSpec::UniformSphere { d })
            }
            other => Err(KsdError::Parse(format!(
                "unknown target family '{other}' (expected gaussian or sphere)"
            ))),
        }
    }
}

impl fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetSpec::Gaussian { mean, sigma, d } => write!(f, "gaussian:{mean},{sigma},{d}"),
            TargetSpec::UniformSphere { d } => write!(f, "sphere:{d}"),
        }
    }
}

/// Distribution the data is drawn from in a power experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum AlternativeSpec {
    Gaussian { mean: f64, sigma: f64, d: usize },
    Vmf { mu: Vec<f64>, kappa: Option<f64> },
}

impl AlternativeSpec {
    pub fn domain(&self) -> Domain {
        match self {
            AlternativeSpec::Gaussian { d, .. } => Domain::Euclidean { d: *d },
            AlternativeSpec::Vmf { mu, .. } => Domain::Sphere { d: mu.len() },
        }
    }

    /// `kappa` is used only when the spec itself has no concentration.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        n: usize,
        kappa: Option<f64>,
        rng: &mut R,
    ) -> Result<Vec<Point>> {
        match self {
            AlternativeSpec::Gaussian { mean, sigma, d } => {
                sample_gaussian(&vec![*mean; *d], *sigma, n, rng)
            }
            AlternativeSpec::Vmf { mu, kappa: fixed } => {
                let k = fixed.or(kappa).ok_or_else(|| {
                    KsdError::InvalidParameter("vmf alternative has no concentration".into())
                })?;
                sample_vmf(&VmfSpec::new(mu.clone(), k)?, n, rng)
            }
        }
    }
}

impl FromStr for AlternativeSpec {
    type Err = KsdError;
    fn from_str(s: &str) -> Result<Self> {
        let (family, args) = split_spec(s)?;
        match family {
            "gaussian" => match s.parse::<TargetSpec>()? {
                TargetSpec::Gaussian { mean, sigma, d } => {
                    Ok(AlternativeSpec::Gaussian { mean, sigma, d })
                }
                TargetSpec::UniformSphere { .. } => unreachable!(),
            },
            "vmf" => {
                let (mu, kappa) = match args.split_once(';') {
                    Some((mu, k)) => (mu, Some(parse_reals(k)?)),
                    None => (args, None),
                };
                let mu = parse_reals(mu)?;
                let kappa = match kappa.as_deref() {
                    None => None,
                    Some([k]) => Some(*k),
                    Some(_) => return Err(KsdError::Parse("vmf takes a single KAPPA".into())),
                };
                // Validates the direction and concentration.
                VmfSpec::new(mu.clone(), kappa.unwrap_or(0.0))?;
                Ok(AlternativeSpec::Vmf { mu, kappa })
            }
            other => Err(KsdError::Parse(format!(
                "unknown alternative family '{other}' (expected gaussian or vmf)"
            ))),
        }
    }
}

impl fmt::Display for AlternativeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlternativeSpec::Gaussian { mean, sigma, d } => {
                write!(f, "gaussian:{mean},{sigma},{d}")
            }
            AlternativeSpec::Vmf { mu, kappa } => {
                let mu: Vec<String> = mu.iter().map(|v| v.to_string()).collect();
                write!(f, "vmf:{}", mu.join(","))?;
                if let Some(k) = kappa {
                    write!(f, ";{k}")?;
                }
                Ok(())
            }
        }
    }
}

pub fn parse_kernel(s: &str) -> Result<BaseKernelSpec> {
    let (family, args) = split_spec(s)?;
    let v = parse_reals(args)?;
    let [p] = v.as_slice() else {
        return Err(KsdError::Parse(format!(
            "kernel '{family}' takes one parameter"
        )));
    };
    let spec = match family {
        "gaussian" => BaseKernelSpec::Gaussian { sigma: *p },
        "vmf" => BaseKernelSpec::Vmf { gamma: *p },
        other => {
            return Err(KsdError::Parse(format!(
                "unknown kernel '{other}' (expected gaussian or vmf)"
            )))
        }
    };
    spec.validate()?;
    Ok(spec)
}

/// Stein kernel for `score` with base kernel `base`.
pub fn build_kernel(
    score: Arc<dyn ScoreModel>,
    base: &BaseKernelSpec,
) -> Result<Arc<dyn SteinKernel>> {
    Ok(match (score.domain(), base) {
        (Domain::Euclidean { .. }, BaseKernelSpec::Gaussian { sigma }) => {
            Arc::new(LangevinStein::new(score, *sigma)?)
        }
        (Domain::Sphere { .. }, BaseKernelSpec::Vmf { gamma }) => {
            Arc::new(DirectionalStein::new(score, *gamma)?)
        }
        (Domain::Euclidean { .. }, _) => {
            return Err(KsdError::InvalidParameter(
                "Euclidean targets need a gaussian kernel".into(),
            ))
        }
        (Domain::Sphere { .. }, _) => {
            return Err(KsdError::InvalidParameter(
                "spherical targets need a vmf kernel".into(),
            ))
        }
    })
}

/// How the landmark count follows from `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MRule {
    /// `ceil(sqrt n)`
    SqrtN,
    /// `4 ceil(sqrt n)`
    FourSqrtN,
    Fixed(usize),
    Auto(DecayRegime),
}

impl MRule {
    /// Rules other than `Fixed` are capped at `n`.
    pub fn m(&self, n: usize) -> Result<usize> {
        let root = (n as f64).sqrt().ceil() as usize;
        Ok(match *self {
            MRule::SqrtN => root.min(n),
            MRule::FourSqrtN => (4 * root).min(n),
            MRule::Fixed(m) => m,
            MRule::Auto(regime) => suggest_m(n, regime)?,
        })
    }
}

impl FromStr for MRule {
    type Err = KsdError;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || {
            KsdError::Parse(format!(
                "unknown m rule '{s}' (expected sqrt_n, four_sqrt_n, fixed:M, auto:exponential or auto:polynomial:GAMMA)"
            ))
        };
        match s {
            "sqrt_n" => return Ok(MRule::SqrtN),
            "four_sqrt_n" => return Ok(MRule::FourSqrtN),
            "auto:exponential" => return Ok(MRule::Auto(DecayRegime::Exponential)),
            _ => {}
        }
        if let Some(m) = s.strip_prefix("fixed:") {
            let m = parse_count(m)?;
            if m == 0 {
                return Err(KsdError::Parse("fixed m must be at least 1".into()));
            }
            return Ok(MRule::Fixed(m));
        }
        if let Some(g) = s.strip_prefix("auto:polynomial:") {
            let g: f64 = g.trim().parse().map_err(|_| bad())?;
            if !(g > 0.0 && g <= 1.0) {
                return Err(KsdError::Parse(format!(
                    "decay exponent must be in (0, 1], got {g}"
                )));
            }
            return Ok(MRule::Auto(DecayRegime::Polynomial(g)));
        }
        Err(bad())
    }
}

impl fmt::Display for MRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MRule::SqrtN => f.write_str("sqrt_n"),
            MRule::FourSqrtN => f.write_str("four_sqrt_n"),
            MRule::Fixed(m) => write!(f, "fixed:{m}"),
            MRule::Auto(DecayRegime::Exponential) => f.write_str("auto:exponential"),
            MRule::Auto(DecayRegime::Polynomial(g)) => write!(f, "auto:polynomial:{g}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Level,
    Power,
    Bench,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Level => "level",
            ExperimentKind::Power => "power",
            ExperimentKind::Bench => "bench",
        })
    }
}

impl FromStr for ExperimentKind {
    type Err = KsdError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "level" => Ok(ExperimentKind::Level),
            "power" => Ok(ExperimentKind::Power),
            "bench" => Ok(ExperimentKind::Bench),
            other => Err(KsdError::Parse(format!(
                "unknown experiment kind '{other}' (expected level, power or bench)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub target: TargetSpec,
    /// Required for power experiments, ignored otherwise.
    pub alternative: Option<AlternativeSpec>,
    pub kernel: BaseKernelSpec,
    pub n_grid: Vec<usize>,
    pub kappa_grid: Vec<f64>,
    pub alpha: f64,
    pub c_b: usize,
    pub reps: usize,
    pub methods: Vec<Method>,
    pub m_rule: MRule,
    pub seed: u64,
    pub pinv_tol: f64,
}

impl ExperimentSpec {
    /// Defaults for `kind`: the uniform circle for level, `S^2` against
    /// `vMF((1,0,0), kappa)` at `n = 200` for power, and `S^2` with a short
    /// `n` grid and 3 repetitions for timing.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let (target, alternative, n_grid, reps, c_b) = match kind {
            ExperimentKind::Level => (
                TargetSpec::UniformSphere { d: 2 },
                None,
                vec![50, 100, 200, 400],
                600,
                1000,
            ),
            ExperimentKind::Power => (
                TargetSpec::UniformSphere { d: 3 },
                Some(AlternativeSpec::Vmf {
                    mu: vec![1.0, 0.0, 0.0],
                    kappa: None,
                }),
                vec![200],
                600,
                1000,
            ),
            ExperimentKind::Bench => (
                TargetSpec::UniformSphere { d: 3 },
                None,
                vec![500, 1000, 2000],
                3,
                100,
            ),
        };
        Self {
            kind,
            kernel: target.default_kernel(),
            target,
            alternative,
            n_grid,
            kappa_grid: vec![0.01, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            alpha: 0.01,
            c_b,
            reps,
            methods: vec![Method::Exact, Method::Nystrom],
            m_rule: MRule::SqrtN,
            seed: 0,
            pinv_tol: DEFAULT_PINV_TOL,
        }
    }

    /// Builds a spec from `(origin, key, value)` triples applied in order, so
    /// later entries (CLI flags) override earlier ones (the config file).
    /// `origin` is used in error messages, e.g. `"line 4"` or `"flag --n-grid"`.
    pub fn from_entries(
        kind: ExperimentKind,
        entries: &[(String, String, String)],
    ) -> Result<Self> {
        let mut spec = Self::defaults(kind);
        let mut kernel_set = false;
        for (origin, key, value) in entries {
            let wrap = |e: KsdError| {
                KsdError::Parse(format!("{origin}, field '{key}': {}", strip_parse(e)))
            };
            kernel_set |= key == "kernel";
            spec.apply(key, value).map_err(wrap)?;
        }
        if !kernel_set {
            spec.kernel = spec.target.default_kernel();
        }
        spec.validate()?;
        Ok(spec)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "kind" => {
                let k: ExperimentKind = value.parse()?;
                if k != self.kind {
                    return Err(KsdError::Parse(format!(
                        "config is for a {k} experiment but {} was requested",
                        self.kind
                    )));
                }
            }
            "target" => self.target = value.parse()?,
            "alternative" => self.alternative = Some(value.parse()?),
            "kernel" => self.kernel = parse_kernel(value)?,
            "n_grid" => {
                self.n_grid = value.split(',').map(parse_count).collect::<Result<_>>()?;
            }
            "kappa_grid" => self.kappa_grid = parse_reals(value)?,
            "alpha" => {
                self.alpha = value
                    .parse()
                    .map_err(|_| KsdError::Parse(format!("'{value}' is not a number")))?
            }
            "c_b" => self.c_b = parse_count(value)?,
            "reps" => self.reps = parse_count(value)?,
            "methods" => {
                self.methods = value.split(',').map(|m| m.parse()).collect::<Result<_>>()?;
            }
            "m_rule" => self.m_rule = value.parse()?,
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| KsdError::Parse(format!("'{value}' is not a u64 seed")))?
            }
            "pinv_tol" => {
                self.pinv_tol = value
                    .parse()
                    .map_err(|_| KsdError::Parse(format!("'{value}' is not a number")))?
            }
            other => return Err(KsdError::Parse(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(KsdError::InvalidParameter(msg));
        if self.n_grid.is_empty() || self.n_grid.iter().any(|&n| n < 2) {
            return bad("n_grid must be nonempty with every n >= 2".into());
        }
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.c_b == 0 {
            return bad("c_b must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must be in (0, 1), got {}", self.alpha));
        }
        if self.methods.is_empty() {
            return bad("methods must be nonempty".into());
        }
        if !(self.pinv_tol >= 0.0) {
            return bad(format!("pinv_tol must be >= 0, got {}", self.pinv_tol));
        }
        build_kernel(self.target.score()?, &self.kernel)?;
        if self.kind == ExperimentKind::Power {
            let Some(alt) = &self.alternative else {
                return bad("power experiments need an alternative".into());
            };
            if alt.domain() != self.target.domain() {
                return bad(format!(
                    "alternative {alt} does not live on the domain of target {}",
                    self.target
                ));
            }
            if let AlternativeSpec::Vmf { kappa: None, .. } = alt {
                if self.kappa_grid.is_empty() || self.kappa_grid.iter().any(|&k| k < 0.0) {
                    return bad("kappa_grid must be nonempty and nonnegative".into());
                }
            }
        }
        Ok(())
    }

    /// Parses a config file body.
    pub fn parse_config(text: &str) -> Result<Vec<(String, String, String)>> {
        let mut out = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(KsdError::Parse(format!(
                    "line {}: expected 'key = value'",
                    i + 1
                )));
            };
            out.push((
                format!("line {}", i + 1),
                k.trim().to_string(),
                v.trim().to_string(),
            ));
        }
        Ok(out)
    }
}

fn strip_parse(e: KsdError) -> String {
    match e {
        KsdError::Parse(s) | KsdError::InvalidParameter(s) => s,
        other => other.to_string(),
    }
}
