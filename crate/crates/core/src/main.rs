use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ksd_core::bootstrap::{gof_test, Method, TestConfig};
use ksd_core::diagnostics::SpectrumSummary;
use ksd_core::estimators::{gram_full, DEFAULT_PINV_TOL};
use ksd_core::harness::{
    build_kernel, parse_kernel, report, run_experiment, write_csv, AlternativeSpec, ExperimentKind,
    ExperimentSpec, MRule, TargetSpec,
};
use ksd_core::io::read_points_csv;
use ksd_core::rng::RngStream;
use ksd_core::stein::{Point, SteinKernel};
use ksd_core::{KsdError, Result};

#[derive(Parser)]
#[command(
    name = "ksd",
    version,
    about = "Kernel Stein discrepancy goodness-of-fit tests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test one sample. Exit code 0: not rejected, 1: rejected, 2: error.
    Test(TestArgs),
    /// Rejection rates under the null.
    Level(SweepArgs),
    /// Rejection rates under an alternative.
    Power(SweepArgs),
    /// Wall times of the exact and Nystrom tests.
    Bench(SweepArgs),
    /// Effective dimension and eigenvalue decay of the centered Stein Gram.
    Diag(DiagArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Target, e.g. gaussian:0,1 or sphere:3
    #[arg(long)]
    target: String,
    /// Base kernel, e.g. gaussian:1.0 or vmf:0.28 (default depends on the target)
    #[arg(long)]
    kernel: Option<String>,
    /// Sample CSV file
    #[arg(long, conflicts_with = "sample")]
    data: Option<PathBuf>,
    /// Draw the data instead: a target or alternative spec such as vmf:1,0,0;2
    #[arg(long, requires = "n")]
    sample: Option<String>,
    /// Sample size for --sample
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Bootstrap replicates
    #[arg(long, default_value_t = 1000)]
    cb: usize,
    /// exact or nystrom
    #[arg(long, default_value = "exact")]
    method: String,
    /// Landmarks for the Nystrom test (default ceil(sqrt n))
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_PINV_TOL)]
    pinv_tol: f64,
}

#[derive(Args)]
struct SweepArgs {
    /// key = value config file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    alternative: Option<String>,
    #[arg(long)]
    kernel: Option<String>,
    /// Comma-separated sample sizes
    #[arg(long)]
    n_grid: Option<String>,
    /// Comma-separated vMF concentrations
    #[arg(long)]
    kappa_grid: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    cb: Option<String>,
    #[arg(long)]
    reps: Option<String>,
    /// Comma-separated subset of exact,nystrom
    #[arg(long)]
    methods: Option<String>,
    /// sqrt_n, four_sqrt_n, fixed:M, auto:exponential or auto:polynomial:GAMMA
    #[arg(long)]
    m_rule: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    pinv_tol: Option<String>,
    /// Output CSV (default: stdout, with the report on stderr)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write 0 in the runtime columns
    #[arg(long)]
    omit_timings: bool,
}

#[derive(Args)]
struct DiagArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated regularization values
    #[arg(long, default_value = "1e-6,1e-5,1e-4,1e-3,1e-2,1e-1,1")]
    lambdas: String,
    /// Output CSV of lambda,effective_dimension (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn load_kernel_and_data(args: &DataArgs) -> Result<(std::sync::Arc<dyn SteinKernel>, Vec<Point>)> {
    let target: TargetSpec = args.target.parse()?;
    let base = match &args.kernel {
        Some(k) => parse_kernel(k)?,
        None => target.default_kernel(),
    };
    let kernel = build_kernel(target.score()?, &base)?;
    let domain = target.domain();
    let points = match (&args.data, &args.sample) {
        (Some(path), _) => read_data(path)?.into_domain(domain)?,
        (None, Some(spec)) => {
            let n = args.n.expect("clap requires --n");
            let mut rng = RngStream::new(args.seed, 0).rng();
            let mismatch = || {
                KsdError::InvalidParameter(format!(
                    "sample spec {spec} does not match target {target}"
                ))
            };
            if spec.trim_start().starts_with("sphere:") {
                let t: TargetSpec = spec.parse()?;
                if t.domain() != domain {
                    return Err(mismatch());
                }
                t.sample(n, &mut rng)?
            } else {
                let alt: AlternativeSpec = spec.parse()?;
                if alt.domain() != domain {
                    return Err(mismatch());
                }
                alt.sample(n, None, &mut rng)?
            }
        }
        (None, None) => {
            return Err(KsdError::InvalidParameter(
                "give --data FILE or --sample SPEC --n N".into(),
            ))
        }
    };
    Ok((kernel, points))
}

fn read_data(path: &Path) -> Result<ksd_core::io::DataSet> {
    let file = File::open(path).map_err(|e| KsdError::Io(format!("{}: {e}", path.display())))?;
    read_points_csv(BufReader::new(file))
        .map_err(|e| KsdError::Parse(format!("{}: {e}", path.display())))
}

fn cmd_test(args: &TestArgs) -> Result<bool> {
    let (kernel, points) = load_kernel_and_data(&args.data)?;
    let method: Method = args.method.parse()?;
    let m = match (method, args.m) {
        (Method::Nystrom, None) => {
            let m = MRule::SqrtN.m(points.len())?;
            eprintln!("warning: --m not given; using m = ceil(sqrt(n)) = {m}");
            Some(m)
        }
        (_, m) => m,
    };
    let cfg = TestConfig {
        alpha: args.alpha,
        c_b: args.cb,
        method,
        m,
        pinv_tol: args.pinv_tol,
        seed: args.data.seed,
    };
    let r = gof_test(kernel.as_ref(), &points, &cfg)?;
    println!("method: {}", r.method);
    println!("n: {}", r.n);
    if let Some(m) = r.m {
        println!("m: {m}");
    }
    println!("statistic: {}", r.statistic);
    println!("threshold: {}", r.threshold);
    println!(
        "decision: {}",
        if r.reject { "reject" } else { "fail to reject" }
    );
    println!(
        "runtime_ms_stat: {:.3}",
        r.wall_times.statistic.as_secs_f64() * 1e3
    );
    println!(
        "runtime_ms_bootstrap: {:.3}",
        r.wall_times.bootstrap.as_secs_f64() * 1e3
    );
    Ok(r.reject)
}

fn cmd_sweep(kind: ExperimentKind, args: &SweepArgs) -> Result<()> {
    let mut entries = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| KsdError::Io(format!("{}: {e}", path.display())))?;
            ExperimentSpec::parse_config(&text)
                .map_err(|e| KsdError::Parse(format!("{}: {e}", path.display())))?
        }
        None => Vec::new(),
    };
    let flags = [
        ("target", "target", &args.target),
        ("alternative", "alternative", &args.alternative),
        ("kernel", "kernel", &args.kernel),
        ("n-grid", "n_grid", &args.n_grid),
        ("kappa-grid", "kappa_grid", &args.kappa_grid),
        ("alpha", "alpha", &args.alpha),
        ("cb", "c_b", &args.cb),
        ("reps", "reps", &args.reps),
        ("methods", "methods", &args.methods),
        ("m-rule", "m_rule", &args.m_rule),
        ("seed", "seed", &args.seed),
        ("pinv-tol", "pinv_tol", &args.pinv_tol),
    ];
    for (flag, key, value) in flags {
        if let Some(v) = value {
            entries.push((format!("flag --{flag}"), key.to_string(), v.clone()));
        }
    }
    let spec = ExperimentSpec::from_entries(kind, &entries)?;
    let rows = run_experiment(&spec)?;
    let mut out = open_out(&args.out)?;
    write_csv(&mut out, &rows, !args.omit_timings)?;
    out.flush()?;
    let text = report(&spec, &rows);
    if args.out.is_some() {
        print!("{text}");
    } else {
        eprint!("{text}");
    }
    Ok(())
}

fn cmd_diag(args: &DiagArgs) -> Result<()> {
    let (kernel, points) = load_kernel_and_data(&args.data)?;
    let lambdas: Vec<f64> = args
        .lambdas
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0)
                .ok_or_else(|| KsdError::Parse(format!("invalid lambda '{}'", s.trim())))
        })
        .collect::<Result<_>>()?;
    let gram = gram_full(kernel.as_ref(), &points)?;
    let summary = SpectrumSummary::from_gram(&gram);
    let mut out = open_out(&args.out)?;
    writeln!(out, "lambda,effective_dimension")?;
    for l in &lambdas {
        writeln!(out, "{l},{}", summary.effective_dimension(*l))?;
    }
    out.flush()?;
    let msg = format!("n: {}\ndecay: {}", points.len(), summary.decay);
    if args.out.is_some() {
        println!("{msg}");
    } else {
        eprintln!("{msg}");
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("KSD_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| {
            KsdError::Parse(format!("KSD_THREADS must be a positive integer, got '{v}'"))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| KsdError::InvalidParameter(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = configure_threads().and_then(|()| match &cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Level(a) => cmd_sweep(ExperimentKind::Level, a).map(|()| false),
        Command::Power(a) => cmd_sweep(ExperimentKind::Power, a).map(|()| false),
        Command::Bench(a) => cmd_sweep(ExperimentKind::Bench, a).map(|()| false),
        Command::Diag(a) => cmd_diag(a).map(|()| false),
    });
    match outcome {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
