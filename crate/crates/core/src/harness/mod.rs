//! Level, power and timing sweeps behind the `ksd` binary.

mod run;
mod spec;

pub use run::{
    binomial_band, binomial_cdf, grid, power_decreases, report, run_experiment, summarize,
    write_csv, GridPoint, GroupSummary, ResultRow, CSV_HEADER,
};
pub use spec::{
    build_kernel, parse_kernel, AlternativeSpec, ExperimentKind, ExperimentSpec, MRule, TargetSpec,
};
