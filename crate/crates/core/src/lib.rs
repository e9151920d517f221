//! Kernel Stein discrepancy goodness-of-fit testing with Nyström sketches.
//!
//! Stein kernels for Euclidean targets and directional targets on the
//! sphere, V-statistic and Nyström estimators, wild-bootstrap tests,
//! reference samplers and spectral diagnostics.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod io;
pub mod rng;
pub mod samplers;
pub mod stein;

pub use bootstrap::{gof_test, Method, TestConfig, TestResult};
pub use error::{KsdError, Result};
pub use estimators::{
    build_sketch, gram_full, ksd_nystrom, ksd_u_statistic, ksd_v_statistic, GramMatrix,
    KsdEstimate, NystromSketch,
};
pub use rng::RngStream;
pub use stein::{
    BaseKernelSpec, DirectionalStein, Domain, LangevinStein, Point, ScoreModel, SteinKernel,
};
