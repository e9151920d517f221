//! Kept in its own binary so no other test competes for the CPU.

use std::sync::Arc;
use std::time::Instant;

use ksd_core::bootstrap::{gof_test, Method, TestConfig};
use ksd_core::estimators::DEFAULT_PINV_TOL;
use ksd_core::rng::RngStream;
use ksd_core::samplers::{sample_gaussian, score_gaussian};
use ksd_core::stein::LangevinStein;

fn exact_bootstrap_ms(n: usize) -> f64 {
    let k = LangevinStein::new(Arc::new(score_gaussian(vec![0.0], 1.0).unwrap()), 1.0).unwrap();
    let x = sample_gaussian(&[0.0], 1.0, n, &mut RngStream::new(n as u64, 0).rng()).unwrap();
    let cfg = TestConfig {
        alpha: 0.05,
        c_b: 100,
        method: Method::Exact,
        m: None,
        pinv_tol: DEFAULT_PINV_TOL,
        seed: 1,
    };
    let mut t: Vec<f64> = (0..5)
        .map(|_| {
            gof_test(&k, &x, &cfg)
                .unwrap()
                .wall_times
                .bootstrap
                .as_secs_f64()
        })
        .collect();
    t.sort_by(f64::total_cmp);
    t[2]
}

#[test]
fn exact_bootstrap_time_is_quadratic() {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let start = Instant::now();
    let ratio = pool.install(|| exact_bootstrap_ms(2000) / exact_bootstrap_ms(1000));
    assert!(
        (3.0..=6.0).contains(&ratio),
        "t(2n)/t(n) = {ratio} ({:?})",
        start.elapsed()
    );
}
