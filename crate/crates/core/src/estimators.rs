//! Gram matrices and the quadratic-time and Nyström KSD estimators.
//!
//! Indices are 0-based throughout. Landmarks are drawn uniformly from the
//! sample with replacement, so a sketch may contain repeated points and its
//! `G_mm` is then exactly singular; the PSD pseudoinverse handles that.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{KsdError, Result};
use crate::stein::{Point, Prepared, SteinKernel};

/// Default relative eigenvalue cutoff of [`pinv_psd`].
pub const DEFAULT_PINV_TOL: f64 = 1e-10;

/// Square symmetric Gram matrix `[K0(X_i, X_j)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: DMatrix<f64>,
}

impl GramMatrix {
    /// Wraps a matrix after checking it is square and symmetric.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(KsdError::DimensionMismatch {
                expected: values.nrows(),
                got: values.ncols(),
            });
        }
        if values.nrows() == 0 {
            return Err(KsdError::Empty("Gram matrix".into()));
        }
        check_symmetric(&values)?;
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax();
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..j {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if worst.is_nan() || worst > 1e-12 * scale {
        return Err(KsdError::NotSymmetric(worst));
    }
    Ok(())
}

/// Validates and caches every point for the kernel.
pub fn prepare_points(kernel: &dyn SteinKernel, points: &[Point]) -> Result<Vec<Prepared>> {
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| kernel.prepare(p).map_err(|e| KsdError::at_point(i, e)))
        .collect()
}

/// First non-finite entry of a column, as `(row, value)`.
fn first_non_finite(col: &[f64]) -> Option<usize> {
    col.iter().position(|v| !v.is_finite())
}

/// Symmetric Gram from prepared points. Only the upper triangle is evaluated;
/// the kernel is bitwise symmetric so mirroring is exact.
pub(crate) fn gram_from_prepared(
    kernel: &dyn SteinKernel,
    prep: &[Prepared],
) -> Result<GramMatrix> {
    let n = prep.len();
    if n == 0 {
        return Err(KsdError::Empty("sample".into()));
    }
    let mut values = DMatrix::<f64>::zeros(n, n);
    let bad: Option<(usize, usize)> = values
        .as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .map(|(j, col)| {
            for i in 0..=j {
                col[i] = kernel.eval_prepared(&prep[i], &prep[j]);
            }
            first_non_finite(&col[..=j]).map(|i| (i, j))
        })
        .reduce(|| None, |a, b| a.or(b));
    if let Some((i, j)) = bad {
        return Err(KsdError::at_pair(
            i,
            j,
            KsdError::NonFinite(format!("K0 = {}", values[(i, j)])),
        ));
    }
    for j in 0..n {
        for i in 0..j {
            values[(j, i)] = values[(i, j)];
        }
    }
    Ok(GramMatrix { values })
}

/// Materializes the full `n x n` Stein Gram matrix.
pub fn gram_full(kernel: &dyn SteinKernel, points: &[Point]) -> Result<GramMatrix> {
    let prep = prepare_points(kernel, points)?;
    gram_from_prepared(kernel, &prep)
}

/// Which estimator produced a [`KsdEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateMethod {
    VStat,
    Nystrom,
}

/// A squared-KSD estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsdEstimate {
    pub value: f64,
    pub method: EstimateMethod,
    pub n: usize,
    pub m: Option<usize>,
}

/// `(1/n^2) sum_{i,j} G_ij`.
pub fn ksd_v_statistic(gram: &GramMatrix) -> KsdEstimate {
    let n = gram.n();
    let total: f64 = gram.values.iter().sum();
    KsdEstimate {
        value: total / (n * n) as f64,
        method: EstimateMethod::VStat,
        n,
        m: None,
    }
}

/// `(1/(n(n-1))) sum_{i != j} G_ij`. Can be negative.
pub fn ksd_u_statistic(gram: &GramMatrix) -> Result<f64> {
    let n = gram.n();
    if n < 2 {
        return Err(KsdError::InvalidParameter(format!(
            "U-statistic needs n >= 2, got {n}"
        )));
    }
    let mut total = 0.0;
    for (j, col) in gram.values.column_iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            if i != j {
                total += v;
            }
        }
    }
    Ok(total / (n * (n - 1)) as f64)
}

/// `m` i.i.d. uniform indices from `0..n`, with replacement.
pub fn sample_landmarks<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<usize> {
    assert!(n >= 1, "cannot draw landmarks from an empty sample");
    (0..m).map(|_| rng.random_range(0..n)).collect()
}

/// Moore-Penrose pseudoinverse of a symmetric PSD matrix and a factor `F`
/// with `pinv = F F^T`.
///
/// Eigenvalues above `tol * lambda_max` are inverted; the rest, including any
/// negative roundoff, are treated as zero, so the result is PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdPseudoInverse {
    pub pinv: DMatrix<f64>,
    pub factor: DMatrix<f64>,
    pub rank: usize,
}

pub fn pinv_psd_factor(m: &DMatrix<f64>, tol: f64) -> Result<PsdPseudoInverse> {
    if m.nrows() != m.ncols() {
        return Err(KsdError::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if !(tol >= 0.0) {
        return Err(KsdError::InvalidParameter(format!(
            "pseudoinverse tolerance must be >= 0, got {tol}"
        )));
    }
    check_symmetric(m)?;
    let k = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let keep: Vec<usize> = if lambda_max > 0.0 {
        (0..k)
            .filter(|&i| eig.eigenvalues[i] > tol * lambda_max)
            .collect()
    } else {
        Vec::new()
    };
    let mut factor = DMatrix::<f64>::zeros(k, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let scale = 1.0 / eig.eigenvalues[i].sqrt();
        factor.set_column(c, &(eig.eigenvectors.column(i) * scale));
    }
    let mut pinv = &factor * factor.transpose();
    for j in 0..k {
        for i in 0..j {
            pinv[(j, i)] = pinv[(i, j)];
        }
    }
    Ok(PsdPseudoInverse {
        pinv,
        factor,
        rank: keep.len(),
    })
}

/// PSD pseudoinverse; see [`pinv_psd_factor`].
pub fn pinv_psd(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    Ok(pinv_psd_factor(m, tol)?.pinv)
}

/// Landmark data for the Nyström estimator and bootstrap.
#[derive(Debug, Clone)]
pub struct NystromSketch {
    pub indices: Vec<usize>,
    /// `[K0(X_{I_i}, X_{I_j})]`, `m x m`
    pub g_mm: DMatrix<f64>,
    /// `[K0(X_{I_i}, X_j)]`, `m x n`
    pub g_mn: DMatrix<f64>,
    pub g_mm_pinv: DMatrix<f64>,
    /// `g_mm_pinv = pinv_factor * pinv_factor^T`
    pub pinv_factor: DMatrix<f64>,
    pub pinv_tol: f64,
}

impl NystromSketch {
    pub fn m(&self) -> usize {
        self.indices.len()
    }

    pub fn n(&self) -> usize {
        self.g_mn.ncols()
    }

    /// `|| F^T (G_mn w) / n ||^2 = (1/n^2) w^T G_nm G_mm^- G_mn w`.
    pub(crate) fn projected_norm2(&self, weights: &[f64]) -> f64 {
        let n = self.n();
        let mut beta = DVector::<f64>::zeros(self.m());
        for (col, w) in self.g_mn.column_iter().zip(weights) {
            beta.axpy(*w, &col, 1.0);
        }
        beta /= n as f64;
        let coords = self.pinv_factor.tr_mul(&beta);
        coords.norm_squared()
    }
}

pub(crate) fn sketch_from_prepared(
    kernel: &dyn SteinKernel,
    prep: &[Prepared],
    indices: &[usize],
    pinv_tol: f64,
) -> Result<NystromSketch> {
    let n = prep.len();
    let m = indices.len();
    if m == 0 {
        return Err(KsdError::InvalidParameter(
            "need at least one landmark".into(),
        ));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
        return Err(KsdError::InvalidParameter(format!(
            "landmark index {bad} out of range for n = {n}"
        )));
    }
    let mut g_mn = DMatrix::<f64>::zeros(m, n);
    let bad: Option<(usize, usize)> = g_mn
        .as_mut_slice()
        .par_chunks_mut(m)
        .enumerate()
        .map(|(j, col)| {
            for (l, &idx) in indices.iter().enumerate() {
                col[l] = kernel.eval_prepared(&prep[idx], &prep[j]);
            }
            first_non_finite(col).map(|l| (indices[l], j))
        })
        .reduce(|| None, |a, b| a.or(b));
    if let Some((i, j)) = bad {
        return Err(KsdError::at_pair(
            i,
            j,
            KsdError::NonFinite("K0 is not finite".into()),
        ));
    }
    // G_mm is a column selection of G_mn; the kernel is bitwise symmetric so
    // the selection is exactly symmetric.
    let g_mm = DMatrix::from_fn(m, m, |a, b| g_mn[(a, indices[b])]);
    let p = pinv_psd_factor(&g_mm, pinv_tol)?;
    Ok(NystromSketch {
        indices: indices.to_vec(),
        g_mm,
        g_mn,
        g_mm_pinv: p.pinv,
        pinv_factor: p.factor,
        pinv_tol,
    })
}

/// Evaluates `G_mm`, `G_mn` and the pseudoinverse for the given landmarks.
/// Never forms `G_nn`.
pub fn build_sketch(
    kernel: &dyn SteinKernel,
    points: &[Point],
    indices: &[usize],
    pinv_tol: f64,
) -> Result<NystromSketch> {
    let prep = prepare_points(kernel, points)?;
    sketch_from_prepared(kernel, &prep, indices, pinv_tol)
}

/// Nyström estimate `beta^T G_mm^- beta` with `beta = G_mn 1 / n`: the squared
/// norm of the projected mean embedding.
pub fn ksd_nystrom(sketch: &NystromSketch, n: usize) -> Result<KsdEstimate> {
    if sketch.n() != n {
        return Err(KsdError::DimensionMismatch {
            expected: sketch.n(),
            got: n,
        });
    }
    let ones = vec![1.0; n];
    Ok(KsdEstimate {
        value: sketch.projected_norm2(&ones),
        method: EstimateMethod::Nystrom,
        n,
        m: Some(sketch.m()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::samplers::{sample_gaussian, score_gaussian};
    use crate::stein::LangevinStein;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn std_normal_kernel() -> LangevinStein {
        LangevinStein::new(Arc::new(score_gaussian(vec![0.0], 1.0).unwrap()), 1.0).unwrap()
    }

    fn sample(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = RngStream::new(seed, 0).rng();
        sample_gaussian(&[0.0], 1.0, n, &mut rng).unwrap()
    }

    fn gram(rows: &[&[f64]]) -> GramMatrix {
        let n = rows.len();
        GramMatrix::from_matrix(DMatrix::from_fn(n, n, |i, j| rows[i][j])).unwrap()
    }

    fn random_psd(n: usize, rank: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = RngStream::new(seed, 1).rng();
        let a = DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0));
        let m = &a * a.transpose();
        DMatrix::from_fn(n, n, |i, j| if i <= j { m[(i, j)] } else { m[(j, i)] })
    }

    #[test]
    fn single_point_gram() {
        let g = gram_full(&std_normal_kernel(), &[Point::new(vec![0.0])]).unwrap();
        assert_eq!(g.values()[(0, 0)], 1.0);
        assert_eq!(ksd_v_statistic(&g).value, 1.0);
    }

    #[test]
    fn gram_is_symmetric_with_kernel_diagonal() {
        let k = std_normal_kernel();
        let x = sample(25, 3);
        let g = gram_full(&k, &x).unwrap();
        assert_eq!(g.values(), &g.values().transpose());
        for (i, xi) in x.iter().enumerate() {
            assert_eq!(g.values()[(i, i)], k.eval(xi, xi).unwrap());
        }
    }

    #[test]
    fn gram_reports_offending_point() {
        let x = vec![Point::new(vec![0.0]), Point::new(vec![f64::NAN])];
        match gram_full(&std_normal_kernel(), &x) {
            Err(KsdError::AtPoint { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn v_statistic_examples() {
        assert_eq!(
            ksd_v_statistic(&gram(&[&[1.0, 1.0], &[1.0, 1.0]])).value,
            1.0
        );
        assert_eq!(
            ksd_v_statistic(&GramMatrix::from_matrix(DMatrix::zeros(4, 4)).unwrap()).value,
            0.0
        );
    }

    #[test]
    fn u_statistic_examples() {
        assert_eq!(
            ksd_u_statistic(&gram(&[&[3.0, 0.5], &[0.5, 3.0]])).unwrap(),
            0.5
        );
        let g = GramMatrix::from_matrix(DMatrix::from_fn(
            5,
            5,
            |i, j| if i == j { 2.0 } else { -1.0 },
        ))
        .unwrap();
        assert_eq!(ksd_u_statistic(&g).unwrap(), -1.0);
        assert!(ksd_u_statistic(&gram(&[&[1.0]])).is_err());
    }

    #[test]
    fn rejects_asymmetric_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(
            GramMatrix::from_matrix(m.clone()),
            Err(KsdError::NotSymmetric(_))
        ));
        assert!(matches!(
            pinv_psd(&m, 1e-10),
            Err(KsdError::NotSymmetric(_))
        ));
    }

    #[test]
    fn landmarks_single_point_and_determinism() {
        let mut rng = RngStream::new(1, 2).rng();
        assert_eq!(sample_landmarks(1, 7, &mut rng), vec![0; 7]);
        let a = sample_landmarks(50, 20, &mut RngStream::new(9, 0).rng());
        let b = sample_landmarks(50, 20, &mut RngStream::new(9, 0).rng());
        assert_eq!(a, b);
    }

    #[test]
    fn landmarks_are_uniform() {
        // Chi-square goodness of fit, 9 degrees of freedom; 21.67 is the 0.99 quantile.
        let n = 10;
        let m = 100_000;
        let idx = sample_landmarks(n, m, &mut RngStream::new(4, 0).rng());
        let mut counts = [0usize; 10];
        for i in idx {
            counts[i] += 1;
        }
        let expected = m as f64 / n as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 21.67, "chi2 = {chi2}");
    }

    #[test]
    fn pinv_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert!((pinv_psd(&id, DEFAULT_PINV_TOL).unwrap() - &id).amax() < 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        let p = pinv_psd(&d, DEFAULT_PINV_TOL).unwrap();
        assert!((p - DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.0]))).amax() < 1e-15);
        let ones = DMatrix::from_element(2, 2, 1.0);
        let p = pinv_psd(&ones, DEFAULT_PINV_TOL).unwrap();
        assert!((&p - &ones * 0.25).amax() < 1e-15);
        assert!((&ones * &p * &ones - &ones).amax() < 1e-14);
        let z = pinv_psd_factor(&DMatrix::zeros(3, 3), DEFAULT_PINV_TOL).unwrap();
        assert_eq!(z.rank, 0);
        assert_eq!(z.pinv, DMatrix::zeros(3, 3));
    }

    #[test]
    fn full_landmarks_reproduce_gram() {
        let k = std_normal_kernel();
        let x = sample(12, 5);
        let g = gram_full(&k, &x).unwrap();
        let idx: Vec<usize> = (0..12).collect();
        let s = build_sketch(&k, &x, &idx, DEFAULT_PINV_TOL).unwrap();
        assert_eq!(&s.g_mm, g.values());
        assert_eq!(&s.g_mn, g.values());
    }

    #[test]
    fn duplicated_landmarks_are_rank_deficient() {
        let k = std_normal_kernel();
        let x = sample(20, 6);
        let s = build_sketch(&k, &x, &[3, 7, 3, 11], DEFAULT_PINV_TOL).unwrap();
        let p = pinv_psd_factor(&s.g_mm, DEFAULT_PINV_TOL).unwrap();
        assert_eq!(p.rank, 3);
        let v = ksd_nystrom(&s, 20).unwrap().value;
        let unique = build_sketch(&k, &x, &[3, 7, 11], DEFAULT_PINV_TOL).unwrap();
        let w = ksd_nystrom(&unique, 20).unwrap().value;
        assert!((v - w).abs() < 1e-12 * (1.0 + w));
    }

    #[test]
    fn single_landmark_single_point() {
        let k = std_normal_kernel();
        let x = vec![Point::new(vec![1.5])];
        let s = build_sketch(&k, &x, &[0], DEFAULT_PINV_TOL).unwrap();
        let g = s.g_mm[(0, 0)];
        assert!(g > 0.0);
        assert!((ksd_nystrom(&s, 1).unwrap().value - g).abs() < 1e-14 * g);
        assert!(ksd_nystrom(&s, 2).is_err());
    }

    #[test]
    fn sketch_rejects_bad_indices() {
        let k = std_normal_kernel();
        let x = sample(5, 1);
        assert!(build_sketch(&k, &x, &[5], DEFAULT_PINV_TOL).is_err());
        assert!(build_sketch(&k, &x, &[], DEFAULT_PINV_TOL).is_err());
    }

    #[test]
    fn penrose_identities_on_sketch() {
        let k = std_normal_kernel();
        for seed in 0..10 {
            let x = sample(40, 100 + seed);
            let idx = sample_landmarks(40, 8, &mut RngStream::new(seed, 9).rng());
            let s = build_sketch(&k, &x, &idx, DEFAULT_PINV_TOL).unwrap();
            let g = &s.g_mm;
            let p = &s.g_mm_pinv;
            let scale = g.amax();
            assert!((g * p * g - g).amax() <= 1e-8 * scale);
            // Rounding in P G P grows with the retained condition number.
            let cond = scale * p.amax();
            let err = (p * g * p - p).amax();
            assert!(
                err <= 100.0 * f64::EPSILON * cond * p.amax().max(1.0),
                "{err}"
            );
            assert_eq!(p, &p.transpose());
        }
    }

    #[test]
    fn full_landmarks_match_v_statistic() {
        let k = std_normal_kernel();
        let x = sample(30, 8);
        let g = gram_full(&k, &x).unwrap();
        let v = ksd_v_statistic(&g).value;
        let s = build_sketch(&k, &x, &(0..30).collect::<Vec<_>>(), DEFAULT_PINV_TOL).unwrap();
        let nys = ksd_nystrom(&s, 30).unwrap().value;
        assert!((nys - v).abs() <= 1e-8 * (1.0 + v), "{nys} vs {v}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn v_u_identity(n in 2usize..12, rank in 1usize..6, seed in 0u64..1000) {
            let g = GramMatrix::from_matrix(random_psd(n, rank, seed)).unwrap();
            let v = ksd_v_statistic(&g).value;
            let u = ksd_u_statistic(&g).unwrap();
            let nf = n as f64;
            let rhs = (nf - 1.0) / nf * u + g.values().trace() / (nf * nf);
            prop_assert!((v - rhs).abs() <= 1e-12 * (1.0 + v.abs()));
            prop_assert!(v >= -1e-12);
        }

        #[test]
        fn pinv_penrose(n in 1usize..10, rank in 1usize..10, seed in 0u64..1000) {
            let m = random_psd(n, rank.min(n), seed);
            let p = pinv_psd(&m, DEFAULT_PINV_TOL).unwrap();
            let scale = m.amax().max(1e-300);
            prop_assert!((&m * &p * &m - &m).amax() <= 1e-8 * scale);
            prop_assert!((&p * &m * &p - &p).amax() <= 1e-8 * p.amax().max(1.0));
            let mp = &m * &p;
            prop_assert!((&mp - mp.transpose()).amax() <= 1e-8);
            let pm = &p * &m;
            prop_assert!((&pm - pm.transpose()).amax() <= 1e-8);
            prop_assert!(SymmetricEigen::new(p.clone()).eigenvalues.min() >= -1e-10 * p.amax().max(1.0));
        }

        #[test]
        fn nystrom_never_exceeds_v_stat(n in 2usize..40, m in 1usize..12, seed in 0u64..10_000) {
            let k = std_normal_kernel();
            let x = sample(n, seed);
            let g = gram_full(&k, &x).unwrap();
            let idx = sample_landmarks(n, m, &mut RngStream::new(seed, 3).rng());
            let s = build_sketch(&k, &x, &idx, DEFAULT_PINV_TOL).unwrap();
            let nys = ksd_nystrom(&s, n).unwrap().value;
            let v = ksd_v_statistic(&g).value;
            prop_assert!(nys >= -1e-12);
            prop_assert!(nys <= v + 1e-10, "{} > {}", nys, v);
        }
    }
}
