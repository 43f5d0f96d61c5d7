//! Dense symmetric positive-definite linear algebra.
//!
//! Everything downstream goes through [`SpdFactor`]: a lower Cholesky factor
//! of a (possibly jittered) SPD matrix. Factorization and the triangular
//! solves are blocked so that almost all flops land in `gemm`, which nalgebra
//! hands to `matrixmultiply`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{dim_mismatch, Error, Result};

/// Block size for the blocked factorization and triangular solves.
const BLOCK: usize = 96;

/// Relative jitter applied to the first retry, scaled by the mean diagonal.
pub const DEFAULT_JITTER_SCALE: f64 = 1e-8;

/// Number of ×10 jitter escalations tried after the base jitter.
pub const JITTER_ESCALATIONS: i32 = 6;

/// A pivot below `PIVOT_RTOL * max(diag)` counts as a breakdown.
const PIVOT_RTOL: f64 = 1e-12;

/// Eigenvalues below `PINV_RTOL * max|λ|` are dropped by the pseudo-inverse.
const PINV_RTOL: f64 = 1e-10;

/// Lower Cholesky factor `L` with `L Lᵀ = A + jitter·I`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    lower: DMatrix<f64>,
    jitter: f64,
}

impl SpdFactor {
    /// Wraps an already-computed lower factor. The caller guarantees a
    /// strictly positive diagonal and a zero upper triangle.
    pub(crate) fn from_lower(lower: DMatrix<f64>, jitter: f64) -> Self {
        debug_assert!(lower.is_square());
        SpdFactor { lower, jitter }
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn jitter_applied(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// `log det(L Lᵀ) = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// `L Lᵀ`, mostly useful in tests.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }

    /// Solves `L X = B`.
    pub fn forward(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(b.nrows())?;
        let mut x = b.clone();
        forward_in_place(&self.lower, &mut x);
        Ok(x)
    }

    /// Solves `Lᵀ X = B`.
    pub fn backward(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(b.nrows())?;
        let mut x = b.clone();
        backward_in_place(&self.lower, &mut x);
        Ok(x)
    }

    /// Solves `(L Lᵀ) X = B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(b.nrows())?;
        let mut x = b.clone();
        forward_in_place(&self.lower, &mut x);
        backward_in_place(&self.lower, &mut x);
        Ok(x)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_rows(b.len())?;
        let mut x = b.clone();
        self.lower.solve_lower_triangular_mut(&mut x);
        self.lower.tr_solve_lower_triangular_mut(&mut x);
        Ok(x)
    }

    /// `L⁻¹ b` for a single right-hand side.
    pub fn forward_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_rows(b.len())?;
        let mut x = b.clone();
        self.lower.solve_lower_triangular_mut(&mut x);
        Ok(x)
    }

    /// Explicit `(L Lᵀ)⁻¹`. Only used where the full inverse is genuinely needed
    /// (trace terms of the likelihood gradient).
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut x = DMatrix::identity(n, n);
        forward_in_place(&self.lower, &mut x);
        x.transpose() * &x
    }

    fn check_rows(&self, rows: usize) -> Result<()> {
        if rows != self.dim() {
            return Err(dim_mismatch(format!(
                "factor is {0}x{0} but right-hand side has {rows} rows",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// `DEFAULT_JITTER_SCALE · mean(diag(A))`.
pub fn default_jitter(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    DEFAULT_JITTER_SCALE * a.diagonal().mean().abs()
}

/// Cholesky factorization with the default jitter policy.
pub fn cholesky(a: &DMatrix<f64>) -> Result<SpdFactor> {
    cholesky_jittered(a, default_jitter(a))
}

/// Factors `A + jitter·I`, trying `jitter = 0` first and then
/// `base_jitter · 10^k` for `k = 0..=6` until the factorization succeeds.
pub fn cholesky_jittered(a: &DMatrix<f64>, base_jitter: f64) -> Result<SpdFactor> {
    if !a.is_square() {
        return Err(dim_mismatch(format!(
            "cholesky needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    debug_assert!(
        is_symmetric(a, 1e-12),
        "cholesky_jittered called on a non-symmetric matrix"
    );
    let n = a.nrows();
    if n == 0 {
        return Ok(SpdFactor::from_lower(DMatrix::zeros(0, 0), 0.0));
    }

    let mut last = 0.0;
    let attempts = std::iter::once(0.0).chain(
        (0..=JITTER_ESCALATIONS)
            .map(|k| base_jitter * 10f64.powi(k))
            .filter(|j| *j > 0.0),
    );
    for jitter in attempts {
        last = jitter;
        let mut work = a.clone();
        if jitter > 0.0 {
            for i in 0..n {
                work[(i, i)] += jitter;
            }
        }
        if cholesky_in_place(&mut work).is_ok() {
            if jitter > 0.0 {
                log::debug!("cholesky of {n}x{n} matrix needed jitter {jitter:e}");
            }
            return Ok(SpdFactor::from_lower(work, jitter));
        }
    }
    Err(Error::NonPositiveDefinite { jitter: last })
}

/// Solves `A X = B` through an existing factor of `A`.
pub fn solve_spd(factor: &SpdFactor, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    factor.solve(b)
}

/// Outcome of [`solve_symmetric_with_fallback`].
#[derive(Debug, Clone)]
pub struct SymmetricSolve {
    pub solution: DVector<f64>,
    /// True when the Cholesky route broke down and the minimum-norm
    /// least-squares solution was returned instead.
    pub fallback_used: bool,
}

/// Solves a symmetric system `A x = b`.
///
/// The first attempt is an unjittered Cholesky solve. If `A` is numerically
/// singular, the minimum-norm least-squares solution `A⁺ b` is returned,
/// computed from the symmetric eigendecomposition with eigenvalues below
/// `1e-10 · max|λ|` discarded. Jitter is deliberately not used here since it
/// would perturb the minimum-norm answer for rank-deficient Gram matrices.
pub fn solve_symmetric_with_fallback(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<SymmetricSolve> {
    if !a.is_square() || a.nrows() != b.len() {
        return Err(dim_mismatch(format!(
            "symmetric solve of {}x{} system with rhs of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let mut work = a.clone();
    if cholesky_in_place(&mut work).is_ok() {
        let factor = SpdFactor::from_lower(work, 0.0);
        return Ok(SymmetricSolve {
            solution: factor.solve_vec(b)?,
            fallback_used: false,
        });
    }
    log::debug!("symmetric solve fell back to the pseudo-inverse");
    Ok(SymmetricSolve {
        solution: pseudo_inverse_solve(a, b),
        fallback_used: true,
    })
}

fn pseudo_inverse_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut x = DVector::zeros(b.len());
    if scale == 0.0 {
        return x;
    }
    let cutoff = PINV_RTOL * scale;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > cutoff {
            let v = eig.eigenvectors.column(k);
            let coef = v.dot(b) / lambda;
            x.axpy(coef, &v, 1.0);
        }
    }
    x
}

/// Entrywise symmetry check relative to the largest absolute entry.
pub fn is_symmetric(a: &DMatrix<f64>, rtol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let n = a.nrows();
    (0..n).all(|j| (j + 1..n).all(|i| (a[(i, j)] - a[(j, i)]).abs() <= rtol * scale))
}

/// In-place blocked lower Cholesky. On success the lower triangle holds `L`
/// and the strict upper triangle is zeroed. On failure returns the index of
/// the offending pivot; the matrix contents are then unspecified.
fn cholesky_in_place(a: &mut DMatrix<f64>) -> std::result::Result<(), usize> {
    let n = a.nrows();
    let max_diag = a.diagonal().iter().fold(0.0f64, |m, v| m.max(*v));
    if !(max_diag > 0.0) || !max_diag.is_finite() {
        return Err(0);
    }
    let tol = PIVOT_RTOL * max_diag;

    for k in (0..n).step_by(BLOCK) {
        let kb = BLOCK.min(n - k);
        factor_diagonal_block(a, k, kb, tol)?;
        let rest = n - k - kb;
        if rest == 0 {
            continue;
        }
        // Panel: A21 := A21 L11⁻ᵀ, solved as L11 A21ᵀ = A21ᵀ.
        let l11 = a.view((k, k), (kb, kb)).clone_owned();
        let mut panel_t = a.view((k + kb, k), (rest, kb)).transpose();
        l11.solve_lower_triangular_unchecked_mut(&mut panel_t);
        let panel = panel_t.transpose();
        a.view_mut((k + kb, k), (rest, kb)).copy_from(&panel);

        // Trailing update of the lower triangle only, one column block at a time.
        for j in (0..rest).step_by(BLOCK) {
            let jb = BLOCK.min(rest - j);
            let rows = rest - j;
            let lhs = panel.rows(j, rows);
            let rhs_t = panel.rows(j, jb).transpose();
            a.view_mut((k + kb + j, k + kb + j), (rows, jb))
                .gemm(-1.0, &lhs, &rhs_t, 1.0);
        }
    }
    a.fill_upper_triangle(0.0, 1);
    Ok(())
}

fn factor_diagonal_block(
    a: &mut DMatrix<f64>,
    k: usize,
    kb: usize,
    tol: f64,
) -> std::result::Result<(), usize> {
    for j in k..k + kb {
        let mut d = a[(j, j)];
        for p in k..j {
            d -= a[(j, p)] * a[(j, p)];
        }
        if !(d > tol) || !d.is_finite() {
            return Err(j);
        }
        let d = d.sqrt();
        a[(j, j)] = d;
        for i in j + 1..k + kb {
            let mut s = a[(i, j)];
            for p in k..j {
                s -= a[(i, p)] * a[(j, p)];
            }
            a[(i, j)] = s / d;
        }
    }
    Ok(())
}

/// Overwrites `b` with `L⁻¹ b`.
pub(crate) fn forward_in_place(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    for k in (0..n).step_by(BLOCK) {
        let kb = BLOCK.min(n - k);
        let lkk = l.view((k, k), (kb, kb));
        {
            let mut bk = b.rows_mut(k, kb);
            lkk.solve_lower_triangular_unchecked_mut(&mut bk);
        }
        if k + kb < n {
            let (top, mut bottom) = b.rows_range_pair_mut(k..k + kb, k + kb..);
            bottom.gemm(-1.0, &l.view((k + kb, k), (n - k - kb, kb)), &top, 1.0);
        }
    }
}

/// Overwrites `b` with `L⁻ᵀ b`.
pub(crate) fn backward_in_place(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    let starts: Vec<usize> = (0..n).step_by(BLOCK).collect();
    for &k in starts.iter().rev() {
        let kb = BLOCK.min(n - k);
        let lkk = l.view((k, k), (kb, kb));
        {
            let mut bk = b.rows_mut(k, kb);
            lkk.tr_solve_lower_triangular_unchecked_mut(&mut bk);
        }
        if k > 0 {
            let (mut top, bk) = b.rows_range_pair_mut(0..k, k..k + kb);
            let lt = l.view((k, 0), (kb, k)).transpose();
            top.gemm(-1.0, &lt, &bk, 1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let g = distgp_testkit::random_matrix(n, n, seed);
        &g * g.transpose() + DMatrix::identity(n, n) * n as f64
    }

    #[test]
    fn identity_needs_no_jitter() {
        let f = cholesky_jittered(&DMatrix::identity(3, 3), 1e-8).unwrap();
        assert_eq!(f.jitter_applied(), 0.0);
        assert_eq!(f.lower(), &DMatrix::<f64>::identity(3, 3));
    }

    #[test]
    fn two_by_two_factor() {
        let a = dmatrix![4.0, 2.0; 2.0, 3.0];
        let f = cholesky_jittered(&a, 1e-8).unwrap();
        let l = f.lower();
        assert!((l[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((l[(1, 0)] - 1.0).abs() < 1e-15);
        assert_eq!(l[(0, 1)], 0.0);
        assert!((l[(1, 1)] - 2f64.sqrt()).abs() < 1e-15);
        assert!(rel_frob(&f.reconstruct(), &a) < 1e-15);
    }

    #[test]
    fn rank_one_matrix_is_jittered() {
        let a = dmatrix![1.0, 1.0; 1.0, 1.0];
        let f = cholesky_jittered(&a, 1e-8).unwrap();
        assert!(f.jitter_applied() > 0.0);
        let target = &a + DMatrix::identity(2, 2) * f.jitter_applied();
        assert!(rel_frob(&f.reconstruct(), &target) < 1e-10);
    }

    #[test]
    fn hopeless_matrix_reports_non_pd() {
        let a = dmatrix![-1.0, 0.0; 0.0, -1.0];
        assert!(matches!(
            cholesky_jittered(&a, 1e-8),
            Err(Error::NonPositiveDefinite { .. })
        ));
        assert!(matches!(
            cholesky_jittered(&DMatrix::zeros(2, 3), 1e-8),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn blocked_factor_reconstructs_large_matrix() {
        // Larger than two blocks, with a ragged last block.
        let a = random_spd(2 * BLOCK + 17, 3);
        let f = cholesky(&a).unwrap();
        assert_eq!(f.jitter_applied(), 0.0);
        assert!(rel_frob(&f.reconstruct(), &a) < 1e-13);
        assert!(f.lower().diagonal().iter().all(|d| *d > 0.0));
        assert!((0..a.nrows()).all(|j| (0..j).all(|i| f.lower()[(i, j)] == 0.0)));
    }

    #[test]
    fn solve_spd_examples() {
        let f = cholesky(&DMatrix::identity(4, 4)).unwrap();
        let b = distgp_testkit::random_matrix(4, 3, 9);
        assert_eq!(solve_spd(&f, &b).unwrap(), b);

        let f = cholesky(&dmatrix![4.0, 2.0; 2.0, 3.0]).unwrap();
        let x = solve_spd(&f, &dmatrix![1.0; 0.0]).unwrap();
        assert!((x[(0, 0)] - 0.375).abs() < 1e-15);
        assert!((x[(1, 0)] + 0.25).abs() < 1e-15);

        assert!(matches!(
            solve_spd(&f, &DMatrix::zeros(3, 1)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn solve_spd_matches_dense_inverse() {
        let a = random_spd(10, 11);
        let b = distgp_testkit::random_matrix(10, 4, 12);
        let x = solve_spd(&cholesky(&a).unwrap(), &b).unwrap();
        let oracle = distgp_testkit::dense_inverse(&a) * &b;
        assert!(rel_frob(&x, &oracle) < 1e-9);
    }

    #[test]
    fn blocked_solves_match_unblocked() {
        let a = random_spd(3 * BLOCK + 5, 21);
        let f = cholesky(&a).unwrap();
        let b = distgp_testkit::random_matrix(a.nrows(), 7, 22);
        let fwd = f.forward(&b).unwrap();
        let fwd_ref = f.lower().solve_lower_triangular(&b).unwrap();
        assert!(rel_frob(&fwd, &fwd_ref) < 1e-12);
        let bwd = f.backward(&b).unwrap();
        let bwd_ref = f.lower().tr_solve_lower_triangular(&b).unwrap();
        assert!(rel_frob(&bwd, &bwd_ref) < 1e-12);
        let x = f.solve(&b).unwrap();
        assert!(rel_frob(&(&a * &x), &b) < 1e-10);
    }

    #[test]
    fn fallback_examples() {
        let s = solve_symmetric_with_fallback(&DMatrix::identity(2, 2), &DVector::from_vec(vec![1.0, 1.0]))
            .unwrap();
        assert!(!s.fallback_used);
        assert_eq!(s.solution.as_slice(), &[1.0, 1.0]);

        let a = dmatrix![1.0, 1.0; 1.0, 1.0];
        let s = solve_symmetric_with_fallback(&a, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert!(s.fallback_used);
        assert!((s.solution[0] - 0.5).abs() < 1e-14);
        assert!((s.solution[1] - 0.5).abs() < 1e-14);

        assert!(matches!(
            solve_symmetric_with_fallback(&a, &DVector::zeros(3)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn fallback_matches_dense_solve_when_well_conditioned() {
        let a = random_spd(5, 31);
        let b = DVector::from_column_slice(distgp_testkit::random_matrix(5, 1, 32).as_slice());
        let s = solve_symmetric_with_fallback(&a, &b).unwrap();
        assert!(!s.fallback_used);
        let oracle = distgp_testkit::dense_inverse(&a) * &b;
        assert!((&s.solution - &oracle).norm() / oracle.norm() < 1e-9);
    }

    #[test]
    fn fallback_is_deterministic() {
        let g = distgp_testkit::random_matrix(6, 3, 41);
        let a = &g * g.transpose(); // rank 3
        let b = DVector::from_element(6, 1.0);
        let s1 = solve_symmetric_with_fallback(&a, &b).unwrap();
        let s2 = solve_symmetric_with_fallback(&a, &b).unwrap();
        assert!(s1.fallback_used);
        assert_eq!(s1.solution, s2.solution);
    }
}
