//! One-time symmetric eigendecomposition of the Gram matrix and the per-λ
//! primitives built on it: ridge solves, the empirical effective dimension
//! and the three norms used by the selection rules.
//!
//! Selection rules evaluate tens to hundreds of candidate λ values against
//! one dataset. A single factorization `K = Q diag(σ) Qᵀ` makes every
//! subsequent quantity cheap: a solve is `O(n²)` (two rotations) and norms
//! of coefficient differences are `O(n)` once rotated. The alternative, one
//! Cholesky per λ, would cost `O(n³)` each.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use ndarray_linalg::Solve;

use crate::error::{Error, Result};

/// Gram matrix of a dataset plus its symmetric eigendecomposition.
///
/// Eigenvalues are sorted in descending order and clamped at zero: negative
/// values produced by roundoff would otherwise leak into effective-dimension
/// traces. Immutable after construction; all methods are pure reads.
#[derive(Debug, Clone)]
pub struct SpectralCache {
    n: usize,
    gram: Array2<f64>,
    eigenvalues: Array1<f64>,
    eigenvectors: Array2<f64>,
    rotated_y: Option<Array1<f64>>,
}

/// A fitted ridge model: regularization level λ and the coefficient vector
/// α solving `(K + λ n I) α = y`, representing `f = Σ α_i K(x_i, ·)`.
#[derive(Debug, Clone)]
pub struct KrrModel {
    pub lambda: f64,
    pub alpha: Array1<f64>,
    pub fitted_values: Array1<f64>,
}

impl SpectralCache {
    /// Factorizes a symmetric PSD Gram matrix. `y` is the response the cache
    /// was built for; its rotation `Qᵀy` is kept alongside.
    ///
    /// Deterministic for fixed input.
    pub fn build(gram: Array2<f64>, y: ArrayView1<'_, f64>) -> Result<Self> {
        let mut cache = Self::build_without_response(gram)?;
        if y.len() != cache.n {
            return Err(Error::input(format!(
                "response length {} does not match gram size {}",
                y.len(),
                cache.n
            )));
        }
        cache.rotated_y = Some(cache.rotate(y));
        Ok(cache)
    }

    /// Factorization only; used when several responses share one Gram matrix.
    pub fn build_without_response(gram: Array2<f64>) -> Result<Self> {
        let n = gram.nrows();
        if n == 0 || gram.ncols() != n {
            return Err(Error::input(format!(
                "gram matrix must be square and non-empty, got {}x{}",
                gram.nrows(),
                gram.ncols()
            )));
        }
        let scale = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut asym = 0.0f64;
        for i in 0..n {
            for j in 0..i {
                asym = asym.max((gram[[i, j]] - gram[[j, i]]).abs());
            }
        }
        if asym > 1e-8 * (1.0 + scale) {
            return Err(Error::input(format!(
                "gram matrix is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let (eigenvalues, eigenvectors) = symmetric_eigh_desc(&gram)?;
        Ok(SpectralCache {
            n,
            gram,
            eigenvalues,
            eigenvectors,
            rotated_y: None,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn gram(&self) -> ArrayView2<'_, f64> {
        self.gram.view()
    }

    /// Eigenvalues `σ_1 >= ... >= σ_n >= 0`.
    pub fn eigenvalues(&self) -> ArrayView1<'_, f64> {
        self.eigenvalues.view()
    }

    /// Orthonormal eigenvectors as columns, matching [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> ArrayView2<'_, f64> {
        self.eigenvectors.view()
    }

    /// `Qᵀy` for the response the cache was built with, if any.
    pub fn rotated_y(&self) -> Option<ArrayView1<'_, f64>> {
        self.rotated_y.as_ref().map(|v| v.view())
    }

    /// `Qᵀv`: coordinates of `v` in the eigenbasis.
    pub fn rotate(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        self.eigenvectors.t().dot(&v)
    }

    /// `Qv`: back to sample coordinates.
    pub fn rotate_back(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        self.eigenvectors.dot(&v)
    }

    fn check_lambda(&self, lambda: f64) -> Result<()> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::input(format!(
                "regularization parameter must be positive and finite, got {lambda}"
            )));
        }
        Ok(())
    }

    fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.n {
            return Err(Error::input(format!(
                "{what} has length {len}, expected {}",
                self.n
            )));
        }
        Ok(())
    }

    /// Rotated ridge coefficients `Qᵀα(λ)`, the `O(n)` inner loop of the
    /// selection rules: component `i` is `(Qᵀy)_i / (σ_i + λ n)`.
    pub fn solve_rotated(&self, rotated_y: ArrayView1<'_, f64>, lambda: f64) -> Result<Array1<f64>> {
        self.check_lambda(lambda)?;
        self.check_len(rotated_y.len(), "rotated response")?;
        let ln = lambda * self.n as f64;
        Ok(Array1::from_iter(
            rotated_y
                .iter()
                .zip(self.eigenvalues.iter())
                .map(|(yt, s)| yt / (s + ln)),
        ))
    }

    /// Solves `(K + λ n I) α = y` through the eigenbasis and materializes
    /// coefficients and fitted values `Kα` in sample coordinates.
    pub fn solve(&self, y: ArrayView1<'_, f64>, lambda: f64) -> Result<KrrModel> {
        self.check_len(y.len(), "response")?;
        let yt = self.rotate(y);
        let rot = self.solve_rotated(yt.view(), lambda)?;
        let alpha = self.rotate_back(rot.view());
        let fitted = self.rotate_back((&rot * &self.eigenvalues).view());
        Ok(KrrModel {
            lambda,
            alpha,
            fitted_values: fitted,
        })
    }

    /// Empirical effective dimension `N_D(λ) = Tr[(λ n I + K)^{-1} K]`,
    /// evaluated as `Σ σ_i / (σ_i + λ n)`. Strictly decreasing in λ whenever
    /// the Gram matrix is nonzero; takes values in `[0, rank K]`.
    pub fn effective_dimension(&self, lambda: f64) -> Result<f64> {
        self.check_lambda(lambda)?;
        let ln = lambda * self.n as f64;
        Ok(self.eigenvalues.iter().map(|s| s / (s + ln)).sum())
    }

    /// Empirical norm `‖Σ_i Δα_i K(x_i, ·)‖_D = sqrt((1/n) ‖K Δα‖²)`.
    pub fn empirical_norm(&self, delta_alpha: ArrayView1<'_, f64>) -> Result<f64> {
        self.check_len(delta_alpha.len(), "coefficient vector")?;
        let v = self.rotate(delta_alpha);
        Ok(self.empirical_norm_rotated(v.view()))
    }

    /// As [`Self::empirical_norm`] with the rotation already applied.
    pub fn empirical_norm_rotated(&self, rotated: ArrayView1<'_, f64>) -> f64 {
        let s: f64 = rotated
            .iter()
            .zip(self.eigenvalues.iter())
            .map(|(v, sig)| {
                let t = sig * v;
                t * t
            })
            .sum();
        (s / self.n as f64).sqrt()
    }

    /// RKHS norm of the difference of two coefficient vectors,
    /// `sqrt(Δᵀ K Δ)` with `Δ = α_a − α_b`.
    pub fn rkhs_norm_diff(
        &self,
        alpha_a: ArrayView1<'_, f64>,
        alpha_b: ArrayView1<'_, f64>,
    ) -> Result<f64> {
        self.check_len(alpha_a.len(), "first coefficient vector")?;
        self.check_len(alpha_b.len(), "second coefficient vector")?;
        let delta = &alpha_a.to_owned() - &alpha_b;
        let v = self.rotate(delta.view());
        Ok(self.rkhs_norm_rotated(v.view()))
    }

    /// `sqrt(Σ σ_i v_i²)` for an already-rotated difference.
    pub fn rkhs_norm_rotated(&self, rotated: ArrayView1<'_, f64>) -> f64 {
        let s: f64 = rotated
            .iter()
            .zip(self.eigenvalues.iter())
            .map(|(v, sig)| sig * v * v)
            .sum();
        s.max(0.0).sqrt()
    }

    /// The `(L_{K,D} + λI)^{1/2}`-weighted norm of `g = Σ Δα_i K(x_i, ·)`:
    ///
    /// ```text
    /// ‖(L_{K,D} + λI)^{1/2} g‖_K = sqrt(‖g‖_D² + λ ‖g‖_K²)
    /// ```
    ///
    /// computed in the eigenbasis as `sqrt(Σ v_i² σ_i (σ_i/n + λ))`.
    pub fn weighted_norm(&self, delta_alpha: ArrayView1<'_, f64>, lambda: f64) -> Result<f64> {
        self.check_lambda(lambda)?;
        self.check_len(delta_alpha.len(), "coefficient vector")?;
        let v = self.rotate(delta_alpha);
        Ok(self.weighted_norm_rotated(v.view(), lambda))
    }

    /// As [`Self::weighted_norm`] with the rotation already applied.
    pub fn weighted_norm_rotated(&self, rotated: ArrayView1<'_, f64>, lambda: f64) -> f64 {
        let n = self.n as f64;
        let s: f64 = rotated
            .iter()
            .zip(self.eigenvalues.iter())
            .map(|(v, sig)| v * v * sig * (sig / n + lambda))
            .sum();
        s.max(0.0).sqrt()
    }

    /// Residual sum of squares `‖y − K α(λ)‖²` evaluated in the eigenbasis;
    /// non-decreasing in λ.
    pub fn residual_sq_rotated(&self, rotated_y: ArrayView1<'_, f64>, lambda: f64) -> f64 {
        let ln = lambda * self.n as f64;
        rotated_y
            .iter()
            .zip(self.eigenvalues.iter())
            .map(|(yt, s)| {
                let r = ln / (s + ln) * yt;
                r * r
            })
            .sum()
    }

    /// Cross-checks the resolvent identity `A⁻¹ − B⁻¹ = B⁻¹ (B − A) A⁻¹` for
    /// `A = K + λ n I`, `B = K + λ' n I`.
    ///
    /// The left side `α(λ) − α(λ')` comes from the eigenbasis solver, the
    /// right side `(λ' − λ) n (K + λ n I)^{-1} (K + λ' n I)^{-1} y` from two
    /// dense LU solves, so the two routes share no factorization. Returns
    /// the relative discrepancy; on well-conditioned inputs it stays below
    /// 1e-8.
    pub fn resolvent_difference_check(
        &self,
        y: ArrayView1<'_, f64>,
        lambda: f64,
        lambda2: f64,
    ) -> Result<f64> {
        self.check_lambda(lambda)?;
        self.check_lambda(lambda2)?;
        self.check_len(y.len(), "response")?;
        let n = self.n as f64;
        let lhs = &self.solve(y, lambda)?.alpha - &self.solve(y, lambda2)?.alpha;

        let mut a = self.gram.clone();
        let mut b = self.gram.clone();
        for i in 0..self.n {
            a[[i, i]] += lambda * n;
            b[[i, i]] += lambda2 * n;
        }
        let inner = b
            .solve(&y.to_owned())
            .map_err(|e| Error::numeric(format!("dense solve failed: {e}")))?;
        let outer = a
            .solve(&inner)
            .map_err(|e| Error::numeric(format!("dense solve failed: {e}")))?;
        let rhs = outer.mapv(|v| v * (lambda2 - lambda) * n);

        let num = (&lhs - &rhs).mapv(|v| v * v).sum().sqrt();
        let den = lhs
            .mapv(|v| v * v)
            .sum()
            .sqrt()
            .max(rhs.mapv(|v| v * v).sum().sqrt());
        if den == 0.0 {
            return Ok(0.0);
        }
        Ok(num / den)
    }
}

/// Eigendecomposition of a symmetric matrix with eigenvalues descending and
/// negatives clamped to zero. Backed by LAPACK's divide-and-conquer driver
/// (`dsyevd`), which on large problems runs several times faster than the
/// QR-iteration driver while producing the same orthonormal basis.
fn symmetric_eigh_desc(gram: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = gram.nrows();
    // Column-major buffer; the matrix is symmetric, so the row-major view
    // can be copied directly as long as the mirror below keeps it exact.
    let mut a: Vec<f64> = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            a.push(gram[[i, j]]);
        }
    }
    let mut w = vec![0.0f64; n];
    let jobz = b'V' as std::ffi::c_char;
    let uplo = b'L' as std::ffi::c_char;
    let n_i = n as i32;
    let mut info = 0i32;

    // Workspace query, then the real call.
    let mut work_len = [0.0f64];
    let mut iwork_len = [0i32];
    unsafe {
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &n_i,
            a.as_mut_ptr(),
            &n_i,
            w.as_mut_ptr(),
            work_len.as_mut_ptr(),
            &-1,
            iwork_len.as_mut_ptr(),
            &-1,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::numeric(format!(
            "dsyevd workspace query failed (info = {info})"
        )));
    }
    let lwork = work_len[0] as i32;
    let liwork = iwork_len[0];
    let mut work = vec![0.0f64; lwork.max(1) as usize];
    let mut iwork = vec![0i32; liwork.max(1) as usize];
    unsafe {
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &n_i,
            a.as_mut_ptr(),
            &n_i,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::numeric(format!(
            "symmetric eigensolver did not converge (info = {info})"
        )));
    }

    // LAPACK returns ascending eigenvalues with eigenvectors in columns of
    // the column-major buffer; reverse into descending order.
    let mut values = Array1::<f64>::zeros(n);
    let mut vectors = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let src = n - 1 - i;
        values[i] = w[src].max(0.0);
        for j in 0..n {
            vectors[[j, i]] = a[src * n + j];
        }
    }
    Ok((values, vectors))
}
