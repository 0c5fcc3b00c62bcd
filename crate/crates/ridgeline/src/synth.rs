//! Synthetic ground truths with known smoothness and capacity, seeded data
//! generation, and exact population errors.
//!
//! A truth is built on the trigonometric kernel's eigensystem: the target
//! has Mercer coefficients `c_j = μ_j^r g_j` for a random unit vector `g`,
//! which realizes a source of smoothness exactly `r` with `‖h‖ = 1`, while
//! the kernel's eigenvalue decay `m^{-a}` pins the capacity exponent
//! `s = 1/a`. Because the eigenfunctions are orthonormal under the uniform
//! covariate distribution, the population errors of any fitted model reduce
//! to coefficient sums — no quadrature involved.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::{Dataset, KernelSpec};
use crate::spectral::{KrrModel, SpectralCache};

// Sub-streams of the per-trial RNG, so coefficient, covariate and noise
// draws stay independent while sharing one seed.
const STREAM_COEFFS: u64 = 0;
const STREAM_COVARIATES: u64 = 1;
const STREAM_NOISE: u64 = 2;

/// A synthetic regression function with known regularity.
#[derive(Debug, Clone)]
pub struct SourceTruth {
    kernel: KernelSpec,
    mu: Array1<f64>,
    coeffs: Array1<f64>,
    r: f64,
    s: f64,
    seed: u64,
}

/// One generated sample: covariates uniform on `[0, 1]`, responses
/// `y_i = f(x_i) + ε_i` with independent Gaussian noise.
#[derive(Debug)]
pub struct TrialData<'a> {
    pub truth: &'a SourceTruth,
    pub dataset: Dataset,
    pub sigma: f64,
    pub seed: u64,
}

/// Provenance record for experiment outputs.
#[derive(Debug, Clone, Serialize)]
pub struct TruthRecord {
    pub a: f64,
    pub r: f64,
    pub j: usize,
    pub seed: u64,
    pub coeffs_digest: String,
}

impl SourceTruth {
    /// Mercer coefficients `c_j` of the target on the kernel eigensystem.
    pub fn coeffs(&self) -> ArrayView1<'_, f64> {
        self.coeffs.view()
    }

    /// Kernel eigenvalues, matching the coefficient order.
    pub fn eigenvalues(&self) -> ArrayView1<'_, f64> {
        self.mu.view()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn smoothness_r(&self) -> f64 {
        self.r
    }

    pub fn capacity_s(&self) -> f64 {
        self.s
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn record(&self) -> TruthRecord {
        let (a, j) = match self.kernel {
            KernelSpec::TrigMercer { decay_a, num_pairs } => (decay_a, num_pairs),
            _ => unreachable!("truths are always built on the trig kernel"),
        };
        let mut hasher = Sha256::new();
        for c in self.coeffs.iter() {
            hasher.update(c.to_le_bytes());
        }
        let digest = hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        TruthRecord {
            a,
            r: self.r,
            j,
            seed: self.seed,
            coeffs_digest: digest,
        }
    }
}

/// Builds a truth with smoothness `r` in `[1/2, 1]` on the trig kernel with
/// decay `a > 1` and truncation `J`. Deterministic for fixed seed.
///
/// The normalized profile `g` has `‖g‖ = 1`, so `Σ c_j² / μ_j^{2r} = 1`
/// holds exactly and constants are comparable across seeds.
pub fn make_truth(a: f64, r: f64, j: usize, seed: u64) -> Result<SourceTruth> {
    if !(0.5..=1.0).contains(&r) {
        return Err(Error::input(format!(
            "smoothness r must lie in [1/2, 1], got {r}"
        )));
    }
    let kernel = KernelSpec::trig_mercer(a, j)?;
    let mu = kernel.mercer_eigenvalues()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_COEFFS);
    let mut g = Array1::from_shape_fn(mu.len(), |_| rng.sample::<f64, _>(StandardNormal));
    let norm = g.mapv(|v| v * v).sum().sqrt();
    if norm == 0.0 {
        return Err(Error::numeric("degenerate zero profile draw"));
    }
    g.mapv_inplace(|v| v / norm);
    let coeffs = Array1::from_iter(
        mu.iter()
            .zip(g.iter())
            .map(|(m, gi)| m.powf(r) * gi),
    );
    Ok(SourceTruth {
        kernel,
        mu,
        coeffs,
        r,
        s: 1.0 / a,
        seed,
    })
}

#[cfg(test)]
fn truth_with_coeffs(a: f64, r: f64, j: usize, coeffs: Array1<f64>) -> SourceTruth {
    let kernel = KernelSpec::trig_mercer(a, j).unwrap();
    let mu = kernel.mercer_eigenvalues().unwrap();
    assert_eq!(mu.len(), coeffs.len());
    SourceTruth {
        kernel,
        mu,
        coeffs,
        r,
        s: 1.0 / a,
        seed: 0,
    }
}

/// Evaluates the truth at one point through its feature expansion.
pub fn eval_truth(truth: &SourceTruth, x: f64) -> Result<f64> {
    let row = truth.kernel.mercer_feature_row(x)?;
    Ok(row.dot(&truth.coeffs))
}

/// Draws `n` covariates uniformly on `[0, 1]` and responses
/// `y = f(x) + N(0, σ²)`. Deterministic for fixed seed; covariates and
/// noise come from separate streams of one generator.
pub fn generate_trial(truth: &SourceTruth, n: usize, sigma: f64, seed: u64) -> Result<TrialData<'_>> {
    if n == 0 {
        return Err(Error::input("a trial needs at least one sample"));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::input(format!(
            "noise level must be a finite non-negative number, got {sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_COVARIATES);
    let xs = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>());
    let (phi, _) = truth.kernel.mercer_features(xs.view())?;
    let mut ys = phi.dot(&truth.coeffs);
    if sigma > 0.0 {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
        noise_rng.set_stream(STREAM_NOISE);
        for y in ys.iter_mut() {
            *y += sigma * noise_rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(TrialData {
        truth,
        dataset: Dataset::new(xs, ys)?,
        sigma,
        seed,
    })
}

/// Exact population errors `(‖f − f_ρ‖_ρ, ‖f − f_ρ‖_K)` of a fitted model.
///
/// The fitted function `f = Σ α_i K(x_i, ·)` has Mercer coefficient
/// `μ_j Σ_i α_i φ_j(x_i)` on the `j`-th eigenfunction, so both norms reduce
/// to coefficient differences against the truth.
pub fn population_errors(
    truth: &SourceTruth,
    model: &KrrModel,
    dataset: &Dataset,
) -> Result<(f64, f64)> {
    if model.alpha.len() != dataset.len() {
        return Err(Error::input(format!(
            "model has {} coefficients but the dataset {} points",
            model.alpha.len(),
            dataset.len()
        )));
    }
    dataset.validate_for(&truth.kernel)?;
    let (phi, mu) = truth.kernel.mercer_features(dataset.xs())?;
    let projected = phi.t().dot(&model.alpha);
    errors_from_projection(truth, &mu, projected.view())
}

fn errors_from_projection(
    truth: &SourceTruth,
    mu: &Array1<f64>,
    projected: ArrayView1<'_, f64>,
) -> Result<(f64, f64)> {
    let mut rho_sq = 0.0;
    let mut k_sq = 0.0;
    for ((m, a), c) in mu.iter().zip(projected.iter()).zip(truth.coeffs.iter()) {
        let d = m * a - c;
        rho_sq += d * d;
        k_sq += d * d / m;
    }
    let err_rho = rho_sq.sqrt();
    let err_k = k_sq.sqrt();
    debug_assert!(
        err_k >= err_rho - 1e-12,
        "RKHS error must dominate the L2 error"
    );
    Ok((err_rho, err_k))
}

/// Population errors of the ridge path at every λ in `lambdas`, sharing one
/// factorization and one feature matrix across the whole curve. This is the
/// oracle used by rate experiments: its per-n minimum stands in for the
/// a-priori optimal regularization.
pub fn population_error_curve(
    truth: &SourceTruth,
    cache: &SpectralCache,
    xs: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    lambdas: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if lambdas.is_empty() {
        return Ok(Vec::new());
    }
    let n = cache.len();
    if xs.nrows() != n || y.len() != n {
        return Err(Error::input("dataset does not match the cache"));
    }
    let rotated = cache.rotate(y);
    let sigma = cache.eigenvalues();
    let mut rot_solutions = Array2::<f64>::zeros((n, lambdas.len()));
    for (j, &lambda) in lambdas.iter().enumerate() {
        if !(lambda > 0.0) {
            return Err(Error::input("curve lambdas must be positive"));
        }
        let ln = lambda * n as f64;
        for i in 0..n {
            rot_solutions[[i, j]] = rotated[i] / (sigma[i] + ln);
        }
    }
    // alpha columns, then their feature projections, as two dense products
    let alphas = cache.eigenvectors().dot(&rot_solutions);
    let (phi, mu) = truth.kernel.mercer_features(xs)?;
    let projections = phi.t().dot(&alphas);
    let mut out = Vec::with_capacity(lambdas.len());
    for j in 0..lambdas.len() {
        out.push(errors_from_projection(truth, &mu, projections.column(j))?);
    }
    Ok(out)
}
