//! Candidate grids, the concentration quantities `W` and `U`, and three
//! rules for choosing the regularization parameter from data.
//!
//! The early-stopping rule walks a uniform grid `λ_k = 1/(bk)` from the
//! smallest candidate upward and stops the first time the weighted norm of
//! two successive ridge estimates exceeds a variance-scaled threshold. Its
//! cost is one solve per candidate and at most `K − 1` comparisons. The
//! pairwise rule on a geometric grid `λ_k = q^k` keeps the largest λ whose
//! estimate stays within a `W`-sized ball of every estimate at smaller λ,
//! which needs up to `K(K+1)/2` comparisons. The hold-out baseline splits
//! the sample, scores every candidate on the validation part and refits.
//!
//! All selectors are pure functions of their inputs (plus an explicit seed
//! for hold-out) and safe to run concurrently against one shared
//! [`SpectralCache`].

use ndarray::{Array1, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kernel::{Dataset, KernelSpec};
use crate::spectral::SpectralCache;

pub const DEFAULT_DELTA: f64 = 0.05;
pub const DEFAULT_B: u32 = 1;
pub const DEFAULT_Q: f64 = 0.5;
pub const DEFAULT_CAP: usize = 400;
pub const DEFAULT_SPLIT_FRACTION: f64 = 0.2;

/// Smallest admissible noise estimate; degenerate (interpolated) responses
/// are floored here instead of producing a zero threshold.
pub const NOISE_FLOOR: f64 = 1e-8;

/// `C₁* = max{(κ² + 1)/3, 2 sqrt(κ² + 1)}`, the constant gating how far a
/// grid may extend before the concentration bounds behind `U` lose
/// validity.
pub fn c1_star(kappa: f64) -> f64 {
    let k2 = kappa * kappa + 1.0;
    (k2 / 3.0).max(2.0 * k2.sqrt())
}

/// `W_{D,λ} = 1/(n sqrt λ) + (1 + 1/sqrt(λ n)) sqrt(max{N_D(λ), 1}/n)`,
/// the computable scale of the stochastic error at level λ. Non-increasing
/// in λ; tends to `sqrt(1/n)` as λ grows.
pub fn w_quantity(cache: &SpectralCache, lambda: f64) -> Result<f64> {
    let nd = cache.effective_dimension(lambda)?;
    Ok(w_from_parts(cache.len() as f64, lambda, nd))
}

fn w_from_parts(n: f64, lambda: f64, nd: f64) -> f64 {
    1.0 / (n * lambda.sqrt()) + (1.0 + 1.0 / (lambda * n).sqrt()) * (nd.max(1.0) / n).sqrt()
}

/// `U_{D,λ,δ} = sqrt( log(1 + 8 log(64/δ) max{1, N_D(λ)} / sqrt(λ n)) / (λ n) )`,
/// the quantity whose smallness certifies the spectral concentration bounds
/// at level λ. Non-increasing in λ and vanishing as λ grows.
pub fn u_quantity(cache: &SpectralCache, lambda: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let nd = cache.effective_dimension(lambda)?;
    let ln = lambda * cache.len() as f64;
    let inner = 1.0 + 8.0 * (64.0 / delta).ln() * nd.max(1.0) / ln.sqrt();
    Ok((inner.ln() / ln).sqrt())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::input(format!(
            "confidence level delta must lie in (0, 1), got {delta}"
        )));
    }
    Ok(())
}

/// Whether grid lengths follow the theoretical `U`-based termination rule
/// or a plain cap. The theoretical constants are worst-case; at moderate
/// sample sizes they can terminate the grid at large λ, so the practical
/// mode is the shipping default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridMode {
    Paper,
    Practical,
}

impl FromStr for GridMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(GridMode::Paper),
            "practical" => Ok(GridMode::Practical),
            _ => Err(Error::input(format!(
                "unknown grid mode {s:?}; expected paper or practical"
            ))),
        }
    }
}

impl fmt::Display for GridMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridMode::Paper => "paper",
            GridMode::Practical => "practical",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridKind {
    /// `λ_k = 1/(bk)` for `k = 1..K`.
    Uniform { b: u32 },
    /// `λ_k = q^k` for `k = 0..K`.
    Geometric { q: f64 },
}

/// An ordered candidate set `λ_1 > λ_2 > ... > 0` with its terminal index.
///
/// For a uniform grid the terminal index equals the number of values; a
/// geometric grid carries `K + 1` values for terminal index `K` because it
/// starts at the exponent `k = 0`.
#[derive(Debug, Clone)]
pub struct LambdaGrid {
    kind: GridKind,
    values: Vec<f64>,
    terminal_index: usize,
    mode: GridMode,
}

impl LambdaGrid {
    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn mode(&self) -> GridMode {
        self.mode
    }

    /// Candidate values in strictly decreasing order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The paper-style index `K*` (uniform) or `K_q` (geometric).
    pub fn terminal_index(&self) -> usize {
        self.terminal_index
    }

    /// Grid index `k` of the `pos`-th value: `pos + 1` on a uniform grid,
    /// the exponent `pos` on a geometric one.
    pub fn k_at(&self, pos: usize) -> usize {
        match self.kind {
            GridKind::Uniform { .. } => pos + 1,
            GridKind::Geometric { .. } => pos,
        }
    }

    pub fn contains(&self, lambda: f64) -> bool {
        self.values.iter().any(|&v| v == lambda)
    }
}

/// Uniform grid `λ_k = 1/(bk)`, `k = 1..K*`.
///
/// In paper mode `K*` is the largest `k <= min(floor(n/b), cap)` with
/// `C₁* U_{D,λ_k,δ} <= 1/4`; at least one candidate is always kept. In
/// practical mode `K* = min(floor(n/b), cap)`. `kappa` is the sup-norm
/// constant of the kernel the cache was built from.
pub fn uniform_grid(
    cache: &SpectralCache,
    kappa: f64,
    b: u32,
    delta: f64,
    mode: GridMode,
    cap: usize,
) -> Result<LambdaGrid> {
    if b == 0 {
        return Err(Error::input("grid density b must be a positive integer"));
    }
    if cap == 0 {
        return Err(Error::input("grid cap must be at least 1"));
    }
    check_delta(delta)?;
    let hard_max = (cache.len() / b as usize).min(cap).max(1);
    let terminal = match mode {
        GridMode::Practical => hard_max,
        GridMode::Paper => {
            let c1 = c1_star(kappa);
            let mut best = 1;
            for k in 1..=hard_max {
                let lambda = 1.0 / (b as f64 * k as f64);
                if c1 * u_quantity(cache, lambda, delta)? <= 0.25 {
                    best = best.max(k);
                }
            }
            best
        }
    };
    let values = (1..=terminal)
        .map(|k| 1.0 / (b as f64 * k as f64))
        .collect();
    Ok(LambdaGrid {
        kind: GridKind::Uniform { b },
        values,
        terminal_index: terminal,
        mode,
    })
}

/// Geometric grid `λ_k = q^k`, `k = 0..K_q`, with `K_q` bounded by
/// `floor(-log_q n)` and `cap`; in paper mode additionally by the largest
/// `k` satisfying the `U`-condition.
pub fn geometric_grid(
    cache: &SpectralCache,
    kappa: f64,
    q: f64,
    delta: f64,
    mode: GridMode,
    cap: usize,
) -> Result<LambdaGrid> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::input(format!(
            "geometric ratio q must lie in (0, 1), got {q}"
        )));
    }
    check_delta(delta)?;
    let range = ((cache.len() as f64).ln() / (1.0 / q).ln()).floor() as usize;
    let hard_max = range.min(cap);
    let terminal = match mode {
        GridMode::Practical => hard_max,
        GridMode::Paper => {
            let c1 = c1_star(kappa);
            let mut best = 0;
            for k in 0..=hard_max {
                let lambda = q.powi(k as i32);
                if c1 * u_quantity(cache, lambda, delta)? <= 0.25 {
                    best = best.max(k);
                }
            }
            best
        }
    };
    let values = (0..=terminal).map(|k| q.powi(k as i32)).collect();
    Ok(LambdaGrid {
        kind: GridKind::Geometric { q },
        values,
        terminal_index: terminal,
        mode,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseSource {
    User,
    Estimated,
}

/// Bernstein noise parameters `(M, γ)` entering the selection thresholds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseModel {
    pub m: f64,
    pub gamma: f64,
    pub source: NoiseSource,
    /// Set when the residual estimate degenerated to zero and the
    /// [`NOISE_FLOOR`] was substituted.
    pub floored: bool,
}

impl NoiseModel {
    pub fn user(m: f64, gamma: f64) -> Result<Self> {
        if !(m > 0.0) || !(gamma > 0.0) {
            return Err(Error::input("noise parameters M and gamma must be positive"));
        }
        Ok(NoiseModel {
            m,
            gamma,
            source: NoiseSource::User,
            floored: false,
        })
    }

    /// `κM + γ`, the combination every threshold uses.
    pub fn scale(&self, kappa: f64) -> f64 {
        kappa * self.m + self.gamma
    }
}

/// Residual-based noise estimate from a pilot fit at `λ = 1/sqrt(n)`:
/// `σ̂² = ‖y − K α‖² / (n − df)` with `df = N_D(λ_pilot)` and the
/// denominator guarded at 1. Returns `M = γ = σ̂`.
pub fn estimate_noise(cache: &SpectralCache, y: ArrayView1<'_, f64>) -> Result<NoiseModel> {
    let n = cache.len();
    if n < 3 {
        return Err(Error::input(format!(
            "noise estimation needs at least 3 samples, got {n}"
        )));
    }
    if y.len() != n {
        return Err(Error::input("response length does not match cache"));
    }
    let lambda_pilot = 1.0 / (n as f64).sqrt();
    let rotated = cache.rotate(y);
    let rss = cache.residual_sq_rotated(rotated.view(), lambda_pilot);
    let df = cache.effective_dimension(lambda_pilot)?;
    let denom = (n as f64 - df).max(1.0);
    let sigma = (rss / denom).sqrt();
    let floored = sigma < NOISE_FLOOR;
    let sigma = sigma.max(NOISE_FLOOR);
    Ok(NoiseModel {
        m: sigma,
        gamma: sigma,
        source: NoiseSource::Estimated,
        floored,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionRule {
    Asus,
    Lp,
    Holdout,
}

impl FromStr for SelectionRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asus" => Ok(SelectionRule::Asus),
            "lp" => Ok(SelectionRule::Lp),
            "holdout" => Ok(SelectionRule::Holdout),
            _ => Err(Error::input(format!(
                "unknown selector {s:?}; expected asus, lp or holdout"
            ))),
        }
    }
}

impl fmt::Display for SelectionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionRule::Asus => "asus",
            SelectionRule::Lp => "lp",
            SelectionRule::Holdout => "holdout",
        })
    }
}

/// One scan step, kept for diagnostics and reporting. `d` is the decision
/// statistic of the rule: the successive-difference norm for the uniform
/// scan, the largest pairwise norm for the pairwise rule, the validation
/// mean squared error for hold-out.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionStep {
    pub k: usize,
    pub lambda: f64,
    pub d: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effective_dimension: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
}

/// Chosen λ with full per-step diagnostics.
#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub rule: SelectionRule,
    /// Grid index `k̂` in the grid's own numbering (see [`LambdaGrid::k_at`]).
    pub chosen_index: usize,
    pub chosen_lambda: f64,
    pub alpha_hat: Array1<f64>,
    pub steps: Vec<SelectionStep>,
    /// Number of threshold or validation comparisons executed.
    pub comparison_count: usize,
    /// Number of distinct λ values solved; never exceeds the grid length.
    pub solve_count: usize,
    pub fallback_used: bool,
}

/// Options for the early-stopping scan over a uniform grid.
#[derive(Debug, Clone, Copy)]
pub struct AsusOptions {
    /// Sup-norm constant of the kernel in use.
    pub kappa: f64,
    pub delta: f64,
    /// Multiplier on the theoretical threshold constant; 1.0 reproduces the
    /// worst-case constant `32 sqrt2 b (κM + γ)`.
    pub c_scale: f64,
    /// The threshold carries a factor `λ_{k-1}`, the form the uniform grid
    /// earns over a geometric one. Disabling it reproduces the literal
    /// un-scaled threshold; see the module docs.
    pub threshold_lambda_factor: bool,
}

impl AsusOptions {
    pub fn new(kappa: f64) -> Self {
        AsusOptions {
            kappa,
            delta: DEFAULT_DELTA,
            c_scale: 1.0,
            threshold_lambda_factor: true,
        }
    }

    pub fn delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn c_scale(mut self, c_scale: f64) -> Self {
        self.c_scale = c_scale;
        self
    }

    pub fn threshold_lambda_factor(mut self, on: bool) -> Self {
        self.threshold_lambda_factor = on;
        self
    }
}

/// Options for the pairwise rule on a geometric grid.
#[derive(Debug, Clone, Copy)]
pub struct LpOptions {
    pub kappa: f64,
    pub delta: f64,
    /// Multiplier in the threshold `c_lp (κM + γ) W log³(8/δ)`.
    pub c_lp: f64,
}

impl LpOptions {
    pub fn new(kappa: f64) -> Self {
        LpOptions {
            kappa,
            delta: DEFAULT_DELTA,
            c_lp: 1.0,
        }
    }

    pub fn delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn c_lp(mut self, c_lp: f64) -> Self {
        self.c_lp = c_lp;
        self
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HoldoutOptions {
    /// Fraction of the sample reserved for validation.
    pub split_fraction: f64,
    pub seed: u64,
}

impl HoldoutOptions {
    pub fn new(seed: u64) -> Self {
        HoldoutOptions {
            split_fraction: DEFAULT_SPLIT_FRACTION,
            seed,
        }
    }

    pub fn split_fraction(mut self, f: f64) -> Self {
        self.split_fraction = f;
        self
    }
}

/// Lazily-solved rotated coefficients, one slot per grid value, so each
/// candidate λ is solved exactly once per selection run.
struct RotatedPath<'a> {
    cache: &'a SpectralCache,
    rotated_y: Array1<f64>,
    solutions: Vec<Option<Array1<f64>>>,
    solve_count: usize,
}

impl<'a> RotatedPath<'a> {
    fn new(cache: &'a SpectralCache, y: ArrayView1<'_, f64>, len: usize) -> Self {
        RotatedPath {
            cache,
            rotated_y: cache.rotate(y),
            solutions: vec![None; len],
            solve_count: 0,
        }
    }

    fn solution(&mut self, pos: usize, lambda: f64) -> Result<&Array1<f64>> {
        if self.solutions[pos].is_none() {
            let sol = self.cache.solve_rotated(self.rotated_y.view(), lambda)?;
            self.solutions[pos] = Some(sol);
            self.solve_count += 1;
        }
        Ok(self.solutions[pos].as_ref().unwrap())
    }

    fn diff(&mut self, pos_a: usize, lambda_a: f64, pos_b: usize, lambda_b: f64) -> Result<Array1<f64>> {
        self.solution(pos_a, lambda_a)?;
        self.solution(pos_b, lambda_b)?;
        let a = self.solutions[pos_a].as_ref().unwrap();
        let b = self.solutions[pos_b].as_ref().unwrap();
        Ok(a - b)
    }
}

/// Early-stopping selection on a uniform grid.
///
/// Scans `k = K*, K*-1, ..., 2` (ascending λ) and stops at the first `k`
/// where the weighted difference of successive estimates,
/// `d_k = ‖(L_{K,D} + λ_{k-1} I)^{1/2}(f_{λ_k} − f_{λ_{k-1}})‖_K`, reaches
/// the threshold
/// `τ_k = c_scale · 32 sqrt2 · b (κM + γ) · λ_{k-1} · W_{D,λ_k} · log²(8/δ)`.
/// If no step triggers, the terminal candidate `λ_{K*}` is returned with
/// `fallback_used` set — the scan-from-below structure makes "no trigger"
/// mean "keep the least-regularized candidate".
///
/// Each grid λ is solved exactly once; `comparison_count <= K* − 1`.
pub fn asus_select(
    cache: &SpectralCache,
    y: ArrayView1<'_, f64>,
    grid: &LambdaGrid,
    noise: &NoiseModel,
    opts: &AsusOptions,
) -> Result<SelectionResult> {
    let b = match grid.kind() {
        GridKind::Uniform { b } => b,
        GridKind::Geometric { .. } => {
            return Err(Error::input("the early-stopping rule requires a uniform grid"))
        }
    };
    check_delta(opts.delta)?;
    if !(opts.c_scale > 0.0) {
        return Err(Error::input("c_scale must be positive"));
    }
    if y.len() != cache.len() {
        return Err(Error::input("response length does not match cache"));
    }

    let log_term = (8.0 / opts.delta).ln().powi(2);
    let c_us = 32.0 * 2f64.sqrt() * b as f64 * noise.scale(opts.kappa);
    let len = grid.len();
    let mut path = RotatedPath::new(cache, y, len);
    let mut steps = Vec::with_capacity(len.saturating_sub(1));
    let mut comparison_count = 0;
    let mut chosen_pos = len - 1;
    let mut fallback_used = true;

    for pos in (1..len).rev() {
        let lambda_k = grid.values()[pos];
        let lambda_km1 = grid.values()[pos - 1];
        let delta_rot = path.diff(pos, lambda_k, pos - 1, lambda_km1)?;
        let d = cache.weighted_norm_rotated(delta_rot.view(), lambda_km1);
        let nd = cache.effective_dimension(lambda_k)?;
        let w = w_from_parts(cache.len() as f64, lambda_k, nd);
        let lambda_factor = if opts.threshold_lambda_factor {
            lambda_km1
        } else {
            1.0
        };
        let tau = opts.c_scale * c_us * lambda_factor * w * log_term;
        comparison_count += 1;
        steps.push(SelectionStep {
            k: grid.k_at(pos),
            lambda: lambda_k,
            d,
            tau: Some(tau),
            effective_dimension: Some(nd),
            w: Some(w),
        });
        if d >= tau {
            chosen_pos = pos;
            fallback_used = false;
            break;
        }
    }

    let chosen_lambda = grid.values()[chosen_pos];
    let rotated = path.solution(chosen_pos, chosen_lambda)?.clone();
    let alpha_hat = cache.rotate_back(rotated.view());
    Ok(SelectionResult {
        rule: SelectionRule::Asus,
        chosen_index: grid.k_at(chosen_pos),
        chosen_lambda,
        alpha_hat,
        steps,
        comparison_count,
        solve_count: path.solve_count,
        fallback_used,
    })
}

/// Pairwise selection on a geometric grid.
///
/// Returns the largest `λ_k` such that for every `k' > k`
/// `‖(L_{K,D} + λ_k I)^{1/2}(f_{λ_{k'}} − f_{λ_k})‖_K <= c_lp (κM + γ) W_{D,λ_k} log³(8/δ)`.
/// The terminal candidate always qualifies vacuously; when selection ends
/// there without a verified candidate, `fallback_used` is set.
pub fn lp_select(
    cache: &SpectralCache,
    y: ArrayView1<'_, f64>,
    grid: &LambdaGrid,
    noise: &NoiseModel,
    opts: &LpOptions,
) -> Result<SelectionResult> {
    if !matches!(grid.kind(), GridKind::Geometric { .. }) {
        return Err(Error::input("the pairwise rule requires a geometric grid"));
    }
    check_delta(opts.delta)?;
    if !(opts.c_lp > 0.0) {
        return Err(Error::input("c_lp must be positive"));
    }
    if y.len() != cache.len() {
        return Err(Error::input("response length does not match cache"));
    }

    let log_term = (8.0 / opts.delta).ln().powi(3);
    let scale = opts.c_lp * noise.scale(opts.kappa);
    let len = grid.len();
    let mut path = RotatedPath::new(cache, y, len);
    let mut steps = Vec::new();
    let mut comparison_count = 0;
    let mut chosen_pos = len - 1;
    let mut fallback_used = true;

    for pos in 0..len {
        let lambda_k = grid.values()[pos];
        let nd = cache.effective_dimension(lambda_k)?;
        let w = w_from_parts(cache.len() as f64, lambda_k, nd);
        let tau = scale * w * log_term;
        let mut ok = true;
        let mut d_max = 0.0f64;
        for pos2 in pos + 1..len {
            let lambda_k2 = grid.values()[pos2];
            let delta_rot = path.diff(pos2, lambda_k2, pos, lambda_k)?;
            let d = cache.weighted_norm_rotated(delta_rot.view(), lambda_k);
            comparison_count += 1;
            d_max = d_max.max(d);
            if d > tau {
                ok = false;
                break;
            }
        }
        steps.push(SelectionStep {
            k: grid.k_at(pos),
            lambda: lambda_k,
            d: d_max,
            tau: Some(tau),
            effective_dimension: Some(nd),
            w: Some(w),
        });
        if ok {
            chosen_pos = pos;
            fallback_used = pos + 1 == len;
            break;
        }
    }

    let chosen_lambda = grid.values()[chosen_pos];
    let rotated = path.solution(chosen_pos, chosen_lambda)?.clone();
    let alpha_hat = cache.rotate_back(rotated.view());
    Ok(SelectionResult {
        rule: SelectionRule::Lp,
        chosen_index: grid.k_at(chosen_pos),
        chosen_lambda,
        alpha_hat,
        steps,
        comparison_count,
        solve_count: path.solve_count,
        fallback_used,
    })
}

/// Hold-out baseline: deterministic seeded shuffle, fit on the training
/// fraction, pick the grid λ with the smallest validation mean squared
/// error (ties resolve toward larger λ), then refit on the full dataset.
pub fn holdout_select(
    dataset: &Dataset,
    spec: &KernelSpec,
    grid: &LambdaGrid,
    opts: &HoldoutOptions,
) -> Result<SelectionResult> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::input("hold-out needs at least 2 samples"));
    }
    if !(opts.split_fraction > 0.0 && opts.split_fraction < 1.0) {
        return Err(Error::input(format!(
            "split fraction must lie in (0, 1), got {}",
            opts.split_fraction
        )));
    }
    dataset.validate_for(spec)?;
    let n_val = ((n as f64 * opts.split_fraction).floor() as usize).max(1);
    let n_train = n - n_val;
    if n_train == 0 {
        return Err(Error::input("split leaves no training points"));
    }

    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    indices.shuffle(&mut rng);
    let train_idx = &indices[..n_train];
    let val_idx = &indices[n_train..];

    let xs_train = dataset.xs().select(Axis(0), train_idx);
    let y_train = dataset.ys().select(Axis(0), train_idx);
    let xs_val = dataset.xs().select(Axis(0), val_idx);
    let y_val = dataset.ys().select(Axis(0), val_idx);

    let cache_train = SpectralCache::build(spec.gram(xs_train.view())?, y_train.view())?;
    let cross = spec.cross_gram(xs_val.view(), xs_train.view())?;
    // rotate the cross matrix once; per-λ prediction is then a matvec
    let cross_rot = cross.dot(&cache_train.eigenvectors());
    let y_rot = cache_train.rotate(y_train.view());

    let mut steps = Vec::with_capacity(grid.len());
    let mut best_pos = 0;
    let mut best_mse = f64::INFINITY;
    for (pos, &lambda) in grid.values().iter().enumerate() {
        let w = cache_train.solve_rotated(y_rot.view(), lambda)?;
        let pred = cross_rot.dot(&w);
        let mse = (&pred - &y_val).mapv(|v| v * v).sum() / n_val as f64;
        steps.push(SelectionStep {
            k: grid.k_at(pos),
            lambda,
            d: mse,
            tau: None,
            effective_dimension: None,
            w: None,
        });
        if mse < best_mse {
            best_mse = mse;
            best_pos = pos;
        }
    }

    let chosen_lambda = grid.values()[best_pos];
    let cache_full = SpectralCache::build(spec.gram(dataset.xs())?, dataset.ys())?;
    let refit = cache_full.solve(dataset.ys(), chosen_lambda)?;
    Ok(SelectionResult {
        rule: SelectionRule::Holdout,
        chosen_index: grid.k_at(best_pos),
        chosen_lambda,
        alpha_hat: refit.alpha,
        steps,
        comparison_count: grid.len(),
        solve_count: grid.len() + 1,
        fallback_used: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{Array1, Array2};
    use ndarray_linalg::Solve;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Frozen with an mpmath oracle from the defining formulas.
    const W_I2_HALF: f64 = 2.121_320_343_559_642_6;
    const U_I2_HALF_D05: f64 = 2.016_065_367_715_987_3;
    const U_I4_HALF_D05: f64 = 1.415_392_015_866_546_6;
    const U_I8_HALF_D05: f64 = 0.980_517_674_114_000_7;

    fn identity_cache(n: usize) -> SpectralCache {
        SpectralCache::build(Array2::eye(n), Array1::zeros(n).view()).unwrap()
    }

    fn random_psd_cache(n: usize, rng: &mut ChaCha8Rng) -> (SpectralCache, Array1<f64>) {
        let m = Array2::from_shape_fn((n, n), |_| rng.random::<f64>() - 0.5);
        let mut g = m.t().dot(&m);
        for i in 0..n {
            for j in 0..i {
                g[[j, i]] = g[[i, j]];
            }
        }
        let y = Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5);
        (SpectralCache::build(g, y.view()).unwrap(), y)
    }

    /// Dense-trace effective dimension used as an independent oracle.
    fn dense_effective_dimension(gram: &Array2<f64>, lambda: f64) -> f64 {
        let n = gram.nrows();
        let mut a = gram.clone();
        for i in 0..n {
            a[[i, i]] += lambda * n as f64;
        }
        let mut trace = 0.0;
        for j in 0..n {
            let col = gram.column(j).to_owned();
            let x = a.solve(&col).unwrap();
            trace += x[j];
        }
        trace
    }

    #[test]
    fn w_quantity_identity_case() {
        let cache = identity_cache(2);
        assert_abs_diff_eq!(w_quantity(&cache, 0.5).unwrap(), W_I2_HALF, epsilon = 1e-12);
        // large-lambda limit sqrt(1/n)
        assert_abs_diff_eq!(
            w_quantity(&cache, 1e12).unwrap(),
            (0.5f64).sqrt(),
            epsilon = 1e-4
        );
        assert!(w_quantity(&cache, 0.0).is_err());
    }

    #[test]
    fn w_quantity_matches_dense_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (cache, _) = random_psd_cache(25, &mut rng);
        let n = 25f64;
        for lambda in [0.03, 0.3, 3.0] {
            let nd = dense_effective_dimension(&cache.gram().to_owned(), lambda);
            let expected =
                1.0 / (n * lambda.sqrt()) + (1.0 + 1.0 / (lambda * n).sqrt()) * (nd.max(1.0) / n).sqrt();
            assert_abs_diff_eq!(w_quantity(&cache, lambda).unwrap(), expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn u_quantity_values_and_limits() {
        let cache = identity_cache(2);
        assert_abs_diff_eq!(
            u_quantity(&cache, 0.5, 0.05).unwrap(),
            U_I2_HALF_D05,
            epsilon = 1e-12
        );
        assert!(u_quantity(&cache, 1e12, 0.05).unwrap() < 1e-5);
        // doubling n strictly decreases U at fixed lambda
        assert_abs_diff_eq!(
            u_quantity(&identity_cache(4), 0.5, 0.05).unwrap(),
            U_I4_HALF_D05,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            u_quantity(&identity_cache(8), 0.5, 0.05).unwrap(),
            U_I8_HALF_D05,
            epsilon = 1e-12
        );
        assert!(u_quantity(&cache, 0.5, 0.0).is_err());
        assert!(u_quantity(&cache, 0.5, 1.0).is_err());
    }

    #[test]
    fn uniform_grid_practical_values() {
        let cache = identity_cache(8);
        let g = uniform_grid(&cache, 1.0, 1, 0.05, GridMode::Practical, 4).unwrap();
        assert_eq!(g.values(), &[1.0, 0.5, 1.0 / 3.0, 0.25]);
        assert_eq!(g.terminal_index(), 4);
        let g2 = uniform_grid(&cache, 1.0, 2, 0.05, GridMode::Practical, 3).unwrap();
        assert_eq!(g2.values(), &[0.5, 0.25, 1.0 / 6.0]);
        assert!(uniform_grid(&cache, 1.0, 0, 0.05, GridMode::Practical, 3).is_err());
    }

    #[test]
    fn uniform_grid_paper_matches_exhaustive_scan() {
        let cache = identity_cache(64);
        let g = uniform_grid(&cache, 1.0, 1, 0.05, GridMode::Paper, 400).unwrap();
        let c1 = c1_star(1.0);
        let mut expected = 1;
        for k in 1..=64 {
            let lambda = 1.0 / k as f64;
            if c1 * u_quantity(&cache, lambda, 0.05).unwrap() <= 0.25 {
                expected = expected.max(k);
            }
        }
        assert_eq!(g.terminal_index(), expected);
        assert!(g.terminal_index() >= 1);
    }

    #[test]
    fn geometric_grid_values() {
        let cache = identity_cache(16);
        let g = geometric_grid(&cache, 1.0, 0.5, 0.05, GridMode::Practical, 100).unwrap();
        assert_eq!(g.values(), &[1.0, 0.5, 0.25, 0.125, 0.0625]);
        assert_eq!(g.terminal_index(), 4);
        let g2 = geometric_grid(&cache, 1.0, 0.5, 0.05, GridMode::Practical, 2).unwrap();
        assert_eq!(g2.values(), &[1.0, 0.5, 0.25]);
        assert!(geometric_grid(&cache, 1.0, 1.0, 0.05, GridMode::Practical, 2).is_err());
        assert!(geometric_grid(&cache, 1.0, 0.0, 0.05, GridMode::Practical, 2).is_err());
    }

    #[test]
    fn geometric_grid_paper_matches_exhaustive_scan() {
        let cache = identity_cache(64);
        let g = geometric_grid(&cache, 1.0, 0.5, 0.05, GridMode::Paper, 100).unwrap();
        let c1 = c1_star(1.0);
        let hard = ((64f64).ln() / 2f64.ln()).floor() as usize;
        let mut expected = 0;
        for k in 0..=hard {
            let lambda = 0.5f64.powi(k as i32);
            if c1 * u_quantity(&cache, lambda, 0.05).unwrap() <= 0.25 {
                expected = expected.max(k);
            }
        }
        assert_eq!(g.terminal_index(), expected);
    }

    #[test]
    fn noise_floor_on_interpolated_response() {
        let cache = identity_cache(5);
        let noise = estimate_noise(&cache, Array1::zeros(5).view()).unwrap();
        assert_eq!(noise.m, NOISE_FLOOR);
        assert!(noise.floored);
        assert_eq!(noise.source, NoiseSource::Estimated);
    }

    #[test]
    fn noise_scales_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (cache, y) = random_psd_cache(40, &mut rng);
        let base = estimate_noise(&cache, y.view()).unwrap();
        for c in [0.1, 3.0, 100.0] {
            let scaled = estimate_noise(&cache, (&y * c).view()).unwrap();
            assert_abs_diff_eq!(scaled.m, c * base.m, epsilon = 1e-12 * (1.0 + c * base.m));
        }
    }

    #[test]
    fn noise_recovers_known_sigma() {
        // pure-noise responses on a trig kernel; sigma-hat lands in
        // [0.08, 0.12] for sigma = 0.1
        let spec = KernelSpec::trig_mercer(2.0, 100).unwrap();
        let mut hits = 0;
        for trial in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
            let n = 400;
            let xs = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>());
            let y = Array1::from_shape_fn(n, |_| {
                rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.1
            });
            let cache = SpectralCache::build(spec.gram(xs.view()).unwrap(), y.view()).unwrap();
            let noise = estimate_noise(&cache, y.view()).unwrap();
            if (0.08..=0.12).contains(&noise.m) {
                hits += 1;
            }
        }
        assert!(hits >= 19, "sigma estimate in range only {hits}/20 times");
    }

    fn default_noise() -> NoiseModel {
        NoiseModel::user(0.1, 0.1).unwrap()
    }

    #[test]
    fn asus_zero_response_falls_back_to_terminal() {
        let cache = identity_cache(32);
        let grid = uniform_grid(&cache, 1.0, 1, 0.05, GridMode::Practical, 10).unwrap();
        let y = Array1::zeros(32);
        let res = asus_select(&cache, y.view(), &grid, &default_noise(), &AsusOptions::new(1.0))
            .unwrap();
        assert!(res.fallback_used);
        assert_eq!(res.chosen_index, 10);
        assert_eq!(res.chosen_lambda, 0.1);
        assert_eq!(res.comparison_count, 9);
        assert_eq!(res.solve_count, 10);
        assert!(grid.contains(res.chosen_lambda));
    }

    #[test]
    fn asus_single_candidate_grid() {
        let cache = identity_cache(8);
        let grid = uniform_grid(&cache, 1.0, 1, 0.05, GridMode::Practical, 1).unwrap();
        let y = Array1::from_shape_fn(8, |i| i as f64);
        let res = asus_select(&cache, y.view(), &grid, &default_noise(), &AsusOptions::new(1.0))
            .unwrap();
        assert_eq!(res.chosen_index, 1);
        assert_eq!(res.chosen_lambda, 1.0);
        assert!(res.fallback_used);
        assert_eq!(res.comparison_count, 0);
    }

    #[test]
    fn asus_threshold_ratio_monotone_in_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (cache, y) = random_psd_cache(48, &mut rng);
        let grid = uniform_grid(&cache, 1.0, 1, 0.05, GridMode::Practical, 30).unwrap();
        let res = asus_select(&cache, y.view(), &grid, &default_noise(), &AsusOptions::new(1.0))
            .unwrap();
        // tau_k / lambda_{k-1} = c W(lambda_k) log^2(8/delta) is
        // non-decreasing in k; steps were recorded k = K*..2
        let mut prev = f64::INFINITY;
        for step in &res.steps {
            let lambda_km1 = 1.0 / (step.k as f64 - 1.0);
            let ratio = step.tau.unwrap() / lambda_km1;
            assert!(ratio <= prev + 1e-12);
            prev = ratio;
        }
    }

    #[test]
    fn asus_trigger_fires_with_small_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (cache, y) = random_psd_cache(64, &mut rng);
        let grid = uniform_grid(&cache, 1.0, 1, 0.05, GridMode::Practical, 40).unwrap();
        let noise = estimate_noise(&cache, y.view()).unwrap();
        let opts = AsusOptions::new(1.0).c_scale(1e-6);
        let res = asus_select(&cache, y.view(), &grid, &noise, &opts).unwrap();
        assert!(!res.fallback_used, "tiny threshold must trigger");
        assert!(res.comparison_count < grid.len());
        assert!(grid.contains(res.chosen_lambda));
    }

    #[test]
    fn lp_zero_response_keeps_largest_lambda() {
        let cache = identity_cache(16);
        let grid = geometric_grid(&cache, 1.0, 0.5, 0.05, GridMode::Practical, 100).unwrap();
        let y = Array1::zeros(16);
        let res = lp_select(&cache, y.view(), &grid, &default_noise(), &LpOptions::new(1.0))
            .unwrap();
        assert_eq!(res.chosen_index, 0);
        assert_eq!(res.chosen_lambda, 1.0);
        assert!(!res.fallback_used);
        assert_eq!(res.comparison_count, grid.len() - 1);
    }

    #[test]
    fn lp_single_candidate_grid() {
        let cache = identity_cache(2);
        let grid = geometric_grid(&cache, 1.0, 0.5, 0.05, GridMode::Practical, 0).unwrap();
        assert_eq!(grid.len(), 1);
        let y = Array1::from_vec(vec![1.0, -1.0]);
        let res = lp_select(&cache, y.view(), &grid, &default_noise(), &LpOptions::new(1.0))
            .unwrap();
        assert_eq!(res.chosen_lambda, 1.0);
        assert!(res.fallback_used, "terminal acceptance is vacuous");
    }

    #[test]
    fn lp_comparison_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (cache, y) = random_psd_cache(64, &mut rng);
        let grid = geometric_grid(&cache, 1.0, 0.8, 0.05, GridMode::Practical, 100).unwrap();
        let k = grid.len();
        let res = lp_select(&cache, y.view(), &grid, &default_noise(), &LpOptions::new(1.0))
            .unwrap();
        assert!(res.comparison_count <= k * (k + 1) / 2);
        assert!(grid.contains(res.chosen_lambda));
    }

    #[test]
    fn scaling_equivariance_of_chosen_indices() {
        // scaling (y, M, gamma) by c > 0 scales every d_k and tau_k by c
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let n = 24 + rng.random_range(0..20);
            let (cache, y) = random_psd_cache(n, &mut rng);
            let ugrid = uniform_grid(&cache, 1.0, 1, 0.05, GridMode::Practical, 16).unwrap();
            let ggrid = geometric_grid(&cache, 1.0, 0.6, 0.05, GridMode::Practical, 16).unwrap();
            let noise = estimate_noise(&cache, y.view()).unwrap();
            // a scale small enough that triggers genuinely fire on some draws
            let aopts = AsusOptions::new(1.0).c_scale(2e-4);
            let lopts = LpOptions::new(1.0).c_lp(2e-4);
            let a0 = asus_select(&cache, y.view(), &ugrid, &noise, &aopts).unwrap();
            let l0 = lp_select(&cache, y.view(), &ggrid, &noise, &lopts).unwrap();
            for c in [0.1, 3.0, 100.0] {
                let yc = &y * c;
                let noise_c = NoiseModel {
                    m: noise.m * c,
                    gamma: noise.gamma * c,
                    source: noise.source,
                    floored: false,
                };
                let a = asus_select(&cache, yc.view(), &ugrid, &noise_c, &aopts).unwrap();
                let l = lp_select(&cache, yc.view(), &ggrid, &noise_c, &lopts).unwrap();
                assert_eq!(a.chosen_index, a0.chosen_index, "asus index moved at c={c}");
                assert_eq!(l.chosen_index, l0.chosen_index, "lp index moved at c={c}");
            }
        }
    }

    #[test]
    fn holdout_tie_breaks_toward_larger_lambda() {
        // constant-zero responses: every candidate predicts 0 exactly, all
        // validation errors tie, the first (largest) lambda wins
        let spec = KernelSpec::gaussian(0.5).unwrap();
        let dataset = Dataset::from_univariate(
            vec![0.1, 0.3, 0.5, 0.7, 0.9, 0.2, 0.4, 0.6],
            vec![0.0; 8],
        )
        .unwrap();
        let cache = SpectralCache::build(spec.gram(dataset.xs()).unwrap(), dataset.ys()).unwrap();
        let grid = uniform_grid(&cache, 1.0, 1, 0.05, GridMode::Practical, 5).unwrap();
        let res = holdout_select(&dataset, &spec, &grid, &HoldoutOptions::new(3)).unwrap();
        assert_eq!(res.chosen_lambda, 1.0, "tie-break must pick the largest lambda");
        assert_eq!(res.chosen_index, 1);
    }

    #[test]
    fn holdout_matches_hand_computed_validation_errors() {
        let spec = KernelSpec::gaussian(0.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let xs: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x * 5.0).sin() + 0.1).collect();
        let dataset = Dataset::from_univariate(xs, ys).unwrap();
        let cache = SpectralCache::build(spec.gram(dataset.xs()).unwrap(), dataset.ys()).unwrap();
        let grid = uniform_grid(&cache, 1.0, 1, 0.05, GridMode::Practical, 6).unwrap();
        let opts = HoldoutOptions::new(7).split_fraction(0.25);
        let res = holdout_select(&dataset, &spec, &grid, &opts).unwrap();

        // independent recomputation: same shuffle, dense solves per lambda
        let n = dataset.len();
        let n_val = ((n as f64) * 0.25).floor() as usize;
        let n_train = n - n_val;
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        idx.shuffle(&mut rng);
        let tr = &idx[..n_train];
        let va = &idx[n_train..];
        let gram = spec.gram(dataset.xs()).unwrap();
        let mut best = (0usize, f64::INFINITY);
        for (pos, &lambda) in grid.values().iter().enumerate() {
            let mut a = Array2::<f64>::zeros((n_train, n_train));
            for (i, &ti) in tr.iter().enumerate() {
                for (j, &tj) in tr.iter().enumerate() {
                    a[[i, j]] = gram[[ti, tj]];
                }
                a[[i, i]] += lambda * n_train as f64;
            }
            let rhs = Array1::from_iter(tr.iter().map(|&ti| dataset.ys()[ti]));
            let alpha = a.solve(&rhs).unwrap();
            let mut sse = 0.0;
            for &vi in va {
                let pred: f64 = tr
                    .iter()
                    .zip(alpha.iter())
                    .map(|(&ti, &al)| gram[[vi, ti]] * al)
                    .sum();
                let e = pred - dataset.ys()[vi];
                sse += e * e;
            }
            let mse = sse / n_val as f64;
            assert_abs_diff_eq!(res.steps[pos].d, mse, epsilon = 1e-9 * (1.0 + mse));
            if mse < best.1 {
                best = (pos, mse);
            }
        }
        assert_eq!(res.chosen_lambda, grid.values()[best.0]);
    }

    #[test]
    fn holdout_is_deterministic() {
        let spec = KernelSpec::trig_mercer(2.0, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let xs: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let ys: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let dataset = Dataset::from_univariate(xs, ys).unwrap();
        let cache = SpectralCache::build(spec.gram(dataset.xs()).unwrap(), dataset.ys()).unwrap();
        let grid = uniform_grid(&cache, spec.sup_norm_kappa(), 1, 0.05, GridMode::Practical, 8)
            .unwrap();
        let opts = HoldoutOptions::new(99);
        let a = holdout_select(&dataset, &spec, &grid, &opts).unwrap();
        let b = holdout_select(&dataset, &spec, &grid, &opts).unwrap();
        assert_eq!(a.chosen_lambda, b.chosen_lambda);
        assert_eq!(a.alpha_hat, b.alpha_hat);
        let mse_a: Vec<f64> = a.steps.iter().map(|s| s.d).collect();
        let mse_b: Vec<f64> = b.steps.iter().map(|s| s.d).collect();
        assert_eq!(mse_a, mse_b);
    }

    #[test]
    fn holdout_input_guards() {
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let tiny = Dataset::from_univariate(vec![0.1], vec![1.0]).unwrap();
        let cache = SpectralCache::build(spec.gram(tiny.xs()).unwrap(), tiny.ys()).unwrap();
        let grid = uniform_grid(&cache, 1.0, 1, 0.05, GridMode::Practical, 2).unwrap();
        assert!(holdout_select(&tiny, &spec, &grid, &HoldoutOptions::new(0)).is_err());
        let two = Dataset::from_univariate(vec![0.1, 0.9], vec![1.0, 2.0]).unwrap();
        let mut opts = HoldoutOptions::new(0);
        opts.split_fraction = 1.5;
        assert!(holdout_select(&two, &spec, &grid, &opts).is_err());
    }

    #[test]
    fn wrong_grid_kinds_are_rejected() {
        let cache = identity_cache(8);
        let y = Array1::zeros(8);
        let ugrid = uniform_grid(&cache, 1.0, 1, 0.05, GridMode::Practical, 4).unwrap();
        let ggrid = geometric_grid(&cache, 1.0, 0.5, 0.05, GridMode::Practical, 4).unwrap();
        assert!(lp_select(&cache, y.view(), &ugrid, &default_noise(), &LpOptions::new(1.0)).is_err());
        assert!(
            asus_select(&cache, y.view(), &ggrid, &default_noise(), &AsusOptions::new(1.0))
                .is_err()
        );
    }
}
