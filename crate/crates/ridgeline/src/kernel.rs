//! Kernel families, Gram-matrix assembly and the sup-norm constant kappa.
//!
//! Two kernels are provided. The Gaussian kernel is the practical default
//! for arbitrary data. The truncated trigonometric kernel
//!
//! ```text
//! K(x, x') = 1 + sum_{m=1..J} 2 m^{-a} cos(2 pi m (x - x'))      on [0, 1]
//! ```
//!
//! has a closed-form Mercer eigensystem under the uniform distribution
//! ({1} plus m^{-a} with multiplicity 2), which makes population norms and
//! effective-dimension decay computable exactly. Its capacity exponent is
//! s = 1/a.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Default truncation for the trigonometric kernel. The eigenvalue tail
/// `sum_{m>J} m^{-a}` is below 5e-4 for a = 2, negligible against
/// statistical error at the sample sizes this crate targets.
pub const DEFAULT_TRIG_PAIRS: usize = 2000;

/// Declarative kernel family.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// `K(x, x') = exp(-||x - x'||^2 / (2 w^2))` with bandwidth `w > 0`.
    Gaussian { bandwidth: f64 },
    /// Truncated trigonometric Mercer kernel on `[0, 1]` with eigenvalue
    /// decay exponent `a > 1` and `J >= 1` cosine/sine pairs.
    TrigMercer { decay_a: f64, num_pairs: usize },
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::input(format!(
                "gaussian bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(KernelSpec::Gaussian { bandwidth })
    }

    pub fn trig_mercer(decay_a: f64, num_pairs: usize) -> Result<Self> {
        if !(decay_a > 1.0) || !decay_a.is_finite() {
            return Err(Error::input(format!(
                "trig decay exponent must satisfy a > 1, got {decay_a}"
            )));
        }
        if num_pairs == 0 {
            return Err(Error::input("trig kernel needs at least one pair (J >= 1)"));
        }
        Ok(KernelSpec::TrigMercer { decay_a, num_pairs })
    }

    /// Number of covariate dimensions the kernel accepts; `None` means any.
    pub fn dimension(&self) -> Option<usize> {
        match self {
            KernelSpec::Gaussian { .. } => None,
            KernelSpec::TrigMercer { .. } => Some(1),
        }
    }

    fn check_point(&self, x: ArrayView1<'_, f64>) -> Result<()> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("covariate contains a non-finite value"));
        }
        if let KernelSpec::TrigMercer { .. } = self {
            if x.len() != 1 {
                return Err(Error::input(format!(
                    "trig kernel is univariate, got a point of dimension {}",
                    x.len()
                )));
            }
            let v = x[0];
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::input(format!(
                    "trig kernel requires covariates in [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Pointwise kernel evaluation `K(x, x2)`.
    ///
    /// For the trigonometric kernel this is the cosine partial sum; the
    /// feature-map route used by [`KernelSpec::gram`] must agree with it to
    /// high accuracy, which the test suite checks.
    pub fn eval(&self, x: ArrayView1<'_, f64>, x2: ArrayView1<'_, f64>) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(x2)?;
        if x.len() != x2.len() {
            return Err(Error::input(format!(
                "covariate dimensions differ: {} vs {}",
                x.len(),
                x2.len()
            )));
        }
        Ok(match *self {
            KernelSpec::Gaussian { bandwidth } => {
                let sq: f64 = x
                    .iter()
                    .zip(x2.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (-sq / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelSpec::TrigMercer { decay_a, num_pairs } => {
                trig_eval(decay_a, num_pairs, x[0] - x2[0])
            }
        })
    }

    /// `kappa = sup_x sqrt(K(x, x))`. Exact for both families: 1 for the
    /// Gaussian, `sqrt(1 + 2 sum m^{-a})` for the trigonometric kernel
    /// (whose diagonal is constant).
    pub fn sup_norm_kappa(&self) -> f64 {
        match *self {
            KernelSpec::Gaussian { .. } => 1.0,
            KernelSpec::TrigMercer { decay_a, num_pairs } => {
                let s: f64 = (1..=num_pairs).map(|m| (m as f64).powf(-decay_a)).sum();
                (1.0 + 2.0 * s).sqrt()
            }
        }
    }

    /// Gram matrix of a point set. Symmetry holds exactly: the lower triangle
    /// is computed and mirrored.
    pub fn gram(&self, xs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let n = xs.nrows();
        if n == 0 {
            return Err(Error::input("gram matrix of an empty point set"));
        }
        for row in xs.rows() {
            self.check_point(row)?;
        }
        let mut g = match *self {
            KernelSpec::Gaussian { bandwidth } => {
                let inv = -1.0 / (2.0 * bandwidth * bandwidth);
                let mut g = Array2::<f64>::zeros((n, n));
                for i in 0..n {
                    for j in 0..=i {
                        let sq: f64 = xs
                            .row(i)
                            .iter()
                            .zip(xs.row(j).iter())
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        g[[i, j]] = (inv * sq).exp();
                    }
                }
                g
            }
            KernelSpec::TrigMercer { .. } => {
                // Phi diag(mu) Phi^T; one dense product instead of an
                // O(J)-term cosine sum per entry.
                let (phi, mu) = self.mercer_features(xs)?;
                let scaled = &phi * &mu;
                scaled.dot(&phi.t())
            }
        };
        for i in 0..n {
            for j in 0..i {
                g[[j, i]] = g[[i, j]];
            }
        }
        Ok(g)
    }

    /// Cross-Gram matrix `C[i, j] = K(xs[i], ys[j])` for out-of-sample
    /// prediction.
    pub fn cross_gram(
        &self,
        xs: ArrayView2<'_, f64>,
        ys: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>> {
        for row in xs.rows() {
            self.check_point(row)?;
        }
        for row in ys.rows() {
            self.check_point(row)?;
        }
        match *self {
            KernelSpec::Gaussian { .. } => {
                let mut c = Array2::<f64>::zeros((xs.nrows(), ys.nrows()));
                for i in 0..xs.nrows() {
                    for j in 0..ys.nrows() {
                        c[[i, j]] = self.eval(xs.row(i), ys.row(j))?;
                    }
                }
                Ok(c)
            }
            KernelSpec::TrigMercer { .. } => {
                let (phi_x, mu) = self.mercer_features(xs)?;
                let (phi_y, _) = self.mercer_features(ys)?;
                Ok((&phi_x * &mu).dot(&phi_y.t()))
            }
        }
    }

    /// Mercer eigenvalues of the trigonometric kernel under the uniform
    /// distribution on `[0, 1]`, ordered `1, 1^{-a}, 1^{-a}, 2^{-a}, ...`
    /// (constant mode first, then a cosine/sine pair per frequency).
    pub fn mercer_eigenvalues(&self) -> Result<Array1<f64>> {
        match *self {
            KernelSpec::TrigMercer { decay_a, num_pairs } => {
                let mut mu = Array1::<f64>::zeros(2 * num_pairs + 1);
                mu[0] = 1.0;
                for m in 1..=num_pairs {
                    let v = (m as f64).powf(-decay_a);
                    mu[2 * m - 1] = v;
                    mu[2 * m] = v;
                }
                Ok(mu)
            }
            _ => Err(Error::input(
                "closed-form eigensystem is only available for the trig kernel",
            )),
        }
    }

    /// Orthonormal eigenfunctions of the trigonometric kernel evaluated at
    /// one point: `1, sqrt2 cos(2 pi m x), sqrt2 sin(2 pi m x)` for
    /// `m = 1..J`, matching the [`KernelSpec::mercer_eigenvalues`] order.
    pub fn mercer_feature_row(&self, x: f64) -> Result<Array1<f64>> {
        match *self {
            KernelSpec::TrigMercer { num_pairs, .. } => {
                self.check_point(ArrayView1::from(&[x][..]))?;
                let mut row = Array1::<f64>::zeros(2 * num_pairs + 1);
                fill_feature_row(row.as_slice_mut().unwrap(), x, num_pairs);
                Ok(row)
            }
            _ => Err(Error::input(
                "closed-form eigensystem is only available for the trig kernel",
            )),
        }
    }

    /// Feature matrix `Phi` (n x (2J+1)) with rows as in
    /// [`KernelSpec::mercer_feature_row`], together with the eigenvalues.
    pub fn mercer_features(
        &self,
        xs: ArrayView2<'_, f64>,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        match *self {
            KernelSpec::TrigMercer { num_pairs, .. } => {
                if xs.ncols() != 1 {
                    return Err(Error::input("trig kernel is univariate"));
                }
                let n = xs.nrows();
                let mut phi = Array2::<f64>::zeros((n, 2 * num_pairs + 1));
                for (i, mut row) in phi.rows_mut().into_iter().enumerate() {
                    fill_feature_row(row.as_slice_mut().unwrap(), xs[[i, 0]], num_pairs);
                }
                Ok((phi, self.mercer_eigenvalues()?))
            }
            _ => Err(Error::input(
                "closed-form eigensystem is only available for the trig kernel",
            )),
        }
    }
}

fn trig_eval(decay_a: f64, num_pairs: usize, diff: f64) -> f64 {
    let mut acc = 1.0;
    for m in 1..=num_pairs {
        let w = (m as f64).powf(-decay_a);
        acc += 2.0 * w * (std::f64::consts::TAU * m as f64 * diff).cos();
    }
    acc
}

fn fill_feature_row(row: &mut [f64], x: f64, num_pairs: usize) {
    const SQRT2: f64 = std::f64::consts::SQRT_2;
    row[0] = 1.0;
    for m in 1..=num_pairs {
        let (s, c) = (std::f64::consts::TAU * m as f64 * x).sin_cos();
        row[2 * m - 1] = SQRT2 * c;
        row[2 * m] = SQRT2 * s;
    }
}

/// Kernel specification string syntax used by the CLI and configs:
/// `gaussian:<bandwidth>` or `trig:<a>:<J>` (`trig:<a>` takes the default J).
impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["gaussian", w] => {
                let w: f64 = w
                    .parse()
                    .map_err(|_| Error::input(format!("bad gaussian bandwidth in {s:?}")))?;
                KernelSpec::gaussian(w)
            }
            ["trig", a] => {
                let a: f64 = a
                    .parse()
                    .map_err(|_| Error::input(format!("bad trig exponent in {s:?}")))?;
                KernelSpec::trig_mercer(a, DEFAULT_TRIG_PAIRS)
            }
            ["trig", a, j] => {
                let a: f64 = a
                    .parse()
                    .map_err(|_| Error::input(format!("bad trig exponent in {s:?}")))?;
                let j: usize = j
                    .parse()
                    .map_err(|_| Error::input(format!("bad trig truncation in {s:?}")))?;
                KernelSpec::trig_mercer(a, j)
            }
            _ => Err(Error::input(format!(
                "unknown kernel spec {s:?}; expected gaussian:<w> or trig:<a>:<J>"
            ))),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            KernelSpec::Gaussian { bandwidth } => write!(f, "gaussian:{bandwidth}"),
            KernelSpec::TrigMercer { decay_a, num_pairs } => {
                write!(f, "trig:{decay_a}:{num_pairs}")
            }
        }
    }
}

/// A finite sample of covariate/response pairs.
#[derive(Debug, Clone)]
pub struct Dataset {
    xs: Array2<f64>,
    ys: Array1<f64>,
}

impl Dataset {
    pub fn new(xs: Array2<f64>, ys: Array1<f64>) -> Result<Self> {
        if xs.nrows() != ys.len() {
            return Err(Error::input(format!(
                "covariate/response length mismatch: {} vs {}",
                xs.nrows(),
                ys.len()
            )));
        }
        if xs.nrows() == 0 {
            return Err(Error::input("dataset must contain at least one point"));
        }
        if xs.iter().any(|v| !v.is_finite()) || ys.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("dataset contains a non-finite value"));
        }
        Ok(Dataset { xs, ys })
    }

    /// Univariate convenience constructor.
    pub fn from_univariate(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        Dataset::new(
            Array2::from_shape_vec((n, 1), xs)
                .map_err(|e| Error::input(format!("bad covariate shape: {e}")))?,
            Array1::from_vec(ys),
        )
    }

    pub fn len(&self) -> usize {
        self.xs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees n >= 1
    }

    pub fn dimension(&self) -> usize {
        self.xs.ncols()
    }

    pub fn xs(&self) -> ArrayView2<'_, f64> {
        self.xs.view()
    }

    pub fn ys(&self) -> ArrayView1<'_, f64> {
        self.ys.view()
    }

    /// Checks that every covariate is admissible for `spec`.
    pub fn validate_for(&self, spec: &KernelSpec) -> Result<()> {
        if let Some(d) = spec.dimension() {
            if self.dimension() != d {
                return Err(Error::input(format!(
                    "kernel expects dimension {d}, dataset has {}",
                    self.dimension()
                )));
            }
        }
        for row in self.xs.rows() {
            spec.check_point(row)?;
        }
        Ok(())
    }
}
