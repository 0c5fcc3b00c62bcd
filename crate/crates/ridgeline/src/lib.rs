//! Kernel ridge regression with adaptive regularization-parameter selection.
//!
//! Fitting `f = Σ α_i K(x_i, ·)` with coefficients solving
//! `(K + λ n I) α = y` is the easy part of kernel ridge regression; picking
//! λ is not, because the value that balances bias against variance depends
//! on smoothness and capacity parameters nobody observes. This crate builds
//! the machinery to pick λ from data alone:
//!
//! * [`kernel`] — Gaussian and truncated trigonometric kernels, Gram
//!   assembly, the sup-norm constant kappa;
//! * [`spectral`] — one eigendecomposition per dataset, then `O(n)`-per-λ
//!   solves, norms and the empirical effective dimension;
//! * [`select`] — candidate grids, the concentration quantities `W` and
//!   `U`, and three selectors: an early-stopping scan over a uniform grid,
//!   the pairwise comparison rule over a geometric grid, and a hold-out
//!   baseline;
//! * [`synth`] — synthetic ground truths with known smoothness and capacity
//!   so population errors are computable exactly;
//! * [`experiment`] — seeded experiment orchestration behind the `ridgeline`
//!   CLI: rate fitting, selector comparison, diagnostics, calibration, and
//!   CSV/JSON reporting.

pub mod error;
pub mod kernel;
pub mod select;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
pub use kernel::{Dataset, KernelSpec};
pub use spectral::{KrrModel, SpectralCache};
