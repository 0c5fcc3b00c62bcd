//! Experiment configuration shared by the CLI subcommands.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, DEFAULT_TRIG_PAIRS};
use crate::select::{GridMode, SelectionRule};

pub const DEFAULT_SIZES: [usize; 5] = [256, 512, 1024, 2048, 4096];
pub const DEFAULT_TRIALS: usize = 20;
pub const DEFAULT_SIGMA: f64 = 0.1;
pub const DEFAULT_R: f64 = 0.5;
pub const DEFAULT_A: f64 = 2.0;
pub const DEFAULT_BASE_SEED: u64 = 42;
pub const DEFAULT_C_LP: f64 = 1.0;

/// Threshold scale shipped as the default for the early-stopping rule,
/// pinned by the committed calibration run (see `calibration/` in the
/// repository root): every swept value over-suppresses the trigger at
/// these sample sizes, leaving regret at the terminal-candidate level, and
/// 1.0 is the value closest to the theoretical constant among the tied
/// minimizers.
pub const DEFAULT_C_SCALE: f64 = 1.0;

/// Sweep used by the `calibrate` subcommand.
pub const CALIBRATION_SWEEP: [f64; 5] = [0.01, 0.03, 0.1, 0.3, 1.0];

/// Noise parameters: estimated from a pilot fit, or fixed by the user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseSpec {
    Auto,
    Fixed { m: f64, gamma: f64 },
}

impl FromStr for NoiseSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(NoiseSpec::Auto);
        }
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() == 2 {
            let m: f64 = parts[0]
                .trim()
                .parse()
                .map_err(|_| Error::input(format!("bad noise M in {s:?}")))?;
            let gamma: f64 = parts[1]
                .trim()
                .parse()
                .map_err(|_| Error::input(format!("bad noise gamma in {s:?}")))?;
            if !(m > 0.0 && gamma > 0.0) {
                return Err(Error::input("noise M and gamma must be positive"));
            }
            return Ok(NoiseSpec::Fixed { m, gamma });
        }
        Err(Error::input(format!(
            "bad noise spec {s:?}; expected auto or <M>,<gamma>"
        )))
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseSpec::Auto => f.write_str("auto"),
            NoiseSpec::Fixed { m, gamma } => write!(f, "{m},{gamma}"),
        }
    }
}

/// Everything a seeded experiment needs; validated before any computation.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub kernel: String,
    pub selectors: Vec<SelectionRule>,
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub sigma: f64,
    pub r: f64,
    pub a: f64,
    pub delta: f64,
    pub b: u32,
    pub q: f64,
    pub mode: GridMode,
    pub c_scale: f64,
    pub c_lp: f64,
    pub cap: usize,
    pub split_fraction: f64,
    pub base_seed: u64,
    pub noise: NoiseSpec,
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kernel: format!("trig:{}:{}", DEFAULT_A, DEFAULT_TRIG_PAIRS),
            selectors: vec![SelectionRule::Asus],
            sizes: DEFAULT_SIZES.to_vec(),
            trials: DEFAULT_TRIALS,
            sigma: DEFAULT_SIGMA,
            r: DEFAULT_R,
            a: DEFAULT_A,
            delta: crate::select::DEFAULT_DELTA,
            b: crate::select::DEFAULT_B,
            q: crate::select::DEFAULT_Q,
            mode: GridMode::Practical,
            c_scale: DEFAULT_C_SCALE,
            c_lp: DEFAULT_C_LP,
            cap: crate::select::DEFAULT_CAP,
            split_fraction: crate::select::DEFAULT_SPLIT_FRACTION,
            base_seed: DEFAULT_BASE_SEED,
            noise: NoiseSpec::Auto,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        self.kernel.parse()
    }

    /// Rejects invalid configurations before any computation starts.
    pub fn validate(&self) -> Result<()> {
        let spec = self.kernel_spec()?;
        if self.sizes.is_empty() {
            return Err(Error::input("at least one sample size is required"));
        }
        if !self.sizes.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::input("sizes must be strictly increasing"));
        }
        if self.trials == 0 {
            return Err(Error::input("trials must be at least 1"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::input("sigma must be finite and non-negative"));
        }
        if !(0.5..=1.0).contains(&self.r) {
            return Err(Error::input("r must lie in [1/2, 1]"));
        }
        if !(self.a > 1.0) {
            return Err(Error::input("a must exceed 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::input("delta must lie in (0, 1)"));
        }
        if self.b == 0 {
            return Err(Error::input("b must be a positive integer"));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::input("q must lie in (0, 1)"));
        }
        if !(self.c_scale > 0.0) || !(self.c_lp > 0.0) {
            return Err(Error::input("c_scale and c_lp must be positive"));
        }
        if self.cap == 0 {
            return Err(Error::input("cap must be at least 1"));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::input("split fraction must lie in (0, 1)"));
        }
        if let KernelSpec::TrigMercer { decay_a, .. } = spec {
            if (decay_a - self.a).abs() > 1e-12 {
                return Err(Error::input(format!(
                    "kernel decay {decay_a} disagrees with configured a = {}",
                    self.a
                )));
            }
        }
        Ok(())
    }

    /// The synthetic runners need the closed-form eigensystem.
    pub fn synthetic_kernel(&self) -> Result<KernelSpec> {
        match self.kernel_spec()? {
            spec @ KernelSpec::TrigMercer { .. } => Ok(spec),
            _ => Err(Error::input(
                "synthetic experiments need the trig kernel (population errors are closed-form there)",
            )),
        }
    }

    /// Hex digest of the full configuration, recorded in every output for
    /// provenance.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
