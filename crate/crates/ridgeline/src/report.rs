//! Trial rows, aggregate reports and slope fitting for the experiment
//! runners, plus the CSV/JSON writers.
//!
//! Output files are byte-deterministic for a fixed configuration and seed:
//! rows are emitted in coordinate order regardless of how trials were
//! scheduled, and the `wall_ms` column always carries 0 — measured timings
//! would break reproducibility, so the runners report them on stderr
//! instead.

use serde::Serialize;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// One selector outcome on one generated trial. Serialized column order is
/// the stable CSV schema:
/// `selector,n,trial,seed,lambda,err_rho,err_k,comparisons,fallback,wall_ms`.
#[derive(Debug, Clone, Serialize)]
pub struct TrialRow {
    pub selector: String,
    pub n: usize,
    pub trial: usize,
    pub seed: u64,
    pub lambda: f64,
    pub err_rho: f64,
    pub err_k: f64,
    pub comparisons: usize,
    pub fallback: bool,
    pub wall_ms: u64,
}

/// Aggregate statistics for one `(selector, n)` cell.
#[derive(Debug, Clone, Serialize)]
pub struct SelectorSizeSummary {
    pub selector: String,
    pub n: usize,
    pub trials: usize,
    pub median_err_rho: f64,
    pub iqr_lo_err_rho: f64,
    pub iqr_hi_err_rho: f64,
    pub median_err_k: f64,
    pub iqr_lo_err_k: f64,
    pub iqr_hi_err_k: f64,
    pub median_lambda: f64,
    pub median_comparisons: f64,
    pub total_comparisons: usize,
    pub fallback_count: usize,
    pub wall_ms: u64,
}

/// Per-n oracle row: the grid-minimal population error and its λ, the
/// empirical stand-in for the a-priori optimal regularization.
#[derive(Debug, Clone, Serialize)]
pub struct OracleSizeSummary {
    pub n: usize,
    pub median_err_rho: f64,
    pub median_err_k: f64,
    pub median_lambda: f64,
}

/// Least-squares line fit on `(log n, log median err)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Ordinary least squares in log-log coordinates. Needs at least two
/// distinct abscissae; the standard error needs at least three points and
/// is reported as 0 otherwise.
pub fn fit_log_log(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 2 {
        return Err(Error::input("slope fit needs at least two points"));
    }
    let logs: Vec<(f64, f64)> = points
        .iter()
        .map(|&(x, y)| {
            if x <= 0.0 || y <= 0.0 {
                Err(Error::input("slope fit needs positive coordinates"))
            } else {
                Ok((x.ln(), y.ln()))
            }
        })
        .collect::<Result<_>>()?;
    let m = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::input("slope fit needs distinct sizes"));
    }
    let sxy: f64 = logs
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let stderr = if logs.len() > 2 {
        let rss: f64 = logs
            .iter()
            .map(|p| (p.1 - intercept - slope * p.0).powi(2))
            .sum();
        (rss / (m - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(SlopeFit {
        slope,
        stderr,
        intercept,
        points: logs.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectorSlopes {
    pub selector: String,
    pub slope_rho: SlopeFit,
    pub slope_k: SlopeFit,
}

/// Full result of a rate experiment.
#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub config_digest: String,
    pub base_seed: u64,
    pub summaries: Vec<SelectorSizeSummary>,
    pub oracle: Vec<OracleSizeSummary>,
    pub slopes: Vec<SelectorSlopes>,
    pub oracle_slopes: Option<SelectorSlopes>,
}

/// Median by linear interpolation between order statistics.
pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile of an unsorted, non-empty slice.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in summaries"));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

/// Writes rows as CSV with the stable schema; byte-identical for identical
/// row content.
pub fn write_trial_csv<W: Write>(out: W, rows: &[TrialRow]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row).map_err(csv_io)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_csv_records<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row).map_err(csv_io)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::numeric(format!("csv write failed: {e}"))
}

/// Pretty JSON plus a trailing newline, so files end the POSIX way.
pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
