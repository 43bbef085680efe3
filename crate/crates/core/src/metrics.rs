//! Quantitative evaluation: steering-vector mismatch angle, order statistics
//! for error populations, and CDF export for plotting.

use num_complex::Complex64;
use std::io::Write;

use crate::types::{Error, Result};

/// Angle in degrees between two complex steering vectors,
/// arccos(|a^H b| / (|a|·|b|)), clamped to [0, 90] against rounding drift.
/// Invariant under global phase and nonzero complex scaling of either input.
pub fn manifold_mismatch_deg(a_hat: &[Complex64], a_true: &[Complex64]) -> Result<f64> {
    if a_hat.len() != a_true.len() || a_hat.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "mismatch angle needs equal nonzero lengths, got {} and {}",
            a_hat.len(),
            a_true.len()
        )));
    }
    let na2: f64 = a_hat.iter().map(|x| x.norm_sqr()).sum();
    let nb2: f64 = a_true.iter().map(|x| x.norm_sqr()).sum();
    if na2 == 0.0 || nb2 == 0.0 {
        return Err(Error::Degenerate(
            "mismatch angle undefined for a zero vector".into(),
        ));
    }
    if !(na2.is_finite() && nb2.is_finite()) {
        return Err(Error::Numerical("non-finite steering vector entries".into()));
    }
    let na = na2.sqrt();
    let nb = nb2.sqrt();
    let z: Complex64 = a_hat
        .iter()
        .zip(a_true.iter())
        .map(|(a, b)| (a / na).conj() * (b / nb))
        .sum();
    // arccos(|z|) evaluated as atan2(residual, |z|): the explicit orthogonal
    // residual keeps full precision near 0 deg where arccos loses half the
    // significant digits to cancellation
    let residual2: f64 = a_true
        .iter()
        .zip(a_hat.iter())
        .map(|(b, a)| (b / nb - a / na * z).norm_sqr())
        .sum();
    let angle = residual2.max(0.0).sqrt().atan2(z.norm());
    Ok(angle.to_degrees().clamp(0.0, 90.0))
}

/// Order statistics of an error population (degrees): box-plot five-number
/// summary, the working percentiles, and sample mean/deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSummary {
    pub q0: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub q4: f64,
    pub p68: f64,
    pub p80: f64,
    pub p90: f64,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Percentile by linear interpolation between closest ranks:
/// index p/100·(n−1) into the sorted sample.
fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let idx = p / 100.0 * (n - 1) as f64;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (idx - lo as f64)
}

pub fn summarize(errors: &[f64]) -> Result<ErrorSummary> {
    if errors.is_empty() {
        return Err(Error::InvalidConfig("cannot summarize an empty sample".into()));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::Numerical("non-finite error sample".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(ErrorSummary {
        q0: sorted[0],
        q1: percentile_sorted(&sorted, 25.0),
        q2: percentile_sorted(&sorted, 50.0),
        q3: percentile_sorted(&sorted, 75.0),
        q4: sorted[n - 1],
        p68: percentile_sorted(&sorted, 68.0),
        p80: percentile_sorted(&sorted, 80.0),
        p90: percentile_sorted(&sorted, 90.0),
        mean,
        std,
        count: n,
    })
}

/// Write the empirical CDF of an error population as CSV `error_deg,cdf`
/// with one row per sorted sample and cdf = rank/n. Bit-stable for a fixed
/// input population.
pub fn export_cdf<W: Write>(errors: &[f64], out: &mut W) -> Result<()> {
    if errors.is_empty() {
        return Err(Error::InvalidConfig("cannot export an empty CDF".into()));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::Numerical("non-finite error sample".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let io_err = |e| Error::Numerical(format!("CDF write failed: {e}"));
    writeln!(out, "error_deg,cdf").map_err(io_err)?;
    for (i, e) in sorted.iter().enumerate() {
        writeln!(out, "{:.8e},{:.8e}", e, (i + 1) as f64 / n).map_err(io_err)?;
    }
    Ok(())
}

/// [`export_cdf`] into a file, surfacing I/O failures with path context.
pub fn export_cdf_to_path(errors: &[f64], path: &std::path::Path) -> Result<()> {
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut buf = std::io::BufWriter::new(&mut file);
    export_cdf(errors, &mut buf)
}
