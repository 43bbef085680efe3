//! Direction-of-arrival estimation against an arbitrary manifold: steering
//! grids, conventional beamforming, and the LOS-gated estimator used for
//! evaluation (multipath delay separation first, then a spatial spectrum on
//! the LOS gain row only, so manifold quality is the property under test).

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::em::{em_refine, estimate_order_with_init, select_los, EmConfig};
use crate::types::{CfrMeasurement, Error, Result, WaveformConfig};

/// Entries of grid steering vectors must sit on the unit circle.
const UNIT_MODULUS_TOL: f64 = 1e-6;
/// Spectrum floor before taking logs for peak interpolation.
const LOG_FLOOR: f64 = 1e-300;

/// Precomputed steering vectors on a uniform angular grid over a half-open
/// field of view (lo, hi]. Immutable and shareable across trials.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringGrid {
    angles_deg: Vec<f64>,
    /// U x N, row u = steering vector at angles_deg[u].
    vectors: Array2<Complex64>,
}

impl SteeringGrid {
    /// Build from any manifold evaluator (ideal, ground-truth, or
    /// calibrated). Grid points are lo + (hi-lo)*(u+1)/U for u in 0..U with
    /// U = (hi-lo)/step, covering (lo, hi] with the endpoint hit exactly.
    pub fn build<F>(evaluator: F, fov_deg: (f64, f64), step_deg: f64) -> Result<Self>
    where
        F: Fn(f64) -> Result<Array1<Complex64>>,
    {
        let (lo, hi) = fov_deg;
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidConfig(format!(
                "empty field of view ({lo}, {hi}]"
            )));
        }
        if !(step_deg.is_finite() && step_deg > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "grid step must be positive, got {step_deg}"
            )));
        }
        let points = ((hi - lo) / step_deg).round();
        if points < 1.0 {
            return Err(Error::InvalidConfig(
                "field of view narrower than one grid step".into(),
            ));
        }
        let u_count = points as usize;
        let mut angles = Vec::with_capacity(u_count);
        let mut rows: Vec<Array1<Complex64>> = Vec::with_capacity(u_count);
        for u in 0..u_count {
            let theta = lo + (hi - lo) * (u + 1) as f64 / u_count as f64;
            let v = evaluator(theta)?;
            if let Some(prev) = rows.first() {
                if v.len() != prev.len() {
                    return Err(Error::InvalidConfig(
                        "evaluator returned vectors of differing lengths".into(),
                    ));
                }
            }
            for e in v.iter() {
                if (e.norm() - 1.0).abs() > UNIT_MODULUS_TOL {
                    return Err(Error::Numerical(format!(
                        "steering entry off the unit circle at {theta} deg: |v| = {}",
                        e.norm()
                    )));
                }
            }
            angles.push(theta);
            rows.push(v);
        }
        let n = rows[0].len();
        let mut vectors = Array2::zeros((u_count, n));
        for (u, row) in rows.into_iter().enumerate() {
            vectors.row_mut(u).assign(&row);
        }
        Ok(SteeringGrid { angles_deg: angles, vectors })
    }

    pub fn angles_deg(&self) -> &[f64] {
        &self.angles_deg
    }

    pub fn num_points(&self) -> usize {
        self.angles_deg.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vector_at(&self, u: usize) -> ndarray::ArrayView1<'_, Complex64> {
        self.vectors.row(u)
    }
}

/// Conventional beamformer: P(theta_u) = |a^H(theta_u) x|^2 / N^2.
pub fn beamform_spectrum(grid: &SteeringGrid, snapshot: &[Complex64]) -> Result<Vec<f64>> {
    let n = grid.num_antennas();
    if snapshot.len() != n {
        return Err(Error::InvalidConfig(format!(
            "snapshot has {} entries for {} antennas",
            snapshot.len(),
            n
        )));
    }
    let scale = 1.0 / (n * n) as f64;
    let mut spectrum = Vec::with_capacity(grid.num_points());
    for row in grid.vectors.outer_iter() {
        let dot: Complex64 = row
            .iter()
            .zip(snapshot.iter())
            .map(|(a, x)| a.conj() * x)
            .sum();
        spectrum.push(dot.norm_sqr() * scale);
    }
    Ok(spectrum)
}

/// Angle of the spectrum peak, refined by 3-point parabolic interpolation on
/// the log-spectrum (skipped when the discrete peak sits on the boundary).
pub fn spectrum_peak_deg(grid: &SteeringGrid, spectrum: &[f64]) -> Result<f64> {
    let u_count = grid.num_points();
    if spectrum.len() != u_count {
        return Err(Error::InvalidConfig(format!(
            "spectrum has {} bins for {} grid points",
            spectrum.len(),
            u_count
        )));
    }
    let (u_star, _) = spectrum
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("grid is non-empty");
    if u_star == 0 || u_star + 1 == u_count {
        return Ok(grid.angles_deg[u_star]);
    }
    let l = spectrum[u_star - 1].max(LOG_FLOOR).ln();
    let c = spectrum[u_star].max(LOG_FLOOR).ln();
    let r = spectrum[u_star + 1].max(LOG_FLOOR).ln();
    let denom = l - 2.0 * c + r;
    let mut delta = if denom.is_finite() && denom.abs() > f64::MIN_POSITIVE {
        0.5 * (l - r) / denom
    } else {
        0.0
    };
    if !delta.is_finite() {
        delta = 0.0;
    }
    delta = delta.clamp(-1.0, 1.0);
    // delta is in units of one grid step; use the local step around the peak
    let local_step = 0.5 * (grid.angles_deg[u_star + 1] - grid.angles_deg[u_star - 1]);
    Ok(grid.angles_deg[u_star] + delta * local_step)
}

/// LOS-gated DOA estimate: separate multipath in delay (order selection,
/// greedy initialization, iterative refinement), gate to the LOS path, and
/// beamform its per-antenna gain row against the supplied grid.
pub fn estimate_doa(
    cfg: &WaveformConfig,
    meas: &CfrMeasurement,
    grid: &SteeringGrid,
    em: &EmConfig,
    max_paths: usize,
    los_threshold: f64,
) -> Result<f64> {
    if grid.num_antennas() != meas.num_antennas() {
        return Err(Error::InvalidConfig(format!(
            "grid covers {} antennas, measurement has {}",
            grid.num_antennas(),
            meas.num_antennas()
        )));
    }
    let (_, init) = estimate_order_with_init(cfg, meas, em, max_paths)?;
    let sol = em_refine(cfg, meas, &init, em)?;
    let los = select_los(&sol, los_threshold)?;
    let snapshot: Vec<Complex64> = sol.gains.row(los).iter().cloned().collect();
    let spectrum = beamform_spectrum(grid, &snapshot)?;
    spectrum_peak_deg(grid, &spectrum)
}
