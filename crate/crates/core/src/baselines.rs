//! Comparison calibrators: principal-eigenvector (PE) steering estimation
//! from the spatial covariance, and direct phase measurement at the center
//! frequency. Both feed the same phase-sample pipeline as the iterative
//! estimator via [`baseline_phase_samples`], so manifolds from all methods
//! are assembled and scored identically.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::calib::phase_offsets_vs_ideal;
use crate::types::{ArrayGeometry, CfrMeasurement, Error, Result, WaveformConfig};

/// Entries at the center row below this modulus make the direct phase
/// measurement meaningless.
const DIRECT_ZERO_THRESHOLD: f64 = 1e-12;
/// Power-iteration stopping rule: alignment of successive iterates.
const POWER_ITER_TOL: f64 = 1e-14;
const POWER_ITER_MAX: usize = 500;

/// Spatial covariance of one measurement: R = (1/M)·sum_m x_m x_m^H over the
/// M per-subcarrier antenna snapshots x_m (row m of the CFR as a column
/// vector). Hermitian by construction, positive semidefinite up to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCovariance {
    values: Array2<Complex64>,
    snapshot_count: usize,
}

impl SpatialCovariance {
    pub fn from_cfr(meas: &CfrMeasurement) -> Result<Self> {
        let m = meas.num_subcarriers();
        let n = meas.num_antennas();
        if m < n {
            return Err(Error::InvalidConfig(format!(
                "covariance needs at least as many subcarriers ({m}) as antennas ({n})"
            )));
        }
        if !meas.is_finite() {
            return Err(Error::Degenerate("non-finite CFR entries".into()));
        }
        let mut r: Array2<Complex64> = Array2::zeros((n, n));
        for row in meas.values.outer_iter() {
            for i in 0..n {
                for j in i..n {
                    r[(i, j)] += row[i] * row[j].conj();
                }
            }
        }
        let scale = 1.0 / m as f64;
        for i in 0..n {
            for j in i..n {
                r[(i, j)] *= scale;
            }
            r[(i, i)] = Complex64::new(r[(i, i)].re, 0.0);
            for j in 0..i {
                r[(i, j)] = r[(j, i)].conj();
            }
        }
        Ok(SpatialCovariance {
            values: r,
            snapshot_count: m,
        })
    }

    pub fn matrix(&self) -> &Array2<Complex64> {
        &self.values
    }

    pub fn snapshot_count(&self) -> usize {
        self.snapshot_count
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.values[(i, i)].re).sum()
    }

    fn multiply(&self, v: &[Complex64], out: &mut [Complex64]) {
        let n = self.dim();
        for i in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..n {
                acc += self.values[(i, j)] * v[j];
            }
            out[i] = acc;
        }
    }

    /// Unit-norm principal eigenvector by power iteration. The matrix is
    /// tiny (N×N for a handful of antennas), so the simple iteration beats
    /// pulling in a factorization dependency.
    fn principal_eigenvector(&self) -> Result<Vec<Complex64>> {
        let n = self.dim();
        if self.trace() <= 0.0 {
            return Err(Error::Degenerate(
                "covariance has zero trace (all-zero input)".into(),
            ));
        }
        // start vectors: the all-ones direction, then each basis vector in
        // turn in case the start is orthogonal to the dominant eigenspace
        let mut starts: Vec<Vec<Complex64>> = Vec::with_capacity(n + 1);
        starts.push(vec![Complex64::new(1.0, 0.0); n]);
        for k in 0..n {
            let mut e = vec![Complex64::new(0.0, 0.0); n];
            e[k] = Complex64::new(1.0, 0.0);
            starts.push(e);
        }
        let mut work = vec![Complex64::new(0.0, 0.0); n];
        for start in starts {
            let mut v = start;
            normalize(&mut v);
            let mut alive = true;
            for _ in 0..POWER_ITER_MAX {
                self.multiply(&v, &mut work);
                let norm = l2(&work);
                if norm == 0.0 || !norm.is_finite() {
                    alive = false;
                    break;
                }
                for w in work.iter_mut() {
                    *w /= norm;
                }
                let align: Complex64 = v
                    .iter()
                    .zip(work.iter())
                    .map(|(a, b)| a.conj() * b)
                    .sum();
                std::mem::swap(&mut v, &mut work);
                if 1.0 - align.norm() < POWER_ITER_TOL {
                    return Ok(v);
                }
            }
            if alive {
                // hit the iteration cap with a valid unit vector in the
                // dominant subspace; good enough for near-tied eigenvalues
                return Ok(v);
            }
        }
        Err(Error::Degenerate(
            "power iteration found no nonzero direction".into(),
        ))
    }
}

fn l2(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn normalize(v: &mut [Complex64]) {
    let norm = l2(v);
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// Rotate so element 0 is real positive, then scale to norm `target_norm`.
fn apply_reference_convention(v: &mut [Complex64], target_norm: f64) -> Result<()> {
    let norm = l2(v);
    if norm == 0.0 {
        return Err(Error::Degenerate("zero steering estimate".into()));
    }
    let head = v[0];
    if head.norm() < DIRECT_ZERO_THRESHOLD * norm {
        return Err(Error::Degenerate(
            "reference antenna has no energy; cannot fix the phase convention".into(),
        ));
    }
    let rotation = head.conj() / head.norm();
    let scale = target_norm / norm;
    for x in v.iter_mut() {
        *x *= rotation * scale;
    }
    Ok(())
}

/// PE baseline: steering-vector estimate as the principal eigenvector of the
/// spatial covariance, re-phased so element 0 is real positive and scaled to
/// norm sqrt(N) (unit modulus on average, comparable to a steering vector).
pub fn pe_steering_estimate(meas: &CfrMeasurement) -> Result<Array1<Complex64>> {
    let cov = SpatialCovariance::from_cfr(meas)?;
    pe_steering_from_covariance(&cov)
}

pub fn pe_steering_from_covariance(cov: &SpatialCovariance) -> Result<Array1<Complex64>> {
    let mut v = cov.principal_eigenvector()?;
    let n = v.len() as f64;
    apply_reference_convention(&mut v, n.sqrt())?;
    Ok(Array1::from_vec(v))
}

/// Direct-measuring baseline: per-antenna phases of the CFR row at the
/// carrier frequency, as a unit-modulus steering estimate re-phased to
/// element 0.
pub fn direct_steering_estimate(
    cfg: &WaveformConfig,
    meas: &CfrMeasurement,
) -> Result<Array1<Complex64>> {
    cfg.validate()?;
    if meas.num_subcarriers() != cfg.num_subcarriers {
        return Err(Error::InvalidConfig(format!(
            "measurement has {} subcarriers, config says {}",
            meas.num_subcarriers(),
            cfg.num_subcarriers
        )));
    }
    let row = meas.values.row(cfg.center_row());
    let mut v = Vec::with_capacity(row.len());
    for (n, x) in row.iter().enumerate() {
        let modulus = x.norm();
        if !modulus.is_finite() || modulus < DIRECT_ZERO_THRESHOLD {
            return Err(Error::Degenerate(format!(
                "center-row entry {n} has modulus {modulus:.3e}; phase is undefined"
            )));
        }
        v.push(x / modulus);
    }
    let target = (v.len() as f64).sqrt();
    apply_reference_convention(&mut v, target)?;
    Ok(Array1::from_vec(v))
}

/// Adapter into the shared calibration pipeline: per-antenna phase-error
/// samples of a baseline steering estimate at a known CPP direction, with
/// the same contract as the LOS-gain extraction of the iterative estimator.
pub fn baseline_phase_samples(
    estimate: &Array1<Complex64>,
    geom: &ArrayGeometry,
    theta_k_deg: f64,
) -> Result<Vec<f64>> {
    phase_offsets_vs_ideal(estimate.as_slice().expect("contiguous"), geom, theta_k_deg)
}
