//! From per-symbol path solutions to a calibrated array manifold.
//!
//! Per measurement, the LOS path's per-antenna gains are stripped of the
//! geometric steering phases for the known CPP direction; what remains (after
//! differencing against the reference antenna, which cancels the unknown
//! common symbol phase) is one sample of each antenna's phase error at that
//! direction. Samples are combined per (CPP, antenna) with a Hampel outlier
//! filter and a circular mean, smoothed across directions with robust local
//! regression, and interpolated with an Akima spline into the continuous
//! error functions that calibrate the steering vectors.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use std::io::Write;

use crate::em::PathSolution;
use crate::manifold::ideal_steering;
use crate::phase::{circular_mean, unwrap_in_place, wrap_phase};
use crate::smoothing::{lowess_smooth, AkimaSpline};
use crate::types::{ArrayGeometry, Error, Result};

pub const DEFAULT_HAMPEL_WINDOW: usize = 7;
pub const DEFAULT_HAMPEL_N_SIGMA: f64 = 3.0;
pub const DEFAULT_LOWESS_SPAN: f64 = 0.35;
pub const DEFAULT_LOWESS_ROBUSTNESS_ITERS: usize = 2;
/// Angular step of the manifold CSV export.
pub const MANIFOLD_EXPORT_STEP_DEG: f64 = 0.5;
/// Consistent scale estimate from the median absolute deviation.
const MAD_TO_SIGMA: f64 = 1.4826;

/// Phase differences of a complex antenna row against the ideal steering
/// vector at `theta_deg`, referenced to antenna 0:
/// out[n] = wrap(arg(v_n * conj(a_n)) - arg(v_0 * conj(a_0))), out[0] = 0.
/// A zero entry means the underlying estimate is degenerate.
pub fn phase_offsets_vs_ideal(
    values: &[Complex64],
    geom: &ArrayGeometry,
    theta_deg: f64,
) -> Result<Vec<f64>> {
    if values.len() != geom.num_elements() {
        return Err(Error::InvalidConfig(format!(
            "row has {} entries for {} antennas",
            values.len(),
            geom.num_elements()
        )));
    }
    let ideal = ideal_steering(geom, theta_deg)?;
    let mut phases = Vec::with_capacity(values.len());
    for (n, (&v, a)) in values.iter().zip(ideal.iter()).enumerate() {
        let z = v * a.conj();
        if z.norm() == 0.0 {
            return Err(Error::Degenerate(format!(
                "zero LOS gain on antenna {n}"
            )));
        }
        phases.push(z.arg());
    }
    let reference = phases[0];
    let mut out: Vec<f64> = phases
        .iter()
        .map(|p| wrap_phase(p - reference))
        .collect();
    out[0] = 0.0;
    Ok(out)
}

/// One phase-error sample per antenna from the LOS row of a path solution.
pub fn extract_phase_samples(
    sol: &PathSolution,
    los: usize,
    geom: &ArrayGeometry,
    theta_k_deg: f64,
) -> Result<Vec<f64>> {
    if los >= sol.num_paths() {
        return Err(Error::InvalidConfig(format!(
            "LOS index {los} out of range for {} paths",
            sol.num_paths()
        )));
    }
    let row: Vec<Complex64> = sol.gains.row(los).iter().cloned().collect();
    phase_offsets_vs_ideal(&row, geom, theta_k_deg)
}

/// Robustly combine one antenna's per-symbol phase samples: unwrap the
/// sequence, replace Hampel outliers (deviation beyond n_sigma consistent
/// MADs from the running window median) with the window median, and return
/// the circular mean of the result.
pub fn robust_combine(samples: &[f64], window: usize, n_sigma: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig(
            "robust_combine needs at least one sample".into(),
        ));
    }
    if window == 0 {
        return Err(Error::InvalidConfig("hampel window must be positive".into()));
    }
    if !(n_sigma.is_finite() && n_sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "n_sigma must be finite and non-negative, got {n_sigma}"
        )));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::Degenerate("non-finite phase sample".into()));
    }
    let mut seq = samples.to_vec();
    unwrap_in_place(&mut seq);
    let filtered = hampel_filter(&seq, window, n_sigma);
    Ok(circular_mean(&filtered))
}

/// Non-recursive Hampel identifier: each decision uses the original values
/// in a centered window of length `window` (truncated at the edges).
fn hampel_filter(seq: &[f64], window: usize, n_sigma: f64) -> Vec<f64> {
    let n = seq.len();
    let half = window / 2;
    let mut out = Vec::with_capacity(n);
    let mut scratch = Vec::with_capacity(window);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        scratch.clear();
        scratch.extend_from_slice(&seq[lo..hi]);
        let med = median_of(&mut scratch);
        for v in scratch.iter_mut() {
            *v = (*v - med).abs();
        }
        let mad = median_of(&mut scratch);
        if (seq[i] - med).abs() > n_sigma * MAD_TO_SIGMA * mad {
            out.push(med);
        } else {
            out.push(seq[i]);
        }
    }
    out
}

fn median_of(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-symbol phase-error samples grouped by CPP and antenna, plus the known
/// CPP directions. Antenna 0 is the reference: its samples are identically
/// zero and every stored phase is wrapped to (-pi, pi].
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSampleSet {
    theta_k_deg: Vec<f64>,
    num_antennas: usize,
    /// samples[k][n] = phase samples of antenna n at CPP k, one per symbol.
    samples: Vec<Vec<Vec<f64>>>,
}

impl PhaseSampleSet {
    pub fn new(theta_k_deg: Vec<f64>, num_antennas: usize) -> Result<Self> {
        if theta_k_deg.is_empty() {
            return Err(Error::InvalidConfig("need at least one CPP angle".into()));
        }
        if theta_k_deg.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "CPP angles must be strictly increasing".into(),
            ));
        }
        if num_antennas < 2 {
            return Err(Error::InvalidConfig("need at least 2 antennas".into()));
        }
        let k = theta_k_deg.len();
        Ok(PhaseSampleSet {
            theta_k_deg,
            num_antennas,
            samples: vec![vec![Vec::new(); num_antennas]; k],
        })
    }

    pub fn theta_k_deg(&self) -> &[f64] {
        &self.theta_k_deg
    }

    pub fn num_cpps(&self) -> usize {
        self.theta_k_deg.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn symbols_at(&self, cpp: usize) -> usize {
        self.samples[cpp][0].len()
    }

    /// Append one symbol's per-antenna phases for CPP `k`.
    pub fn push_symbol(&mut self, k: usize, phases: &[f64]) -> Result<()> {
        if k >= self.num_cpps() {
            return Err(Error::InvalidConfig(format!("CPP index {k} out of range")));
        }
        if phases.len() != self.num_antennas {
            return Err(Error::InvalidConfig(format!(
                "got {} phases for {} antennas",
                phases.len(),
                self.num_antennas
            )));
        }
        if phases[0] != 0.0 {
            return Err(Error::InvalidConfig(
                "reference antenna phase must be exactly 0".into(),
            ));
        }
        if phases
            .iter()
            .any(|&p| !p.is_finite() || p <= -std::f64::consts::PI || p > std::f64::consts::PI)
        {
            return Err(Error::InvalidConfig(
                "phases must be wrapped to (-pi, pi]".into(),
            ));
        }
        for (n, &p) in phases.iter().enumerate() {
            self.samples[k][n].push(p);
        }
        Ok(())
    }

    /// Combine the per-symbol samples into one wrapped mean phase per
    /// (CPP, antenna): K x N matrix. Every CPP must hold at least one symbol.
    pub fn combined(&self, window: usize, n_sigma: f64) -> Result<Array2<f64>> {
        let k = self.num_cpps();
        let mut out = Array2::zeros((k, self.num_antennas));
        for ki in 0..k {
            if self.samples[ki][0].is_empty() {
                return Err(Error::Degenerate(format!(
                    "CPP {ki} has no phase samples"
                )));
            }
            for n in 1..self.num_antennas {
                out[(ki, n)] = robust_combine(&self.samples[ki][n], window, n_sigma)?;
            }
        }
        Ok(out)
    }
}

/// Continuous phase-error function of one antenna: robust local regression
/// of the per-CPP mean phases followed by Akima interpolation. Evaluation
/// clamps outside the CPP span and re-wraps to (-pi, pi].
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCurve {
    spline: AkimaSpline,
}

impl PhaseCurve {
    pub fn evaluate_rad(&self, theta_deg: f64) -> f64 {
        wrap_phase(self.spline.evaluate(theta_deg))
    }

    pub fn span_deg(&self) -> (f64, f64) {
        self.spline.knot_span()
    }
}

/// Fit one antenna's continuous error function through (theta_k, mean phase)
/// points. The phases are unwrapped across adjacent angles before smoothing
/// (the physical curve is continuous in theta; fitting through wrap jumps
/// would manufacture spurious shapes).
pub fn fit_error_function(
    theta_deg: &[f64],
    phases_rad: &[f64],
    span_fraction: f64,
) -> Result<PhaseCurve> {
    if theta_deg.len() < 4 {
        return Err(Error::InvalidConfig(format!(
            "curve fitting needs at least 4 CPP angles, got {}",
            theta_deg.len()
        )));
    }
    if theta_deg.len() != phases_rad.len() {
        return Err(Error::InvalidConfig(format!(
            "got {} angles but {} phases",
            theta_deg.len(),
            phases_rad.len()
        )));
    }
    let mut unwrapped = phases_rad.to_vec();
    unwrap_in_place(&mut unwrapped);
    let smoothed = lowess_smooth(
        theta_deg,
        &unwrapped,
        span_fraction,
        DEFAULT_LOWESS_ROBUSTNESS_ITERS,
    )?;
    let spline = AkimaSpline::new(theta_deg.to_vec(), smoothed)?;
    Ok(PhaseCurve { spline })
}

/// The calibrated manifold: per-antenna continuous phase-error functions
/// over the field of view (antenna 0 is identically zero by convention).
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldEstimate {
    /// curves[n] for antennas 1..N; antenna 0 has no curve (zero error).
    curves: Vec<PhaseCurve>,
    field_of_view_deg: (f64, f64),
}

impl ManifoldEstimate {
    /// Fit from combined mean phases (K x N, as produced by
    /// [`PhaseSampleSet::combined`]) at the CPP angles.
    pub fn fit(
        theta_k_deg: &[f64],
        mean_phases: &Array2<f64>,
        span_fraction: f64,
    ) -> Result<Self> {
        if mean_phases.nrows() != theta_k_deg.len() {
            return Err(Error::InvalidConfig(format!(
                "{} phase rows for {} CPP angles",
                mean_phases.nrows(),
                theta_k_deg.len()
            )));
        }
        let n = mean_phases.ncols();
        if n < 2 {
            return Err(Error::InvalidConfig("need at least 2 antennas".into()));
        }
        let mut curves = Vec::with_capacity(n - 1);
        for antenna in 1..n {
            let phases: Vec<f64> = mean_phases.column(antenna).iter().cloned().collect();
            curves.push(fit_error_function(theta_k_deg, &phases, span_fraction)?);
        }
        Ok(ManifoldEstimate {
            curves,
            field_of_view_deg: (theta_k_deg[0], *theta_k_deg.last().unwrap()),
        })
    }

    pub fn num_antennas(&self) -> usize {
        self.curves.len() + 1
    }

    pub fn field_of_view_deg(&self) -> (f64, f64) {
        self.field_of_view_deg
    }

    /// Estimated phase error of `antenna` at `theta_deg` (clamped to the
    /// field of view; antenna 0 is the zero reference).
    pub fn phase_error_rad(&self, antenna: usize, theta_deg: f64) -> f64 {
        if antenna == 0 {
            return 0.0;
        }
        self.curves[antenna - 1].evaluate_rad(theta_deg)
    }

    /// Calibrated steering vector: ideal response with the estimated phase
    /// errors applied elementwise.
    pub fn calibrated_steering(
        &self,
        geom: &ArrayGeometry,
        theta_deg: f64,
    ) -> Result<Array1<Complex64>> {
        if geom.num_elements() != self.num_antennas() {
            return Err(Error::InvalidConfig(format!(
                "geometry has {} elements, estimate covers {}",
                geom.num_elements(),
                self.num_antennas()
            )));
        }
        let mut v = ideal_steering(geom, theta_deg)?;
        for (n, entry) in v.iter_mut().enumerate() {
            *entry *= Complex64::cis(self.phase_error_rad(n, theta_deg));
        }
        Ok(v)
    }

    /// Export as CSV `theta_deg,antenna,phase_error_rad` on a uniform grid
    /// of [`MANIFOLD_EXPORT_STEP_DEG`] across the field of view.
    pub fn export_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "theta_deg,antenna,phase_error_rad")?;
        let (lo, hi) = self.field_of_view_deg;
        let steps = ((hi - lo) / MANIFOLD_EXPORT_STEP_DEG).round() as usize;
        for i in 0..=steps {
            let theta = lo + (hi - lo) * i as f64 / steps as f64;
            for antenna in 0..self.num_antennas() {
                writeln!(
                    out,
                    "{:.8e},{},{:.8e}",
                    theta,
                    antenna,
                    self.phase_error_rad(antenna, theta)
                )?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::PhaseErrorTable;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use std::f64::consts::PI;

    fn geom4() -> ArrayGeometry {
        ArrayGeometry::half_wavelength_ula(4, 4.85e9).unwrap()
    }

    fn solution_with_row(row: &[Complex64]) -> PathSolution {
        let mut gains = Array2::zeros((1, row.len()));
        for (n, &v) in row.iter().enumerate() {
            gains[(0, n)] = v;
        }
        PathSolution {
            delays_s: vec![3e-8],
            gains,
            objective_trace: vec![],
            iterations_used: 0,
        }
    }

    #[test]
    fn perfect_ideal_row_yields_zero_offsets() {
        let geom = geom4();
        let theta = 23.0;
        let ideal = ideal_steering(&geom, theta).unwrap();
        let sol = solution_with_row(ideal.as_slice().unwrap());
        let phases = extract_phase_samples(&sol, 0, &geom, theta).unwrap();
        assert_eq!(phases[0], 0.0);
        for p in &phases {
            assert_abs_diff_eq!(*p, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn constructed_offsets_are_recovered_and_global_phase_cancels() {
        let geom = geom4();
        let theta = -17.0;
        let ideal = ideal_steering(&geom, theta).unwrap();
        let offsets = [0.0, 0.1, 0.2, 0.3];
        let row: Vec<Complex64> = ideal
            .iter()
            .zip(offsets.iter())
            .map(|(a, &o)| a * Complex64::cis(o))
            .collect();
        let sol = solution_with_row(&row);
        let phases = extract_phase_samples(&sol, 0, &geom, theta).unwrap();
        for (p, o) in phases.iter().zip(offsets.iter()) {
            assert_abs_diff_eq!(*p, *o, epsilon = 1e-12);
        }
        // a common rotation of the whole row must not change anything
        let rotated: Vec<Complex64> = row.iter().map(|v| v * Complex64::cis(1.234)).collect();
        let sol_rot = solution_with_row(&rotated);
        let phases_rot = extract_phase_samples(&sol_rot, 0, &geom, theta).unwrap();
        for (a, b) in phases.iter().zip(&phases_rot) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_gain_antenna_is_rejected() {
        let geom = geom4();
        let mut row = ideal_steering(&geom, 5.0).unwrap().to_vec();
        row[2] = Complex64::new(0.0, 0.0);
        let sol = solution_with_row(&row);
        assert!(extract_phase_samples(&sol, 0, &geom, 5.0).is_err());
        assert!(extract_phase_samples(&sol, 3, &geom, 5.0).is_err());
    }

    #[test]
    fn robust_combine_passes_constants_and_single_samples() {
        assert_abs_diff_eq!(
            robust_combine(&[0.37; 12], 7, 3.0).unwrap(),
            0.37,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            robust_combine(&[-2.4], 7, 3.0).unwrap(),
            -2.4,
            epsilon = 1e-15
        );
    }

    #[test]
    fn robust_combine_rejects_a_gross_outlier() {
        // 19 samples at 0.1 rad plus one at 3.0: the Hampel identifier must
        // replace the outlier so the mean stays at 0.1
        let mut samples = vec![0.1; 20];
        samples[9] = 3.0;
        let combined = robust_combine(&samples, 7, 3.0).unwrap();
        assert!(
            (combined - 0.1).abs() < 1e-6,
            "outlier leaked into the mean: {combined}"
        );
    }

    #[test]
    fn robust_combine_averages_circularly_near_the_wrap() {
        let samples = [PI - 0.05, -PI + 0.03, PI - 0.01];
        let combined = robust_combine(&samples, 7, 3.0).unwrap();
        // unwrapped these sit at pi + {-0.05, 0.03, -0.01}; mean pi - 0.01
        let expected = wrap_phase(PI - 0.01);
        assert!(
            (wrap_phase(combined - expected)).abs() < 1e-9,
            "got {combined}, expected {expected}"
        );
    }

    #[test]
    fn sample_set_enforces_reference_and_wrapping() {
        let mut set = PhaseSampleSet::new(vec![-10.0, 0.0, 10.0], 3).unwrap();
        assert!(set.push_symbol(0, &[0.0, 0.5, -0.5]).is_ok());
        assert!(set.push_symbol(0, &[0.1, 0.5, -0.5]).is_err());
        assert!(set.push_symbol(0, &[0.0, 4.0, 0.0]).is_err());
        assert!(set.push_symbol(7, &[0.0, 0.0, 0.0]).is_err());
        assert_eq!(set.symbols_at(0), 1);
        // CPP 1 has no samples yet
        assert!(set.combined(7, 3.0).is_err());
        set.push_symbol(1, &[0.0, 0.2, 0.1]).unwrap();
        set.push_symbol(2, &[0.0, -0.2, 0.3]).unwrap();
        let combined = set.combined(7, 3.0).unwrap();
        assert_eq!(combined.dim(), (3, 3));
        assert_eq!(combined[(0, 0)], 0.0);
        assert_abs_diff_eq!(combined[(1, 1)], 0.2, epsilon = 1e-12);
    }

    #[test]
    fn fit_reproduces_lines_and_needs_four_points() {
        let theta: Vec<f64> = (0..25).map(|k| -60.0 + 5.0 * k as f64).collect();
        let phases: Vec<f64> = theta.iter().map(|t| 0.004 * t + 0.02).collect();
        let curve = fit_error_function(&theta, &phases, DEFAULT_LOWESS_SPAN).unwrap();
        for (t, p) in theta.iter().zip(&phases) {
            assert!(
                (curve.evaluate_rad(*t) - p).abs() < 1e-9,
                "at {t}: {} vs {p}",
                curve.evaluate_rad(*t)
            );
        }
        assert!(fit_error_function(&theta[..3], &phases[..3], 0.35).is_err());
    }

    #[test]
    fn fit_survives_wrapped_input_sequences() {
        // a physical curve drifting through +pi: stored values wrap, the fit
        // must unwrap before smoothing and re-wrap on evaluation
        let theta: Vec<f64> = (0..25).map(|k| -60.0 + 5.0 * k as f64).collect();
        let truth: Vec<f64> = theta.iter().map(|t| 2.9 + 0.008 * (t + 60.0)).collect();
        let wrapped: Vec<f64> = truth.iter().map(|&p| wrap_phase(p)).collect();
        let curve = fit_error_function(&theta, &wrapped, DEFAULT_LOWESS_SPAN).unwrap();
        for (t, p) in theta.iter().zip(&truth) {
            let err = wrap_phase(curve.evaluate_rad(*t) - p).abs();
            assert!(err < 1e-6, "at {t}: wrap-handling error {err}");
        }
    }

    #[test]
    fn manifold_estimate_keeps_reference_zero_and_unit_modulus() {
        let theta: Vec<f64> = (0..25).map(|k| -60.0 + 5.0 * k as f64).collect();
        let mut mean = Array2::zeros((25, 4));
        for (k, t) in theta.iter().enumerate() {
            mean[(k, 1)] = 0.3 * (t / 40.0).sin();
            mean[(k, 2)] = -0.2 * (t / 25.0).cos();
            mean[(k, 3)] = 0.1 + 0.002 * t;
        }
        let est = ManifoldEstimate::fit(&theta, &mean, DEFAULT_LOWESS_SPAN).unwrap();
        assert_eq!(est.num_antennas(), 4);
        assert_eq!(est.phase_error_rad(0, 13.7), 0.0);
        // clamping beyond the outermost CPPs
        assert_eq!(
            est.phase_error_rad(2, 90.0),
            est.phase_error_rad(2, 60.0)
        );
        let geom = geom4();
        let v = est.calibrated_steering(&geom, 13.7).unwrap();
        for e in v.iter() {
            assert_abs_diff_eq!(e.norm(), 1.0, epsilon = 1e-12);
        }
        // zero estimate reproduces the ideal manifold
        let zero = ManifoldEstimate::fit(&theta, &Array2::zeros((25, 4)), 0.35).unwrap();
        let vz = zero.calibrated_steering(&geom, -22.2).unwrap();
        let ideal = ideal_steering(&geom, -22.2).unwrap();
        for (a, b) in vz.iter().zip(ideal.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn manifold_fit_recovers_a_smooth_table_at_cpp_angles() {
        // mean phases taken directly from a smooth ground-truth table must
        // reproduce that table at the CPP angles after smoothing
        let theta: Vec<f64> = (0..25).map(|k| -60.0 + 5.0 * k as f64).collect();
        let n = 4;
        let mut table_vals = Array2::zeros((25, n));
        for (k, t) in theta.iter().enumerate() {
            table_vals[(k, 1)] = 0.25 * (t / 35.0 + 0.4).sin();
            table_vals[(k, 2)] = 0.3 * (t / 50.0).cos() - 0.3;
            table_vals[(k, 3)] = -0.2 * (t / 45.0 - 0.2).sin();
        }
        let table = PhaseErrorTable::new(theta.clone(), table_vals.clone()).unwrap();
        let est = ManifoldEstimate::fit(&theta, &table_vals, DEFAULT_LOWESS_SPAN).unwrap();
        for (k, t) in theta.iter().enumerate() {
            for antenna in 1..n {
                let err = wrap_phase(
                    est.phase_error_rad(antenna, *t) - table.phase_at(antenna, *t).unwrap(),
                )
                .abs();
                assert!(
                    err < 0.02,
                    "antenna {antenna} at CPP {k}: smoothing distortion {err}"
                );
            }
        }
    }

    #[test]
    fn manifold_export_has_expected_grid() {
        let theta: Vec<f64> = (0..25).map(|k| -60.0 + 5.0 * k as f64).collect();
        let est = ManifoldEstimate::fit(&theta, &Array2::zeros((25, 4)), 0.35).unwrap();
        let mut buf = Vec::new();
        est.export_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "theta_deg,antenna,phase_error_rad");
        // 241 angles x 4 antennas
        assert_eq!(text.lines().count(), 1 + 241 * 4);
        assert!(text.lines().nth(1).unwrap().starts_with("-6.00000000e1,0,"));
    }
}
