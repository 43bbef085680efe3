//! End-to-end plumbing shared by the experiment drivers: a per-measurement
//! phase-sample front end for each calibrator, manifold assembly from sample
//! sets, manifold sources for steering-grid construction, and phase-error
//! table generation and CSV round-tripping.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::baselines::{baseline_phase_samples, direct_steering_estimate, pe_steering_estimate};
use crate::calib::{
    phase_offsets_vs_ideal, ManifoldEstimate, PhaseSampleSet, DEFAULT_HAMPEL_N_SIGMA,
    DEFAULT_HAMPEL_WINDOW, DEFAULT_LOWESS_SPAN,
};
use crate::em::{
    em_refine, estimate_order_with_init, select_los, CirGate, EmConfig, DEFAULT_LOS_THRESHOLD,
};
use crate::manifold::{ideal_steering, true_steering};
use crate::types::{ArrayGeometry, CfrMeasurement, Error, PhaseErrorTable, Result, WaveformConfig};

/// The calibrators under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CalibrationMethod {
    /// Joint delay/gain estimation with multipath separation.
    Em,
    /// Principal eigenvector of the spatial covariance.
    Pe,
    /// Direct phase measurement at the carrier tone.
    Direct,
}

impl CalibrationMethod {
    pub const ALL: [CalibrationMethod; 3] = [
        CalibrationMethod::Em,
        CalibrationMethod::Pe,
        CalibrationMethod::Direct,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CalibrationMethod::Em => "em",
            CalibrationMethod::Pe => "pe",
            CalibrationMethod::Direct => "direct",
        }
    }
}

impl FromStr for CalibrationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "em" => Ok(CalibrationMethod::Em),
            "pe" => Ok(CalibrationMethod::Pe),
            "direct" => Ok(CalibrationMethod::Direct),
            other => Err(Error::InvalidConfig(format!(
                "unknown calibration method '{other}' (expected em, pe, or direct)"
            ))),
        }
    }
}

impl std::fmt::Display for CalibrationMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Tunables of the measurement-to-manifold chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    /// Coverage radius bounding the delay gate and the delay search window.
    pub coverage_m: f64,
    /// Model-order ceiling for the multipath estimator.
    pub max_paths: usize,
    /// Relative gain-power floor for LOS selection.
    pub los_gain_threshold: f64,
    pub hampel_window: usize,
    pub hampel_n_sigma: f64,
    pub lowess_span: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            coverage_m: 100.0,
            max_paths: 8,
            los_gain_threshold: DEFAULT_LOS_THRESHOLD,
            hampel_window: DEFAULT_HAMPEL_WINDOW,
            hampel_n_sigma: DEFAULT_HAMPEL_N_SIGMA,
            lowess_span: DEFAULT_LOWESS_SPAN,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.coverage_m.is_finite() && self.coverage_m > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "coverage_m must be positive, got {}",
                self.coverage_m
            )));
        }
        if self.max_paths == 0 {
            return Err(Error::InvalidConfig("max_paths must be at least 1".into()));
        }
        if !(self.los_gain_threshold.is_finite()
            && (0.0..=1.0).contains(&self.los_gain_threshold))
        {
            return Err(Error::InvalidConfig(format!(
                "los_gain_threshold must lie in [0, 1], got {}",
                self.los_gain_threshold
            )));
        }
        if self.hampel_window == 0 {
            return Err(Error::InvalidConfig("hampel_window must be positive".into()));
        }
        if !(self.hampel_n_sigma.is_finite() && self.hampel_n_sigma >= 0.0) {
            return Err(Error::InvalidConfig(
                "hampel_n_sigma must be non-negative".into(),
            ));
        }
        if !(self.lowess_span.is_finite() && 0.0 < self.lowess_span && self.lowess_span <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lowess_span must lie in (0, 1], got {}",
                self.lowess_span
            )));
        }
        Ok(())
    }
}

/// One measurement in, one phase-sample row out — for every calibrator.
///
/// The multipath estimator runs on the delay-gated, dimension-reduced CFR
/// (that is the point of gating); the covariance and direct baselines run on
/// the raw CFR, as they would on hardware: the covariance uses all subcarrier
/// snapshots, the direct method reads the tone at the carrier itself.
#[derive(Debug)]
pub struct CalibrationPipeline {
    cfg: WaveformConfig,
    geom: ArrayGeometry,
    params: PipelineConfig,
    gate: CirGate,
    em: EmConfig,
}

impl CalibrationPipeline {
    pub fn new(cfg: &WaveformConfig, geom: &ArrayGeometry, params: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        params.validate()?;
        let gate = CirGate::new(cfg, params.coverage_m)?;
        let em = EmConfig::for_bandwidth(
            gate.reduced_config().occupied_bandwidth_hz(),
            gate.gate_delay_s(),
        )?;
        Ok(CalibrationPipeline {
            cfg: cfg.clone(),
            geom: geom.clone(),
            params,
            gate,
            em,
        })
    }

    pub fn waveform(&self) -> &WaveformConfig {
        &self.cfg
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geom
    }

    pub fn params(&self) -> &PipelineConfig {
        &self.params
    }

    pub fn reduced_config(&self) -> &WaveformConfig {
        self.gate.reduced_config()
    }

    pub fn em_config(&self) -> &EmConfig {
        &self.em
    }

    /// Per-antenna phase-error samples of one measurement at a known CPP
    /// direction, via the selected calibrator.
    pub fn phase_samples(
        &self,
        method: CalibrationMethod,
        meas: &CfrMeasurement,
        theta_k_deg: f64,
    ) -> Result<Vec<f64>> {
        match method {
            CalibrationMethod::Em => {
                let row = self.los_snapshot(meas)?;
                phase_offsets_vs_ideal(&row, &self.geom, theta_k_deg)
            }
            CalibrationMethod::Pe => {
                let est = pe_steering_estimate(meas)?;
                baseline_phase_samples(&est, &self.geom, theta_k_deg)
            }
            CalibrationMethod::Direct => {
                let est = direct_steering_estimate(&self.cfg, meas)?;
                baseline_phase_samples(&est, &self.geom, theta_k_deg)
            }
        }
    }

    /// Combine a sample set and fit the continuous manifold estimate.
    pub fn assemble_manifold(&self, set: &PhaseSampleSet) -> Result<ManifoldEstimate> {
        let means = set.combined(self.params.hampel_window, self.params.hampel_n_sigma)?;
        ManifoldEstimate::fit(set.theta_k_deg(), &means, self.params.lowess_span)
    }

    /// Gate a raw measurement, estimate the multipath channel, and return
    /// the per-antenna gain row of the LOS path — the spatial snapshot that
    /// DOA estimation beamforms against (possibly several grids, so the
    /// expensive estimation step is exposed separately).
    pub fn los_snapshot(&self, meas: &CfrMeasurement) -> Result<Vec<Complex64>> {
        let gated = self.gate.apply(meas)?;
        let rcfg = self.gate.reduced_config();
        let (_, init) = estimate_order_with_init(rcfg, &gated, &self.em, self.params.max_paths)?;
        let sol = em_refine(rcfg, &gated, &init, &self.em)?;
        let los = select_los(&sol, self.params.los_gain_threshold)?;
        Ok(sol.gains.row(los).iter().cloned().collect())
    }
}

/// Which manifold a steering grid is built from.
#[derive(Debug, Clone, Copy)]
pub enum ManifoldSource<'a> {
    /// The nominal (error-free) array model.
    Ideal,
    /// The ground-truth error table (oracle calibration).
    True(&'a PhaseErrorTable),
    /// An estimated manifold from one of the calibrators.
    Estimated(&'a ManifoldEstimate),
}

impl ManifoldSource<'_> {
    pub fn steering(&self, geom: &ArrayGeometry, theta_deg: f64) -> Result<Array1<Complex64>> {
        match self {
            ManifoldSource::Ideal => ideal_steering(geom, theta_deg),
            ManifoldSource::True(table) => true_steering(geom, table, theta_deg),
            ManifoldSource::Estimated(est) => est.calibrated_steering(geom, theta_deg),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ManifoldSource::Ideal => "ideal",
            ManifoldSource::True(_) => "true",
            ManifoldSource::Estimated(_) => "estimated",
        }
    }
}

/// Generate a smooth synthetic ground-truth error table: per antenna, a
/// two-sinusoid curve over the field of view, scaled so its peak magnitude
/// is a per-antenna draw from [0.5, 1.0] x `max_error_deg`. Antenna 0 is the
/// zero reference; `max_error_deg` = 0 yields the all-zero table.
pub fn synthetic_error_table(
    num_antennas: usize,
    max_error_deg: f64,
    fov_deg: (f64, f64),
    step_deg: f64,
    seed: u64,
) -> Result<PhaseErrorTable> {
    if !(max_error_deg.is_finite() && max_error_deg >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "max_error_deg must be non-negative, got {max_error_deg}"
        )));
    }
    let (lo, hi) = fov_deg;
    if !(step_deg.is_finite() && step_deg > 0.0 && hi > lo) {
        return Err(Error::InvalidConfig(
            "error table needs a non-empty FOV and positive step".into(),
        ));
    }
    let segments = ((hi - lo) / step_deg).round() as usize;
    if segments < 1 {
        return Err(Error::InvalidConfig(
            "FOV narrower than one sampling step".into(),
        ));
    }
    let angles: Vec<f64> = (0..=segments)
        .map(|i| lo + (hi - lo) * i as f64 / segments as f64)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Array2::zeros((angles.len(), num_antennas));
    let max_error_rad = max_error_deg.to_radians();
    for n in 1..num_antennas {
        // Periods span one-half to two field-of-view widths: physical array
        // errors (coupling, element mismatch) vary slowly with angle, and the
        // calibration smoother is designed for that regime.
        let amp = rng.gen_range(0.5..1.0) * max_error_rad;
        let period1: f64 = rng.gen_range(140.0..260.0);
        let period2: f64 = rng.gen_range(80.0..140.0);
        let mix: f64 = rng.gen_range(0.15..0.45);
        let psi1: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let psi2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let raw: Vec<f64> = angles
            .iter()
            .map(|t| {
                (std::f64::consts::TAU * t / period1 + psi1).sin()
                    + mix * (std::f64::consts::TAU * t / period2 + psi2).sin()
            })
            .collect();
        let peak = raw.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let scale = if peak > 0.0 { amp / peak } else { 0.0 };
        for (k, r) in raw.iter().enumerate() {
            values[(k, n)] = r * scale;
        }
    }
    PhaseErrorTable::new(angles, values)
}

/// Write a ground-truth error table in the same CSV schema the manifold
/// export uses: `theta_deg,antenna,phase_error_rad`, rows grouped by angle.
pub fn write_error_table_csv<W: Write>(table: &PhaseErrorTable, out: &mut W) -> Result<()> {
    let io_err = |e| Error::Numerical(format!("error-table write failed: {e}"));
    writeln!(out, "theta_deg,antenna,phase_error_rad").map_err(io_err)?;
    for (k, theta) in table.sample_angles_deg.iter().enumerate() {
        for n in 0..table.num_antennas() {
            writeln!(out, "{:.8e},{},{:.8e}", theta, n, table.phase_errors_rad[(k, n)])
                .map_err(io_err)?;
        }
    }
    Ok(())
}

/// Parse a phase-error table from CSV `theta_deg,antenna,phase_error_rad`.
/// Angles must appear in strictly increasing blocks and every (angle,
/// antenna) cell must be present exactly once.
pub fn read_error_table_csv<R: BufRead>(reader: R) -> Result<PhaseErrorTable> {
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, Ok(h))) => h,
        Some((_, Err(e))) => return Err(Error::InvalidConfig(format!("unreadable CSV: {e}"))),
        None => return Err(Error::InvalidConfig("empty error-table CSV".into())),
    };
    if header.trim() != "theta_deg,antenna,phase_error_rad" {
        return Err(Error::InvalidConfig(format!(
            "unexpected error-table header '{header}'"
        )));
    }
    let mut angles: Vec<f64> = Vec::new();
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    let mut num_antennas = 0usize;
    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::InvalidConfig(format!("unreadable CSV: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let parse_f = |s: Option<&str>, what: &str| -> Result<f64> {
            s.and_then(|v| v.trim().parse::<f64>().ok()).ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: bad {what}", lineno + 1))
            })
        };
        let theta = parse_f(fields.next(), "theta_deg")?;
        let antenna = fields
            .next()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::InvalidConfig(format!("line {}: bad antenna", lineno + 1)))?;
        let phase = parse_f(fields.next(), "phase_error_rad")?;
        if fields.next().is_some() {
            return Err(Error::InvalidConfig(format!(
                "line {}: too many fields",
                lineno + 1
            )));
        }
        if angles.last() != Some(&theta) {
            angles.push(theta);
            rows.push(Vec::new());
        }
        let row = rows.last_mut().expect("pushed above");
        if antenna >= row.len() {
            row.resize(antenna + 1, None);
        }
        if row[antenna].is_some() {
            return Err(Error::InvalidConfig(format!(
                "line {}: duplicate cell ({theta}, {antenna})",
                lineno + 1
            )));
        }
        row[antenna] = Some(phase);
        num_antennas = num_antennas.max(antenna + 1);
    }
    if angles.is_empty() {
        return Err(Error::InvalidConfig("error-table CSV has no rows".into()));
    }
    let mut values = Array2::zeros((angles.len(), num_antennas));
    for (k, row) in rows.iter().enumerate() {
        for n in 0..num_antennas {
            match row.get(n).copied().flatten() {
                Some(p) => values[(k, n)] = p,
                None => {
                    return Err(Error::InvalidConfig(format!(
                        "missing cell (angle {}, antenna {n})",
                        angles[k]
                    )))
                }
            }
        }
    }
    PhaseErrorTable::new(angles, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chansim::{synthesize_measurement, ScenarioConfig};
    use crate::phase::wrap_phase;
    use approx::assert_abs_diff_eq;

    fn default_cfg() -> WaveformConfig {
        WaveformConfig::new(4.85e9, 30e3, 1632, 2, 97.92e6).unwrap()
    }

    fn geom4() -> ArrayGeometry {
        ArrayGeometry::half_wavelength_ula(4, 4.85e9).unwrap()
    }

    /// 25 CPPs on a 10 m arc, every 5 degrees, pure LOS, zero noise.
    fn noiseless_arc_scenario(seed: u64) -> ScenarioConfig {
        let mut scn = ScenarioConfig::arc(3.0, 25, 10.0, (-60.0, 60.0), seed).unwrap();
        scn.num_nlos_paths = 0;
        scn.noiseless = true;
        scn
    }

    /// Per-antenna linear error table at the CPP angles. Affine curves pass
    /// through the robust smoother unchanged, so the end-to-end identity
    /// isolates estimation bias from smoothing bias.
    fn linear_table(slopes: &[f64]) -> PhaseErrorTable {
        let angles: Vec<f64> = (0..25).map(|k| -60.0 + 5.0 * k as f64).collect();
        let mut values = Array2::zeros((25, slopes.len()));
        for (k, t) in angles.iter().enumerate() {
            for (n, s) in slopes.iter().enumerate() {
                values[(k, n)] = s * (t + 10.0) / 60.0;
            }
        }
        PhaseErrorTable::new(angles, values).unwrap()
    }

    #[test]
    fn method_names_round_trip() {
        for m in CalibrationMethod::ALL {
            assert_eq!(m.as_str().parse::<CalibrationMethod>().unwrap(), m);
        }
        assert!("music".parse::<CalibrationMethod>().is_err());
        assert_eq!("EM".parse::<CalibrationMethod>().unwrap(), CalibrationMethod::Em);
    }

    #[test]
    fn pipeline_config_validation_catches_bad_fields() {
        assert!(PipelineConfig::default().validate().is_ok());
        let mut p = PipelineConfig::default();
        p.coverage_m = -1.0;
        assert!(p.validate().is_err());
        let mut p = PipelineConfig::default();
        p.max_paths = 0;
        assert!(p.validate().is_err());
        let mut p = PipelineConfig::default();
        p.los_gain_threshold = 1.5;
        assert!(p.validate().is_err());
        let mut p = PipelineConfig::default();
        p.lowess_span = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn end_to_end_noiseless_identity_for_every_method() {
        // single-path channel, zero noise, one symbol per CPP: every
        // calibrator must reproduce the injected error table at each CPP
        // to well below a microradian
        let cfg = default_cfg();
        let geom = geom4();
        let table = linear_table(&[0.0, 0.25, -0.4, 0.15]);
        let scn = noiseless_arc_scenario(91);
        let pipeline = CalibrationPipeline::new(&cfg, &geom, PipelineConfig::default()).unwrap();

        let theta_k: Vec<f64> = (0..25)
            .map(|k| scn.cpp_bearing_range(k).unwrap().0)
            .collect();
        for method in CalibrationMethod::ALL {
            let mut set = PhaseSampleSet::new(theta_k.clone(), 4).unwrap();
            for k in 0..25 {
                let (_, meas) = synthesize_measurement(&scn, &cfg, &geom, &table, k, 0).unwrap();
                let phases = pipeline.phase_samples(method, &meas, theta_k[k]).unwrap();
                set.push_symbol(k, &phases).unwrap();
            }
            let est = pipeline.assemble_manifold(&set).unwrap();
            let mut worst: f64 = 0.0;
            for (k, t) in theta_k.iter().enumerate() {
                for n in 0..4 {
                    let injected = table.phase_at(n, *t).unwrap();
                    let err = wrap_phase(est.phase_error_rad(n, *t) - injected).abs();
                    worst = worst.max(err);
                    assert!(
                        err < 1e-6,
                        "{method} at CPP {k} antenna {n}: {err:.3e} rad"
                    );
                }
            }
            // calibrated steering matches the true manifold per element
            let v = est.calibrated_steering(&geom, theta_k[12]).unwrap();
            let t = true_steering(&geom, &table, theta_k[12]).unwrap();
            let reference = (v[0] * t[0].conj()).arg();
            for n in 0..4 {
                let d = wrap_phase((v[n] * t[n].conj()).arg() - reference).abs();
                assert!(d < 1e-6, "{method} steering phase off by {d:.3e}");
            }
            eprintln!("identity worst case for {method}: {worst:.3e} rad");
        }
    }

    #[test]
    fn per_symbol_global_rotation_leaves_samples_unchanged() {
        let cfg = default_cfg();
        let geom = geom4();
        let table = linear_table(&[0.0, 0.3, -0.2, 0.1]);
        let scn = noiseless_arc_scenario(7);
        let pipeline = CalibrationPipeline::new(&cfg, &geom, PipelineConfig::default()).unwrap();
        let theta = scn.cpp_bearing_range(12).unwrap().0;
        let (_, meas) = synthesize_measurement(&scn, &cfg, &geom, &table, 12, 0).unwrap();
        for method in CalibrationMethod::ALL {
            let base = pipeline.phase_samples(method, &meas, theta).unwrap();
            let mut spun = meas.clone();
            let rot = Complex64::cis(2.777);
            spun.values.mapv_inplace(|v| v * rot);
            let turned = pipeline.phase_samples(method, &spun, theta).unwrap();
            for (a, b) in base.iter().zip(&turned) {
                assert!(
                    (a - b).abs() < 1e-10,
                    "{method}: rotation changed a sample by {}",
                    (a - b).abs()
                );
            }
        }
    }

    #[test]
    fn manifold_sources_agree_where_they_should() {
        let geom = geom4();
        let table = linear_table(&[0.0, 0.2, -0.3, 0.1]);
        let ideal = ManifoldSource::Ideal.steering(&geom, 14.0).unwrap();
        let truth = ManifoldSource::True(&table).steering(&geom, 14.0).unwrap();
        for (i, t) in ideal.iter().zip(truth.iter()) {
            // true manifold applies the injected error on top of ideal
            assert_abs_diff_eq!(i.norm(), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(t.norm(), 1.0, epsilon = 1e-12);
        }
        let zero = synthetic_error_table(4, 0.0, (-60.0, 60.0), 5.0, 1).unwrap();
        let truth_zero = ManifoldSource::True(&zero).steering(&geom, 14.0).unwrap();
        for (a, b) in ideal.iter().zip(truth_zero.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        assert_eq!(ManifoldSource::Ideal.label(), "ideal");
        assert_eq!(ManifoldSource::True(&table).label(), "true");
    }

    #[test]
    fn synthetic_tables_are_seeded_smooth_and_bounded() {
        let t1 = synthetic_error_table(4, 20.0, (-60.0, 60.0), 1.0, 42).unwrap();
        let t2 = synthetic_error_table(4, 20.0, (-60.0, 60.0), 1.0, 42).unwrap();
        assert_eq!(t1.sample_angles_deg, t2.sample_angles_deg);
        assert_eq!(t1.phase_errors_rad, t2.phase_errors_rad);
        let t3 = synthetic_error_table(4, 20.0, (-60.0, 60.0), 1.0, 43).unwrap();
        assert_ne!(t1.phase_errors_rad, t3.phase_errors_rad);

        assert_eq!(t1.sample_angles_deg.len(), 121);
        let bound = 20.0f64.to_radians() + 1e-12;
        let mut peak: f64 = 0.0;
        for k in 0..t1.sample_angles_deg.len() {
            assert_eq!(t1.phase_errors_rad[(k, 0)], 0.0);
            for n in 1..4 {
                let v = t1.phase_errors_rad[(k, n)].abs();
                assert!(v <= bound);
                peak = peak.max(v);
            }
        }
        // the scale draw lives in [0.5, 1.0] x bound, so the peak must be
        // meaningfully large, not accidentally tiny
        assert!(peak >= 0.5 * 20.0f64.to_radians() - 1e-12);
    }

    #[test]
    fn error_table_csv_round_trips() {
        let table = synthetic_error_table(4, 15.0, (-60.0, 60.0), 5.0, 11).unwrap();
        let mut buf = Vec::new();
        write_error_table_csv(&table, &mut buf).unwrap();
        let parsed = read_error_table_csv(&buf[..]).unwrap();
        assert_eq!(parsed.sample_angles_deg.len(), table.sample_angles_deg.len());
        for (a, b) in parsed
            .sample_angles_deg
            .iter()
            .zip(table.sample_angles_deg.iter())
        {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-7);
        }
        for k in 0..table.sample_angles_deg.len() {
            for n in 0..4 {
                assert_abs_diff_eq!(
                    parsed.phase_errors_rad[(k, n)],
                    table.phase_errors_rad[(k, n)],
                    epsilon = 1e-7
                );
            }
        }
    }

    #[test]
    fn error_table_csv_rejects_malformed_input() {
        assert!(read_error_table_csv(&b""[..]).is_err());
        assert!(read_error_table_csv(&b"wrong,header,here\n"[..]).is_err());
        let missing = b"theta_deg,antenna,phase_error_rad\n0.0,0,0.0\n";
        // single angle, single antenna: table constructor requires >= 2 each
        assert!(read_error_table_csv(&missing[..]).is_err());
        let dup = b"theta_deg,antenna,phase_error_rad\n0.0,1,0.1\n0.0,1,0.2\n";
        assert!(read_error_table_csv(&dup[..]).is_err());
        let gap = b"theta_deg,antenna,phase_error_rad\n0.0,0,0.0\n0.0,2,0.5\n";
        assert!(read_error_table_csv(&gap[..]).is_err());
    }

    #[test]
    fn pe_and_direct_run_on_the_raw_grid_while_em_runs_gated() {
        let cfg = default_cfg();
        let geom = geom4();
        let pipeline = CalibrationPipeline::new(&cfg, &geom, PipelineConfig::default()).unwrap();
        assert_eq!(pipeline.reduced_config().num_subcarriers, 64);
        assert_eq!(pipeline.waveform().num_subcarriers, 1632);
        // the EM search window covers the guarded coverage delay
        let (lo, hi) = pipeline.em_config().delay_search_window_s;
        assert_eq!(lo, 0.0);
        assert!(hi >= 100.0 / crate::types::SPEED_OF_LIGHT_M_S);
    }
}
