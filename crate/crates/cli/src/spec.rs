//! Experiment configuration: TOML schema, defaults, and full validation that
//! reports every violation instead of stopping at the first.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use arraycal_core::pipeline::{read_error_table_csv, synthetic_error_table, CalibrationMethod};
use arraycal_core::{
    ArrayGeometry, PhaseErrorTable, PipelineConfig, ScenarioConfig, WaveformConfig,
};

/// How the ground-truth phase-error table is obtained.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum PhaseErrorSource {
    /// Seeded smooth per-antenna curves with peak magnitude up to
    /// `max_error_deg` (the in-repo default).
    Synthetic {
        max_error_deg: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// A perfectly ideal array (zero error everywhere).
    None,
    /// Load from CSV `theta_deg,antenna,phase_error_rad`.
    Csv { path: PathBuf },
}

impl Default for PhaseErrorSource {
    fn default() -> Self {
        PhaseErrorSource::Synthetic {
            max_error_deg: 20.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawWaveform {
    #[serde(default = "d_carrier")]
    pub carrier_hz: f64,
    #[serde(default = "d_spacing")]
    pub subcarrier_spacing_hz: f64,
    #[serde(default = "d_subcarriers")]
    pub num_subcarriers: usize,
    #[serde(default = "d_comb")]
    pub comb_factor: usize,
    #[serde(default = "d_bandwidth")]
    pub bandwidth_hz: f64,
}

fn d_carrier() -> f64 {
    4.85e9
}
fn d_spacing() -> f64 {
    30e3
}
fn d_subcarriers() -> usize {
    1632
}
fn d_comb() -> usize {
    2
}
fn d_bandwidth() -> f64 {
    97.92e6
}

impl Default for RawWaveform {
    fn default() -> Self {
        RawWaveform {
            carrier_hz: d_carrier(),
            subcarrier_spacing_hz: d_spacing(),
            num_subcarriers: d_subcarriers(),
            comb_factor: d_comb(),
            bandwidth_hz: d_bandwidth(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawArray {
    #[serde(default = "d_antennas")]
    pub num_antennas: usize,
    /// Element pitch; omitted = half the carrier wavelength.
    #[serde(default)]
    pub element_spacing_m: Option<f64>,
    #[serde(default)]
    pub phase_errors: PhaseErrorSource,
}

fn d_antennas() -> usize {
    4
}

impl Default for RawArray {
    fn default() -> Self {
        RawArray {
            num_antennas: d_antennas(),
            element_spacing_m: None,
            phase_errors: PhaseErrorSource::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawScenario {
    #[serde(default = "d_k_factors")]
    pub k_factors_db: Vec<f64>,
    #[serde(default = "d_nlos")]
    pub num_nlos_paths: usize,
    #[serde(default = "d_spread")]
    pub excess_delay_spread_ns: f64,
    #[serde(default = "d_tx_power")]
    pub tx_power_w: f64,
    #[serde(default = "d_noise_figure")]
    pub noise_figure_db: f64,
    #[serde(default)]
    pub noiseless: bool,
    #[serde(default = "d_cpp_count")]
    pub cpp_count: usize,
    #[serde(default = "d_cpp_radius")]
    pub cpp_radius_m: f64,
    #[serde(default = "d_fov")]
    pub fov_deg: [f64; 2],
}

fn d_k_factors() -> Vec<f64> {
    vec![0.0, 3.0, 7.0]
}
fn d_nlos() -> usize {
    6
}
fn d_spread() -> f64 {
    80.0
}
fn d_tx_power() -> f64 {
    0.2
}
fn d_noise_figure() -> f64 {
    5.0
}
fn d_cpp_count() -> usize {
    25
}
fn d_cpp_radius() -> f64 {
    10.0
}
fn d_fov() -> [f64; 2] {
    [-60.0, 60.0]
}

impl Default for RawScenario {
    fn default() -> Self {
        RawScenario {
            k_factors_db: d_k_factors(),
            num_nlos_paths: d_nlos(),
            excess_delay_spread_ns: d_spread(),
            tx_power_w: d_tx_power(),
            noise_figure_db: d_noise_figure(),
            noiseless: false,
            cpp_count: d_cpp_count(),
            cpp_radius_m: d_cpp_radius(),
            fov_deg: d_fov(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCalibration {
    /// Symbol-accumulation sweep (Q values).
    #[serde(default = "d_symbols")]
    pub symbols: Vec<usize>,
    /// Measured symbols per CPP per K-factor; each Q regroups this pool.
    #[serde(default = "d_trials")]
    pub trials: usize,
    #[serde(default = "d_methods")]
    pub methods: Vec<String>,
}

fn d_symbols() -> Vec<usize> {
    vec![1, 4, 16, 64]
}
fn d_trials() -> usize {
    200
}
fn d_methods() -> Vec<String> {
    vec!["em".into(), "pe".into(), "direct".into()]
}

impl Default for RawCalibration {
    fn default() -> Self {
        RawCalibration {
            symbols: d_symbols(),
            trials: d_trials(),
            methods: d_methods(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPipeline {
    #[serde(default = "d_coverage")]
    pub coverage_m: f64,
    #[serde(default = "d_max_paths")]
    pub max_paths: usize,
    #[serde(default = "d_los_threshold")]
    pub los_gain_threshold: f64,
    #[serde(default = "d_hampel_window")]
    pub hampel_window: usize,
    #[serde(default = "d_hampel_sigma")]
    pub hampel_n_sigma: f64,
    #[serde(default = "d_lowess_span")]
    pub lowess_span: f64,
}

fn d_coverage() -> f64 {
    100.0
}
fn d_max_paths() -> usize {
    8
}
fn d_los_threshold() -> f64 {
    0.05
}
fn d_hampel_window() -> usize {
    7
}
fn d_hampel_sigma() -> f64 {
    3.0
}
fn d_lowess_span() -> f64 {
    0.35
}

impl Default for RawPipeline {
    fn default() -> Self {
        RawPipeline {
            coverage_m: d_coverage(),
            max_paths: d_max_paths(),
            los_gain_threshold: d_los_threshold(),
            hampel_window: d_hampel_window(),
            hampel_n_sigma: d_hampel_sigma(),
            lowess_span: d_lowess_span(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDoa {
    /// Monte-Carlo trials per K-factor (split evenly across angular bins).
    #[serde(default = "d_doa_trials")]
    pub trials: usize,
    /// Symbols per CPP used to build each method's manifold beforehand.
    #[serde(default = "d_doa_cal_symbols")]
    pub calibration_symbols: usize,
    #[serde(default = "d_grid_step")]
    pub grid_step_deg: f64,
    /// Upper bound of the uniform LOS time-of-arrival draw.
    #[serde(default = "d_toa_max")]
    pub toa_max_ns: f64,
}

fn d_doa_trials() -> usize {
    500
}
fn d_doa_cal_symbols() -> usize {
    64
}
fn d_grid_step() -> f64 {
    0.1
}
fn d_toa_max() -> f64 {
    333.33
}

impl Default for RawDoa {
    fn default() -> Self {
        RawDoa {
            trials: d_doa_trials(),
            calibration_symbols: d_doa_cal_symbols(),
            grid_step_deg: d_grid_step(),
            toa_max_ns: d_toa_max(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawOutput {
    #[serde(default = "d_out_dir")]
    pub dir: PathBuf,
}

fn d_out_dir() -> PathBuf {
    PathBuf::from("results")
}

impl Default for RawOutput {
    fn default() -> Self {
        RawOutput { dir: d_out_dir() }
    }
}

/// The TOML document as written; every section and field is optional and
/// falls back to the in-repo defaults.
#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawSpec {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub waveform: RawWaveform,
    #[serde(default)]
    pub array: RawArray,
    #[serde(default)]
    pub scenario: RawScenario,
    #[serde(default)]
    pub calibration: RawCalibration,
    #[serde(default)]
    pub pipeline: RawPipeline,
    #[serde(default)]
    pub doa: RawDoa,
    #[serde(default)]
    pub output: RawOutput,
}

/// A fully validated experiment description with domain objects constructed.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub waveform: WaveformConfig,
    pub geometry: ArrayGeometry,
    pub error_table: PhaseErrorTable,
    pub k_factors_db: Vec<f64>,
    pub scenario: RawScenario,
    pub symbols: Vec<usize>,
    pub trials: usize,
    pub methods: Vec<CalibrationMethod>,
    pub pipeline: PipelineConfig,
    pub doa: RawDoa,
    pub output_dir: PathBuf,
}

impl ExperimentSpec {
    /// Instantiate the scenario for one K-factor. All scenarios of a spec
    /// share the seed, so RNG streams are keyed by (CPP, symbol) alone and
    /// paired comparisons across methods see identical channels.
    pub fn scenario(&self, k_factor_db: f64) -> arraycal_core::Result<ScenarioConfig> {
        let mut scn = ScenarioConfig::arc(
            k_factor_db,
            self.scenario.cpp_count,
            self.scenario.cpp_radius_m,
            (self.scenario.fov_deg[0], self.scenario.fov_deg[1]),
            self.seed,
        )?;
        scn.num_nlos_paths = self.scenario.num_nlos_paths;
        scn.excess_delay_spread_s = self.scenario.excess_delay_spread_ns * 1e-9;
        scn.tx_power_w = self.scenario.tx_power_w;
        scn.noise_figure_db = self.scenario.noise_figure_db;
        scn.noiseless = self.scenario.noiseless;
        scn.validate()?;
        Ok(scn)
    }

    /// The CPP bearing angles, ascending.
    pub fn cpp_angles_deg(&self) -> arraycal_core::Result<Vec<f64>> {
        let scn = self.scenario(self.k_factors_db[0])?;
        (0..self.scenario.cpp_count)
            .map(|k| scn.cpp_bearing_range(k).map(|(theta, _)| theta))
            .collect()
    }
}

/// Validation outcome: either the constructed spec plus non-fatal warnings,
/// or the full list of violations.
#[derive(Debug)]
pub struct Validated {
    pub spec: ExperimentSpec,
    pub warnings: Vec<String>,
}

/// Parse a TOML config file without validating it (callers may apply
/// command-line overrides first).
pub fn load_raw(path: &Path) -> Result<RawSpec, Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| vec![format!("cannot read {}: {e}", path.display())])?;
    toml::from_str(&text).map_err(|e| vec![format!("{}: {e}", path.display())])
}

pub fn load_spec(path: &Path) -> Result<Validated, Vec<String>> {
    validate(load_raw(path)?, path.parent())
}

/// Full structural and invariant validation; collects every violation.
/// Relative CSV paths resolve against `base_dir` (the config file's folder).
pub fn validate(raw: RawSpec, base_dir: Option<&Path>) -> Result<Validated, Vec<String>> {
    let mut violations: Vec<String> = Vec::new();
    let mut warnings: Vec<String> = Vec::new();

    let seed = match raw.seed {
        Some(s) => s,
        None => {
            warnings.push("seed missing; defaulting to 0".into());
            0
        }
    };

    let waveform = WaveformConfig::new(
        raw.waveform.carrier_hz,
        raw.waveform.subcarrier_spacing_hz,
        raw.waveform.num_subcarriers,
        raw.waveform.comb_factor,
        raw.waveform.bandwidth_hz,
    )
    .map_err(|e| violations.push(format!("waveform: {e}")))
    .ok();

    if raw.array.num_antennas < 2 {
        violations.push(format!(
            "array: need at least 2 antennas, got {}",
            raw.array.num_antennas
        ));
    }
    if let Some(s) = raw.array.element_spacing_m {
        if !(s.is_finite() && s > 0.0) {
            violations.push(format!("array: element_spacing_m must be positive, got {s}"));
        }
    }

    let geometry = waveform.as_ref().and_then(|wf| {
        let wavelength = arraycal_core::SPEED_OF_LIGHT_M_S / wf.carrier_hz;
        let spacing = raw.array.element_spacing_m.unwrap_or(wavelength / 2.0);
        ArrayGeometry::ula(raw.array.num_antennas, spacing, wavelength)
            .map_err(|e| violations.push(format!("array: {e}")))
            .ok()
    });

    // scenario field checks run even when the table construction is blocked
    let scn = &raw.scenario;
    if scn.k_factors_db.is_empty() {
        violations.push("scenario: k_factors_db must list at least one K-factor".into());
    }
    for k in &scn.k_factors_db {
        if !k.is_finite() {
            violations.push(format!("scenario: non-finite K-factor {k}"));
        }
    }
    if !(scn.fov_deg[1] > scn.fov_deg[0]
        && scn.fov_deg[0] > -90.0
        && scn.fov_deg[1] < 90.0)
    {
        violations.push(format!(
            "scenario: fov_deg must satisfy -90 < lo < hi < 90, got [{}, {}]",
            scn.fov_deg[0], scn.fov_deg[1]
        ));
    }
    if scn.cpp_count < 4 {
        violations.push(format!(
            "scenario: need at least 4 CPPs for curve fitting, got {}",
            scn.cpp_count
        ));
    }
    if !(scn.cpp_radius_m.is_finite() && scn.cpp_radius_m > 0.0) {
        violations.push(format!(
            "scenario: cpp_radius_m must be positive, got {}",
            scn.cpp_radius_m
        ));
    }
    if !(scn.excess_delay_spread_ns.is_finite() && scn.excess_delay_spread_ns > 0.0) {
        violations.push(format!(
            "scenario: excess_delay_spread_ns must be positive, got {}",
            scn.excess_delay_spread_ns
        ));
    }
    if !(scn.tx_power_w.is_finite() && scn.tx_power_w > 0.0) {
        violations.push(format!(
            "scenario: tx_power_w must be positive, got {}",
            scn.tx_power_w
        ));
    }
    if !scn.noise_figure_db.is_finite() {
        violations.push("scenario: noise_figure_db must be finite".into());
    }

    let error_table = match (&raw.array.phase_errors, raw.array.num_antennas >= 2) {
        (_, false) => None,
        (PhaseErrorSource::Synthetic { max_error_deg, seed: tseed }, true) => {
            synthetic_error_table(
                raw.array.num_antennas,
                *max_error_deg,
                (scn.fov_deg[0], scn.fov_deg[1]),
                1.0,
                tseed.unwrap_or(seed ^ 0x70ab1e),
            )
            .map_err(|e| violations.push(format!("array.phase_errors: {e}")))
            .ok()
        }
        (PhaseErrorSource::None, true) => {
            let angles = vec![
                scn.fov_deg[0],
                0.5 * (scn.fov_deg[0] + scn.fov_deg[1]),
                scn.fov_deg[1],
            ];
            PhaseErrorTable::zero(angles, raw.array.num_antennas)
                .map_err(|e| violations.push(format!("array.phase_errors: {e}")))
                .ok()
        }
        (PhaseErrorSource::Csv { path }, true) => {
            let resolved = if path.is_relative() {
                base_dir.map(|b| b.join(path)).unwrap_or_else(|| path.clone())
            } else {
                path.clone()
            };
            File::open(&resolved)
                .map_err(|e| {
                    violations.push(format!(
                        "array.phase_errors: cannot open {}: {e}",
                        resolved.display()
                    ))
                })
                .ok()
                .and_then(|f| {
                    read_error_table_csv(BufReader::new(f))
                        .map_err(|e| violations.push(format!("array.phase_errors: {e}")))
                        .ok()
                })
                .and_then(|t| {
                    if t.num_antennas() != raw.array.num_antennas {
                        violations.push(format!(
                            "array.phase_errors: table covers {} antennas, array has {}",
                            t.num_antennas(),
                            raw.array.num_antennas
                        ));
                        None
                    } else {
                        Some(t)
                    }
                })
        }
    };

    if raw.calibration.trials < 1 {
        violations.push("calibration: trials must be at least 1".into());
    }
    if raw.calibration.symbols.is_empty() {
        violations.push("calibration: symbols must list at least one Q value".into());
    }
    for &q in &raw.calibration.symbols {
        if q < 1 {
            violations.push("calibration: symbol counts must be at least 1".into());
        } else if q > raw.calibration.trials {
            violations.push(format!(
                "calibration: Q = {q} exceeds the measured pool of {} symbols",
                raw.calibration.trials
            ));
        }
    }
    if raw.calibration.methods.is_empty() {
        violations.push("calibration: at least one method required".into());
    }
    let mut methods = Vec::new();
    for m in &raw.calibration.methods {
        match m.parse::<CalibrationMethod>() {
            Ok(parsed) => {
                if methods.contains(&parsed) {
                    warnings.push(format!("calibration: method '{m}' listed twice; ignoring"));
                } else {
                    methods.push(parsed);
                }
            }
            Err(e) => violations.push(format!("calibration: {e}")),
        }
    }

    let pipeline = PipelineConfig {
        coverage_m: raw.pipeline.coverage_m,
        max_paths: raw.pipeline.max_paths,
        los_gain_threshold: raw.pipeline.los_gain_threshold,
        hampel_window: raw.pipeline.hampel_window,
        hampel_n_sigma: raw.pipeline.hampel_n_sigma,
        lowess_span: raw.pipeline.lowess_span,
    };
    if let Err(e) = pipeline.validate() {
        violations.push(format!("pipeline: {e}"));
    }
    if let Some(wf) = &waveform {
        // the gate must fit inside the unambiguous delay range
        let gate_delay = raw.pipeline.coverage_m / arraycal_core::SPEED_OF_LIGHT_M_S * 1.1;
        if gate_delay > wf.unambiguous_delay_s() {
            violations.push(format!(
                "pipeline: coverage_m {} needs a gate of {:.3e} s, beyond the grid's unambiguous range {:.3e} s",
                raw.pipeline.coverage_m,
                gate_delay,
                wf.unambiguous_delay_s()
            ));
        }
    }

    if raw.doa.trials < 1 {
        violations.push("doa: trials must be at least 1".into());
    }
    if raw.doa.calibration_symbols < 1 {
        violations.push("doa: calibration_symbols must be at least 1".into());
    }
    if !(raw.doa.grid_step_deg.is_finite() && raw.doa.grid_step_deg > 0.0) {
        violations.push(format!(
            "doa: grid_step_deg must be positive, got {}",
            raw.doa.grid_step_deg
        ));
    }
    if !(raw.doa.toa_max_ns.is_finite() && raw.doa.toa_max_ns > 0.0) {
        violations.push(format!(
            "doa: toa_max_ns must be positive, got {}",
            raw.doa.toa_max_ns
        ));
    }

    if raw.output.dir.as_os_str().is_empty() {
        violations.push("output: dir must not be empty".into());
    }

    match (waveform, geometry, error_table) {
        (Some(waveform), Some(geometry), Some(error_table)) if violations.is_empty() => {
            Ok(Validated {
                spec: ExperimentSpec {
                    seed,
                    waveform,
                    geometry,
                    error_table,
                    k_factors_db: raw.scenario.k_factors_db.clone(),
                    scenario: raw.scenario,
                    symbols: raw.calibration.symbols,
                    trials: raw.calibration.trials,
                    methods,
                    pipeline,
                    doa: raw.doa,
                    output_dir: raw.output.dir,
                },
                warnings,
            })
        }
        _ => Err(violations),
    }
}

/// Check that the output directory can be created and written to. Kept out
/// of [`validate`] so pure validation has no side effects; `validate` and
/// the run verbs call it explicitly before any compute.
pub fn check_output_writable(dir: &Path) -> Result<(), String> {
    std::fs::create_dir_all(dir)
        .map_err(|e| format!("output: cannot create {}: {e}", dir.display()))?;
    let probe = dir.join(".write_probe");
    std::fs::write(&probe, b"probe")
        .map_err(|e| format!("output: cannot write into {}: {e}", dir.display()))?;
    let _ = std::fs::remove_file(&probe);
    Ok(())
}
