//! Shared domain types: waveform numerology, array geometry, ground-truth
//! phase-error tables, CFR measurements and path truth records.
//!
//! Conventions used throughout the crate:
//! * angles are degrees at API boundaries and radians internally,
//! * phases are wrapped to (-pi, pi],
//! * antenna 0 is the phase reference (its error is identically zero),
//! * complex matrices are subcarriers x antennas (M x N).

use ndarray::Array2;
use num_complex::Complex64;
use thiserror::Error;

/// Speed of light in vacuum (m/s), the value shared by every range/delay conversion.
pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

/// Boltzmann constant (J/K) for thermal noise power.
pub const BOLTZMANN_J_PER_K: f64 = 1.380_649e-23;

/// Reference temperature T_0 (K) for the thermal noise model.
pub const REFERENCE_TEMPERATURE_K: f64 = 290.0;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("angle {angle_deg} deg out of range ({context})")]
    AngleOutOfRange { angle_deg: f64, context: String },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// OFDM/UL-SRS numerology for one measurement grid.
///
/// `num_subcarriers` counts the tones actually occupied by the sounding
/// signal; `comb_factor` widens the spacing between occupied tones (comb-two
/// transmits every other subcarrier of the underlying resource grid, doubling
/// the effective spacing). Tone m (1-based) sits at
/// `carrier_hz + (m - M/2) * subcarrier_spacing_hz * comb_factor`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformConfig {
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub num_subcarriers: usize,
    pub comb_factor: usize,
    pub bandwidth_hz: f64,
}

impl WaveformConfig {
    pub fn new(
        carrier_hz: f64,
        subcarrier_spacing_hz: f64,
        num_subcarriers: usize,
        comb_factor: usize,
        bandwidth_hz: f64,
    ) -> Result<Self> {
        let cfg = WaveformConfig {
            carrier_hz,
            subcarrier_spacing_hz,
            num_subcarriers,
            comb_factor,
            bandwidth_hz,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_hz.is_finite() && self.carrier_hz > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "carrier_hz must be positive, got {}",
                self.carrier_hz
            )));
        }
        if !(self.subcarrier_spacing_hz.is_finite() && self.subcarrier_spacing_hz > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "subcarrier_spacing_hz must be positive, got {}",
                self.subcarrier_spacing_hz
            )));
        }
        if self.num_subcarriers < 2 {
            return Err(Error::InvalidConfig(format!(
                "num_subcarriers must be at least 2, got {}",
                self.num_subcarriers
            )));
        }
        if self.comb_factor < 1 {
            return Err(Error::InvalidConfig(
                "comb_factor must be at least 1".into(),
            ));
        }
        if !(self.bandwidth_hz.is_finite() && self.bandwidth_hz > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "bandwidth_hz must be positive, got {}",
                self.bandwidth_hz
            )));
        }
        let occupied = self.num_subcarriers as f64
            * self.subcarrier_spacing_hz
            * self.comb_factor as f64;
        if self.bandwidth_hz > occupied {
            return Err(Error::InvalidConfig(format!(
                "bandwidth_hz {} exceeds num_subcarriers * subcarrier_spacing_hz * comb_factor = {}",
                self.bandwidth_hz, occupied
            )));
        }
        Ok(())
    }

    /// Spacing between occupied tones: subcarrier spacing times comb factor.
    pub fn effective_spacing_hz(&self) -> f64 {
        self.subcarrier_spacing_hz * self.comb_factor as f64
    }

    /// Total span of the occupied tones; sets the delay resolution.
    pub fn occupied_bandwidth_hz(&self) -> f64 {
        self.num_subcarriers as f64 * self.effective_spacing_hz()
    }

    /// Frequency of tone `idx` (0-based). Tone m = idx+1 (1-based) sits at
    /// carrier + (m - M/2) * effective spacing, so for even M the tone at
    /// index M/2 - 1 is exactly the carrier.
    pub fn tone_frequency_hz(&self, idx: usize) -> f64 {
        let m = (idx + 1) as f64;
        let half = self.num_subcarriers as f64 / 2.0;
        self.carrier_hz + (m - half) * self.effective_spacing_hz()
    }

    /// 0-based row index of the tone closest to the carrier frequency
    /// (exactly at the carrier when the tone count is even).
    pub fn center_row(&self) -> usize {
        let m = self.num_subcarriers;
        if m % 2 == 0 {
            m / 2 - 1
        } else {
            m / 2
        }
    }

    /// Delay range representable without aliasing on this grid.
    pub fn unambiguous_delay_s(&self) -> f64 {
        1.0 / self.effective_spacing_hz()
    }
}

/// Uniform or arbitrary linear array along one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    pub element_positions_m: Vec<f64>,
    pub wavelength_m: f64,
}

impl ArrayGeometry {
    pub fn new(element_positions_m: Vec<f64>, wavelength_m: f64) -> Result<Self> {
        if element_positions_m.len() < 2 {
            return Err(Error::InvalidConfig(
                "array needs at least 2 elements".into(),
            ));
        }
        if element_positions_m.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidConfig(
                "element positions must be finite".into(),
            ));
        }
        if element_positions_m.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "element positions must be strictly increasing".into(),
            ));
        }
        if !(wavelength_m.is_finite() && wavelength_m > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "wavelength_m must be positive, got {wavelength_m}"
            )));
        }
        Ok(ArrayGeometry {
            element_positions_m,
            wavelength_m,
        })
    }

    /// Uniform linear array with the given element spacing.
    pub fn ula(num_elements: usize, spacing_m: f64, wavelength_m: f64) -> Result<Self> {
        if num_elements < 2 {
            return Err(Error::InvalidConfig(
                "array needs at least 2 elements".into(),
            ));
        }
        if !(spacing_m.is_finite() && spacing_m > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "element spacing must be positive, got {spacing_m}"
            )));
        }
        let positions = (0..num_elements).map(|n| n as f64 * spacing_m).collect();
        ArrayGeometry::new(positions, wavelength_m)
    }

    /// Half-wavelength ULA for the given carrier (the default geometry when
    /// no explicit spacing is configured).
    pub fn half_wavelength_ula(num_elements: usize, carrier_hz: f64) -> Result<Self> {
        if !(carrier_hz.is_finite() && carrier_hz > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "carrier_hz must be positive, got {carrier_hz}"
            )));
        }
        let lambda = SPEED_OF_LIGHT_M_S / carrier_hz;
        ArrayGeometry::ula(num_elements, lambda / 2.0, lambda)
    }

    pub fn num_elements(&self) -> usize {
        self.element_positions_m.len()
    }
}

/// Ground-truth direction-dependent phase errors phi_n(theta_k), sampled on a
/// strictly increasing angle grid. Antenna 0 is the reference and its column
/// is identically zero. Values between samples are linearly interpolated; the
/// table never extrapolates.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseErrorTable {
    pub sample_angles_deg: Vec<f64>,
    /// K x N matrix, entry (k, n) = phi_n(theta_k) in radians.
    pub phase_errors_rad: Array2<f64>,
}

impl PhaseErrorTable {
    pub fn new(sample_angles_deg: Vec<f64>, phase_errors_rad: Array2<f64>) -> Result<Self> {
        if sample_angles_deg.len() < 2 {
            return Err(Error::InvalidConfig(
                "phase error table needs at least 2 sample angles".into(),
            ));
        }
        if sample_angles_deg.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidConfig(
                "phase error table angles must be finite".into(),
            ));
        }
        if sample_angles_deg
            .iter()
            .any(|&a| a <= -90.0 || a >= 90.0)
        {
            return Err(Error::InvalidConfig(
                "phase error table angles must lie inside (-90, 90) deg".into(),
            ));
        }
        if sample_angles_deg.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "phase error table angles must be strictly increasing".into(),
            ));
        }
        if phase_errors_rad.nrows() != sample_angles_deg.len() {
            return Err(Error::InvalidConfig(format!(
                "phase error table has {} rows but {} sample angles",
                phase_errors_rad.nrows(),
                sample_angles_deg.len()
            )));
        }
        if phase_errors_rad.ncols() < 2 {
            return Err(Error::InvalidConfig(
                "phase error table needs at least 2 antenna columns".into(),
            ));
        }
        if phase_errors_rad.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "phase error table values must be finite".into(),
            ));
        }
        if phase_errors_rad.column(0).iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidConfig(
                "reference antenna (column 0) must have zero phase error".into(),
            ));
        }
        Ok(PhaseErrorTable {
            sample_angles_deg,
            phase_errors_rad,
        })
    }

    /// All-zero table over the given angles (an error-free array).
    pub fn zero(sample_angles_deg: Vec<f64>, num_antennas: usize) -> Result<Self> {
        let k = sample_angles_deg.len();
        PhaseErrorTable::new(sample_angles_deg, Array2::zeros((k, num_antennas)))
    }

    pub fn num_antennas(&self) -> usize {
        self.phase_errors_rad.ncols()
    }

    /// Angular span covered by the table, inclusive at both ends.
    pub fn span_deg(&self) -> (f64, f64) {
        (
            self.sample_angles_deg[0],
            *self.sample_angles_deg.last().unwrap(),
        )
    }

    /// Linearly interpolated phase error of `antenna` at `theta_deg`.
    /// Errors outside the sampled span: ground truth is never extrapolated.
    pub fn phase_at(&self, antenna: usize, theta_deg: f64) -> Result<f64> {
        let (lo, hi) = self.segment(theta_deg)?;
        if lo == hi {
            return Ok(self.phase_errors_rad[(lo, antenna)]);
        }
        let a0 = self.sample_angles_deg[lo];
        let a1 = self.sample_angles_deg[hi];
        let t = (theta_deg - a0) / (a1 - a0);
        let p0 = self.phase_errors_rad[(lo, antenna)];
        let p1 = self.phase_errors_rad[(hi, antenna)];
        Ok(p0 + t * (p1 - p0))
    }

    fn segment(&self, theta_deg: f64) -> Result<(usize, usize)> {
        let (min, max) = self.span_deg();
        if !theta_deg.is_finite() || theta_deg < min || theta_deg > max {
            return Err(Error::AngleOutOfRange {
                angle_deg: theta_deg,
                context: format!("phase error table spans [{min}, {max}] deg"),
            });
        }
        let angles = &self.sample_angles_deg;
        match angles.binary_search_by(|a| a.partial_cmp(&theta_deg).unwrap()) {
            Ok(i) => Ok((i, i)),
            Err(i) => Ok((i - 1, i)),
        }
    }
}

/// One M x N channel frequency response snapshot plus its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CfrMeasurement {
    /// Subcarriers x antennas complex matrix H.
    pub values: Array2<Complex64>,
    pub cpp_index: usize,
    pub symbol_index: usize,
    /// Per-entry noise variance sigma_w^2 in watts (0 for noiseless synthesis).
    pub noise_variance: f64,
}

impl CfrMeasurement {
    pub fn new(
        values: Array2<Complex64>,
        cpp_index: usize,
        symbol_index: usize,
        noise_variance: f64,
    ) -> Result<Self> {
        if values.nrows() < 2 || values.ncols() < 2 {
            return Err(Error::InvalidConfig(format!(
                "CFR must be at least 2x2, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if !(noise_variance.is_finite() && noise_variance >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise_variance must be finite and non-negative, got {noise_variance}"
            )));
        }
        Ok(CfrMeasurement {
            values,
            cpp_index,
            symbol_index,
            noise_variance,
        })
    }

    pub fn num_subcarriers(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_antennas(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.values
            .iter()
            .all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Ground-truth multipath parameters for one synthesized measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTruth {
    pub doas_deg: Vec<f64>,
    pub delays_s: Vec<f64>,
    pub complex_gains: Vec<Complex64>,
    pub los_index: usize,
}

impl PathTruth {
    pub fn new(
        doas_deg: Vec<f64>,
        delays_s: Vec<f64>,
        complex_gains: Vec<Complex64>,
        los_index: usize,
    ) -> Result<Self> {
        let l = doas_deg.len();
        if l == 0 {
            return Err(Error::InvalidConfig("path list must be non-empty".into()));
        }
        if delays_s.len() != l || complex_gains.len() != l {
            return Err(Error::InvalidConfig(format!(
                "path lists must share one length, got {l}/{}/{}",
                delays_s.len(),
                complex_gains.len()
            )));
        }
        if delays_s.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidConfig(
                "path delays must be finite and non-negative".into(),
            ));
        }
        if los_index >= l {
            return Err(Error::InvalidConfig(format!(
                "los_index {los_index} out of range for {l} paths"
            )));
        }
        let min_delay = delays_s.iter().cloned().fold(f64::INFINITY, f64::min);
        if delays_s[los_index] != min_delay {
            return Err(Error::InvalidConfig(
                "LOS path must have the smallest delay".into(),
            ));
        }
        Ok(PathTruth {
            doas_deg,
            delays_s,
            complex_gains,
            los_index,
        })
    }

    pub fn num_paths(&self) -> usize {
        self.doas_deg.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_fixture() -> PhaseErrorTable {
        let angles = vec![-60.0, 0.0, 60.0];
        let mut m = Array2::zeros((3, 3));
        m[(0, 1)] = 0.2;
        m[(1, 1)] = 0.4;
        m[(2, 1)] = -0.4;
        m[(0, 2)] = -0.1;
        m[(1, 2)] = 0.1;
        m[(2, 2)] = 0.3;
        PhaseErrorTable::new(angles, m).unwrap()
    }

    #[test]
    fn waveform_rejects_inconsistent_bandwidth() {
        let err = WaveformConfig::new(4.85e9, 30e3, 1632, 2, 100e6).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
        // occupied span is 1632 * 60 kHz = 97.92 MHz, so that bandwidth is fine
        WaveformConfig::new(4.85e9, 30e3, 1632, 2, 97.92e6).unwrap();
    }

    #[test]
    fn tone_frequencies_center_on_carrier() {
        let cfg = WaveformConfig::new(4.85e9, 30e3, 1632, 2, 97.92e6).unwrap();
        assert_eq!(cfg.effective_spacing_hz(), 60e3);
        // 1-based tone M/2 = index M/2 - 1 sits exactly at the carrier
        assert_eq!(cfg.tone_frequency_hz(cfg.center_row()), 4.85e9);
        let lowest = cfg.tone_frequency_hz(0);
        let highest = cfg.tone_frequency_hz(cfg.num_subcarriers - 1);
        assert_eq!(highest - lowest, (1632.0 - 1.0) * 60e3);
        assert_eq!(highest - 4.85e9, 816.0 * 60e3);
    }

    #[test]
    fn geometry_validates_ordering() {
        assert!(ArrayGeometry::new(vec![0.0, 0.0], 0.06).is_err());
        assert!(ArrayGeometry::new(vec![0.1, 0.0], 0.06).is_err());
        let g = ArrayGeometry::half_wavelength_ula(4, 4.85e9).unwrap();
        assert_eq!(g.num_elements(), 4);
        let lambda = SPEED_OF_LIGHT_M_S / 4.85e9;
        assert!((g.element_positions_m[3] - 1.5 * lambda).abs() < 1e-15);
    }

    #[test]
    fn phase_table_requires_zero_reference_column() {
        let angles = vec![-10.0, 10.0];
        let mut m = Array2::zeros((2, 2));
        m[(0, 0)] = 1e-3;
        assert!(PhaseErrorTable::new(angles, m).is_err());
    }

    #[test]
    fn phase_table_interpolates_linearly() {
        let t = table_fixture();
        // sample-point identity
        assert_eq!(t.phase_at(1, 0.0).unwrap(), 0.4);
        // midpoint between samples is the arithmetic mean of the neighbors
        let mid = t.phase_at(1, 30.0).unwrap();
        assert!((mid - 0.5 * (0.4 - 0.4)).abs() < 1e-15);
        let mid2 = t.phase_at(2, -30.0).unwrap();
        assert!((mid2 - 0.0).abs() < 1e-15);
        // no extrapolation
        assert!(t.phase_at(1, 61.0).is_err());
        assert!(t.phase_at(1, -60.001).is_err());
    }

    #[test]
    fn path_truth_requires_los_shortest() {
        let gains = vec![Complex64::new(1.0, 0.0); 2];
        assert!(PathTruth::new(vec![0.0, 10.0], vec![2e-8, 1e-8], gains.clone(), 0).is_err());
        let p = PathTruth::new(vec![0.0, 10.0], vec![1e-8, 2e-8], gains, 0).unwrap();
        assert_eq!(p.num_paths(), 2);
    }
}
