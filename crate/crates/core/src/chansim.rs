//! Multipath channel simulator: scenario/noise models, per-measurement path
//! drawing and CFR synthesis.
//!
//! The channel seen from one calibration pilot position (CPP) is a Ricean
//! mixture: a geometrically exact line-of-sight path plus `num_nlos_paths`
//! random reflections with exponential excess delays, uniform DOAs over the
//! field of view and circularly-symmetric Gaussian gains scaled to the
//! configured K-factor. Every measurement draws from its own deterministic
//! RNG stream keyed by (seed, cpp_index, symbol_index), so campaigns are
//! reproducible measurement-by-measurement regardless of evaluation order.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use std::f64::consts::{PI, TAU};
use std::io::Write;

use crate::manifold::{delay_signature, true_steering};
use crate::types::{
    ArrayGeometry, CfrMeasurement, Error, PathTruth, PhaseErrorTable, Result, WaveformConfig,
    BOLTZMANN_J_PER_K, REFERENCE_TEMPERATURE_K, SPEED_OF_LIGHT_M_S,
};

/// Ricean measurement scenario: one radio unit, a set of calibration pilot
/// positions, and the statistics of the multipath channel between them.
/// Positions are 2-D (x, y) in meters; the array sits at `rru_position_m`
/// with its boresight along +x and its elements along the y axis, so a
/// position at bearing beta from the +x axis is seen at DOA beta.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub k_factor_db: f64,
    pub num_nlos_paths: usize,
    pub tx_power_w: f64,
    pub noise_figure_db: f64,
    /// Disable receiver noise entirely (for noiseless reference studies).
    pub noiseless: bool,
    pub rru_position_m: [f64; 2],
    pub cpp_positions_m: Vec<[f64; 2]>,
    /// Mean of the exponential NLOS excess-delay distribution.
    pub excess_delay_spread_s: f64,
    /// Field of view (deg) that NLOS reflections arrive from; must sit
    /// strictly inside (-90, 90).
    pub fov_deg: (f64, f64),
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.k_factor_db.is_finite() {
            return Err(Error::InvalidConfig("k_factor_db must be finite".into()));
        }
        if !(self.tx_power_w.is_finite() && self.tx_power_w > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tx_power_w must be positive, got {}",
                self.tx_power_w
            )));
        }
        if !(self.noise_figure_db.is_finite() && self.noise_figure_db >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise_figure_db must be finite and non-negative, got {}",
                self.noise_figure_db
            )));
        }
        if !(self.excess_delay_spread_s.is_finite() && self.excess_delay_spread_s > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "excess_delay_spread_s must be positive, got {}",
                self.excess_delay_spread_s
            )));
        }
        if self.cpp_positions_m.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one CPP position is required".into(),
            ));
        }
        if self
            .cpp_positions_m
            .iter()
            .any(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(Error::InvalidConfig("CPP positions must be finite".into()));
        }
        let (lo, hi) = self.fov_deg;
        if !(lo.is_finite() && hi.is_finite() && -90.0 < lo && lo < hi && hi < 90.0) {
            return Err(Error::InvalidConfig(format!(
                "fov_deg must satisfy -90 < lo < hi < 90, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }

    /// Reference scenario: `count` CPPs evenly spread on an arc of `radius_m`
    /// around the RRU at the origin, covering the field of view end to end.
    pub fn arc(
        k_factor_db: f64,
        count: usize,
        radius_m: f64,
        fov_deg: (f64, f64),
        seed: u64,
    ) -> Result<Self> {
        if count < 1 {
            return Err(Error::InvalidConfig("need at least one CPP".into()));
        }
        if !(radius_m.is_finite() && radius_m > 0.0) {
            return Err(Error::InvalidConfig("arc radius must be positive".into()));
        }
        let (lo, hi) = fov_deg;
        let cpps = (0..count)
            .map(|k| {
                let theta = if count == 1 {
                    0.5 * (lo + hi)
                } else {
                    lo + (hi - lo) * k as f64 / (count - 1) as f64
                };
                let t = theta * PI / 180.0;
                [radius_m * t.cos(), radius_m * t.sin()]
            })
            .collect();
        let scn = ScenarioConfig {
            k_factor_db,
            num_nlos_paths: 6,
            tx_power_w: 0.2,
            noise_figure_db: 5.0,
            noiseless: false,
            rru_position_m: [0.0, 0.0],
            cpp_positions_m: cpps,
            excess_delay_spread_s: 80e-9,
            fov_deg,
            seed,
        };
        scn.validate()?;
        Ok(scn)
    }

    /// Bearing (deg, from boresight) and range (m) of one CPP as seen by the RRU.
    pub fn cpp_bearing_range(&self, cpp_index: usize) -> Result<(f64, f64)> {
        let cpp = self
            .cpp_positions_m
            .get(cpp_index)
            .ok_or_else(|| Error::InvalidConfig(format!("cpp_index {cpp_index} out of range")))?;
        let dx = cpp[0] - self.rru_position_m[0];
        let dy = cpp[1] - self.rru_position_m[1];
        let r = dx.hypot(dy);
        if r <= 0.0 {
            return Err(Error::Degenerate(
                "CPP coincides with the RRU position".into(),
            ));
        }
        let theta = dy.atan2(dx).to_degrees();
        if dx <= 0.0 || theta.abs() >= 90.0 {
            return Err(Error::Degenerate(format!(
                "CPP {cpp_index} lies outside the array front half-space (bearing {theta:.2} deg)"
            )));
        }
        Ok((theta, r))
    }
}

/// Thermal noise model: per-entry CFR noise power `k_B * T * B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub boltzmann_j_per_k: f64,
    pub temperature_k: f64,
    pub bandwidth_hz: f64,
}

impl NoiseModel {
    /// Thermal floor at the reference temperature T_0 = 290 K.
    pub fn thermal(bandwidth_hz: f64) -> Result<Self> {
        NoiseModel::with_temperature(bandwidth_hz, REFERENCE_TEMPERATURE_K)
    }

    /// Receiver with the given noise figure (dB): the noise figure is folded
    /// in as an equivalent temperature T_0 * 10^(F/10).
    pub fn with_noise_figure(bandwidth_hz: f64, noise_figure_db: f64) -> Result<Self> {
        if !noise_figure_db.is_finite() || noise_figure_db < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "noise figure must be finite and non-negative, got {noise_figure_db}"
            )));
        }
        let t = REFERENCE_TEMPERATURE_K * 10f64.powf(noise_figure_db / 10.0);
        NoiseModel::with_temperature(bandwidth_hz, t)
    }

    fn with_temperature(bandwidth_hz: f64, temperature_k: f64) -> Result<Self> {
        if !(bandwidth_hz.is_finite() && bandwidth_hz > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise bandwidth must be positive, got {bandwidth_hz}"
            )));
        }
        if !(temperature_k.is_finite() && temperature_k > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise temperature must be positive, got {temperature_k}"
            )));
        }
        Ok(NoiseModel {
            boltzmann_j_per_k: BOLTZMANN_J_PER_K,
            temperature_k,
            bandwidth_hz,
        })
    }

    /// Explicitly noise-free receiver for reference studies.
    pub fn disabled(bandwidth_hz: f64) -> Self {
        NoiseModel {
            boltzmann_j_per_k: BOLTZMANN_J_PER_K,
            temperature_k: 0.0,
            bandwidth_hz,
        }
    }

    /// Per-entry noise variance in watts.
    pub fn noise_power_w(&self) -> f64 {
        self.boltzmann_j_per_k * self.temperature_k * self.bandwidth_hz
    }
}

/// Deterministic RNG stream for one (cpp, symbol) measurement.
pub fn measurement_rng(seed: u64, cpp_index: usize, symbol_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((cpp_index as u64) << 32) | (symbol_index as u64 & 0xffff_ffff));
    rng
}

/// Draw the multipath ground truth for a signal whose LOS arrives from
/// `los_doa_deg` at range `los_range_m`. Paths come out sorted by delay with
/// the LOS first (`los_index = 0`).
///
/// Draw order per measurement is frozen for reproducibility: LOS phase, then
/// per NLOS path (delay, DOA, gain re, gain im).
pub fn draw_paths_at(
    scn: &ScenarioConfig,
    cfg: &WaveformConfig,
    los_doa_deg: f64,
    los_range_m: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PathTruth> {
    if !(los_range_m.is_finite() && los_range_m > 0.0) {
        return Err(Error::Degenerate(format!(
            "LOS range must be positive, got {los_range_m}"
        )));
    }
    let lambda = SPEED_OF_LIGHT_M_S / cfg.carrier_hz;
    let los_delay = los_range_m / SPEED_OF_LIGHT_M_S;
    // free-space amplitude: sqrt(P_t) * lambda / (4 pi d)
    let los_amp = scn.tx_power_w.sqrt() * lambda / (4.0 * PI * los_range_m);
    let los_phase = rng.gen_range(0.0..TAU);

    let l = 1 + scn.num_nlos_paths;
    let mut doas = Vec::with_capacity(l);
    let mut delays = Vec::with_capacity(l);
    let mut gains = Vec::with_capacity(l);
    doas.push(los_doa_deg);
    delays.push(los_delay);
    gains.push(Complex64::from_polar(los_amp, los_phase));

    if scn.num_nlos_paths > 0 {
        let excess = Exp::new(1.0 / scn.excess_delay_spread_s)
            .map_err(|e| Error::InvalidConfig(format!("excess delay distribution: {e}")))?;
        // per-path variance so that E[sum |gamma_nlos|^2] / |gamma_los|^2 = 10^(-K/10)
        let nlos_var =
            los_amp * los_amp * 10f64.powf(-scn.k_factor_db / 10.0) / scn.num_nlos_paths as f64;
        let gain_std = (nlos_var / 2.0).sqrt();
        for _ in 0..scn.num_nlos_paths {
            delays.push(los_delay + excess.sample(rng));
            doas.push(rng.gen_range(scn.fov_deg.0..scn.fov_deg.1));
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            gains.push(Complex64::new(gain_std * re, gain_std * im));
        }
    }

    // stable sort keeps the LOS ahead of any zero-excess reflection
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| delays[a].partial_cmp(&delays[b]).unwrap());
    let doas = order.iter().map(|&i| doas[i]).collect();
    let gains = order.iter().map(|&i| gains[i]).collect();
    let delays = order.iter().map(|&i| delays[i]).collect();
    PathTruth::new(doas, delays, gains, 0)
}

/// Draw the multipath ground truth for one CPP of the scenario; LOS DOA and
/// TOA follow exactly from the RRU->CPP geometry.
pub fn draw_paths(
    scn: &ScenarioConfig,
    cfg: &WaveformConfig,
    cpp_index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PathTruth> {
    let (theta, range) = scn.cpp_bearing_range(cpp_index)?;
    draw_paths_at(scn, cfg, theta, range, rng)
}

/// Synthesize one CFR measurement: H = sum_l gamma_l a_tau(tau_l) a_theta^T(theta_l) + W,
/// with W i.i.d. circularly-symmetric Gaussian of per-entry variance
/// `noise.noise_power_w()`. No common symbol rotation is applied here; see
/// [`synthesize_measurement`] for the full per-symbol model.
pub fn synthesize_cfr(
    cfg: &WaveformConfig,
    geom: &ArrayGeometry,
    table: &PhaseErrorTable,
    truth: &PathTruth,
    noise: &NoiseModel,
    cpp_index: usize,
    symbol_index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<CfrMeasurement> {
    let m = cfg.num_subcarriers;
    let n = geom.num_elements();
    let mut values: Array2<Complex64> = Array2::zeros((m, n));
    let mut weighted = vec![Complex64::new(0.0, 0.0); n];
    for l in 0..truth.num_paths() {
        let a_tau = delay_signature(cfg, truth.delays_s[l]);
        let a_theta = true_steering(geom, table, truth.doas_deg[l])?;
        let gamma = truth.complex_gains[l];
        for (w, s) in weighted.iter_mut().zip(a_theta.iter()) {
            *w = gamma * s;
        }
        for (row, &at) in values.outer_iter_mut().zip(a_tau.iter()) {
            let row = row.into_slice().expect("contiguous row");
            for (h, &w) in row.iter_mut().zip(&weighted) {
                *h += at * w;
            }
        }
    }
    let pn = noise.noise_power_w();
    if pn > 0.0 {
        let std = (pn / 2.0).sqrt();
        for h in values.iter_mut() {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *h += Complex64::new(std * re, std * im);
        }
    }
    CfrMeasurement::new(values, cpp_index, symbol_index, pn)
}

fn scenario_noise(scn: &ScenarioConfig, cfg: &WaveformConfig) -> Result<NoiseModel> {
    if scn.noiseless {
        Ok(NoiseModel::disabled(cfg.bandwidth_hz))
    } else {
        NoiseModel::with_noise_figure(cfg.bandwidth_hz, scn.noise_figure_db)
    }
}

/// Synthesize one (cpp, symbol) measurement end to end: deterministic stream
/// RNG, path drawing, CFR synthesis and the random common phase rotation the
/// transmitter imparts on each UL-SRS symbol. Returns the drawn ground truth
/// alongside the measurement.
pub fn synthesize_measurement(
    scn: &ScenarioConfig,
    cfg: &WaveformConfig,
    geom: &ArrayGeometry,
    table: &PhaseErrorTable,
    cpp_index: usize,
    symbol_index: usize,
) -> Result<(PathTruth, CfrMeasurement)> {
    let mut rng = measurement_rng(scn.seed, cpp_index, symbol_index);
    let truth = draw_paths(scn, cfg, cpp_index, &mut rng)?;
    let noise = scenario_noise(scn, cfg)?;
    let mut meas = synthesize_cfr(
        cfg,
        geom,
        table,
        &truth,
        &noise,
        cpp_index,
        symbol_index,
        &mut rng,
    )?;
    let rot = Complex64::cis(rng.gen_range(0.0..TAU));
    meas.values.mapv_inplace(|v| v * rot);
    Ok((truth, meas))
}

/// Like [`synthesize_measurement`] but with an externally chosen LOS
/// geometry (used by DOA evaluation trials, where `cpp_index` keys the RNG
/// stream but the LOS is drawn by the caller).
pub fn synthesize_measurement_at(
    scn: &ScenarioConfig,
    cfg: &WaveformConfig,
    geom: &ArrayGeometry,
    table: &PhaseErrorTable,
    los_doa_deg: f64,
    los_range_m: f64,
    cpp_index: usize,
    symbol_index: usize,
) -> Result<(PathTruth, CfrMeasurement)> {
    let mut rng = measurement_rng(scn.seed, cpp_index, symbol_index);
    let truth = draw_paths_at(scn, cfg, los_doa_deg, los_range_m, &mut rng)?;
    let noise = scenario_noise(scn, cfg)?;
    let mut meas = synthesize_cfr(
        cfg,
        geom,
        table,
        &truth,
        &noise,
        cpp_index,
        symbol_index,
        &mut rng,
    )?;
    let rot = Complex64::cis(rng.gen_range(0.0..TAU));
    meas.values.mapv_inplace(|v| v * rot);
    Ok((truth, meas))
}

/// Run a full measurement campaign: `symbols_per_cpp` UL-SRS symbols from
/// every CPP, ordered by (cpp, symbol). Prefer [`synthesize_measurement`]
/// per (cpp, symbol) pair when the set is too large to hold in memory.
pub fn run_campaign(
    scn: &ScenarioConfig,
    cfg: &WaveformConfig,
    geom: &ArrayGeometry,
    table: &PhaseErrorTable,
    symbols_per_cpp: usize,
) -> Result<Vec<CfrMeasurement>> {
    scn.validate()?;
    cfg.validate()?;
    if symbols_per_cpp == 0 {
        return Err(Error::InvalidConfig(
            "symbols_per_cpp must be at least 1".into(),
        ));
    }
    let mut out = Vec::with_capacity(scn.cpp_positions_m.len() * symbols_per_cpp);
    for k in 0..scn.cpp_positions_m.len() {
        for q in 0..symbols_per_cpp {
            let (_, meas) = synthesize_measurement(scn, cfg, geom, table, k, q)?;
            out.push(meas);
        }
    }
    Ok(out)
}

/// Dump measurements as CSV with schema `cpp,symbol,subcarrier,antenna,re,im`
/// (floats with 9 significant digits).
pub fn write_cfr_csv<W: Write>(out: &mut W, measurements: &[CfrMeasurement]) -> std::io::Result<()> {
    writeln!(out, "cpp,symbol,subcarrier,antenna,re,im")?;
    for meas in measurements {
        for ((m, n), v) in meas.values.indexed_iter() {
            writeln!(
                out,
                "{},{},{},{},{:.8e},{:.8e}",
                meas.cpp_index, meas.symbol_index, m, n, v.re, v.im
            )?;
        }
    }
    Ok(())
}
