//! Multipath delay/gain estimation from one CFR measurement.
//!
//! Processing chain per measurement:
//! 1. [`gate_cir`] — transform to the delay domain, zero taps beyond the
//!    coverage window, and decimate to the smallest power-of-two grid that
//!    still spans the gated window (cuts cost without losing in-window paths);
//! 2. [`estimate_order`] — model-order selection: one greedy successive
//!    interference cancellation (SIC) sweep records the residual energy per
//!    prefix, and the minimum-description-length score picks L;
//! 3. [`sic_initialize`] — the same SIC prefix provides initial delays/gains;
//! 4. [`em_refine`] — expectation-maximization: the E-step splits the
//!    residual across paths (y_l = a(tau_l) xi_l + beta_l (H - sum a xi)),
//!    the M-step re-estimates each path's delay by a coarse-to-fine matched
//!    filter search and its per-antenna gains in closed form
//!    (xi = a^H y / M). The previous delay always stays in the candidate
//!    set, so the data-fit objective ||H - sum_l a(tau_l) xi_l^T||_F^2 is
//!    non-increasing even though delays live on a quantized grid;
//! 5. [`select_los`] — the earliest path whose gain power clears a fraction
//!    of the strongest path is declared line-of-sight.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use crate::manifold::delay_signature;
use crate::types::{CfrMeasurement, Error, Result, WaveformConfig, SPEED_OF_LIGHT_M_S};

/// Coarse delay-search step: 1 / (COARSE * occupied bandwidth).
pub const COARSE_GRID_FACTOR: f64 = 4.0;
/// Fine delay-search step: 1 / (FINE * occupied bandwidth).
pub const FINE_GRID_FACTOR: f64 = 256.0;
/// Relative per-antenna gain change below which EM declares convergence.
pub const DEFAULT_REL_GAIN_TOL: f64 = 1e-3;
pub const DEFAULT_MAX_ITERATIONS: usize = 50;
/// Gate guard interval as a fraction of the coverage delay.
pub const GATE_GUARD_FRACTION: f64 = 0.10;
/// Default LOS gain-power threshold relative to the strongest path.
pub const DEFAULT_LOS_THRESHOLD: f64 = 0.05;

/// Tuning knobs for the delay/gain estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub delay_grid_coarse_s: f64,
    pub delay_grid_fine_s: f64,
    /// Convergence: relative change of every antenna's gain vector.
    pub rel_gain_tol: f64,
    pub max_iterations: usize,
    /// E-step residual split per path; `None` means uniform 1/L.
    pub beta_split: Option<Vec<f64>>,
    /// Delay search window (s); keeps the M-step away from grid aliases.
    pub delay_search_window_s: (f64, f64),
}

impl EmConfig {
    /// Defaults for a grid of the given occupied bandwidth searching delays
    /// in [0, max_delay]: coarse step 1/(4B), fine step 1/(256B).
    pub fn for_bandwidth(occupied_bandwidth_hz: f64, max_delay_s: f64) -> Result<Self> {
        if !(occupied_bandwidth_hz.is_finite() && occupied_bandwidth_hz > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "occupied bandwidth must be positive, got {occupied_bandwidth_hz}"
            )));
        }
        if !(max_delay_s.is_finite() && max_delay_s > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "max search delay must be positive, got {max_delay_s}"
            )));
        }
        Ok(EmConfig {
            delay_grid_coarse_s: 1.0 / (COARSE_GRID_FACTOR * occupied_bandwidth_hz),
            delay_grid_fine_s: 1.0 / (FINE_GRID_FACTOR * occupied_bandwidth_hz),
            rel_gain_tol: DEFAULT_REL_GAIN_TOL,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            beta_split: None,
            delay_search_window_s: (0.0, max_delay_s),
        })
    }

    pub fn validate(&self, num_paths: Option<usize>) -> Result<()> {
        if !(self.delay_grid_fine_s.is_finite() && self.delay_grid_fine_s > 0.0) {
            return Err(Error::InvalidConfig("fine delay step must be positive".into()));
        }
        if !(self.delay_grid_coarse_s.is_finite()
            && self.delay_grid_coarse_s >= self.delay_grid_fine_s)
        {
            return Err(Error::InvalidConfig(
                "coarse delay step must be at least the fine step".into(),
            ));
        }
        if !(self.rel_gain_tol.is_finite() && self.rel_gain_tol > 0.0) {
            return Err(Error::InvalidConfig("rel_gain_tol must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        let (lo, hi) = self.delay_search_window_s;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi) {
            return Err(Error::InvalidConfig(format!(
                "delay search window must satisfy 0 <= lo < hi, got ({lo}, {hi})"
            )));
        }
        if let Some(beta) = &self.beta_split {
            if beta.iter().any(|&b| !(b.is_finite() && 0.0 < b && b <= 1.0)) {
                return Err(Error::InvalidConfig(
                    "beta_split entries must lie in (0, 1]".into(),
                ));
            }
            let sum: f64 = beta.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "beta_split must sum to 1, got {sum}"
                )));
            }
            if let Some(l) = num_paths {
                if beta.len() != l {
                    return Err(Error::InvalidConfig(format!(
                        "beta_split has {} entries for {l} paths",
                        beta.len()
                    )));
                }
            }
        }
        Ok(())
    }

    fn beta(&self, l: usize, total: usize) -> f64 {
        match &self.beta_split {
            Some(v) => v[l],
            None => 1.0 / total as f64,
        }
    }
}

/// Estimated multipath parameters for one measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSolution {
    pub delays_s: Vec<f64>,
    /// L x N complex gains; row l holds path l's per-antenna gains.
    pub gains: Array2<Complex64>,
    /// Data-fit objective ||H - sum_l a(tau_l) xi_l^T||_F^2 per iteration
    /// (first entry: at the initial point).
    pub objective_trace: Vec<f64>,
    /// Number of EM iterations executed; equal to `max_iterations` when the
    /// loop stopped without meeting the convergence test.
    pub iterations_used: usize,
}

impl PathSolution {
    pub fn num_paths(&self) -> usize {
        self.delays_s.len()
    }
}

// ---------------------------------------------------------------------------
// CIR gating

/// Reusable CIR gate for one waveform configuration and coverage radius;
/// precomputes both FFT plans and the reduced-grid numerology.
pub struct CirGate {
    source: WaveformConfig,
    reduced: WaveformConfig,
    kept_taps: usize,
    gate_delay_s: f64,
    ifft: Arc<dyn Fft<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CirGate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CirGate")
            .field("source", &self.source)
            .field("reduced", &self.reduced)
            .field("kept_taps", &self.kept_taps)
            .field("gate_delay_s", &self.gate_delay_s)
            .finish_non_exhaustive()
    }
}

impl CirGate {
    pub fn new(cfg: &WaveformConfig, coverage_m: f64) -> Result<Self> {
        cfg.validate()?;
        if !(coverage_m.is_finite() && coverage_m > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "coverage_m must be positive, got {coverage_m}"
            )));
        }
        let m = cfg.num_subcarriers;
        let bandwidth = cfg.occupied_bandwidth_hz();
        let gate_delay_s = coverage_m / SPEED_OF_LIGHT_M_S * (1.0 + GATE_GUARD_FRACTION);
        if gate_delay_s > cfg.unambiguous_delay_s() {
            return Err(Error::InvalidConfig(format!(
                "coverage window {gate_delay_s:.3e} s exceeds the unambiguous delay range {:.3e} s",
                cfg.unambiguous_delay_s()
            )));
        }
        // taps are spaced 1/bandwidth; keep every tap inside the gate window
        let kept_taps = (gate_delay_s * bandwidth).floor() as usize + 1;
        debug_assert!(kept_taps <= m);
        let mut m_red = kept_taps.next_power_of_two().max(2);
        if m_red > m {
            // no power of two between the window and the full grid: keep the
            // original grid and only apply the gate
            m_red = m;
        }
        let reduced = if m_red == m {
            cfg.clone()
        } else {
            let df_new = bandwidth / m_red as f64;
            // choose the reduced carrier so the lowest tone is preserved:
            // tone k' then sits exactly at f_0 + k' * df_new
            let f0 = cfg.tone_frequency_hz(0);
            let carrier = f0 + (m_red as f64 / 2.0 - 1.0) * df_new;
            WaveformConfig::new(
                carrier,
                df_new,
                m_red,
                1,
                cfg.bandwidth_hz.min(bandwidth),
            )?
        };
        let mut planner = FftPlanner::new();
        Ok(CirGate {
            source: cfg.clone(),
            reduced,
            kept_taps,
            gate_delay_s,
            ifft: planner.plan_fft_inverse(m),
            fft: planner.plan_fft_forward(m_red),
        })
    }

    pub fn reduced_config(&self) -> &WaveformConfig {
        &self.reduced
    }

    pub fn kept_taps(&self) -> usize {
        self.kept_taps
    }

    /// Gate delay window upper edge (coverage delay plus guard), in seconds.
    pub fn gate_delay_s(&self) -> f64 {
        self.gate_delay_s
    }

    /// Gate one measurement: per antenna column, transform to taps, zero
    /// everything beyond the window, and transform back on the reduced grid.
    /// Noise variance scales by kept_taps / M (the gate discards that share
    /// of the noise energy).
    pub fn apply(&self, meas: &CfrMeasurement) -> Result<CfrMeasurement> {
        let m = self.source.num_subcarriers;
        if meas.num_subcarriers() != m {
            return Err(Error::InvalidConfig(format!(
                "measurement has {} subcarriers, gate expects {m}",
                meas.num_subcarriers()
            )));
        }
        if !meas.is_finite() {
            return Err(Error::Degenerate("non-finite CFR input".into()));
        }
        let n = meas.num_antennas();
        let m_red = self.reduced.num_subcarriers;
        let mut out: Array2<Complex64> = Array2::zeros((m_red, n));
        let mut taps = vec![Complex64::new(0.0, 0.0); m];
        let mut reduced = vec![Complex64::new(0.0, 0.0); m_red];
        let scale = 1.0 / m as f64;
        for col in 0..n {
            for (w, v) in taps.iter_mut().zip(meas.values.column(col)) {
                *w = *v;
            }
            self.ifft.process(&mut taps);
            for (dst, src) in reduced.iter_mut().zip(taps.iter()) {
                *dst = src * scale;
            }
            for v in reduced.iter_mut().skip(self.kept_taps) {
                *v = Complex64::new(0.0, 0.0);
            }
            self.fft.process(&mut reduced);
            for (dst, &src) in out.column_mut(col).iter_mut().zip(reduced.iter()) {
                *dst = src;
            }
        }
        let noise = meas.noise_variance * self.kept_taps as f64 / m as f64;
        CfrMeasurement::new(out, meas.cpp_index, meas.symbol_index, noise)
    }
}

/// One-shot CIR gating; see [`CirGate`] for the reusable form.
pub fn gate_cir(
    cfg: &WaveformConfig,
    meas: &CfrMeasurement,
    coverage_m: f64,
) -> Result<(WaveformConfig, CfrMeasurement)> {
    let gate = CirGate::new(cfg, coverage_m)?;
    let reduced = gate.apply(meas)?;
    Ok((gate.reduced_config().clone(), reduced))
}

// ---------------------------------------------------------------------------
// Delay-domain matched filtering

struct ToneGrid {
    f0_hz: f64,
    df_hz: f64,
}

impl ToneGrid {
    fn of(cfg: &WaveformConfig) -> Self {
        ToneGrid {
            f0_hz: cfg.tone_frequency_hz(0),
            df_hz: cfg.effective_spacing_hz(),
        }
    }
}

/// acc[n] = sum_m exp(+j 2 pi f_m tau) * y[m, n] (the matched-filter
/// correlation a_tau(tau)^H y). The per-tone phasor advances by a constant
/// rotation, so the loop is two trig calls plus M*N complex multiplies.
fn correlate(tg: &ToneGrid, tau: f64, y: &[Complex64], n: usize, acc: &mut [Complex64]) {
    for a in acc.iter_mut() {
        *a = Complex64::new(0.0, 0.0);
    }
    let mut w = Complex64::cis(TAU * tg.f0_hz * tau);
    let step = Complex64::cis(TAU * tg.df_hz * tau);
    for row in y.chunks_exact(n) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += w * v;
        }
        w *= step;
    }
}

fn power(acc: &[Complex64]) -> f64 {
    acc.iter().map(|c| c.norm_sqr()).sum()
}

/// Coarse-to-fine matched-filter delay search over the window. The fine pass
/// runs on the global lattice {window.0 + k * fine} restricted to +-1 coarse
/// cell around the coarse peak. If `previous` is given it stays in the
/// candidate set and wins ties, which makes EM iterations monotone.
/// Returns the winning delay; `best_acc` holds its correlations.
fn search_delay(
    tg: &ToneGrid,
    y: &[Complex64],
    n: usize,
    em: &EmConfig,
    previous: Option<f64>,
    acc: &mut [Complex64],
    best_acc: &mut [Complex64],
) -> f64 {
    let (w0, w1) = em.delay_search_window_s;
    let coarse = em.delay_grid_coarse_s;
    let fine = em.delay_grid_fine_s;

    let mut best_tau = w0;
    let mut best_p = f64::NEG_INFINITY;
    let coarse_steps = ((w1 - w0) / coarse).floor() as usize;
    for i in 0..=coarse_steps {
        let tau = w0 + i as f64 * coarse;
        correlate(tg, tau, y, n, acc);
        let p = power(acc);
        if p > best_p {
            best_p = p;
            best_tau = tau;
            best_acc.copy_from_slice(acc);
        }
    }

    let lo = (best_tau - coarse).max(w0);
    let hi = (best_tau + coarse).min(w1);
    let k0 = ((lo - w0) / fine).ceil() as i64;
    let k1 = ((hi - w0) / fine).floor() as i64;
    for k in k0..=k1 {
        let tau = w0 + k as f64 * fine;
        correlate(tg, tau, y, n, acc);
        let p = power(acc);
        if p > best_p {
            best_p = p;
            best_tau = tau;
            best_acc.copy_from_slice(acc);
        }
    }

    if let Some(prev) = previous {
        correlate(tg, prev, y, n, acc);
        if power(acc) >= best_p {
            best_tau = prev;
            best_acc.copy_from_slice(acc);
        }
    }
    best_tau
}

// ---------------------------------------------------------------------------
// Reconstruction helpers

/// out = data - sum_l a(tau_l) xi_l^T (row-major M x N buffers).
fn residual_into(
    cfg: &WaveformConfig,
    data: &[Complex64],
    n: usize,
    delays: &[f64],
    gains: &Array2<Complex64>,
    out: &mut [Complex64],
) {
    out.copy_from_slice(data);
    for (l, &tau) in delays.iter().enumerate() {
        let a_tau = delay_signature(cfg, tau);
        let row_gains = gains.row(l);
        for (row, &at) in out.chunks_exact_mut(n).zip(a_tau.iter()) {
            for (h, &xi) in row.iter_mut().zip(row_gains.iter()) {
                *h -= at * xi;
            }
        }
    }
}

fn energy(buf: &[Complex64]) -> f64 {
    buf.iter().map(|v| v.norm_sqr()).sum()
}

fn objective(
    cfg: &WaveformConfig,
    data: &[Complex64],
    n: usize,
    delays: &[f64],
    gains: &Array2<Complex64>,
    scratch: &mut [Complex64],
) -> f64 {
    residual_into(cfg, data, n, delays, gains, scratch);
    energy(scratch)
}

fn measurement_slice(meas: &CfrMeasurement) -> Result<Vec<Complex64>> {
    if !meas.is_finite() {
        return Err(Error::Degenerate("non-finite CFR input".into()));
    }
    Ok(meas.values.iter().cloned().collect())
}

// ---------------------------------------------------------------------------
// SIC and model-order selection

struct SicStage {
    delay_s: f64,
    gains: Vec<Complex64>,
    rss: f64,
}

/// One greedy SIC sweep to `l_max` paths: at each stage the matched filter
/// finds the dominant remaining delay, its gains are removed from the
/// residual, and the residual energy is recorded. Prefixes of the sweep are
/// exactly what SIC with a smaller L would produce.
fn sic_sweep(
    cfg: &WaveformConfig,
    data: &[Complex64],
    n: usize,
    l_max: usize,
    em: &EmConfig,
) -> Vec<SicStage> {
    let tg = ToneGrid::of(cfg);
    let m = cfg.num_subcarriers as f64;
    let mut resid = data.to_vec();
    let mut acc = vec![Complex64::new(0.0, 0.0); n];
    let mut best = vec![Complex64::new(0.0, 0.0); n];
    let mut stages = Vec::with_capacity(l_max);
    for _ in 0..l_max {
        let tau = search_delay(&tg, &resid, n, em, None, &mut acc, &mut best);
        let gains: Vec<Complex64> = best.iter().map(|&c| c / m).collect();
        let a_tau = delay_signature(cfg, tau);
        for (row, &at) in resid.chunks_exact_mut(n).zip(a_tau.iter()) {
            for (h, &xi) in row.iter_mut().zip(&gains) {
                *h -= at * xi;
            }
        }
        stages.push(SicStage {
            delay_s: tau,
            gains,
            rss: energy(&resid),
        });
    }
    stages
}

fn mdl_score(rss: f64, l: usize, m: usize, n: usize) -> f64 {
    let mn = (m * n) as f64;
    let free_params = (2 * l * n + l) as f64;
    mn * (rss.max(f64::MIN_POSITIVE) / mn).ln() + 0.5 * free_params * mn.ln()
}

fn stages_to_solution(n: usize, stages: &[SicStage], l: usize) -> PathSolution {
    let delays: Vec<f64> = stages[..l].iter().map(|s| s.delay_s).collect();
    let mut gains = Array2::zeros((l, n));
    for (li, stage) in stages[..l].iter().enumerate() {
        for (ni, &g) in stage.gains.iter().enumerate() {
            gains[(li, ni)] = g;
        }
    }
    // the recorded RSS of stage l is the objective of the l-path solution
    PathSolution {
        delays_s: delays,
        gains,
        objective_trace: vec![stages[l - 1].rss],
        iterations_used: 0,
    }
}

/// Minimum-description-length model-order selection: runs one SIC sweep to
/// `l_max` and scores each prefix with
/// MDL(L) = M N ln(RSS_L / (M N)) + (2 L N + L) ln(M N) / 2,
/// returning the first minimizer (ties break toward fewer paths).
pub fn estimate_order(
    cfg: &WaveformConfig,
    meas: &CfrMeasurement,
    em: &EmConfig,
    l_max: usize,
) -> Result<usize> {
    Ok(estimate_order_with_init(cfg, meas, em, l_max)?.0)
}

/// [`estimate_order`] fused with [`sic_initialize`]: the SIC sweep is shared,
/// so callers that need both pay for one sweep.
pub fn estimate_order_with_init(
    cfg: &WaveformConfig,
    meas: &CfrMeasurement,
    em: &EmConfig,
    l_max: usize,
) -> Result<(usize, PathSolution)> {
    cfg.validate()?;
    em.validate(None)?;
    if l_max < 1 {
        return Err(Error::InvalidConfig("l_max must be at least 1".into()));
    }
    check_dims(cfg, meas)?;
    let data = measurement_slice(meas)?;
    let n = meas.num_antennas();
    let stages = sic_sweep(cfg, &data, n, l_max, em);
    let m = cfg.num_subcarriers;
    let mut best_l = 1;
    let mut best_score = f64::INFINITY;
    for (i, stage) in stages.iter().enumerate() {
        let score = mdl_score(stage.rss, i + 1, m, n);
        if score < best_score {
            best_score = score;
            best_l = i + 1;
        }
    }
    let init = stages_to_solution(n, &stages, best_l);
    Ok((best_l, init))
}

/// Greedy SIC estimate of `l` paths (delay search + closed-form gains per
/// stage, subtracting each estimated path from the residual).
pub fn sic_initialize(
    cfg: &WaveformConfig,
    meas: &CfrMeasurement,
    l: usize,
    em: &EmConfig,
) -> Result<PathSolution> {
    cfg.validate()?;
    em.validate(None)?;
    if l < 1 {
        return Err(Error::InvalidConfig("path count must be at least 1".into()));
    }
    check_dims(cfg, meas)?;
    let data = measurement_slice(meas)?;
    let n = meas.num_antennas();
    let stages = sic_sweep(cfg, &data, n, l, em);
    Ok(stages_to_solution(n, &stages, l))
}

fn check_dims(cfg: &WaveformConfig, meas: &CfrMeasurement) -> Result<()> {
    if meas.num_subcarriers() != cfg.num_subcarriers {
        return Err(Error::InvalidConfig(format!(
            "measurement has {} subcarriers, waveform declares {}",
            meas.num_subcarriers(),
            cfg.num_subcarriers
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// EM refinement

/// E-step: per-path complete-data estimates
/// y_l = a(tau_l) xi_l^T + beta_l * (H - sum_k a(tau_k) xi_k^T).
/// Returns the shared residual; callers assemble y_l on demand.
fn e_step_residual(
    cfg: &WaveformConfig,
    data: &[Complex64],
    n: usize,
    delays: &[f64],
    gains: &Array2<Complex64>,
    resid: &mut [Complex64],
) {
    residual_into(cfg, data, n, delays, gains, resid);
}

/// Closed form of kappa(delta) = sum_m exp(+j 2 pi f_m delta), the matched
/// filter's response to a unit path at delay offset `delta`: a Dirichlet
/// kernel on the uniform tone grid times the lowest-tone phasor. The
/// removable singularities at grating lobes (df * delta near an integer)
/// are crossed via the L'Hopital ratio.
fn path_correlation_kernel(tg: &ToneGrid, m_tones: usize, delta_s: f64) -> Complex64 {
    let m = m_tones as f64;
    let x = tg.df_hz * delta_s;
    let s = (PI * x).sin();
    let ratio = if s.abs() < 1e-8 {
        m * (PI * m * x).cos() / (PI * x).cos()
    } else {
        (PI * m * x).sin() / s
    };
    Complex64::cis(TAU * tg.f0_hz * delta_s) * Complex64::cis(PI * (m - 1.0) * x) * ratio
}

/// Streams [`path_correlation_kernel`] over the uniform offsets
/// delta_0 + i * step via three phasor recurrences instead of fresh trig
/// per candidate: a = cis(2 pi f0 delta), u = cis(pi M df delta),
/// v = cis(pi df delta); then kappa = a * u * conj(v) * ratio with
/// ratio = Im(u)/Im(v) away from grating lobes (the sines of the Dirichlet
/// quotient) and the L'Hopital value M * Re(u)/Re(v) across them.
struct KernelScan {
    m: f64,
    a: Complex64,
    a_step: Complex64,
    u: Complex64,
    u_step: Complex64,
    v: Complex64,
    v_step: Complex64,
}

impl KernelScan {
    fn new(tg: &ToneGrid, m_tones: usize, delta0_s: f64, step_s: f64) -> Self {
        let m = m_tones as f64;
        KernelScan {
            m,
            a: Complex64::cis(TAU * tg.f0_hz * delta0_s),
            a_step: Complex64::cis(TAU * tg.f0_hz * step_s),
            u: Complex64::cis(PI * m * tg.df_hz * delta0_s),
            u_step: Complex64::cis(PI * m * tg.df_hz * step_s),
            v: Complex64::cis(PI * tg.df_hz * delta0_s),
            v_step: Complex64::cis(PI * tg.df_hz * step_s),
        }
    }

    /// The kernel at the current offset; advances to the next one.
    fn next_kernel(&mut self) -> Complex64 {
        let ratio = if self.v.im.abs() < 1e-8 {
            self.m * self.u.re / self.v.re
        } else {
            self.u.im / self.v.im
        };
        let kappa = self.a * (self.u * self.v.conj()) * ratio;
        self.a *= self.a_step;
        self.u *= self.u_step;
        self.v *= self.v_step;
        kappa
    }
}

/// Residual correlations a(tau)^H r on the delay-search lattices, shared by
/// every path's M-step within one EM iteration (the batch E-step freezes the
/// residual for the whole iteration, so all paths read the same tables).
/// Coarse-lattice entries are computed eagerly; fine-lattice entries on
/// demand, because each path's fine pass touches only +-1 coarse cell.
struct ResidualCorrelations {
    coarse: Vec<Complex64>,
    coarse_steps: usize,
    /// Fine-lattice slot -> row index into `fine_data`, or -1 if unset.
    fine_index: Vec<i32>,
    fine_data: Vec<Complex64>,
    /// False when the fine lattice is too large to index densely; the
    /// search then evaluates fine candidates directly without caching.
    enabled: bool,
}

impl ResidualCorrelations {
    fn new(em: &EmConfig) -> Self {
        let (w0, w1) = em.delay_search_window_s;
        let coarse_steps = ((w1 - w0) / em.delay_grid_coarse_s).floor() as usize;
        let fine_slots = ((w1 - w0) / em.delay_grid_fine_s).floor() as i64 + 1;
        let enabled = (0..=1 << 24).contains(&fine_slots);
        ResidualCorrelations {
            coarse: Vec::new(),
            coarse_steps,
            fine_index: if enabled {
                vec![-1; fine_slots as usize]
            } else {
                Vec::new()
            },
            fine_data: Vec::new(),
            enabled,
        }
    }

    /// Recompute the coarse table and invalidate fine entries for a new
    /// iteration's residual.
    fn rebuild(&mut self, tg: &ToneGrid, em: &EmConfig, resid: &[Complex64], n: usize) {
        let w0 = em.delay_search_window_s.0;
        self.coarse
            .resize((self.coarse_steps + 1) * n, Complex64::new(0.0, 0.0));
        for i in 0..=self.coarse_steps {
            let tau = w0 + i as f64 * em.delay_grid_coarse_s;
            correlate(tg, tau, resid, n, &mut self.coarse[i * n..(i + 1) * n]);
        }
        self.fine_index.fill(-1);
        self.fine_data.clear();
    }

    fn coarse_at(&self, i: usize, n: usize) -> &[Complex64] {
        &self.coarse[i * n..(i + 1) * n]
    }

    fn fine_at(
        &mut self,
        k: i64,
        tg: &ToneGrid,
        em: &EmConfig,
        resid: &[Complex64],
        n: usize,
    ) -> &[Complex64] {
        let slot = k as usize;
        let row = self.fine_index[slot];
        if row >= 0 {
            let off = row as usize * n;
            return &self.fine_data[off..off + n];
        }
        let tau = em.delay_search_window_s.0 + k as f64 * em.delay_grid_fine_s;
        let off = self.fine_data.len();
        self.fine_data.resize(off + n, Complex64::new(0.0, 0.0));
        correlate(tg, tau, resid, n, &mut self.fine_data[off..off + n]);
        self.fine_index[slot] = (off / n) as i32;
        &self.fine_data[off..off + n]
    }

    /// The fine-lattice slot holding `tau`, if `tau` sits on the lattice.
    fn fine_slot(&self, em: &EmConfig, tau: f64) -> Option<i64> {
        if !self.enabled {
            return None;
        }
        let kf = (tau - em.delay_search_window_s.0) / em.delay_grid_fine_s;
        let k = kf.round();
        if (kf - k).abs() < 1e-9 && k >= 0.0 && (k as usize) < self.fine_index.len() {
            Some(k as i64)
        } else {
            None
        }
    }
}

/// M-step delay search for one path via the E-step decomposition
/// y_l = a(tau_prev) xi + beta r: candidate correlations split as
/// beta (a^H r) + kappa(tau - tau_prev) xi, so the O(M N) residual part
/// comes from the shared cache and only the O(N) kernel term is
/// path-specific. Scan shape (coarse pass, fine pass confined to +-1
/// coarse cell on the global lattice, previous delay kept in the candidate
/// set and winning ties) matches [`search_delay`].
#[allow(clippy::too_many_arguments)]
fn m_step_search(
    cache: &mut ResidualCorrelations,
    tg: &ToneGrid,
    m_tones: usize,
    resid: &[Complex64],
    n: usize,
    em: &EmConfig,
    prev: f64,
    xi: ndarray::ArrayView1<Complex64>,
    beta: f64,
    acc: &mut [Complex64],
    rc_scratch: &mut [Complex64],
    best_acc: &mut [Complex64],
) -> f64 {
    let (w0, w1) = em.delay_search_window_s;
    let coarse = em.delay_grid_coarse_s;
    let fine = em.delay_grid_fine_s;

    fn combine(
        rc: &[Complex64],
        kappa: Complex64,
        xi: ndarray::ArrayView1<Complex64>,
        beta: f64,
        acc: &mut [Complex64],
    ) {
        for ((a, &r), &x) in acc.iter_mut().zip(rc).zip(xi.iter()) {
            *a = beta * r + kappa * x;
        }
    }

    let mut best_tau = w0;
    let mut best_p = f64::NEG_INFINITY;
    let mut scan = KernelScan::new(tg, m_tones, w0 - prev, coarse);
    for i in 0..=cache.coarse_steps {
        let tau = w0 + i as f64 * coarse;
        let kappa = scan.next_kernel();
        combine(cache.coarse_at(i, n), kappa, xi, beta, acc);
        let p = power(acc);
        if p > best_p {
            best_p = p;
            best_tau = tau;
            best_acc.copy_from_slice(acc);
        }
    }

    let lo = (best_tau - coarse).max(w0);
    let hi = (best_tau + coarse).min(w1);
    let k0 = ((lo - w0) / fine).ceil() as i64;
    let k1 = ((hi - w0) / fine).floor() as i64;
    let mut scan = KernelScan::new(tg, m_tones, w0 + k0 as f64 * fine - prev, fine);
    for k in k0..=k1 {
        let tau = w0 + k as f64 * fine;
        let rc: &[Complex64] = if cache.enabled {
            cache.fine_at(k, tg, em, resid, n)
        } else {
            correlate(tg, tau, resid, n, rc_scratch);
            rc_scratch
        };
        let kappa = scan.next_kernel();
        combine(rc, kappa, xi, beta, acc);
        let p = power(acc);
        if p > best_p {
            best_p = p;
            best_tau = tau;
            best_acc.copy_from_slice(acc);
        }
    }

    // the previous delay stays in the candidate set and wins ties
    let rc: &[Complex64] = if let Some(k) = cache.fine_slot(em, prev) {
        cache.fine_at(k, tg, em, resid, n)
    } else {
        correlate(tg, prev, resid, n, rc_scratch);
        rc_scratch
    };
    let kappa = path_correlation_kernel(tg, m_tones, 0.0);
    combine(rc, kappa, xi, beta, acc);
    if power(acc) >= best_p {
        best_tau = prev;
        best_acc.copy_from_slice(acc);
    }
    best_tau
}

/// EM refinement of an initial multipath solution. Iterates E/M steps until
/// every delay moves less than the fine grid step and every antenna's gain
/// vector changes by less than `rel_gain_tol` in relative norm, or until
/// `max_iterations` is reached (reported via `iterations_used`, not an
/// error). The objective trace is non-increasing by construction.
pub fn em_refine(
    cfg: &WaveformConfig,
    meas: &CfrMeasurement,
    init: &PathSolution,
    em: &EmConfig,
) -> Result<PathSolution> {
    cfg.validate()?;
    let l = init.num_paths();
    em.validate(Some(l))?;
    check_dims(cfg, meas)?;
    if l == 0 {
        return Err(Error::InvalidConfig("initial solution has no paths".into()));
    }
    if init.gains.nrows() != l || init.gains.ncols() != meas.num_antennas() {
        return Err(Error::InvalidConfig(format!(
            "initial gains are {}x{}, expected {l}x{}",
            init.gains.nrows(),
            init.gains.ncols(),
            meas.num_antennas()
        )));
    }
    if init.delays_s.iter().any(|d| !d.is_finite())
        || init.gains.iter().any(|g| !g.re.is_finite() || !g.im.is_finite())
    {
        return Err(Error::Degenerate("non-finite initial solution".into()));
    }
    let data = measurement_slice(meas)?;
    let n = meas.num_antennas();
    let m = cfg.num_subcarriers as f64;
    let tg = ToneGrid::of(cfg);

    let mut delays = init.delays_s.clone();
    let mut gains = init.gains.clone();
    let mut resid = vec![Complex64::new(0.0, 0.0); data.len()];
    let mut acc = vec![Complex64::new(0.0, 0.0); n];
    let mut rc_scratch = vec![Complex64::new(0.0, 0.0); n];
    let mut best = vec![Complex64::new(0.0, 0.0); n];
    let mut cache = ResidualCorrelations::new(em);

    let mut trace = Vec::with_capacity(em.max_iterations + 1);
    trace.push(objective(cfg, &data, n, &delays, &gains, &mut resid));
    let mut iterations_used = 0;

    for _ in 0..em.max_iterations {
        e_step_residual(cfg, &data, n, &delays, &gains, &mut resid);
        cache.rebuild(&tg, em, &resid, n);
        let mut new_delays = delays.clone();
        let mut new_gains = gains.clone();
        for li in 0..l {
            let tau = m_step_search(
                &mut cache,
                &tg,
                cfg.num_subcarriers,
                &resid,
                n,
                em,
                delays[li],
                gains.row(li),
                em.beta(li, l),
                &mut acc,
                &mut rc_scratch,
                &mut best,
            );
            new_delays[li] = tau;
            for (ni, &c) in best.iter().enumerate() {
                new_gains[(li, ni)] = c / m;
            }
        }
        // convergence: delay vector moved less than a fine step AND every
        // antenna's gain column changed by < rel_gain_tol in relative norm
        let delay_shift: f64 = delays
            .iter()
            .zip(&new_delays)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let mut gains_converged = true;
        for ni in 0..n {
            let mut delta = 0.0;
            let mut norm_old = 0.0;
            for li in 0..l {
                delta += (new_gains[(li, ni)] - gains[(li, ni)]).norm_sqr();
                norm_old += gains[(li, ni)].norm_sqr();
            }
            let rel = if norm_old > 0.0 {
                (delta / norm_old).sqrt()
            } else if delta > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            if rel >= em.rel_gain_tol {
                gains_converged = false;
            }
        }
        delays = new_delays;
        gains = new_gains;
        trace.push(objective(cfg, &data, n, &delays, &gains, &mut resid));
        iterations_used += 1;
        if delay_shift < em.delay_grid_fine_s && gains_converged {
            break;
        }
    }

    Ok(PathSolution {
        delays_s: delays,
        gains,
        objective_trace: trace,
        iterations_used,
    })
}

/// Pick the LOS path: the smallest delay among paths whose total gain power
/// reaches `threshold` times the strongest path's power (weak spurious paths
/// are never declared LOS).
pub fn select_los(sol: &PathSolution, threshold: f64) -> Result<usize> {
    if !(threshold.is_finite() && 0.0 <= threshold && threshold <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "LOS threshold must lie in [0, 1], got {threshold}"
        )));
    }
    if sol.num_paths() == 0 {
        return Err(Error::Degenerate("empty path solution".into()));
    }
    let powers: Vec<f64> = (0..sol.num_paths())
        .map(|l| sol.gains.row(l).iter().map(|g| g.norm_sqr()).sum())
        .collect();
    let pmax = powers.iter().cloned().fold(0.0, f64::max);
    let mut best: Option<usize> = None;
    for (l, &p) in powers.iter().enumerate() {
        if p >= threshold * pmax {
            match best {
                Some(b) if sol.delays_s[l] >= sol.delays_s[b] => {}
                _ => best = Some(l),
            }
        }
    }
    best.ok_or_else(|| Error::Degenerate("no path clears the LOS threshold".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chansim::{measurement_rng, synthesize_cfr, NoiseModel};
    use crate::manifold::ideal_steering;
    use crate::types::{ArrayGeometry, PathTruth, PhaseErrorTable};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    fn full_band_waveform() -> WaveformConfig {
        WaveformConfig::new(4.85e9, 30e3, 1632, 2, 97.92e6).unwrap()
    }

    fn small_waveform() -> WaveformConfig {
        // 64 tones x 1.53 MHz: the reduced grid the gate produces for the
        // full-band sounding grid
        WaveformConfig::new(4.85e9, 1.53e6, 64, 1, 97.92e6).unwrap()
    }

    fn geom4() -> ArrayGeometry {
        ArrayGeometry::half_wavelength_ula(4, 4.85e9).unwrap()
    }

    fn zero_table(n: usize) -> PhaseErrorTable {
        PhaseErrorTable::zero(vec![-75.0, 75.0], n).unwrap()
    }

    fn noiseless_cfr(cfg: &WaveformConfig, truth: &PathTruth) -> CfrMeasurement {
        let geom = geom4();
        let table = zero_table(4);
        let noise = NoiseModel::disabled(cfg.bandwidth_hz);
        let mut rng = measurement_rng(0, 0, 0);
        synthesize_cfr(cfg, &geom, &table, truth, &noise, 0, 0, &mut rng).unwrap()
    }

    fn noisy_cfr(cfg: &WaveformConfig, truth: &PathTruth, pn: f64, seed: u64) -> CfrMeasurement {
        let geom = geom4();
        let table = zero_table(4);
        let noise = NoiseModel {
            boltzmann_j_per_k: 1.0,
            temperature_k: pn,
            bandwidth_hz: 1.0,
        };
        let mut rng = measurement_rng(seed, 0, 0);
        synthesize_cfr(cfg, &geom, &table, truth, &noise, 0, 0, &mut rng).unwrap()
    }

    fn default_em(cfg: &WaveformConfig) -> EmConfig {
        EmConfig::for_bandwidth(cfg.occupied_bandwidth_hz(), 3.669205047179673e-7).unwrap()
    }

    #[test]
    fn gate_reproduces_the_64_subcarrier_working_point() {
        // 1632 occupied comb-two tones at 30 kHz spacing sound 97.92 MHz;
        // a 100 m coverage radius plus 10% guard spans 36 taps, so the
        // smallest power-of-two grid that resolves the window has 64 tones
        let cfg = full_band_waveform();
        let gate = CirGate::new(&cfg, 100.0).unwrap();
        assert_eq!(gate.kept_taps(), 36);
        let red = gate.reduced_config();
        assert_eq!(red.num_subcarriers, 64);
        assert_eq!(red.comb_factor, 1);
        assert_abs_diff_eq!(red.effective_spacing_hz(), 97.92e6 / 64.0, epsilon = 1e-6);
        // the lowest occupied tone is preserved exactly
        assert_abs_diff_eq!(
            red.tone_frequency_hz(0),
            cfg.tone_frequency_hz(0),
            epsilon = 1e-3
        );
        assert_abs_diff_eq!(gate.gate_delay_s(), 3.669205047179673e-7, epsilon = 1e-18);
    }

    #[test]
    fn gate_rejects_windows_beyond_the_unambiguous_range() {
        let cfg = full_band_waveform();
        // unambiguous delay 1/60 kHz = 16.7 us ~ 5 km of coverage (incl. guard)
        assert!(CirGate::new(&cfg, 4000.0).is_ok());
        assert!(CirGate::new(&cfg, 5000.0).is_err());
        assert!(CirGate::new(&cfg, -1.0).is_err());
    }

    #[test]
    fn gate_is_transparent_for_a_tap_aligned_path() {
        // delay on a CIR tap keeps the rectangular gate leak-free, so the
        // gated CFR must equal the same path regenerated on the reduced grid
        let cfg = full_band_waveform();
        let b = cfg.occupied_bandwidth_hz();
        let tau = 20.0 / b;
        let gamma = Complex64::new(2.0e-4, -1.3e-4);
        let truth = PathTruth::new(vec![9.0], vec![tau], vec![gamma], 0).unwrap();
        let meas = noiseless_cfr(&cfg, &truth);
        let (red_cfg, red) = gate_cir(&cfg, &meas, 100.0).unwrap();
        let a_tau = delay_signature(&red_cfg, tau);
        let a_theta = ideal_steering(&geom4(), 9.0).unwrap();
        let mut err = 0.0;
        let mut norm = 0.0;
        for ((m, n), v) in red.values.indexed_iter() {
            let want = gamma * a_tau[m] * a_theta[n];
            err += (v - want).norm_sqr();
            norm += want.norm_sqr();
        }
        let rel = (err / norm).sqrt();
        assert!(rel < 1e-3, "relative regeneration error {rel}");
    }

    #[test]
    fn gate_suppresses_out_of_window_paths() {
        let cfg = full_band_waveform();
        // a reflector at 300 m sits far outside the 100 m coverage window
        let tau = 2.0 * 300.0 / SPEED_OF_LIGHT_M_S;
        let truth = PathTruth::new(
            vec![-20.0],
            vec![tau],
            vec![Complex64::new(1e-4, 5e-5)],
            0,
        )
        .unwrap();
        let meas = noiseless_cfr(&cfg, &truth);
        let original: f64 = meas.values.iter().map(|v| v.norm_sqr()).sum();
        let (_, red) = gate_cir(&cfg, &meas, 100.0).unwrap();
        let remaining: f64 = red.values.iter().map(|v| v.norm_sqr()).sum();
        // compare per-tone energy densities: the reduced grid has fewer tones
        let ratio = (remaining / 64.0) / (original / 1632.0);
        assert!(ratio < 0.01, "out-of-window energy ratio {ratio}");
    }

    #[test]
    fn gate_scales_noise_variance_by_kept_tap_share() {
        let cfg = full_band_waveform();
        let truth = PathTruth::new(
            vec![0.0],
            vec![5e-8],
            vec![Complex64::new(2e-4, 0.0)],
            0,
        )
        .unwrap();
        let meas = noisy_cfr(&cfg, &truth, 1e-12, 3);
        let (_, red) = gate_cir(&cfg, &meas, 100.0).unwrap();
        assert_abs_diff_eq!(
            red.noise_variance,
            1e-12 * 36.0 / 1632.0,
            epsilon = 1e-24
        );
    }

    #[test]
    fn gate_falls_back_to_the_original_grid_when_no_power_of_two_fits() {
        // 24 tones, window needing 17 taps: next power of two (32) exceeds
        // the grid, so the gate keeps all 24 tones and only zeroes taps
        let cfg = WaveformConfig::new(3.5e9, 120e3, 24, 1, 2.88e6).unwrap();
        let b = cfg.occupied_bandwidth_hz();
        let coverage = 16.5 / b * SPEED_OF_LIGHT_M_S / 1.1;
        let gate = CirGate::new(&cfg, coverage).unwrap();
        assert_eq!(gate.kept_taps(), 17);
        assert_eq!(gate.reduced_config(), &cfg);
    }

    #[test]
    fn em_config_validation_catches_bad_windows_and_beta() {
        let cfg = small_waveform();
        let mut em = default_em(&cfg);
        em.delay_search_window_s = (1e-7, 1e-8);
        assert!(em.validate(None).is_err());
        let mut em = default_em(&cfg);
        em.beta_split = Some(vec![0.5, 0.6]);
        assert!(em.validate(Some(2)).is_err());
        let mut em = default_em(&cfg);
        em.beta_split = Some(vec![0.5, 0.5]);
        assert!(em.validate(Some(2)).is_ok());
        assert!(em.validate(Some(3)).is_err());
    }

    #[test]
    fn sic_finds_an_off_grid_single_path_to_fine_resolution() {
        let cfg = small_waveform();
        let em = default_em(&cfg);
        // deliberately off both coarse and fine lattices
        let tau = 7.31e-8 + 0.37 * em.delay_grid_fine_s;
        let truth = PathTruth::new(
            vec![12.0],
            vec![tau],
            vec![Complex64::new(3e-4, 1e-4)],
            0,
        )
        .unwrap();
        let meas = noiseless_cfr(&cfg, &truth);
        let sol = sic_initialize(&cfg, &meas, 1, &em).unwrap();
        assert!(
            (sol.delays_s[0] - tau).abs() <= 0.6 * em.delay_grid_fine_s,
            "delay error {} vs fine step {}",
            (sol.delays_s[0] - tau).abs(),
            em.delay_grid_fine_s
        );
        // gains carry the steering structure
        let a_theta = ideal_steering(&geom4(), 12.0).unwrap();
        let g0 = sol.gains[(0, 0)];
        for n in 1..4 {
            let ratio = sol.gains[(0, n)] / g0;
            let want = a_theta[n] / a_theta[0];
            assert!((ratio - want).norm() < 1e-3, "antenna {n}: {ratio} vs {want}");
        }
    }

    #[test]
    fn order_selection_matches_path_count_on_separated_paths() {
        // paths 5/B apart at 20 dB per-entry SNR: the regime where SIC
        // residuals are noise-dominated and MDL recovers the true order
        // (at much higher SNR the coherent bias of SIC's greedy delay
        // estimates rises above the noise floor and MDL adds cleanup paths)
        let cfg = small_waveform();
        let em = default_em(&cfg);
        let b = cfg.occupied_bandwidth_hz();
        let amp = 2e-4;
        let pn = amp * amp * 1e-2; // 20 dB SNR per entry
        for true_l in 1..=3usize {
            let delays: Vec<f64> = (0..true_l).map(|l| 3e-8 + l as f64 * 5.0 / b).collect();
            let doas: Vec<f64> = (0..true_l).map(|l| -20.0 + 17.0 * l as f64).collect();
            let gains: Vec<Complex64> = (0..true_l)
                .map(|l| Complex64::from_polar(amp, 0.7 * l as f64))
                .collect();
            let truth = PathTruth::new(doas, delays, gains, 0).unwrap();
            let meas = noisy_cfr(&cfg, &truth, pn, 11 + true_l as u64);
            let l_hat = estimate_order(&cfg, &meas, &em, 6).unwrap();
            assert_eq!(l_hat, true_l, "order for {true_l} injected paths");
        }
    }

    #[test]
    fn order_selection_floors_at_one_on_pure_noise() {
        let cfg = small_waveform();
        let em = default_em(&cfg);
        let truth =
            PathTruth::new(vec![0.0], vec![3e-8], vec![Complex64::new(0.0, 0.0)], 0).unwrap();
        let meas = noisy_cfr(&cfg, &truth, 1e-10, 21);
        assert_eq!(estimate_order(&cfg, &meas, &em, 6).unwrap(), 1);
    }

    #[test]
    fn em_converges_in_one_iteration_when_initialized_at_the_truth() {
        let cfg = small_waveform();
        let em = default_em(&cfg);
        let tau = 5.2e-8;
        let gamma = Complex64::new(2.2e-4, -0.7e-4);
        let truth = PathTruth::new(vec![-8.0], vec![tau], vec![gamma], 0).unwrap();
        let meas = noiseless_cfr(&cfg, &truth);
        let a_theta = ideal_steering(&geom4(), -8.0).unwrap();
        let mut gains = Array2::zeros((1, 4));
        for n in 0..4 {
            gains[(0, n)] = gamma * a_theta[n];
        }
        let init = PathSolution {
            delays_s: vec![tau],
            gains,
            objective_trace: vec![],
            iterations_used: 0,
        };
        let sol = em_refine(&cfg, &meas, &init, &em).unwrap();
        assert_eq!(sol.iterations_used, 1, "one E/M pass should suffice");
        assert_eq!(sol.delays_s[0], tau, "exact init delay must be retained");
        let final_obj = *sol.objective_trace.last().unwrap();
        assert!(final_obj < 1e-18, "objective {final_obj}");
    }

    #[test]
    fn em_objective_is_monotone_nonincreasing() {
        let cfg = small_waveform();
        let em = default_em(&cfg);
        let b = cfg.occupied_bandwidth_hz();
        let truth = PathTruth::new(
            vec![5.0, -30.0, 40.0],
            vec![3.3e-8, 3.3e-8 + 1.4 / b, 3.3e-8 + 3.9 / b],
            vec![
                Complex64::new(2.2e-4, 0.0),
                Complex64::new(-0.9e-4, 1.1e-4),
                Complex64::new(0.4e-4, -0.8e-4),
            ],
            0,
        )
        .unwrap();
        for seed in 0..10 {
            let meas = noisy_cfr(&cfg, &truth, 4e-10 / 64.0, 100 + seed);
            let (l_hat, init) = estimate_order_with_init(&cfg, &meas, &em, 6).unwrap();
            let sol = em_refine(&cfg, &meas, &init, &em).unwrap();
            assert_eq!(sol.num_paths(), l_hat);
            for w in sol.objective_trace.windows(2) {
                assert!(
                    w[1] <= w[0] * (1.0 + 1e-9) + 1e-300,
                    "objective increased: {} -> {} (seed {seed})",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn em_separates_two_close_paths_noiselessly() {
        let cfg = small_waveform();
        let em = default_em(&cfg);
        let b = cfg.occupied_bandwidth_hz();
        let t1 = 3.34e-8;
        let t2 = t1 + 2.6 / b;
        let truth = PathTruth::new(
            vec![10.0, -25.0],
            vec![t1, t2],
            vec![Complex64::new(2e-4, 0.5e-4), Complex64::new(-1.1e-4, 0.9e-4)],
            0,
        )
        .unwrap();
        let meas = noiseless_cfr(&cfg, &truth);
        let init = sic_initialize(&cfg, &meas, 2, &em).unwrap();
        let sol = em_refine(&cfg, &meas, &init, &em).unwrap();
        let mut est = sol.delays_s.clone();
        est.sort_by(f64::total_cmp);
        assert!(
            (est[0] - t1).abs() <= 2.0 * em.delay_grid_fine_s,
            "first delay {} vs {}",
            est[0],
            t1
        );
        assert!(
            (est[1] - t2).abs() <= 2.0 * em.delay_grid_fine_s,
            "second delay {} vs {}",
            est[1],
            t2
        );
        assert!(sol.iterations_used < em.max_iterations, "should converge");
    }

    #[test]
    fn e_step_components_sum_back_to_the_measurement() {
        let cfg = small_waveform();
        let em = default_em(&cfg);
        let truth = PathTruth::new(
            vec![5.0, -30.0],
            vec![3.3e-8, 9.1e-8],
            vec![Complex64::new(2.2e-4, 0.0), Complex64::new(-0.9e-4, 1.1e-4)],
            0,
        )
        .unwrap();
        let meas = noisy_cfr(&cfg, &truth, 1e-10 / 64.0, 42);
        let init = sic_initialize(&cfg, &meas, 2, &em).unwrap();
        let data: Vec<Complex64> = meas.values.iter().cloned().collect();
        let n = meas.num_antennas();
        let mut resid = vec![Complex64::new(0.0, 0.0); data.len()];
        e_step_residual(&cfg, &data, n, &init.delays_s, &init.gains, &mut resid);
        // y_l = a(tau_l) xi_l + beta_l * resid, summed over l, must return H
        let mut sum = vec![Complex64::new(0.0, 0.0); data.len()];
        for li in 0..2 {
            let a_tau = delay_signature(&cfg, init.delays_s[li]);
            let beta = em.beta(li, 2);
            let row_gains = init.gains.row(li);
            for ((row, r_row), &at) in sum
                .chunks_exact_mut(n)
                .zip(resid.chunks_exact(n))
                .zip(a_tau.iter())
            {
                for ((s, &r), &xi) in row.iter_mut().zip(r_row).zip(row_gains.iter()) {
                    *s += at * xi + beta * r;
                }
            }
        }
        for (s, &h) in sum.iter().zip(&data) {
            assert!(
                (s - h).norm() < 1e-10,
                "complete-data split does not resum: {s} vs {h}"
            );
        }
    }

    #[test]
    fn correlation_kernel_matches_the_tone_sum() {
        let cfg = small_waveform();
        let tg = ToneGrid::of(&cfg);
        let m = cfg.num_subcarriers;
        let brute = |delta: f64| -> Complex64 {
            (0..m)
                .map(|mi| Complex64::cis(TAU * cfg.tone_frequency_hz(mi) * delta))
                .sum()
        };
        let tol = 1e-8 * m as f64;
        // Generic offsets, zero, and the grating-lobe singularities +-k/df
        // where the Dirichlet quotient needs its L'Hopital branch.
        let probes = [
            0.0,
            3.7e-10,
            -8.2e-9,
            2.553e-9,
            1.0 / tg.df_hz,
            -1.0 / tg.df_hz,
            3.0 / tg.df_hz,
            0.5 / tg.df_hz,
        ];
        for &delta in &probes {
            let closed = path_correlation_kernel(&tg, m, delta);
            assert!(
                (closed - brute(delta)).norm() < tol,
                "closed form at {delta}: {closed} vs {}",
                brute(delta)
            );
        }
        // The streaming form must track the closed form along a uniform
        // lattice, including one that steps across a grating lobe.
        let fine = 1.0 / (256.0 * cfg.occupied_bandwidth_hz());
        let start = -2.0e-9;
        let mut scan = KernelScan::new(&tg, m, start, fine);
        for k in 0..400 {
            let delta = start + k as f64 * fine;
            let streamed = scan.next_kernel();
            assert!(
                (streamed - brute(delta)).norm() < tol,
                "streamed kernel at step {k} (delta {delta}): {streamed} vs {}",
                brute(delta)
            );
        }
        let lobe_start = 1.0 / tg.df_hz - 5.0 * fine;
        let mut scan = KernelScan::new(&tg, m, lobe_start, fine);
        for k in 0..11 {
            let delta = lobe_start + k as f64 * fine;
            let streamed = scan.next_kernel();
            assert!(
                (streamed - brute(delta)).norm() < tol,
                "streamed kernel across the grating lobe at step {k}: {streamed} vs {}",
                brute(delta)
            );
        }
    }

    #[test]
    fn em_flags_nonconvergence_instead_of_failing() {
        let cfg = small_waveform();
        let mut em = default_em(&cfg);
        em.max_iterations = 2;
        em.rel_gain_tol = 1e-14; // unreachably tight under noise
        let truth = PathTruth::new(
            vec![5.0, -30.0],
            vec![3.3e-8, 4.0e-8],
            vec![Complex64::new(2.2e-4, 0.0), Complex64::new(-1.9e-4, 1.1e-4)],
            0,
        )
        .unwrap();
        let meas = noisy_cfr(&cfg, &truth, 1e-9 / 64.0, 5);
        let init = sic_initialize(&cfg, &meas, 2, &em).unwrap();
        let sol = em_refine(&cfg, &meas, &init, &em).unwrap();
        assert_eq!(sol.iterations_used, em.max_iterations);
    }

    #[test]
    fn em_rejects_non_finite_inputs() {
        let cfg = small_waveform();
        let em = default_em(&cfg);
        let truth =
            PathTruth::new(vec![0.0], vec![3e-8], vec![Complex64::new(2e-4, 0.0)], 0).unwrap();
        let mut meas = noiseless_cfr(&cfg, &truth);
        let init = sic_initialize(&cfg, &meas, 1, &em).unwrap();
        meas.values[(3, 2)] = Complex64::new(f64::NAN, 0.0);
        assert!(em_refine(&cfg, &meas, &init, &em).is_err());
        assert!(sic_initialize(&cfg, &meas, 1, &em).is_err());
    }

    #[test]
    fn select_los_prefers_earliest_strong_path() {
        let mut gains = Array2::zeros((3, 2));
        // powers: 0.02 (weak early ghost), 1.0, 0.25
        gains[(0, 0)] = Complex64::new(0.1, 0.0);
        gains[(0, 1)] = Complex64::new(0.1, 0.0);
        gains[(1, 0)] = Complex64::new(0.5, 0.5);
        gains[(1, 1)] = Complex64::new(0.5, -0.5);
        gains[(2, 0)] = Complex64::new(0.35, 0.0);
        gains[(2, 1)] = Complex64::new(0.0, 0.35);
        let sol = PathSolution {
            delays_s: vec![1e-8, 3e-8, 2e-8],
            gains,
            objective_trace: vec![],
            iterations_used: 0,
        };
        // the 1e-8 ghost is below 5% of the max power; 2e-8 clears it
        assert_eq!(select_los(&sol, 0.05).unwrap(), 2);
        // with no threshold the ghost wins
        assert_eq!(select_los(&sol, 0.0).unwrap(), 0);
        assert!(select_los(&sol, 1.5).is_err());
    }
}
