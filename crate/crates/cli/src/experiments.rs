//! Monte-Carlo experiment drivers.
//!
//! Both experiments are deterministic for a fixed config and seed regardless
//! of the worker count: every parallel stage is an indexed `par_iter` whose
//! results are collected back in index order, RNG streams are keyed by
//! (CPP, symbol) or trial index rather than by worker, and all file writes
//! happen sequentially after the parallel stage completes.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use arraycal_core::calib::robust_combine;
use arraycal_core::chansim::{synthesize_measurement, synthesize_measurement_at};
use arraycal_core::doa::{beamform_spectrum, spectrum_peak_deg};
use arraycal_core::metrics::{export_cdf_to_path, manifold_mismatch_deg, summarize};
use arraycal_core::pipeline::{write_error_table_csv, ManifoldSource};
use arraycal_core::{
    CalibrationMethod, CalibrationPipeline, Error, ErrorSummary, ManifoldEstimate,
    PhaseSampleSet, SteeringGrid, SPEED_OF_LIGHT_M_S,
};

use crate::output::{
    doa_cdf_path, manifold_path, write_calibration_errors, write_calibration_summary,
    write_doa_bias, write_doa_errors, write_doa_summary, BiasRow, CalibrationRow, DoaRow,
};
use crate::spec::ExperimentSpec;

/// DOA trials use RNG streams disjoint from calibration streams, whose
/// cpp_index never exceeds the CPP count.
const DOA_TRIAL_STREAM_BASE: usize = 1_000_000;
/// Salt so calibration and DOA campaigns with the same seed draw
/// independent randomness.
const DOA_SEED_SALT: u64 = 0x5EED_D0A0;
/// Trials are assigned round-robin to this many equal-width angular bins,
/// with the angle drawn uniformly inside the bin: the marginal stays uniform
/// over the field of view while per-bin counts are pinned to ~trials/bins,
/// which keeps per-bin bias estimates equally sharp.
pub const DOA_BIN_COUNT: usize = 5;

pub struct CalibrationArtifacts {
    pub errors_path: PathBuf,
    pub summary_path: PathBuf,
    pub manifold_paths: Vec<PathBuf>,
    pub error_table_path: PathBuf,
    /// (k_factor_db, symbols, method, summary of per-CPP mismatch angles).
    pub summaries: Vec<(f64, usize, &'static str, ErrorSummary)>,
}

/// Run the full calibration campaign: for every K-factor, synthesize
/// `trials` symbols at each CPP, extract per-antenna phase samples with every
/// configured method from the *same* measurements (paired comparison), then
/// for each accumulation length Q regroup the pool into `trials / Q` disjoint
/// groups and score each group's combined estimate at each CPP against the
/// true steering vector.
pub fn run_calibration_experiment(
    spec: &ExperimentSpec,
) -> arraycal_core::Result<CalibrationArtifacts> {
    std::fs::create_dir_all(&spec.output_dir)
        .map_err(|e| Error::io(spec.output_dir.display().to_string(), e))?;
    let pipeline = CalibrationPipeline::new(&spec.waveform, &spec.geometry, spec.pipeline)?;
    let theta_k = spec.cpp_angles_deg()?;
    let n_cpp = theta_k.len();
    let n_ant = spec.geometry.num_elements();
    let trials = spec.trials;

    let error_table_path = spec.output_dir.join("error_table_true.csv");
    {
        let file = File::create(&error_table_path)
            .map_err(|e| Error::io(error_table_path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        write_error_table_csv(&spec.error_table, &mut w)?;
    }

    // true steering vectors at the CPP angles, shared across K-factors
    let a_true_k: Vec<Vec<Complex64>> = theta_k
        .iter()
        .map(|&th| {
            ManifoldSource::True(&spec.error_table)
                .steering(&spec.geometry, th)
                .map(|v| v.to_vec())
        })
        .collect::<arraycal_core::Result<_>>()?;
    let ideal_k: Vec<Vec<Complex64>> = theta_k
        .iter()
        .map(|&th| {
            ManifoldSource::Ideal
                .steering(&spec.geometry, th)
                .map(|v| v.to_vec())
        })
        .collect::<arraycal_core::Result<_>>()?;

    let mut error_rows: Vec<CalibrationRow> = Vec::new();
    let mut summaries: Vec<(f64, usize, &'static str, ErrorSummary)> = Vec::new();
    let mut manifold_paths: Vec<PathBuf> = Vec::new();

    for &k_db in &spec.k_factors_db {
        let scn = spec.scenario(k_db)?;
        let t0 = Instant::now();
        eprintln!(
            "[calibrate] K = {k_db} dB: extracting {} measurements x {} methods",
            n_cpp * trials,
            spec.methods.len()
        );

        // samples[cpp * trials + symbol][method][antenna]
        let samples: Vec<Vec<Vec<f64>>> = (0..n_cpp * trials)
            .into_par_iter()
            .map(|idx| {
                let cpp = idx / trials;
                let sym = idx % trials;
                let (_, meas) = synthesize_measurement(
                    &scn,
                    &spec.waveform,
                    &spec.geometry,
                    &spec.error_table,
                    cpp,
                    sym,
                )?;
                spec.methods
                    .iter()
                    .map(|&m| pipeline.phase_samples(m, &meas, theta_k[cpp]))
                    .collect::<arraycal_core::Result<Vec<_>>>()
            })
            .collect::<arraycal_core::Result<Vec<_>>>()?;
        eprintln!(
            "[calibrate] K = {k_db} dB: extraction took {:.1} s",
            t0.elapsed().as_secs_f64()
        );

        for (mi, &method) in spec.methods.iter().enumerate() {
            for &q in &spec.symbols {
                let groups = trials / q;
                let mut alphas = Vec::with_capacity(groups * n_cpp);
                for g in 0..groups {
                    for cpp in 0..n_cpp {
                        let mut phases = vec![0.0; n_ant];
                        for (n, phase) in phases.iter_mut().enumerate().skip(1) {
                            let vals: Vec<f64> = (g * q..(g + 1) * q)
                                .map(|s| samples[cpp * trials + s][mi][n])
                                .collect();
                            *phase = robust_combine(
                                &vals,
                                spec.pipeline.hampel_window,
                                spec.pipeline.hampel_n_sigma,
                            )?;
                        }
                        let a_hat: Vec<Complex64> = ideal_k[cpp]
                            .iter()
                            .zip(&phases)
                            .map(|(a, &p)| a * Complex64::cis(p))
                            .collect();
                        let alpha = manifold_mismatch_deg(&a_hat, &a_true_k[cpp])?;
                        error_rows.push(CalibrationRow {
                            k_factor_db: k_db,
                            symbols: q,
                            method: method.as_str(),
                            group: g,
                            cpp,
                            theta_deg: theta_k[cpp],
                            alpha_deg: alpha,
                        });
                        alphas.push(alpha);
                    }
                }
                summaries.push((k_db, q, method.as_str(), summarize(&alphas)?));
            }

            // continuous manifold from the entire symbol pool
            let mut set = PhaseSampleSet::new(theta_k.clone(), n_ant)?;
            for sym in 0..trials {
                for cpp in 0..n_cpp {
                    set.push_symbol(cpp, &samples[cpp * trials + sym][mi])?;
                }
            }
            let manifold = pipeline.assemble_manifold(&set)?;
            let mpath = manifold_path(&spec.output_dir, method.as_str(), k_db);
            let file = File::create(&mpath)
                .map_err(|e| Error::io(mpath.display().to_string(), e))?;
            let mut w = BufWriter::new(file);
            manifold
                .export_csv(&mut w)
                .map_err(|e| Error::io(mpath.display().to_string(), e))?;
            manifold_paths.push(mpath);
        }
        eprintln!(
            "[calibrate] K = {k_db} dB: done in {:.1} s",
            t0.elapsed().as_secs_f64()
        );
    }

    let errors_path = spec.output_dir.join("calibration_errors.csv");
    let summary_path = spec.output_dir.join("calibration_summary.csv");
    write_calibration_errors(&errors_path, &error_rows)?;
    write_calibration_summary(&summary_path, &summaries)?;

    Ok(CalibrationArtifacts {
        errors_path,
        summary_path,
        manifold_paths,
        error_table_path,
        summaries,
    })
}

pub struct DoaArtifacts {
    pub errors_path: PathBuf,
    pub summary_path: PathBuf,
    pub bias_path: PathBuf,
    pub cdf_paths: Vec<PathBuf>,
    /// (k_factor_db, manifold label, summary of |signed error|).
    pub summaries: Vec<(f64, String, ErrorSummary)>,
    pub biases: Vec<BiasRow>,
}

/// Run the DOA Monte-Carlo: per K-factor, first build each method's manifold
/// estimate from a calibration campaign, then estimate the LOS direction of
/// random user signals against steering grids from the ideal model, the
/// ground-truth table, and every estimated manifold. The multipath
/// suppression front end (gate + EM + LOS selection) runs once per trial;
/// only the beamforming grid differs between manifold sources.
pub fn run_doa_experiment(spec: &ExperimentSpec) -> arraycal_core::Result<DoaArtifacts> {
    std::fs::create_dir_all(&spec.output_dir)
        .map_err(|e| Error::io(spec.output_dir.display().to_string(), e))?;
    let pipeline = CalibrationPipeline::new(&spec.waveform, &spec.geometry, spec.pipeline)?;
    let theta_k = spec.cpp_angles_deg()?;
    let n_cpp = theta_k.len();
    let n_ant = spec.geometry.num_elements();
    let q = spec.doa.calibration_symbols;
    let (fov_lo, fov_hi) = (spec.scenario.fov_deg[0], spec.scenario.fov_deg[1]);
    let bin_width = (fov_hi - fov_lo) / DOA_BIN_COUNT as f64;

    let mut all_rows: Vec<DoaRow> = Vec::new();
    let mut summaries: Vec<(f64, String, ErrorSummary)> = Vec::new();
    let mut biases: Vec<BiasRow> = Vec::new();
    let mut cdf_paths: Vec<PathBuf> = Vec::new();

    for (k_idx, &k_db) in spec.k_factors_db.iter().enumerate() {
        let scn = spec.scenario(k_db)?;
        let t0 = Instant::now();
        eprintln!(
            "[doa-eval] K = {k_db} dB: calibrating with {} CPPs x {q} symbols",
            n_cpp
        );

        // samples[cpp * q + symbol][method][antenna]
        let samples: Vec<Vec<Vec<f64>>> = (0..n_cpp * q)
            .into_par_iter()
            .map(|idx| {
                let cpp = idx / q;
                let sym = idx % q;
                let (_, meas) = synthesize_measurement(
                    &scn,
                    &spec.waveform,
                    &spec.geometry,
                    &spec.error_table,
                    cpp,
                    sym,
                )?;
                spec.methods
                    .iter()
                    .map(|&m| pipeline.phase_samples(m, &meas, theta_k[cpp]))
                    .collect::<arraycal_core::Result<Vec<_>>>()
            })
            .collect::<arraycal_core::Result<Vec<_>>>()?;

        let mut manifolds: Vec<(CalibrationMethod, ManifoldEstimate)> = Vec::new();
        for (mi, &method) in spec.methods.iter().enumerate() {
            let mut set = PhaseSampleSet::new(theta_k.clone(), n_ant)?;
            for idx in 0..n_cpp * q {
                set.push_symbol(idx / q, &samples[idx][mi])?;
            }
            manifolds.push((method, pipeline.assemble_manifold(&set)?));
        }

        // steering grids: nominal model, oracle table, then each estimate
        let mut grids: Vec<(String, SteeringGrid)> = Vec::new();
        let mut sources: Vec<(String, ManifoldSource)> = vec![
            ("ideal".to_string(), ManifoldSource::Ideal),
            ("true".to_string(), ManifoldSource::True(&spec.error_table)),
        ];
        for (method, est) in &manifolds {
            sources.push((method.as_str().to_string(), ManifoldSource::Estimated(est)));
        }
        for (label, source) in sources {
            let grid = SteeringGrid::build(
                |th| source.steering(&spec.geometry, th),
                (fov_lo, fov_hi),
                spec.doa.grid_step_deg,
            )?;
            grids.push((label, grid));
        }

        eprintln!(
            "[doa-eval] K = {k_db} dB: manifolds ready after {:.1} s; running {} trials x {} grids",
            t0.elapsed().as_secs_f64(),
            spec.doa.trials,
            grids.len()
        );

        // each trial: draw (DOA, TOA), synthesize, isolate the LOS snapshot
        // once, then beamform against every grid
        let trial_results: Vec<(f64, Vec<f64>)> = (0..spec.doa.trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ DOA_SEED_SALT);
                rng.set_stream(((k_idx as u64) << 32) | t as u64);
                let bin = t % DOA_BIN_COUNT;
                let bin_hi = fov_lo + bin_width * (bin + 1) as f64;
                let theta_true = bin_hi - rng.gen::<f64>() * bin_width;
                let toa_s = spec.doa.toa_max_ns * 1e-9 * (1.0 - rng.gen::<f64>());
                let range_m = toa_s * SPEED_OF_LIGHT_M_S;
                let (_, meas) = synthesize_measurement_at(
                    &scn,
                    &spec.waveform,
                    &spec.geometry,
                    &spec.error_table,
                    theta_true,
                    range_m,
                    DOA_TRIAL_STREAM_BASE + t,
                    k_idx,
                )?;
                let snapshot = pipeline.los_snapshot(&meas)?;
                let estimates = grids
                    .iter()
                    .map(|(_, grid)| {
                        let spectrum = beamform_spectrum(grid, &snapshot)?;
                        spectrum_peak_deg(grid, &spectrum)
                    })
                    .collect::<arraycal_core::Result<Vec<f64>>>()?;
                Ok((theta_true, estimates))
            })
            .collect::<arraycal_core::Result<Vec<_>>>()?;

        for (gi, (label, _)) in grids.iter().enumerate() {
            let mut abs_errors = Vec::with_capacity(spec.doa.trials);
            let mut bin_sum = [0.0f64; DOA_BIN_COUNT];
            let mut bin_n = [0usize; DOA_BIN_COUNT];
            for (t, (theta_true, estimates)) in trial_results.iter().enumerate() {
                let err = estimates[gi] - theta_true;
                all_rows.push(DoaRow {
                    k_factor_db: k_db,
                    manifold: label.clone(),
                    trial: t,
                    theta_true_deg: *theta_true,
                    theta_est_deg: estimates[gi],
                    error_deg: err,
                });
                abs_errors.push(err.abs());
                bin_sum[t % DOA_BIN_COUNT] += err;
                bin_n[t % DOA_BIN_COUNT] += 1;
            }
            summaries.push((k_db, label.clone(), summarize(&abs_errors)?));
            for b in 0..DOA_BIN_COUNT {
                biases.push(BiasRow {
                    k_factor_db: k_db,
                    manifold: label.clone(),
                    bin_lo_deg: fov_lo + bin_width * b as f64,
                    bin_hi_deg: fov_lo + bin_width * (b + 1) as f64,
                    count: bin_n[b],
                    mean_error_deg: if bin_n[b] > 0 {
                        bin_sum[b] / bin_n[b] as f64
                    } else {
                        0.0
                    },
                });
            }
            let cdf = doa_cdf_path(&spec.output_dir, label, k_db);
            export_cdf_to_path(&abs_errors, &cdf)?;
            cdf_paths.push(cdf);
        }
        eprintln!(
            "[doa-eval] K = {k_db} dB: done in {:.1} s",
            t0.elapsed().as_secs_f64()
        );
    }

    let errors_path = spec.output_dir.join("doa_errors.csv");
    let summary_path = spec.output_dir.join("doa_summary.csv");
    let bias_path = spec.output_dir.join("doa_bias.csv");
    write_doa_errors(&errors_path, &all_rows)?;
    write_doa_summary(&summary_path, &summaries)?;
    write_doa_bias(&bias_path, &biases)?;

    Ok(DoaArtifacts {
        errors_path,
        summary_path,
        bias_path,
        cdf_paths,
        summaries,
        biases,
    })
}

/// Synthesize one campaign's raw measurements and write them as CSV, for
/// inspection or external tooling.
pub fn dump_cfr(
    spec: &ExperimentSpec,
    k_factor_db: f64,
    symbols_per_cpp: usize,
    path: &std::path::Path,
) -> arraycal_core::Result<()> {
    let scn = spec.scenario(k_factor_db)?;
    let measurements = arraycal_core::chansim::run_campaign(
        &scn,
        &spec.waveform,
        &spec.geometry,
        &spec.error_table,
        symbols_per_cpp,
    )?;
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    arraycal_core::chansim::write_cfr_csv(&mut w, &measurements)
        .map_err(|e| Error::io(path.display().to_string(), e))
}
