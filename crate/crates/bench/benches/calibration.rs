//! Benchmarks for the per-measurement calibration hot path and curve fitting.
//!
//! The simulation budget is dominated by channel estimation per UL-SRS
//! symbol: CIR gating of the full-band CFR, MDL model-order selection fused
//! with SIC initialization, and the EM refinement of path delays and
//! per-antenna gains. Each stage is benchmarked alone and as the combined
//! per-measurement pipeline, plus the LOWESS/Akima error-curve fit that runs
//! once per antenna per campaign.

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use arraycal_core::calib::fit_error_function;
use arraycal_core::chansim::synthesize_measurement;
use arraycal_core::em::{em_refine, estimate_order_with_init, sic_initialize};
use arraycal_core::pipeline::synthetic_error_table;
use arraycal_core::{
    ArrayGeometry, CfrMeasurement, CirGate, EmConfig, ScenarioConfig, WaveformConfig,
};

const CARRIER_HZ: f64 = 4.85e9;
const COVERAGE_M: f64 = 100.0;
const MAX_PATHS: usize = 8;

struct Fixture {
    full_cfg: WaveformConfig,
    gate: CirGate,
    meas: CfrMeasurement,
    reduced_cfg: WaveformConfig,
    reduced: CfrMeasurement,
    em: EmConfig,
    order: usize,
}

fn fixture() -> Fixture {
    let full_cfg = WaveformConfig::new(CARRIER_HZ, 30e3, 1632, 2, 97.92e6).unwrap();
    let geom = ArrayGeometry::half_wavelength_ula(4, CARRIER_HZ).unwrap();
    let table = synthetic_error_table(4, 20.0, (-75.0, 75.0), 0.5, 1).unwrap();
    let scn = ScenarioConfig::arc(3.0, 25, COVERAGE_M, (-60.0, 60.0), 7).unwrap();
    let (_, meas) = synthesize_measurement(&scn, &full_cfg, &geom, &table, 12, 0).unwrap();

    let gate = CirGate::new(&full_cfg, COVERAGE_M).unwrap();
    let reduced = gate.apply(&meas).unwrap();
    let reduced_cfg = gate.reduced_config().clone();
    let em = EmConfig::for_bandwidth(reduced_cfg.occupied_bandwidth_hz(), gate.gate_delay_s())
        .unwrap();
    let (order, _) = estimate_order_with_init(&reduced_cfg, &reduced, &em, MAX_PATHS).unwrap();
    Fixture {
        full_cfg,
        gate,
        meas,
        reduced_cfg,
        reduced,
        em,
        order,
    }
}

fn bench_calibration(c: &mut Criterion) {
    let fx = fixture();
    let init = sic_initialize(&fx.reduced_cfg, &fx.reduced, fx.order, &fx.em).unwrap();

    let mut group = c.benchmark_group("per_measurement");
    group.sample_size(30);

    group.bench_function("cir_gate_1632_to_64", |b| {
        b.iter(|| fx.gate.apply(black_box(&fx.meas)).unwrap())
    });

    group.bench_function("order_select_with_sic_init", |b| {
        b.iter(|| {
            estimate_order_with_init(&fx.reduced_cfg, black_box(&fx.reduced), &fx.em, MAX_PATHS)
                .unwrap()
        })
    });

    group.bench_function("em_refine", |b| {
        b.iter(|| em_refine(&fx.reduced_cfg, black_box(&fx.reduced), &init, &fx.em).unwrap())
    });

    group.bench_function("full_pipeline_gate_order_refine", |b| {
        b.iter(|| {
            let reduced = fx.gate.apply(black_box(&fx.meas)).unwrap();
            let (l, start) =
                estimate_order_with_init(&fx.reduced_cfg, &reduced, &fx.em, MAX_PATHS).unwrap();
            let _ = l;
            em_refine(&fx.reduced_cfg, &reduced, &start, &fx.em).unwrap()
        })
    });

    // One-shot construction cost of the gate itself (FFT plan + tap window).
    group.bench_function("cir_gate_construction", |b| {
        b.iter(|| CirGate::new(black_box(&fx.full_cfg), COVERAGE_M).unwrap())
    });
    group.finish();

    let mut fit = c.benchmark_group("curve_fit");
    let angles: Vec<f64> = (0..25).map(|k| -60.0 + 5.0 * k as f64).collect();
    let phases: Vec<f64> = angles
        .iter()
        .map(|t| 0.3 * (std::f64::consts::TAU * t / 150.0 + 0.4).sin())
        .collect();
    fit.bench_function("lowess_akima_25_cpps", |b| {
        b.iter(|| fit_error_function(black_box(&angles), black_box(&phases), 0.35).unwrap())
    });
    fit.finish();
}

criterion_group!(benches, bench_calibration);
criterion_main!(benches);
