//! Benchmark-only crate; see `benches/calibration.rs`. Criterion targets
//! cover the per-measurement channel-estimation hot path (CIR gating,
//! model-order selection with SIC initialization, EM refinement) and the
//! error-curve fitting stage.
