//! In-situ antenna-array calibration for DOA-based positioning.
//!
//! The crate simulates wideband uplink sounding between user terminals and a
//! radio unit whose antenna array carries unknown direction-dependent phase
//! errors, estimates the multipath channel per measurement (CIR gating,
//! model-order selection, successive interference cancellation and an EM
//! refinement of path delays and per-antenna gains), extracts per-antenna
//! phase-error samples from the line-of-sight path, fuses them into a
//! calibrated array manifold, and evaluates the result against eigenvector
//! and direct-measurement baselines through beamforming DOA accuracy.

pub mod baselines;
pub mod calib;
pub mod chansim;
pub mod doa;
pub mod em;
pub mod manifold;
pub mod metrics;
pub mod phase;
pub mod pipeline;
pub mod smoothing;
pub mod types;

pub use calib::{ManifoldEstimate, PhaseSampleSet};
pub use chansim::{NoiseModel, ScenarioConfig};
pub use doa::SteeringGrid;
pub use em::{CirGate, EmConfig, PathSolution};
pub use metrics::ErrorSummary;
pub use pipeline::{CalibrationMethod, CalibrationPipeline, ManifoldSource, PipelineConfig};
pub use types::{
    ArrayGeometry, CfrMeasurement, Error, PathTruth, PhaseErrorTable, Result, WaveformConfig,
    BOLTZMANN_J_PER_K, REFERENCE_TEMPERATURE_K, SPEED_OF_LIGHT_M_S,
};
