//! Experiment driver for the array-calibration library: configuration
//! parsing/validation, Monte-Carlo campaigns, and CSV result writers.

pub mod experiments;
pub mod output;
pub mod spec;
