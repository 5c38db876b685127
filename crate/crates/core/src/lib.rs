//! Simulation and signal recovery for an optically pumped atomic
//! magnetometer measuring millisecond biomagnetic transients.
//!
//! Internal computation is SI throughout; [`units`] tags values that leave
//! the library.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dsp;
pub mod error;
pub mod experiment;
pub mod field;
pub mod io;
pub mod metrology;
pub mod physics;
pub mod spin;
pub mod units;

pub use config::{ExperimentConfig, Mode, RunConfig};
pub use dsp::{CalibrationScale, DeconvolutionParams, FidFit, Spectrum};
pub use error::{Error, FitFailure, Result};
pub use experiment::{RunReport, ReportEntry};
pub use field::{Axis, FieldWaveform, NerveTemplateParams};
pub use metrology::{Measurement, NoiseBudget};
pub use physics::{AtomEnsemble, MagnetometerConfig, PhysicalConstants, ReadoutNoise};
pub use spin::{DetectionRecord, Sequence, SpinState, SpinTrajectory};
pub use units::{Quantity, Unit};
