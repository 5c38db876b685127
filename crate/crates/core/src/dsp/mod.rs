//! Signal processing on detection records.

pub mod average;
pub mod calibrate;
pub mod deconv;
pub mod fit;
pub mod psd;

pub use average::{average_shots, average_simulated, snr};
pub use calibrate::{calibrate_continuous, calibrate_pulsed, CalibrationMode, CalibrationScale};
pub use deconv::{deconvolve, response_to, DeconvolutionParams};
pub use fit::{fit_fid, fit_response, FidFit, ResponseFit};
pub use psd::{damped_sine_peak, dtft, psd, psd_at, psd_window, refine_peak, Spectrum};
