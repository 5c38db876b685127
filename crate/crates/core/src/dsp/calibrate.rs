//! Conversion of readout units into field units with a known calibration field.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dsp::deconv::DeconvolutionParams;
use crate::dsp::fit::fit_response;
use crate::dsp::psd::{psd_at, psd_window, refine_peak};
use crate::error::{Error, Result};
use crate::field::{Axis, FieldWaveform};
use crate::spin::DetectionRecord;
use crate::units::{FourierComponent, Quantity, TeslaSecond};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMode {
    Pulsed,
    Continuous,
}

impl fmt::Display for CalibrationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CalibrationMode::Pulsed => "pulsed",
            CalibrationMode::Continuous => "continuous",
        })
    }
}

/// Readout-to-field scale derived from a calibration record.
///
/// Pulsed: `factor` is T·s per √(S_xx) unit, evaluated at `omega` over the
/// first `window` seconds. Continuous: `factor` is T·s per record unit, i.e.
/// the inverse of the fitted response gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationScale {
    pub mode: CalibrationMode,
    pub factor: f64,
    /// |B_cal(Ω)| in T·s for pulsed, calibration amplitude B0 in T for continuous.
    pub reference: f64,
    /// rad/s
    pub omega: f64,
    /// Fitted Γ (continuous only), 1/s.
    pub decay_rate: Option<f64>,
    /// PSD window, s (pulsed only).
    pub window: f64,
    /// Relative fit residual (continuous only).
    pub fit_residual: Option<f64>,
}

impl CalibrationScale {
    /// |B(Ω)| of a pulsed (A−B) record.
    pub fn fourier_component(&self, record: &DetectionRecord) -> Result<FourierComponent> {
        let s = self.windowed_psd(record)?;
        Ok(Quantity::<TeslaSecond>::new(self.factor * s.sqrt()))
    }

    /// Two-sided S_xx of the record at the calibration frequency.
    pub fn windowed_psd(&self, record: &DetectionRecord) -> Result<f64> {
        if self.mode != CalibrationMode::Pulsed {
            return Err(Error::Calibration(
                "Fourier-component readout needs a pulsed calibration".into(),
            ));
        }
        let n = ((self.window / record.dt).round() as usize).min(record.len());
        if n < 2 {
            return Err(Error::invalid("record", "shorter than two samples"));
        }
        Ok(psd_at(&record.samples[..n], record.dt, self.omega))
    }

    /// Kernel parameters for [`crate::dsp::deconvolve`] with this gain.
    pub fn deconvolution_params(&self, axis: Axis) -> Result<DeconvolutionParams> {
        match (self.mode, self.decay_rate) {
            (CalibrationMode::Continuous, Some(g)) => {
                Ok(DeconvolutionParams::new(self.omega, g, 1.0 / self.factor, axis))
            }
            _ => Err(Error::Calibration(
                "deconvolution needs a continuous calibration".into(),
            )),
        }
    }

    /// Flat `key = value` pairs for reports.
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("mode".to_string(), self.mode.to_string()),
            ("factor".to_string(), format!("{:e}", self.factor)),
            ("reference".to_string(), format!("{:e}", self.reference)),
            ("omega_rad_per_s".to_string(), format!("{:e}", self.omega)),
        ];
        if let Some(g) = self.decay_rate {
            kv.push(("decay_rate_per_s".into(), format!("{g:e}")));
        }
        if self.mode == CalibrationMode::Pulsed {
            kv.push(("window_s".into(), format!("{:e}", self.window)));
        }
        if let Some(r) = self.fit_residual {
            kv.push(("fit_relative_residual".into(), format!("{r:e}")));
        }
        kv
    }

    /// Inverse of [`CalibrationScale::key_values`]; unknown keys are ignored.
    pub fn from_key_values(kv: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| kv.iter().find(|(key, _)| key == k).map(|(_, v)| v.trim());
        let num = |k: &'static str| -> Result<Option<f64>> {
            get(k)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| Error::Calibration(format!("{k} = {v}: {e}")))
                })
                .transpose()
        };
        let need = |k: &'static str| -> Result<f64> {
            num(k)?.ok_or_else(|| Error::Calibration(format!("missing key `{k}`")))
        };
        let mode = match get("mode") {
            Some("pulsed") => CalibrationMode::Pulsed,
            Some("continuous") => CalibrationMode::Continuous,
            other => {
                return Err(Error::Calibration(format!("unknown calibration mode {other:?}")))
            }
        };
        let window = match mode {
            CalibrationMode::Pulsed => need("window_s")?,
            CalibrationMode::Continuous => 0.0,
        };
        let decay_rate = num("decay_rate_per_s")?;
        if mode == CalibrationMode::Continuous && decay_rate.is_none() {
            return Err(Error::Calibration("missing key `decay_rate_per_s`".into()));
        }
        Ok(Self {
            mode,
            factor: need("factor")?,
            reference: need("reference")?,
            omega: need("omega_rad_per_s")?,
            decay_rate,
            window,
            fit_residual: num("fit_relative_residual")?,
        })
    }
}

/// Scale from a pulsed calibration record: the PSD peak is located on the
/// grid, refined between bins, and mapped onto the known `cal_fourier` (T·s).
pub fn calibrate_pulsed(
    record: &DetectionRecord,
    cal_fourier: f64,
    window: f64,
) -> Result<CalibrationScale> {
    if !(cal_fourier > 0.0) {
        return Err(Error::invalid("cal_fourier", "must be > 0"));
    }
    if !(window > 0.0) {
        return Err(Error::invalid("window", "must be > 0"));
    }
    let spec = psd_window(&record.samples, record.dt, window)?;
    let n = spec.n_samples;
    let k = spec
        .argmax()
        .ok_or_else(|| Error::Calibration("empty spectrum".into()))?;
    if !(spec.psd_values[k] > 0.0) {
        return Err(Error::Calibration("calibration record has no spectral peak".into()));
    }
    let (omega, peak) = refine_peak(&record.samples[..n], record.dt, &spec, k);
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::Calibration(format!("vanishing PSD peak {peak:e}")));
    }
    Ok(CalibrationScale {
        mode: CalibrationMode::Pulsed,
        factor: cal_fourier / peak.sqrt(),
        reference: cal_fourier,
        omega,
        decay_rate: None,
        window: n as f64 * record.dt,
        fit_residual: None,
    })
}

/// Scale from a continuous record of the known calibration field `cal`.
/// The response fit supplies Ω, Γ and the gain.
pub fn calibrate_continuous(
    record: &DetectionRecord,
    cal: &FieldWaveform,
    amplitude: f64,
    gamma_guess: f64,
) -> Result<CalibrationScale> {
    let cal = if cal.len() < record.len() {
        cal.clone().resized(record.len())?
    } else {
        cal.clone()
    };
    let fit = fit_response(record, &cal, None, gamma_guess)?;
    if fit.gain == 0.0 || !fit.gain.is_finite() {
        return Err(Error::Calibration("response gain vanished".into()));
    }
    Ok(CalibrationScale {
        mode: CalibrationMode::Continuous,
        factor: 1.0 / fit.gain,
        reference: amplitude,
        omega: fit.omega,
        decay_rate: Some(fit.decay_rate),
        window: record.duration(),
        fit_residual: Some(fit.relative_residual),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{calibration_waveform, fourier_component, DEFAULT_DT};
    use crate::physics::{AtomEnsemble, MagnetometerConfig};
    use crate::spin::{continuous_record, pulsed_sequence, PulsedOptions, Sequence};
    use std::f64::consts::PI;

    fn pulsed_cal(coupling: f64) -> (DetectionRecord, f64) {
        let mut cfg = MagnetometerConfig::pulsed_default();
        cfg.readout_coupling = coupling;
        let ens = AtomEnsemble::room_temperature();
        let w = calibration_waveform(1e-9, 700.0, DEFAULT_DT).unwrap();
        let (a, b) = pulsed_sequence(&cfg, &ens, &w, &PulsedOptions::default()).unwrap();
        let fc = fourier_component(&w, 2.0 * PI * 700.0).norm();
        (a.subtract(&b).unwrap(), fc)
    }

    #[test]
    fn pulsed_round_trip() {
        let (rec, fc) = pulsed_cal(1.0);
        let s = calibrate_pulsed(&rec, fc, 8e-3).unwrap();
        let back = s.fourier_component(&rec).unwrap().si();
        assert!(((back - fc) / fc).abs() < 1e-12);
        assert!((s.omega / (2.0 * PI) - 700.0).abs() < 5.0);
        assert_eq!(CalibrationScale::from_key_values(&s.key_values()).unwrap(), s);
    }

    #[test]
    fn pulsed_gain_cancels() {
        let (r1, fc) = pulsed_cal(1.0);
        let (r2, _) = pulsed_cal(37.5);
        let s1 = calibrate_pulsed(&r1, fc, 8e-3).unwrap();
        let s2 = calibrate_pulsed(&r2, fc, 8e-3).unwrap();
        let half = DetectionRecord::new(
            r2.samples.iter().map(|v| 0.5 * v).collect(),
            r2.dt,
            0.0,
            Sequence::PulsedDifference,
        )
        .unwrap();
        let a = s1.fourier_component(&r1).unwrap().si();
        let b = s2.fourier_component(&half).unwrap().si();
        assert!((b / a - 0.5).abs() < 1e-9);
    }

    #[test]
    fn pulsed_zero_record_fails() {
        let rec = DetectionRecord::new(vec![0.0; 800], 1e-5, 0.0, Sequence::PulsedDifference).unwrap();
        assert!(matches!(calibrate_pulsed(&rec, 7e-13, 8e-3), Err(Error::Calibration(_))));
    }

    #[test]
    fn continuous_fit_recovers_operating_point() {
        let cfg = MagnetometerConfig::continuous_default();
        let ens = AtomEnsemble::room_temperature();
        let w = calibration_waveform(1e-9, 410.0, DEFAULT_DT)
            .unwrap()
            .resized(1000)
            .unwrap();
        let rec = continuous_record(&cfg, &ens, &w, None).unwrap();
        let s = calibrate_continuous(&rec, &w, 1e-9, 1500.0).unwrap();
        let expect_gain = cfg.readout_coupling * crate::physics::GAMMA_CS * ens.total_spin();
        assert!(((1.0 / s.factor - expect_gain) / expect_gain).abs() < 1e-3);
        assert!((s.omega / cfg.larmor_omega - 1.0).abs() < 1e-3);
        assert!((s.decay_rate.unwrap() / cfg.relaxation_rate - 1.0).abs() < 1e-3);
        assert!(s.fit_residual.unwrap() < 1e-3);
        assert!(s.fourier_component(&rec).is_err());
        let mut back = CalibrationScale::from_key_values(&s.key_values()).unwrap();
        back.window = s.window;
        assert_eq!(back, s);
        let kv = vec![("mode".to_string(), "continuous".to_string())];
        assert!(CalibrationScale::from_key_values(&kv).is_err());
    }
}
