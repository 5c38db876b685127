//! Transverse magnetic-field waveforms and their Fourier components.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::MU0;

/// Default sampling interval, s (100 kHz).
pub const DEFAULT_DT: f64 = 10e-6;

/// Transverse field direction in the lab frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Y,
    #[default]
    Z,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(Error::invalid("axis", format!("unknown axis `{other}`"))),
        }
    }
}

/// A uniformly sampled transverse field B(t), in tesla.
///
/// Sample `k` holds the field over `[start + k·dt, start + (k+1)·dt)` and is
/// evaluated at the interval midpoint, see [`FieldWaveform::time`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldWaveform {
    samples: Vec<f64>,
    dt: f64,
    start_time: f64,
    axis: Axis,
}

impl FieldWaveform {
    pub fn new(samples: Vec<f64>, dt: f64, start_time: f64, axis: Axis) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid("dt", format!("{dt} must be > 0")));
        }
        if samples.is_empty() {
            return Err(Error::invalid("samples", "waveform needs at least one sample"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("samples", format!("sample {i} is not finite")));
        }
        if !start_time.is_finite() {
            return Err(Error::invalid("start_time", "must be finite"));
        }
        Ok(Self {
            samples,
            dt,
            start_time,
            axis,
        })
    }

    pub fn zeros(len: usize, dt: f64, axis: Axis) -> Result<Self> {
        Self::new(vec![0.0; len], dt, 0.0, axis)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.duration()
    }

    /// Midpoint time of sample `k`.
    pub fn time(&self, k: usize) -> f64 {
        self.start_time + (k as f64 + 0.5) * self.dt
    }

    pub fn peak_to_peak(&self) -> f64 {
        peak_to_peak(&self.samples)
    }

    pub fn with_axis(mut self, axis: Axis) -> Self {
        self.axis = axis;
        self
    }

    pub fn shifted(mut self, t0: f64) -> Self {
        self.start_time += t0;
        self
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.samples.iter_mut().for_each(|v| *v *= factor);
        self
    }

    /// Zero-pad or truncate to exactly `len` samples.
    pub fn resized(mut self, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::invalid("len", "waveform needs at least one sample"));
        }
        self.samples.resize(len, 0.0);
        Ok(self)
    }

    /// Pointwise sum of two waveforms on the same grid.
    pub fn add(&self, other: &FieldWaveform) -> Result<Self> {
        if self.len() != other.len()
            || self.dt != other.dt
            || self.start_time != other.start_time
            || self.axis != other.axis
        {
            return Err(Error::GridMismatch("waveforms differ in grid or axis".into()));
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a + b)
            .collect();
        Self::new(samples, self.dt, self.start_time, self.axis)
    }

    /// Rescale so that `|B(omega)|` equals `target` (T·s).
    pub fn rescaled_to_fourier(self, omega: f64, target: f64) -> Result<Self> {
        let current = fourier_component(&self, omega).norm();
        if current == 0.0 {
            return Err(Error::invalid(
                "waveform",
                "zero Fourier component cannot be rescaled",
            ));
        }
        Ok(self.scaled(target / current))
    }
}

pub(crate) fn peak_to_peak(x: &[f64]) -> f64 {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if lo.is_finite() {
        hi - lo
    } else {
        0.0
    }
}

/// One full period of `b0·sin(2π·f_cal·t)` on the z axis, starting at t = 0.
pub fn calibration_waveform(b0: f64, f_cal: f64, dt: f64) -> Result<FieldWaveform> {
    if !(b0 >= 0.0) || !b0.is_finite() {
        return Err(Error::invalid("b0", format!("{b0} must be >= 0")));
    }
    if !(f_cal > 0.0) || !f_cal.is_finite() {
        return Err(Error::invalid("f_cal", format!("{f_cal} must be > 0")));
    }
    if !(dt > 0.0) || dt > 1.0 / (20.0 * f_cal) {
        return Err(Error::invalid(
            "dt",
            format!("{dt} s undersamples a {f_cal} Hz tone (need dt <= 1/(20 f))"),
        ));
    }
    let period = 1.0 / f_cal;
    let n = (period / dt).ceil() as usize;
    let samples = (0..n)
        .map(|k| {
            let t = (k as f64 + 0.5) * dt;
            if t < period {
                b0 * (2.0 * PI * f_cal * t).sin()
            } else {
                0.0
            }
        })
        .collect();
    FieldWaveform::new(samples, dt, 0.0, Axis::Z)
}

/// B(Ω) = ∫ B(t) e^{−iΩt} dt over the waveform support, midpoint rule.
pub fn fourier_component(w: &FieldWaveform, omega: f64) -> Complex64 {
    let step = Complex64::from_polar(1.0, -omega * w.dt);
    let mut phase = Complex64::from_polar(1.0, -omega * w.time(0));
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, &b) in w.samples.iter().enumerate() {
        // Re-anchor the recurrence periodically to bound phase drift.
        if k % 1024 == 0 {
            phase = Complex64::from_polar(1.0, -omega * w.time(k));
        }
        acc += phase * b;
        phase *= step;
    }
    acc * w.dt
}

/// Shape of the template nerve-impulse field and the stimulation artifact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NerveTemplateParams {
    /// T
    pub peak_to_peak: f64,
    /// Full impulse duration, s.
    pub duration: f64,
    /// Start of the impulse, s.
    pub onset: f64,
    /// Weight of the trailing (negative) lobe relative to the leading lobe.
    pub asymmetry: f64,
    /// Start of the square stimulation artifact, s.
    pub stimulus_time: f64,
    /// T
    pub artifact_amplitude: f64,
    /// s
    pub artifact_duration: f64,
    /// Total waveform length, s.
    pub window: f64,
    pub axis: Axis,
}

impl Default for NerveTemplateParams {
    fn default() -> Self {
        Self {
            peak_to_peak: 7e-12,
            duration: 2e-3,
            onset: 6.5e-3,
            asymmetry: 0.664,
            stimulus_time: 5.5e-3,
            artifact_amplitude: 10e-12,
            artifact_duration: 50e-6,
            window: 12e-3,
            axis: Axis::Y,
        }
    }
}

impl NerveTemplateParams {
    /// Impulse only, starting at t = 0: what the pulsed sequence sees while
    /// the pump is off (the artifact falls inside the pumping phase).
    pub fn pulsed_impulse() -> Self {
        Self {
            onset: 0.0,
            stimulus_time: 0.0,
            artifact_amplitude: 0.0,
            window: 2.2e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_to_peak >= 0.0) {
            return Err(Error::invalid("peak_to_peak", "must be >= 0"));
        }
        if !(self.duration > 0.0) {
            return Err(Error::invalid("duration", "must be > 0"));
        }
        if !(self.window > 0.0) {
            return Err(Error::invalid("window", "must be > 0"));
        }
        if !(self.asymmetry >= 0.0) {
            return Err(Error::invalid("asymmetry", "must be >= 0"));
        }
        if !(self.artifact_duration >= 0.0) {
            return Err(Error::invalid("artifact_duration", "must be >= 0"));
        }
        if self.artifact_amplitude != 0.0
            && self.stimulus_time + self.artifact_duration > self.onset
        {
            return Err(Error::invalid(
                "stimulus_time",
                "the stimulation artifact must end before the impulse onset",
            ));
        }
        Ok(())
    }

    /// Biphasic impulse value before amplitude normalization.
    fn shape(&self, t: f64) -> f64 {
        let d = self.duration;
        let (s1, s2) = (0.1286 * d, 0.1315 * d);
        let c1 = self.onset + 0.34 * d;
        let c2 = c1 + 0.3236 * d;
        let g = |c: f64, s: f64| (-0.5 * ((t - c) / s).powi(2)).exp();
        g(c1, s1) - self.asymmetry * g(c2, s2)
    }
}

/// Template nerve field: a biphasic difference-of-Gaussians impulse with the
/// requested sampled peak-to-peak amplitude, preceded by a square artifact.
pub fn nerve_waveform(p: &NerveTemplateParams, dt: f64) -> Result<FieldWaveform> {
    p.validate()?;
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", format!("{dt} must be > 0")));
    }
    let n = ((p.window / dt).round() as usize).max(1);
    let times: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) * dt).collect();
    let mut impulse: Vec<f64> = times.iter().map(|&t| p.shape(t)).collect();
    let pp = peak_to_peak(&impulse);
    let scale = if pp > 0.0 { p.peak_to_peak / pp } else { 0.0 };
    impulse.iter_mut().for_each(|v| *v *= scale);
    let art_end = p.stimulus_time + p.artifact_duration;
    for (v, &t) in impulse.iter_mut().zip(&times) {
        if t >= p.stimulus_time && t < art_end {
            *v += p.artifact_amplitude;
        }
    }
    FieldWaveform::new(impulse, dt, 0.0, p.axis)
}

/// Field magnitude |B| = μ0·I/(2πr) of an infinite straight wire.
pub fn wire_field(current: f64, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::invalid("r", format!("{r} must be > 0")));
    }
    Ok(MU0 * current / (2.0 * PI * r))
}

/// Current I = 2πr·B/μ0 that produces `field` at distance `r`.
pub fn invert_wire(field: f64, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::invalid("r", format!("{r} must be > 0")));
    }
    Ok(2.0 * PI * r * field / MU0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn calibration_tone_fourier_component() {
        let w = calibration_waveform(1e-9, 700.0, DEFAULT_DT).unwrap();
        let b = fourier_component(&w, 2.0 * PI * 700.0).norm();
        assert!(rel(b, PI * 1e-9 / (2.0 * PI * 700.0)) < 1e-3);
        assert!(rel(b, 0.71e-12) < 0.01, "{b}");
    }

    #[test]
    fn calibration_tone_peak_and_zero() {
        let w = calibration_waveform(1e-9, 700.0, DEFAULT_DT).unwrap();
        let (k, max) = w
            .samples()
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
        assert!((w.time(k) - 1.0 / 2800.0).abs() <= DEFAULT_DT);
        assert!(rel(max, 1e-9) < 0.01);
        let z = calibration_waveform(0.0, 700.0, DEFAULT_DT).unwrap();
        assert!(z.samples().iter().all(|&v| v == 0.0));
        assert_eq!(fourier_component(&z, 4400.0).norm(), 0.0);
    }

    #[test]
    fn calibration_rejects_undersampling() {
        assert!(calibration_waveform(1e-9, 700.0, 1.0 / (19.0 * 700.0)).is_err());
        assert!(calibration_waveform(1e-9, 0.0, 1e-5).is_err());
    }

    #[test]
    fn nerve_template_peak_to_peak() {
        let p = NerveTemplateParams::default();
        let w = nerve_waveform(&p, DEFAULT_DT).unwrap();
        // impulse part only
        let t0 = (p.onset / DEFAULT_DT) as usize;
        let pp = peak_to_peak(&w.samples()[t0..]);
        assert!(rel(pp, 7e-12) < 1e-12);
        let flat = NerveTemplateParams {
            peak_to_peak: 0.0,
            artifact_amplitude: 0.0,
            ..p
        };
        let w = nerve_waveform(&flat, DEFAULT_DT).unwrap();
        assert!(w.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nerve_template_rescaled_to_fourier_target() {
        let omega = 2.0 * PI * 700.0;
        let w = nerve_waveform(&NerveTemplateParams::pulsed_impulse(), DEFAULT_DT)
            .unwrap()
            .rescaled_to_fourier(omega, 4.1e-15)
            .unwrap();
        assert!(rel(fourier_component(&w, omega).norm(), 4.1e-15) < 1e-12);
    }

    #[test]
    fn artifact_must_precede_impulse() {
        let p = NerveTemplateParams {
            stimulus_time: 7.0e-3,
            ..Default::default()
        };
        assert!(nerve_waveform(&p, DEFAULT_DT).is_err());
    }

    #[test]
    fn wire_model() {
        let b = wire_field(0.16e-6, 4.5e-3).unwrap();
        assert!(rel(b, 7.1e-12) < 0.02);
        let i = invert_wire(7e-12, 4.5e-3).unwrap();
        assert!(rel(i, 0.1575e-6) < 1e-3);
        assert_eq!(wire_field(0.0, 1e-3).unwrap(), 0.0);
        assert_eq!(invert_wire(0.0, 1e-3).unwrap(), 0.0);
        assert!(rel(invert_wire(7e-12, 9e-3).unwrap(), 2.0 * i) < 1e-12);
        assert!(wire_field(1.0, 0.0).is_err());
        assert!(invert_wire(1.0, -1.0).is_err());
    }
}
