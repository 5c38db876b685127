//! Continuous-mode response kernel and its regularized inverse.
//!
//! A continuous record is the causal convolution of the field with
//! `h(τ) = e^{−Γτ}·sin(Ωτ)` (z-axis field) or `−e^{−Γτ}·cos(Ωτ)` (y-axis).
//! On the sampling grid the field interval `j` contributes to record sample
//! `k ≥ j` with delay `(k − j + ½)·dt`.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Axis, FieldWaveform};
use crate::spin::DetectionRecord;

/// Default Wiener regularization relative to `max |H|²`.
pub const DEFAULT_REGULARIZATION: f64 = 1e-3;
/// Default low-pass cutoff applied after deconvolution, Hz.
pub const DEFAULT_LOWPASS_HZ: f64 = 1500.0;

#[inline]
fn project(c: Complex64, axis: Axis) -> f64 {
    match axis {
        Axis::Z => c.im,
        Axis::Y => -c.re,
    }
}

/// Unit-gain response of the continuous magnetometer to field samples `b`.
pub fn response_to(b: &[f64], dt: f64, omega: f64, gamma: f64, axis: Axis) -> Vec<f64> {
    let p = Complex64::new(-gamma, omega);
    let full = (p * dt).exp();
    let half = (p * 0.5 * dt).exp() * dt;
    let mut c = Complex64::new(0.0, 0.0);
    b.iter()
        .map(|&v| {
            c = full * c + half * v;
            project(c, axis)
        })
        .collect()
}

/// Response and its derivatives with respect to Ω and Γ.
pub(crate) fn response_with_derivative(
    b: &[f64],
    dt: f64,
    omega: f64,
    gamma: f64,
    axis: Axis,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let p = Complex64::new(-gamma, omega);
    let full = (p * dt).exp();
    let half = (p * 0.5 * dt).exp() * dt;
    let mut c = Complex64::new(0.0, 0.0);
    // dc/dp
    let mut d = Complex64::new(0.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    let n = b.len();
    let (mut r, mut dw, mut dg) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for &v in b {
        d = full * (d + dt * c) + 0.5 * dt * half * v;
        c = full * c + half * v;
        r.push(project(c, axis));
        dw.push(project(i * d, axis));
        dg.push(project(-d, axis));
    }
    (r, dw, dg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeconvolutionParams {
    /// rad/s
    pub omega: f64,
    /// 1/s
    pub gamma: f64,
    /// Record units per (T·s); the calibration gain.
    pub gain: f64,
    pub axis: Axis,
    /// λ as a fraction of `max |H|²`.
    pub regularization: f64,
    pub lowpass_hz: f64,
}

impl DeconvolutionParams {
    pub fn new(omega: f64, gamma: f64, gain: f64, axis: Axis) -> Self {
        Self {
            omega,
            gamma,
            gain,
            axis,
            regularization: DEFAULT_REGULARIZATION,
            lowpass_hz: DEFAULT_LOWPASS_HZ,
        }
    }
}

/// Recover the field from a continuous record with the Wiener-regularized
/// inverse `H*/(|H|² + λ)` followed by a brick-wall low-pass.
///
/// The returned waveform sits on the record grid shifted back by one
/// interval, so that its sample `k` is the field interval that ends at
/// record sample `k`.
pub fn deconvolve(record: &DetectionRecord, params: &DeconvolutionParams) -> Result<FieldWaveform> {
    let n = record.len();
    if n < 2 {
        return Err(Error::invalid("record", "need at least two samples"));
    }
    if !(params.regularization >= 0.0) {
        return Err(Error::invalid("regularization", "must be >= 0"));
    }
    if !(params.gamma > 0.0) || !(params.omega > 0.0) {
        return Err(Error::invalid("kernel", "Ω and Γ must be > 0"));
    }
    if params.gain == 0.0 || !params.gain.is_finite() {
        return Err(Error::invalid("gain", "must be finite and nonzero"));
    }
    if !(params.lowpass_hz > 0.0) {
        return Err(Error::invalid("lowpass_hz", "must be > 0"));
    }
    let dt = record.dt;
    let start = record.start_time - dt;
    if record.samples.iter().all(|&v| v == 0.0) {
        return FieldWaveform::new(vec![0.0; n], dt, start, params.axis);
    }

    let len = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);

    let mut impulse = vec![0.0; len];
    impulse[0] = 1.0;
    let kernel = response_to(&impulse, dt, params.omega, params.gamma, params.axis);
    let mut h: Vec<Complex64> = kernel
        .iter()
        .map(|&v| Complex64::new(params.gain * v, 0.0))
        .collect();
    fwd.process(&mut h);

    let mut x: Vec<Complex64> = record
        .samples
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(len)
        .collect();
    fwd.process(&mut x);

    let df = 1.0 / (len as f64 * dt);
    let in_band = |k: usize| {
        let kk = k.min(len - k);
        kk as f64 * df <= params.lowpass_hz
    };
    let max_h2 = h.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max);
    let lambda = params.regularization * max_h2;
    if lambda == 0.0 {
        let min_h2 = (0..len)
            .filter(|&k| in_band(k))
            .map(|k| h[k].norm_sqr())
            .fold(f64::INFINITY, f64::min);
        if min_h2 < 1e-8 * max_h2 {
            return Err(Error::IllPosed(format!(
                "|H|² drops to {:.1e} of its maximum inside the pass band; \
                 use a positive regularization",
                min_h2 / max_h2
            )));
        }
    }
    for k in 0..len {
        x[k] = if in_band(k) {
            x[k] * h[k].conj() / (h[k].norm_sqr() + lambda)
        } else {
            Complex64::new(0.0, 0.0)
        };
    }
    inv.process(&mut x);
    let scale = 1.0 / len as f64;
    let samples = x[..n].iter().map(|c| c.re * scale).collect();
    FieldWaveform::new(samples, dt, start, params.axis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::Sequence;
    use std::f64::consts::PI;

    #[test]
    fn impulse_response_shape() {
        let (dt, w, g) = (1e-5, 2.0 * PI * 410.0, 1.0 / 0.44e-3);
        let mut b = vec![0.0; 400];
        b[0] = 1.0;
        let r = response_to(&b, dt, w, g, Axis::Z);
        for (k, v) in r.iter().enumerate() {
            let tau = (k as f64 + 0.5) * dt;
            let expect = (-g * tau).exp() * (w * tau).sin() * dt;
            assert!((v - expect).abs() < 1e-12 * dt);
        }
        let ry = response_to(&b, dt, w, g, Axis::Y);
        assert!((ry[10] + (-g * 10.5 * dt).exp() * (w * 10.5 * dt).cos() * dt).abs() < 1e-15);
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let (dt, w, g) = (1e-5, 2.0 * PI * 410.0, 2000.0);
        let b: Vec<f64> = (0..300).map(|k| ((k as f64) * 0.05).sin()).collect();
        for axis in [Axis::Y, Axis::Z] {
            let (_, dw, dg) = response_with_derivative(&b, dt, w, g, axis);
            let h = 1e-3;
            let rp = response_to(&b, dt, w + h, g, axis);
            let rm = response_to(&b, dt, w - h, g, axis);
            let gp = response_to(&b, dt, w, g + h, axis);
            let gm = response_to(&b, dt, w, g - h, axis);
            for k in (0..300).step_by(37) {
                let nw = (rp[k] - rm[k]) / (2.0 * h);
                let ng = (gp[k] - gm[k]) / (2.0 * h);
                assert!((dw[k] - nw).abs() <= 1e-6 * nw.abs().max(1e-12));
                assert!((dg[k] - ng).abs() <= 1e-6 * ng.abs().max(1e-12));
            }
        }
    }

    #[test]
    fn zero_record_gives_zero_field() {
        let rec = DetectionRecord::new(vec![0.0; 100], 1e-5, 1e-5, Sequence::Continuous).unwrap();
        let p = DeconvolutionParams::new(2576.0, 2273.0, 1.0, Axis::Z);
        let w = deconvolve(&rec, &p).unwrap();
        assert!(w.samples().iter().all(|&v| v == 0.0));
        assert_eq!(w.start_time(), 0.0);
    }

    #[test]
    fn unregularized_full_band_is_ill_posed() {
        let rec = DetectionRecord::new(vec![1.0; 256], 1e-5, 0.0, Sequence::Continuous).unwrap();
        let p = DeconvolutionParams {
            regularization: 0.0,
            lowpass_hz: 1e6,
            ..DeconvolutionParams::new(2576.0, 2273.0, 1.0, Axis::Z)
        };
        assert!(matches!(deconvolve(&rec, &p), Err(Error::IllPosed(_))));
        let p = DeconvolutionParams {
            regularization: 0.0,
            lowpass_hz: 1500.0,
            ..p
        };
        assert!(deconvolve(&rec, &p).is_ok());
    }
}
