//! Periodogram estimates following `S_xx(ω) = (1/T)·|∫₀ᵀ x(t) e^{−iωt} dt|²`
//! with a rectangular window.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-sided power spectrum on the grid `f_k = k/T`, `k = 0..=N/2`.
///
/// Interior bins hold twice the two-sided density so that
/// `Σ psd·Δf` equals the mean power of the series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub psd_values: Vec<f64>,
    /// Window length T, s.
    pub window_length: f64,
    /// Number of input samples N.
    pub n_samples: usize,
}

impl Spectrum {
    pub fn df(&self) -> f64 {
        1.0 / self.window_length
    }

    /// Two-sided density `S_xx` at bin `k`.
    pub fn two_sided(&self, k: usize) -> f64 {
        if k == 0 || (self.n_samples.is_multiple_of(2) && k == self.n_samples / 2) {
            self.psd_values[k]
        } else {
            0.5 * self.psd_values[k]
        }
    }

    /// Index of the largest bin, ignoring DC; lowest frequency wins ties.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for k in 1..self.psd_values.len() {
            match best {
                Some(b) if self.psd_values[k] <= self.psd_values[b] => {}
                _ => best = Some(k),
            }
        }
        best
    }

    /// Index of the bin closest to `freq_hz`.
    pub fn nearest_bin(&self, freq_hz: f64) -> usize {
        let k = (freq_hz * self.window_length).round().max(0.0) as usize;
        k.min(self.psd_values.len() - 1)
    }

    /// Mean of `psd_values` over bins within `half_width` Hz of `freq_hz`.
    pub fn band_mean(&self, freq_hz: f64, half_width: f64) -> f64 {
        let (sum, n) = self
            .frequencies
            .iter()
            .zip(&self.psd_values)
            .filter(|(f, _)| (**f - freq_hz).abs() <= half_width)
            .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
        if n == 0 {
            self.psd_values[self.nearest_bin(freq_hz)]
        } else {
            sum / n as f64
        }
    }
}

/// One-sided periodogram of `x` sampled at `dt`.
pub fn psd(x: &[f64], dt: f64) -> Result<Spectrum> {
    if x.len() < 2 {
        return Err(Error::invalid("x", "need at least two samples"));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", format!("{dt} must be > 0")));
    }
    let n = x.len();
    let t = n as f64 * dt;
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    let norm = dt * dt / t;
    let psd_values = (0..=half)
        .map(|k| {
            let two_sided = norm * buf[k].norm_sqr();
            let nyquist = n.is_multiple_of(2) && k == half;
            if k == 0 || nyquist {
                two_sided
            } else {
                2.0 * two_sided
            }
        })
        .collect();
    Ok(Spectrum {
        frequencies: (0..=half).map(|k| k as f64 / t).collect(),
        psd_values,
        window_length: t,
        n_samples: n,
    })
}

/// Periodogram over the first `window` seconds of `x`.
pub fn psd_window(x: &[f64], dt: f64, window: f64) -> Result<Spectrum> {
    let n = ((window / dt).round() as usize).min(x.len());
    psd(&x[..n], dt)
}

/// `∫ x(t) e^{−iωt} dt` over the record, with `t = 0` at the first sample.
pub fn dtft(x: &[f64], dt: f64, omega: f64) -> Complex64 {
    let step = Complex64::from_polar(1.0, -omega * dt);
    let mut phase = Complex64::new(1.0, 0.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, &v) in x.iter().enumerate() {
        if k % 1024 == 0 {
            phase = Complex64::from_polar(1.0, -omega * dt * k as f64);
        }
        acc += phase * v;
        phase *= step;
    }
    acc * dt
}

/// Two-sided density `S_xx(ω)` at an arbitrary angular frequency.
pub fn psd_at(x: &[f64], dt: f64, omega: f64) -> f64 {
    let t = x.len() as f64 * dt;
    dtft(x, dt, omega).norm_sqr() / t
}

/// Closed-form peak `S_xx(Ω)` of `A·sin(Ωt+θ)·e^{−Γt}` over a window T,
/// leading term only.
pub fn damped_sine_peak(amplitude: f64, gamma: f64, window: f64) -> f64 {
    let g = 1.0 - (-gamma * window).exp();
    amplitude * amplitude * g * g / (4.0 * gamma * gamma * window)
}

/// Angular frequency of the spectral peak, refined between grid bins by a
/// golden-section search on [`psd_at`]. Returns `(omega, S_xx(omega))`.
pub fn refine_peak(x: &[f64], dt: f64, spectrum: &Spectrum, k: usize) -> (f64, f64) {
    let two_pi = 2.0 * std::f64::consts::PI;
    let df = spectrum.df();
    let f0 = spectrum.frequencies[k];
    let (mut a, mut b) = ((f0 - df).max(0.0), f0 + df);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let eval = |f: f64| psd_at(x, dt, two_pi * f);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    for _ in 0..60 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = eval(d);
        }
        if (b - a) < 1e-9 * df {
            break;
        }
    }
    let f = 0.5 * (a + b);
    (two_pi * f, eval(f))
}
