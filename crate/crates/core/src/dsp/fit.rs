//! Nonlinear least-squares fits: the free-induction decay of the pulsed
//! readout and the convolution response of the continuous readout.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dsp::deconv::{response_with_derivative, response_to};
use crate::dsp::psd::{psd, refine_peak};
use crate::error::{FitFailure, Result};
use crate::field::FieldWaveform;
use crate::spin::DetectionRecord;

/// Least number of Larmor cycles a record must span for [`fit_fid`].
pub const MIN_CYCLES: f64 = 5.0;
const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmOutcome {
    pub rss: f64,
    pub iterations: usize,
}

/// Levenberg–Marquardt with Marquardt diagonal scaling.
///
/// `eval` fills the residual vector and the Jacobian (rows = samples) for
/// the given parameters.
pub(crate) fn levenberg_marquardt<F>(
    params: &mut [f64],
    n_residuals: usize,
    mut eval: F,
) -> std::result::Result<LmOutcome, FitFailure>
where
    F: FnMut(&[f64], &mut DVector<f64>, &mut DMatrix<f64>),
{
    let p = params.len();
    let mut r = DVector::zeros(n_residuals);
    let mut jac = DMatrix::zeros(n_residuals, p);
    eval(params, &mut r, &mut jac);
    let mut rss = r.norm_squared();
    if !rss.is_finite() {
        return Err(FitFailure::NotConverged {
            iterations: 0,
            residual: rss,
        });
    }
    let mut mu = 1e-3;
    let mut trial = params.to_vec();
    let mut r_trial = DVector::zeros(n_residuals);
    let mut j_trial = DMatrix::zeros(n_residuals, p);

    for it in 1..=MAX_ITERATIONS {
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        let mut accepted = false;
        while mu < 1e16 {
            let mut a = jtj.clone();
            for i in 0..p {
                a[(i, i)] += mu * jtj[(i, i)].max(1e-300);
            }
            let Some(chol) = a.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&grad));
            for i in 0..p {
                trial[i] = params[i] + step[i];
            }
            eval(&trial, &mut r_trial, &mut j_trial);
            let rss_trial = r_trial.norm_squared();
            if rss_trial.is_finite() && rss_trial <= rss {
                let small_step = (0..p)
                    .all(|i| step[i].abs() <= 1e-12 * (params[i].abs() + 1e-12));
                let small_gain = rss - rss_trial <= 1e-15 * rss;
                params.copy_from_slice(&trial);
                std::mem::swap(&mut r, &mut r_trial);
                std::mem::swap(&mut jac, &mut j_trial);
                rss = rss_trial;
                mu = (mu / 10.0).max(1e-12);
                accepted = true;
                if small_step || small_gain || rss == 0.0 {
                    return Ok(LmOutcome { rss, iterations: it });
                }
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            // No downhill step at any damping: we are at a minimum to
            // working precision.
            return Ok(LmOutcome { rss, iterations: it });
        }
    }
    Err(FitFailure::NotConverged {
        iterations: MAX_ITERATIONS,
        residual: rss.sqrt(),
    })
}

/// `S(t) = A·sin(Ωt + θ)·e^{−Γt}`, with `t = 0` at the first record sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidFit {
    pub amplitude: f64,
    /// rad/s
    pub omega: f64,
    /// rad, in [−π, π)
    pub phase: f64,
    /// 1/s
    pub decay_rate: f64,
    /// √(Σ residual²)
    pub residual_norm: f64,
    pub iterations: usize,
}

impl FidFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (self.omega * t + self.phase).sin() * (-self.decay_rate * t).exp()
    }
}

pub(crate) fn wrap_phase(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t >= PI {
        t - 2.0 * PI
    } else {
        t
    }
}

/// Envelope decay estimate: slope of log(max |x|) per Larmor period.
fn envelope_decay(x: &[f64], dt: f64, omega: f64) -> Option<f64> {
    let per = ((2.0 * PI / omega) / dt).round().max(2.0) as usize;
    let pts: Vec<(f64, f64)> = x
        .chunks(per)
        .enumerate()
        .filter(|(_, c)| c.len() == per)
        .filter_map(|(i, c)| {
            let m = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            (m > 0.0).then(|| ((i as f64 + 0.5) * per as f64 * dt, m.ln()))
        })
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (st, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mt, my) = (st / n, sy / n);
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |a, p| {
        (a.0 + (p.0 - mt) * (p.1 - my), a.1 + (p.0 - mt).powi(2))
    });
    Some(-sxy / sxx)
}

/// Linear least squares for `x ≈ p·sin(Ωt)e^{−Γt} + q·cos(Ωt)e^{−Γt}`.
fn quadratures(x: &[f64], dt: f64, omega: f64, gamma: f64) -> (f64, f64) {
    let (mut ss, mut sc, mut cc, mut xs, mut xc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, &v) in x.iter().enumerate() {
        let t = k as f64 * dt;
        let e = (-gamma * t).exp();
        let (s, c) = (omega * t).sin_cos();
        let (s, c) = (s * e, c * e);
        ss += s * s;
        sc += s * c;
        cc += c * c;
        xs += v * s;
        xc += v * c;
    }
    let det = ss * cc - sc * sc;
    if det.abs() < 1e-300 {
        return (0.0, 0.0);
    }
    ((xs * cc - xc * sc) / det, (xc * ss - xs * sc) / det)
}

/// Fit a damped sinusoid to a pulsed-mode record.
///
/// Initial guesses: Ω from the refined periodogram maximum, Γ from a linear
/// fit of the log envelope, amplitude and phase from the two quadratures.
/// Failure to fit is returned as a value.
pub fn fit_fid(record: &DetectionRecord) -> std::result::Result<FidFit, FitFailure> {
    let x = &record.samples;
    let dt = record.dt;
    if x.len() < 8 || x.iter().all(|&v| v == 0.0) {
        return Err(FitFailure::NoOscillation);
    }
    let spec = psd(x, dt).map_err(|_| FitFailure::NoOscillation)?;
    let k = spec.argmax().ok_or(FitFailure::NoOscillation)?;
    if spec.psd_values[k] <= 0.0 {
        return Err(FitFailure::NoOscillation);
    }
    let (omega0, _) = refine_peak(x, dt, &spec, k);
    let duration = record.duration();
    let cycles = duration * omega0 / (2.0 * PI);
    if cycles < MIN_CYCLES {
        return Err(FitFailure::TooFewCycles {
            cycles,
            required: MIN_CYCLES,
        });
    }
    let gamma0 = envelope_decay(x, dt, omega0)
        .filter(|g| *g > 0.0 && g.is_finite())
        .unwrap_or(1.0 / duration);
    let (p, q) = quadratures(x, dt, omega0, gamma0);
    let mut params = [p.hypot(q), omega0, q.atan2(p), gamma0];

    let outcome = levenberg_marquardt(&mut params, x.len(), |pr, r, j| {
        let [a, w, th, g] = [pr[0], pr[1], pr[2], pr[3]];
        for (k, &v) in x.iter().enumerate() {
            let t = k as f64 * dt;
            let e = (-g * t).exp();
            let (s, c) = (w * t + th).sin_cos();
            r[k] = a * s * e - v;
            j[(k, 0)] = s * e;
            j[(k, 1)] = a * t * c * e;
            j[(k, 2)] = a * c * e;
            j[(k, 3)] = -t * a * s * e;
        }
    })?;

    let [mut a, w, mut th, g] = params;
    if g <= 0.0 {
        return Err(FitFailure::NonPositiveDecay(g));
    }
    if a < 0.0 {
        a = -a;
        th += PI;
    }
    th = wrap_phase(th);
    Ok(FidFit {
        amplitude: a,
        omega: w,
        phase: th,
        decay_rate: g,
        residual_norm: outcome.rss.sqrt(),
        iterations: outcome.iterations,
    })
}

/// Gain, Larmor frequency and decay rate of a continuous-mode response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseFit {
    /// Record units per (T·s) of kernel-weighted field.
    pub gain: f64,
    pub omega: f64,
    pub decay_rate: f64,
    pub residual_norm: f64,
    /// Residual norm relative to the record norm.
    pub relative_residual: f64,
    pub iterations: usize,
}

/// Fit `S(t) = K·∫ e^{−Γ(t−t′)} sin[Ω(t−t′)] B(t′) dt′` (or the −cos kernel
/// for a y-axis field) to a record produced by the known field `waveform`.
///
/// `guess` supplies starting values for (Ω, Γ); when Ω is `None` it is taken
/// from the periodogram peak of the record.
pub fn fit_response(
    record: &DetectionRecord,
    waveform: &FieldWaveform,
    omega_guess: Option<f64>,
    gamma_guess: f64,
) -> Result<ResponseFit> {
    let n = record.len().min(waveform.len());
    let x = &record.samples[..n];
    let b = &waveform.samples()[..n];
    let dt = record.dt;
    let axis = waveform.axis();
    if x.iter().all(|&v| v == 0.0) {
        return Err(FitFailure::NoOscillation.into());
    }
    let omega0 = match omega_guess {
        Some(w) => w,
        None => {
            let spec = psd(x, dt)?;
            let k = spec.argmax().ok_or(FitFailure::NoOscillation)?;
            refine_peak(x, dt, &spec, k).0
        }
    };
    let unit = response_to(b, dt, omega0, gamma_guess, axis);
    let uu: f64 = unit.iter().map(|v| v * v).sum();
    if uu == 0.0 {
        return Err(FitFailure::NoOscillation.into());
    }
    let k0 = unit.iter().zip(x).map(|(u, v)| u * v).sum::<f64>() / uu;
    let mut params = [k0, omega0, gamma_guess];

    let outcome = levenberg_marquardt(&mut params, n, |pr, r, j| {
        let (resp, d_omega, d_gamma) = response_with_derivative(b, dt, pr[1], pr[2], axis);
        for k in 0..n {
            r[k] = pr[0] * resp[k] - x[k];
            j[(k, 0)] = resp[k];
            j[(k, 1)] = pr[0] * d_omega[k];
            j[(k, 2)] = pr[0] * d_gamma[k];
        }
    })?;
    let [gain, omega, gamma] = params;
    if gamma <= 0.0 {
        return Err(FitFailure::NonPositiveDecay(gamma).into());
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let residual_norm = outcome.rss.sqrt();
    Ok(ResponseFit {
        gain,
        omega,
        decay_rate: gamma,
        residual_norm,
        relative_residual: residual_norm / norm,
        iterations: outcome.iterations,
    })
}
