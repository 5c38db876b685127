//! Projection-noise limits, uncertainty propagation, and the readout-noise
//! levels that realise a given single-shot noise budget.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::physics::{AtomEnsemble, MagnetometerConfig, ReadoutNoise, GAMMA_CS};
use crate::units::{
    Field, FourierComponent, Meter, MeterPerSecond, Quantity, Second, Sensitivity, Unit,
};

/// Single-shot uncertainty of |B(Ω)| in the pulsed mode, T·s.
pub const PULSED_SINGLE_SHOT_FLOOR: f64 = 5.7e-15;
/// Single-shot field sensitivity in the continuous mode, T/√Hz.
pub const CONTINUOUS_SINGLE_SHOT_FLOOR: f64 = 360e-15;
/// Shot-noise and classical-noise shares of the non-projection variance.
pub const SHOT_TO_CLASSICAL: (f64, f64) = (50.0, 40.0);

fn check_spin(jx: f64) -> Result<()> {
    if !(jx > 0.0) || !jx.is_finite() {
        return Err(Error::invalid("J_x", format!("{jx} must be > 0")));
    }
    Ok(())
}

/// Projection-noise limit on |B(Ω)| for one pulsed measurement: 1/(γ√(2J_x)).
pub fn pn_pulsed_fourier(jx: f64) -> Result<FourierComponent> {
    check_spin(jx)?;
    Ok(Quantity::new(1.0 / (GAMMA_CS * (2.0 * jx).sqrt())))
}

/// Minimal detectable amplitude of a field lasting `tau`: 1/(γ√(J_x/2)·τ).
pub fn pn_amplitude(jx: f64, tau: f64) -> Result<Field> {
    check_spin(jx)?;
    if !(tau > 0.0) {
        return Err(Error::invalid("tau", format!("{tau} must be > 0")));
    }
    Ok(Quantity::new(1.0 / (GAMMA_CS * (0.5 * jx).sqrt() * tau)))
}

/// Continuous-mode projection-noise sensitivity: 1/(γ√(T₂J_x/2)).
pub fn pn_sensitivity_continuous(jx: f64, t2: f64) -> Result<Sensitivity> {
    check_spin(jx)?;
    if !(t2 > 0.0) {
        return Err(Error::invalid("T2", format!("{t2} must be > 0")));
    }
    Ok(Quantity::new(1.0 / (GAMMA_CS * (0.5 * t2 * jx).sqrt())))
}

/// Value with a one-standard-deviation uncertainty in the same unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement<U: Unit> {
    pub value: Quantity<U>,
    pub sigma: Quantity<U>,
}

impl<U: Unit> Measurement<U> {
    pub fn new(value: f64, sigma: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::invalid("value", "must be finite"));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid("sigma", format!("{sigma} must be finite and >= 0")));
        }
        Ok(Self {
            value: Quantity::new(value),
            sigma: Quantity::new(sigma),
        })
    }

    pub fn relative(&self) -> f64 {
        self.sigma.si() / self.value.si().abs()
    }

    /// `value(sigma)` in display units, e.g. `5(1)` for 5 ± 1 cm.
    pub fn compact(&self) -> String {
        value_sigma(self.value.display_value(), self.sigma.display_value())
    }
}

impl<U: Unit> fmt::Display for Measurement<U> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.compact(), U::DISPLAY_SYMBOL)
    }
}

/// Parenthetical notation: σ rounded to one significant digit, the value
/// rounded to the same decimal place. A σ that rounds up to 10 keeps the
/// original place, so 38.46 ± 9.7 reads `38(10)`.
pub fn value_sigma(value: f64, sigma: f64) -> String {
    if sigma == 0.0 || !sigma.is_finite() {
        return format!("{value}(0)");
    }
    let e = sigma.log10().floor() as i32;
    let unit = 10f64.powi(e);
    let digit = (sigma / unit).round() as i64;
    if e >= 0 {
        let v = (value / unit).round() * unit;
        format!("{:.0}({})", v, digit * 10i64.pow(e as u32))
    } else {
        let places = (-e) as usize;
        format!("{:.*}({})", places, value, digit)
    }
}

/// Conduction velocity `d/Δt` with first-order Gaussian propagation.
pub fn conduction_velocity(
    distance: Measurement<Meter>,
    delay: Measurement<Second>,
) -> Result<Measurement<MeterPerSecond>> {
    let (d, t) = (distance.value.si(), delay.value.si());
    if !(t > 0.0) {
        return Err(Error::invalid("delta_t", format!("{t} must be > 0")));
    }
    let v = d / t;
    let rd = if d == 0.0 { 0.0 } else { distance.sigma.si() / d };
    let rt = delay.sigma.si() / t;
    Measurement::new(v, v.abs() * rd.hypot(rt))
}

/// Quadrature decomposition of a total noise amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseBudget {
    pub total: f64,
    pub projection: f64,
    pub shot: f64,
    pub classical: f64,
}

impl NoiseBudget {
    /// Components summed in quadrature.
    pub fn compose(projection: f64, shot: f64, classical: f64) -> Result<Self> {
        for (n, v) in [("projection", projection), ("shot", shot), ("classical", classical)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(n, format!("{v} must be >= 0")));
            }
        }
        Ok(Self {
            total: (projection * projection + shot * shot + classical * classical).sqrt(),
            projection,
            shot,
            classical,
        })
    }

    /// Variance shares (projection, shot, classical); they sum to 1.
    pub fn variance_fractions(&self) -> [f64; 3] {
        let t2 = self.total * self.total;
        if t2 == 0.0 {
            return [0.0; 3];
        }
        [self.projection, self.shot, self.classical].map(|c| c * c / t2)
    }

    /// Amplitude ratios component/total.
    pub fn amplitude_fractions(&self) -> [f64; 3] {
        if self.total == 0.0 {
            return [0.0; 3];
        }
        [self.projection, self.shot, self.classical].map(|c| c / self.total)
    }

    pub fn key_values(&self) -> Vec<(String, String)> {
        let v = self.variance_fractions();
        let a = self.amplitude_fractions();
        let names = ["projection", "shot", "classical"];
        let mut kv = vec![("total".to_string(), format!("{:e}", self.total))];
        for (i, n) in names.iter().enumerate() {
            kv.push((format!("{n}_variance_fraction"), format!("{:.4}", v[i])));
            kv.push((format!("{n}_amplitude_fraction"), format!("{:.4}", a[i])));
        }
        kv
    }
}

/// Split `total` into projection noise `pn`, a shot-noise share
/// `shot_fraction` of the total variance, and a classical remainder.
pub fn noise_budget(total: f64, pn: f64, shot_fraction: f64) -> Result<NoiseBudget> {
    if !(total >= 0.0) || !(pn >= 0.0) {
        return Err(Error::invalid("noise_budget", "components must be >= 0"));
    }
    if !(0.0..=1.0).contains(&shot_fraction) {
        return Err(Error::invalid("shot_fraction", format!("{shot_fraction} not in [0, 1]")));
    }
    let t2 = total * total;
    let shot2 = shot_fraction * t2;
    let rest = t2 - pn * pn - shot2;
    if rest < -1e-12 * t2.max(f64::MIN_POSITIVE) {
        return Err(Error::invalid(
            "noise_budget",
            format!("projection {pn:e} and shot share {shot_fraction} exceed total {total:e}"),
        ));
    }
    Ok(NoiseBudget {
        total,
        projection: pn,
        shot: shot2.sqrt(),
        classical: rest.max(0.0).sqrt(),
    })
}

/// Budget with the non-projection variance split by [`SHOT_TO_CLASSICAL`].
pub fn default_split(total: f64, pn: f64) -> Result<NoiseBudget> {
    let (s, c) = SHOT_TO_CLASSICAL;
    let pn_share = if total > 0.0 { (pn / total).powi(2) } else { 0.0 };
    noise_budget(total, pn, (1.0 - pn_share).max(0.0) * s / (s + c))
}

/// `S_xx(Ω)/|B(Ω)|²` of a noiseless pulsed record over a window T.
pub fn pulsed_gain_sq(config: &MagnetometerConfig, ensemble: &AtomEnsemble, window: f64) -> f64 {
    let g = config.relaxation_rate;
    let jx = ensemble.total_spin();
    let c = config.readout_coupling;
    let e = 1.0 - (-g * window).exp();
    (c * GAMMA_CS * jx * e).powi(2) / (4.0 * g * g * window)
}

/// Projection-noise floor of |B(Ω)| estimated from one A−B pair, T·s.
/// Includes the Langevin noise accumulated during the probe window.
pub fn pulsed_difference_pn(config: &MagnetometerConfig, ensemble: &AtomEnsemble, window: f64) -> Result<f64> {
    let jx = ensemble.total_spin();
    check_spin(jx)?;
    let gt = config.relaxation_rate * window;
    let e = 1.0 - (-gt).exp();
    Ok((4.0 * (gt - e) / (GAMMA_CS * GAMMA_CS * jx * e * e)).sqrt())
}

/// Readout noise for which one A−B pair has the single-shot floor of `budget`.
pub fn pulsed_readout_noise(
    config: &MagnetometerConfig,
    ensemble: &AtomEnsemble,
    window: f64,
    budget: &NoiseBudget,
) -> ReadoutNoise {
    let g2 = pulsed_gain_sq(config, ensemble, window);
    ReadoutNoise {
        shot_psd: budget.shot.powi(2) * g2,
        classical_psd_at_larmor: budget.classical.powi(2) * g2,
    }
}

/// `|H(ω)|²` of the continuous-mode response in record units per tesla.
pub fn continuous_transfer_sq(config: &MagnetometerConfig, ensemble: &AtomEnsemble, omega: f64) -> f64 {
    let g = config.relaxation_rate;
    let w0 = config.larmor_omega;
    let k = config.readout_coupling * GAMMA_CS * ensemble.total_spin();
    // (Γ + iω)² + Ω²
    let re = g * g - omega * omega + w0 * w0;
    let im = 2.0 * g * omega;
    k * k * w0 * w0 / (re * re + im * im)
}

/// Projection-noise field spectral density at the Larmor frequency,
/// including the counter-rotating term, T/√Hz.
pub fn continuous_pn_exact(config: &MagnetometerConfig, ensemble: &AtomEnsemble) -> Result<f64> {
    let jx = ensemble.total_spin();
    check_spin(jx)?;
    let g = config.relaxation_rate;
    let w = config.larmor_omega;
    let c = config.readout_coupling;
    let s_jz = 0.5 * jx * (1.0 / g + g / (g * g + 4.0 * w * w));
    Ok((c * c * s_jz / continuous_transfer_sq(config, ensemble, w)).sqrt())
}

/// Readout noise for which the single-shot field sensitivity equals `budget.total`.
pub fn continuous_readout_noise(
    config: &MagnetometerConfig,
    ensemble: &AtomEnsemble,
    budget: &NoiseBudget,
) -> ReadoutNoise {
    let h2 = continuous_transfer_sq(config, ensemble, config.larmor_omega);
    ReadoutNoise {
        shot_psd: 2.0 * budget.shot.powi(2) * h2,
        classical_psd_at_larmor: 2.0 * budget.classical.powi(2) * h2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::Tesla;

    fn room_jx() -> f64 {
        AtomEnsemble::room_temperature().total_spin()
    }

    #[test]
    fn limits_at_room_temperature() {
        let jx = room_jx();
        assert!((pn_pulsed_fourier(jx).unwrap().display_value() - 0.30).abs() < 0.01);
        assert!((pn_sensitivity_continuous(jx, 0.44e-3).unwrap().display_value() - 29.0).abs() < 0.5);
        assert!((pn_amplitude(jx, 2e-3).unwrap().display_value() - 0.30).abs() < 0.01);
        assert!(pn_pulsed_fourier(0.0).is_err());
        assert!(pn_amplitude(jx, 0.0).is_err());
        assert!(pn_sensitivity_continuous(-1.0, 1e-3).is_err());
    }

    #[test]
    fn formulas_agree_under_conversions() {
        let jx = 3.3e9;
        let tau = 1.7e-3;
        let f = pn_pulsed_fourier(jx).unwrap().si();
        let a = pn_amplitude(jx, tau).unwrap().si();
        assert!((a - 2.0 * f / tau).abs() <= 1e-15 * a);
        let s = pn_sensitivity_continuous(jx, tau).unwrap().si();
        assert!((s * tau.sqrt() * 0.5 - f).abs() <= 1e-15 * f);
    }

    #[test]
    fn value_sigma_notation() {
        assert_eq!(value_sigma(5.0, 1.0), "5(1)");
        assert_eq!(value_sigma(1.3, 0.2), "1.3(2)");
        assert_eq!(value_sigma(36.84, 5.61), "37(6)");
        assert_eq!(value_sigma(38.46, 9.70), "38(10)");
        assert_eq!(value_sigma(384.6, 25.0), "380(30)");
        assert_eq!(value_sigma(1.234, 0.097), "1.23(10)");
        assert_eq!(value_sigma(2.5, 0.0), "2.5(0)");
    }

    #[test]
    fn velocity_propagation() {
        let d = Measurement::<Meter>::new(0.07, 0.01).unwrap();
        let t = Measurement::<Second>::new(1.9e-3, 0.1e-3).unwrap();
        let v = conduction_velocity(d, t).unwrap();
        assert_eq!(v.to_string(), "37(6) m/s");
        let exact = conduction_velocity(
            Measurement::new(0.05, 0.0).unwrap(),
            Measurement::new(1e-3, 0.0).unwrap(),
        )
        .unwrap();
        assert_eq!(exact.sigma.si(), 0.0);
        assert!(conduction_velocity(d, Measurement::new(0.0, 0.0).unwrap()).is_err());
        assert!(Measurement::<Tesla>::new(1.0, -1.0).is_err());
    }

    #[test]
    fn budget_compose_and_split() {
        let b = noise_budget(5.7, 0.30, 0.5).unwrap();
        let [p, _, _] = b.amplitude_fractions();
        assert!((p - 0.30 / 5.7).abs() < 1e-12);
        let only = noise_budget(1.0, 1.0, 0.0).unwrap();
        assert_eq!(only.variance_fractions()[0], 1.0);
        assert!(noise_budget(1.0, 0.9, 0.5).is_err());

        let syn = NoiseBudget::compose(0.1f64.sqrt(), 0.5f64.sqrt(), 0.4f64.sqrt()).unwrap();
        let back = noise_budget(syn.total, syn.projection, syn.variance_fractions()[1]).unwrap();
        for (x, y) in back.variance_fractions().iter().zip([0.1, 0.5, 0.4]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn pulsed_pn_floor_near_single_pulse_limit() {
        let cfg = MagnetometerConfig::pulsed_default();
        let ens = AtomEnsemble::room_temperature();
        let n = pulsed_difference_pn(&cfg, &ens, 8e-3).unwrap();
        // Two independent pulses plus probe-window diffusion.
        let single = pn_pulsed_fourier(ens.total_spin()).unwrap().si();
        assert!(n > 2f64.sqrt() * single && n < 2.6 * single, "{n:e}");
    }

    #[test]
    fn continuous_pn_exact_adds_counter_rotating_term() {
        let cfg = MagnetometerConfig::continuous_default();
        let ens = AtomEnsemble::room_temperature();
        let exact = continuous_pn_exact(&cfg, &ens).unwrap();
        let simple = pn_sensitivity_continuous(ens.total_spin(), cfg.t2()).unwrap().si();
        let (g, w) = (cfg.relaxation_rate, cfg.larmor_omega);
        let expect = (1.0 + g * g / (2.0 * w * w)).sqrt();
        assert!((exact / simple - expect).abs() < 1e-9, "{exact:e} vs {simple:e}");
    }
}
