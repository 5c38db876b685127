//! Physical constants, the atomic ensemble, and the magnetometer operating point.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cesium F=4 ground-state gyromagnetic ratio, rad/(s·T).
pub const GAMMA_CS: f64 = 2.20e10;

/// Vacuum permeability, T·m/A.
pub const MU0: f64 = 4.0 * PI * 1e-7;

/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Room-temperature cesium density, m⁻³, at [`ROOM_TEMPERATURE_C`].
pub const ROOM_DENSITY: f64 = 3.6e16;
pub const ROOM_TEMPERATURE_C: f64 = 22.0;

/// Inner diameter of the spherical vapour cell, m.
pub const CELL_INNER_DIAMETER: f64 = 5.3e-3;

/// Dark (probe off) spin coherence time, s.
pub const T2_DARK: f64 = 15e-3;
/// Light-broadened coherence time used in continuous operation, s.
pub const T2_CONTINUOUS: f64 = 0.44e-3;

/// Larmor frequencies of the two operating modes, Hz.
pub const LARMOR_HZ_PULSED: f64 = 700.0;
pub const LARMOR_HZ_CONTINUOUS: f64 = 410.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// rad/(s·T)
    pub gamma: f64,
    /// T·m/A
    pub mu0: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            gamma: GAMMA_CS,
            mu0: MU0,
        }
    }
}

/// Larmor angular frequency Ω = γ·B_x for a bias field in tesla.
pub fn larmor_frequency(bias_field: f64) -> Result<f64> {
    if !(bias_field >= 0.0) || !bias_field.is_finite() {
        return Err(Error::invalid(
            "bias_field",
            format!("must be finite and non-negative, got {bias_field}"),
        ));
    }
    Ok(GAMMA_CS * bias_field)
}

/// Total spin J_x = 4·p·n·(π/6)·d³ of a fully or partially pumped spherical cell.
pub fn ensemble_spin(density: f64, diameter: f64, polarization: f64) -> Result<f64> {
    Ok(AtomEnsemble::new(density, diameter, polarization)?.total_spin())
}

// Liquid-phase cesium vapour pressure, log10(P/torr) = A - B/T.
const VP_A: f64 = 2.881 + 4.165;
const VP_B: f64 = 3830.0;
const TORR: f64 = 133.322_368;

fn raw_vapour_density(t_celsius: f64) -> f64 {
    let t = t_celsius + 273.15;
    let p = 10f64.powf(VP_A - VP_B / t) * TORR;
    p / (BOLTZMANN * t)
}

/// Saturated cesium vapour density (m⁻³) between 0 and 60 °C.
///
/// Follows the liquid-phase vapour-pressure curve, rescaled so the 22 °C
/// value is exactly [`ROOM_DENSITY`].
pub fn density_at_temperature(t_celsius: f64) -> Result<f64> {
    if !(0.0..=60.0).contains(&t_celsius) {
        return Err(Error::invalid(
            "temperature",
            format!("{t_celsius} °C outside the supported 0..=60 °C range"),
        ));
    }
    let scale = ROOM_DENSITY / raw_vapour_density(ROOM_TEMPERATURE_C);
    Ok(scale * raw_vapour_density(t_celsius))
}

/// Spin-polarized atoms in a spherical cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomEnsemble {
    /// atoms/m³
    pub density: f64,
    /// m
    pub cell_inner_diameter: f64,
    /// in [0, 1]
    pub polarization: f64,
}

impl AtomEnsemble {
    pub fn new(density: f64, cell_inner_diameter: f64, polarization: f64) -> Result<Self> {
        if !(density >= 0.0) || !density.is_finite() {
            return Err(Error::invalid("density", format!("{density} must be >= 0")));
        }
        if !(cell_inner_diameter >= 0.0) || !cell_inner_diameter.is_finite() {
            return Err(Error::invalid(
                "cell_inner_diameter",
                format!("{cell_inner_diameter} must be >= 0"),
            ));
        }
        if !(0.0..=1.0).contains(&polarization) {
            return Err(Error::invalid(
                "polarization",
                format!("{polarization} outside [0, 1]"),
            ));
        }
        Ok(Self {
            density,
            cell_inner_diameter,
            polarization,
        })
    }

    /// The room-temperature cell: 3.6e16 m⁻³, 5.3 mm, fully pumped.
    pub fn room_temperature() -> Self {
        Self {
            density: ROOM_DENSITY,
            cell_inner_diameter: CELL_INNER_DIAMETER,
            polarization: 1.0,
        }
    }

    pub fn at_temperature(t_celsius: f64) -> Result<Self> {
        Self::new(
            density_at_temperature(t_celsius)?,
            CELL_INNER_DIAMETER,
            1.0,
        )
    }

    pub fn volume(&self) -> f64 {
        PI / 6.0 * self.cell_inner_diameter.powi(3)
    }

    pub fn atom_count(&self) -> f64 {
        self.density * self.volume()
    }

    /// J_x in units of ħ; each F=4 atom contributes 4 when fully pumped.
    pub fn total_spin(&self) -> f64 {
        4.0 * self.polarization * self.atom_count()
    }
}

impl Default for AtomEnsemble {
    fn default() -> Self {
        Self::room_temperature()
    }
}

/// Readout noise sources of the polarimeter.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReadoutNoise {
    /// One-sided PSD of the white photon shot noise, signal²/Hz.
    pub shot_psd: f64,
    /// One-sided PSD of the 1/f classical noise at the Larmor frequency,
    /// signal²/Hz. Zero disables it.
    pub classical_psd_at_larmor: f64,
}

impl ReadoutNoise {
    pub fn none() -> Self {
        Self::default()
    }
}

/// Operating point of the magnetometer in one mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnetometerConfig {
    /// B_x, T
    pub bias_field: f64,
    /// Ω = γ·B_x, rad/s
    pub larmor_omega: f64,
    /// Γ = 1/T₂, 1/s
    pub relaxation_rate: f64,
    /// a·S_x: maps J_z onto polarimeter signal units.
    pub readout_coupling: f64,
    pub noise: ReadoutNoise,
}

impl MagnetometerConfig {
    pub fn new(bias_field: f64, relaxation_rate: f64, readout_coupling: f64) -> Result<Self> {
        let larmor_omega = larmor_frequency(bias_field)?;
        if !(relaxation_rate > 0.0) || !relaxation_rate.is_finite() {
            return Err(Error::invalid(
                "relaxation_rate",
                format!("{relaxation_rate} must be > 0"),
            ));
        }
        if !readout_coupling.is_finite() || readout_coupling == 0.0 {
            return Err(Error::invalid(
                "readout_coupling",
                "must be finite and nonzero",
            ));
        }
        Ok(Self {
            bias_field,
            larmor_omega,
            relaxation_rate,
            readout_coupling,
            noise: ReadoutNoise::none(),
        })
    }

    /// Build from a Larmor frequency in Hz and a coherence time in s.
    pub fn from_larmor_hz(larmor_hz: f64, t2: f64) -> Result<Self> {
        if !(t2 > 0.0) {
            return Err(Error::invalid("t2", format!("{t2} must be > 0")));
        }
        Self::new(2.0 * PI * larmor_hz / GAMMA_CS, 1.0 / t2, 1.0)
    }

    /// Pulsed mode: 700 Hz Larmor frequency, dark T₂ = 15 ms, noiseless.
    pub fn pulsed_default() -> Self {
        Self::from_larmor_hz(LARMOR_HZ_PULSED, T2_DARK).expect("valid constants")
    }

    /// Continuous mode: 410 Hz Larmor frequency, T₂ = 0.44 ms, noiseless.
    pub fn continuous_default() -> Self {
        Self::from_larmor_hz(LARMOR_HZ_CONTINUOUS, T2_CONTINUOUS).expect("valid constants")
    }

    pub fn with_noise(mut self, noise: ReadoutNoise) -> Self {
        self.noise = noise;
        self
    }

    pub fn larmor_hz(&self) -> f64 {
        self.larmor_omega / (2.0 * PI)
    }

    pub fn t2(&self) -> f64 {
        1.0 / self.relaxation_rate
    }
}
