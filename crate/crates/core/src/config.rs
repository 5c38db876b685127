//! Experiment configuration (TOML). Every key carries its unit in its name;
//! omitted keys take the defaults of the selected mode.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Axis, NerveTemplateParams, DEFAULT_DT};
use crate::metrology::{
    continuous_pn_exact, continuous_readout_noise, default_split, noise_budget,
    pulsed_difference_pn, pulsed_readout_noise, NoiseBudget, CONTINUOUS_SINGLE_SHOT_FLOOR,
    PULSED_SINGLE_SHOT_FLOOR,
};
use crate::physics::{
    AtomEnsemble, MagnetometerConfig, ReadoutNoise, CELL_INNER_DIAMETER, LARMOR_HZ_CONTINUOUS,
    LARMOR_HZ_PULSED, ROOM_DENSITY, T2_CONTINUOUS, T2_DARK,
};

/// Fourier component of the default pulsed nerve template, T·s.
pub const NERVE_FOURIER_TARGET: f64 = 4.1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pulsed,
    Continuous,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Pulsed => "pulsed",
            Mode::Continuous => "continuous",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pulsed" => Ok(Mode::Pulsed),
            "continuous" => Ok(Mode::Continuous),
            o => Err(Error::Config(format!("unknown mode `{o}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WaveformKind {
    #[default]
    Nerve,
    Calibration,
    /// Zero field: the null experiment.
    None,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub density_per_m3: Option<f64>,
    /// Takes precedence over `density_per_m3`.
    pub temperature_celsius: Option<f64>,
    pub cell_inner_diameter_m: Option<f64>,
    pub polarization: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MagnetometerSection {
    /// Takes precedence over `larmor_hz`.
    pub bias_field_tesla: Option<f64>,
    pub larmor_hz: Option<f64>,
    pub t2_s: Option<f64>,
    pub readout_coupling: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub enabled: Option<bool>,
    /// Pulsed single-shot floor of |B(Ω)|.
    pub single_shot_floor_tesla_second: Option<f64>,
    /// Continuous single-shot field sensitivity.
    pub single_shot_floor_tesla_per_root_hz: Option<f64>,
    /// Shot-noise share of the non-projection variance, in [0, 1].
    pub shot_share: Option<f64>,
    /// Explicit one-sided readout PSDs; override the budget when set.
    pub shot_psd_per_hz: Option<f64>,
    pub classical_psd_per_hz_at_larmor: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveformSection {
    pub kind: Option<WaveformKind>,
    pub dt_s: Option<f64>,
    pub axis: Option<Axis>,
    pub peak_to_peak_tesla: Option<f64>,
    /// Rescale the nerve template to this |B(Ω)| (pulsed default 4.1 pT·ms).
    pub fourier_target_tesla_second: Option<f64>,
    pub duration_s: Option<f64>,
    pub onset_s: Option<f64>,
    pub asymmetry: Option<f64>,
    pub stimulus_time_s: Option<f64>,
    pub artifact_amplitude_tesla: Option<f64>,
    pub artifact_duration_s: Option<f64>,
    pub window_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub probe_duration_s: Option<f64>,
    pub psd_window_s: Option<f64>,
    pub regularization: Option<f64>,
    pub lowpass_cutoff_hz: Option<f64>,
    pub calibration_amplitude_tesla: Option<f64>,
    pub calibration_frequency_hz: Option<f64>,
    pub calibration_averages: Option<usize>,
    pub null_repeats: Option<usize>,
    pub floor_band_half_width_hz: Option<f64>,
    pub misalignment_spin: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysiologySection {
    pub distance_m: Option<f64>,
    pub distance_sigma_m: Option<f64>,
    pub delay_s: Option<f64>,
    pub delay_sigma_s: Option<f64>,
    pub nerve_distance_m: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitsSection {
    pub temperatures_celsius: Option<Vec<f64>>,
    pub pulse_duration_s: Option<f64>,
}

/// Configuration as written by the user.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub n_avg: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub ensemble: EnsembleSection,
    pub magnetometer: MagnetometerSection,
    pub noise: NoiseSection,
    pub waveform: WaveformSection,
    pub analysis: AnalysisSection,
    pub physiology: PhysiologySection,
    pub limits: LimitsSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn for_mode(mode: Mode) -> Self {
        Self {
            mode: Some(mode),
            ..Self::default()
        }
    }

    /// Fill every omitted key with the defaults of the selected mode.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mode = self.mode.unwrap_or(Mode::Pulsed);
        let pulsed = mode == Mode::Pulsed;

        let e = &self.ensemble;
        let diameter = e.cell_inner_diameter_m.unwrap_or(CELL_INNER_DIAMETER);
        let polarization = e.polarization.unwrap_or(1.0);
        let density = match (e.temperature_celsius, e.density_per_m3) {
            (Some(t), _) => crate::physics::density_at_temperature(t)?,
            (None, Some(n)) => n,
            (None, None) => ROOM_DENSITY,
        };
        let ensemble = AtomEnsemble::new(density, diameter, polarization)?;
        if polarization == 0.0 {
            return Err(Error::Config(
                "zero polarization leaves no spin to measure; projection-noise limits are undefined"
                    .into(),
            ));
        }

        let m = &self.magnetometer;
        let t2 = m.t2_s.unwrap_or(if pulsed { T2_DARK } else { T2_CONTINUOUS });
        let mut magnetometer = match m.bias_field_tesla {
            Some(b) => MagnetometerConfig::new(b, 1.0 / t2, 1.0)?,
            None => MagnetometerConfig::from_larmor_hz(
                m.larmor_hz
                    .unwrap_or(if pulsed { LARMOR_HZ_PULSED } else { LARMOR_HZ_CONTINUOUS }),
                t2,
            )?,
        };
        if let Some(c) = m.readout_coupling {
            magnetometer = MagnetometerConfig::new(magnetometer.bias_field, 1.0 / t2, c)?;
        }
        if !(magnetometer.larmor_omega > 0.0) {
            return Err(Error::Config("the bias field must be > 0".into()));
        }

        let a = &self.analysis;
        let analysis = Analysis {
            probe_duration: a.probe_duration_s.unwrap_or(8e-3),
            psd_window: a.psd_window_s.unwrap_or(if pulsed { 8e-3 } else { 37.1e-3 }),
            regularization: a
                .regularization
                .unwrap_or(crate::dsp::deconv::DEFAULT_REGULARIZATION),
            lowpass_cutoff_hz: a
                .lowpass_cutoff_hz
                .unwrap_or(crate::dsp::deconv::DEFAULT_LOWPASS_HZ),
            calibration_amplitude: a.calibration_amplitude_tesla.unwrap_or(1e-9),
            calibration_frequency_hz: a
                .calibration_frequency_hz
                .unwrap_or(magnetometer.larmor_hz()),
            calibration_averages: a.calibration_averages.unwrap_or(1000),
            null_repeats: a.null_repeats.unwrap_or(if pulsed { 64 } else { 16 }),
            floor_band_half_width_hz: a.floor_band_half_width_hz.unwrap_or(50.0),
            misalignment: a.misalignment_spin.unwrap_or([0.0, 0.0]),
        };
        for (name, v) in [
            ("probe_duration_s", analysis.probe_duration),
            ("psd_window_s", analysis.psd_window),
            ("lowpass_cutoff_hz", analysis.lowpass_cutoff_hz),
            ("calibration_frequency_hz", analysis.calibration_frequency_hz),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("`{name}` must be > 0, got {v}")));
            }
        }
        if analysis.null_repeats == 0 || analysis.calibration_averages == 0 {
            return Err(Error::Config("repeat and average counts must be >= 1".into()));
        }

        let w = &self.waveform;
        let dt = w.dt_s.unwrap_or(DEFAULT_DT);
        if !(dt > 0.0) {
            return Err(Error::Config(format!("`dt_s` must be > 0, got {dt}")));
        }
        let base = if pulsed {
            NerveTemplateParams::pulsed_impulse()
        } else {
            NerveTemplateParams::default()
        };
        let nerve = NerveTemplateParams {
            peak_to_peak: w.peak_to_peak_tesla.unwrap_or(base.peak_to_peak),
            duration: w.duration_s.unwrap_or(base.duration),
            onset: w.onset_s.unwrap_or(base.onset),
            asymmetry: w.asymmetry.unwrap_or(base.asymmetry),
            stimulus_time: w.stimulus_time_s.unwrap_or(base.stimulus_time),
            artifact_amplitude: w.artifact_amplitude_tesla.unwrap_or(base.artifact_amplitude),
            artifact_duration: w.artifact_duration_s.unwrap_or(base.artifact_duration),
            window: w.window_s.unwrap_or(base.window),
            axis: w.axis.unwrap_or(base.axis),
        };
        nerve.validate()?;
        // An explicit amplitude turns the default Fourier rescaling off.
        let fourier_target = match (w.fourier_target_tesla_second, w.peak_to_peak_tesla) {
            (Some(f), _) => Some(f),
            (None, None) if pulsed => Some(NERVE_FOURIER_TARGET),
            _ => None,
        };
        let waveform = match w.kind.unwrap_or_default() {
            WaveformKind::Nerve => WaveformSpec::Nerve {
                params: nerve,
                fourier_target,
            },
            WaveformKind::Calibration => WaveformSpec::Calibration,
            WaveformKind::None => WaveformSpec::Null,
        };

        let n = &self.noise;
        let noise_enabled = n.enabled.unwrap_or(true);
        let budget = if !noise_enabled {
            None
        } else if pulsed {
            let total = n.single_shot_floor_tesla_second.unwrap_or(PULSED_SINGLE_SHOT_FLOOR);
            let pn = pulsed_difference_pn(&magnetometer, &ensemble, analysis.psd_window)?;
            Some(split(total, pn, n.shot_share)?)
        } else {
            let total = n
                .single_shot_floor_tesla_per_root_hz
                .unwrap_or(CONTINUOUS_SINGLE_SHOT_FLOOR);
            let pn = continuous_pn_exact(&magnetometer, &ensemble)?;
            Some(split(total, pn, n.shot_share)?)
        };
        let mut readout = match &budget {
            None => ReadoutNoise::none(),
            Some(b) if pulsed => pulsed_readout_noise(&magnetometer, &ensemble, analysis.psd_window, b),
            Some(b) => continuous_readout_noise(&magnetometer, &ensemble, b),
        };
        if let Some(s) = n.shot_psd_per_hz {
            readout.shot_psd = s;
        }
        if let Some(c) = n.classical_psd_per_hz_at_larmor {
            readout.classical_psd_at_larmor = c;
        }
        if readout.shot_psd < 0.0 || readout.classical_psd_at_larmor < 0.0 {
            return Err(Error::Config("noise PSDs must be >= 0".into()));
        }
        magnetometer = magnetometer.with_noise(readout);

        let p = &self.physiology;
        let physiology = Physiology {
            distance: p.distance_m.unwrap_or(0.05),
            distance_sigma: p.distance_sigma_m.unwrap_or(0.01),
            delay: p.delay_s.unwrap_or(1.3e-3),
            delay_sigma: p.delay_sigma_s.unwrap_or(0.2e-3),
            nerve_distance: p.nerve_distance_m.unwrap_or(4.5e-3),
        };

        let l = &self.limits;
        let limits = Limits {
            temperatures_celsius: l.temperatures_celsius.clone().unwrap_or(vec![22.0, 37.0]),
            pulse_duration: l.pulse_duration_s.unwrap_or(2e-3),
        };

        let n_avg = self.n_avg.unwrap_or(if pulsed { 1000 } else { 5000 });
        if n_avg == 0 {
            return Err(Error::Config("`n_avg` must be >= 1".into()));
        }
        Ok(RunConfig {
            mode,
            seed: self.seed.unwrap_or(1),
            n_avg,
            output_dir: self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
            ensemble,
            magnetometer,
            budget,
            dt,
            waveform,
            analysis,
            physiology,
            limits,
        })
    }
}

fn split(total: f64, pn: f64, shot_share: Option<f64>) -> Result<NoiseBudget> {
    let b = match shot_share {
        None => default_split(total, pn),
        Some(s) => {
            let pn_share = (pn / total).powi(2);
            noise_budget(total, pn, (1.0 - pn_share).max(0.0) * s)
        }
    };
    b.map_err(|e| Error::Config(format!("noise budget: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum WaveformSpec {
    Nerve {
        params: NerveTemplateParams,
        fourier_target: Option<f64>,
    },
    Calibration,
    Null,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analysis {
    pub probe_duration: f64,
    pub psd_window: f64,
    pub regularization: f64,
    pub lowpass_cutoff_hz: f64,
    pub calibration_amplitude: f64,
    pub calibration_frequency_hz: f64,
    pub calibration_averages: usize,
    pub null_repeats: usize,
    pub floor_band_half_width_hz: f64,
    pub misalignment: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Physiology {
    pub distance: f64,
    pub distance_sigma: f64,
    pub delay: f64,
    pub delay_sigma: f64,
    /// Nerve axis to vapour-cell centre, m.
    pub nerve_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Limits {
    pub temperatures_celsius: Vec<f64>,
    pub pulse_duration: f64,
}

/// Fully resolved configuration of one run, in SI units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub n_avg: usize,
    pub output_dir: PathBuf,
    pub ensemble: AtomEnsemble,
    pub magnetometer: MagnetometerConfig,
    pub budget: Option<NoiseBudget>,
    pub dt: f64,
    pub waveform: WaveformSpec,
    pub analysis: Analysis,
    pub physiology: Physiology,
    pub limits: Limits,
}

impl RunConfig {
    /// The resolved run written back in the user-facing keys, with every
    /// field set. Resolving it again reproduces this run.
    pub fn echo(&self) -> ExperimentConfig {
        let pulsed = self.mode == Mode::Pulsed;
        let m = &self.magnetometer;
        let a = &self.analysis;
        let mut waveform = WaveformSection {
            dt_s: Some(self.dt),
            ..WaveformSection::default()
        };
        match &self.waveform {
            WaveformSpec::Nerve { params, fourier_target } => {
                waveform.kind = Some(WaveformKind::Nerve);
                waveform.axis = Some(params.axis);
                waveform.peak_to_peak_tesla = Some(params.peak_to_peak);
                waveform.fourier_target_tesla_second = *fourier_target;
                waveform.duration_s = Some(params.duration);
                waveform.onset_s = Some(params.onset);
                waveform.asymmetry = Some(params.asymmetry);
                waveform.stimulus_time_s = Some(params.stimulus_time);
                waveform.artifact_amplitude_tesla = Some(params.artifact_amplitude);
                waveform.artifact_duration_s = Some(params.artifact_duration);
                waveform.window_s = Some(params.window);
            }
            WaveformSpec::Calibration => waveform.kind = Some(WaveformKind::Calibration),
            WaveformSpec::Null => waveform.kind = Some(WaveformKind::None),
        }
        let mut noise = NoiseSection {
            enabled: Some(self.budget.is_some()),
            shot_psd_per_hz: Some(m.noise.shot_psd),
            classical_psd_per_hz_at_larmor: Some(m.noise.classical_psd_at_larmor),
            ..NoiseSection::default()
        };
        if let Some(b) = &self.budget {
            if pulsed {
                noise.single_shot_floor_tesla_second = Some(b.total);
            } else {
                noise.single_shot_floor_tesla_per_root_hz = Some(b.total);
            }
            let rest = b.total * b.total - b.projection * b.projection;
            if rest > 0.0 {
                noise.shot_share = Some(b.shot * b.shot / rest);
            }
        }
        ExperimentConfig {
            mode: Some(self.mode),
            seed: Some(self.seed),
            n_avg: Some(self.n_avg),
            output_dir: Some(self.output_dir.clone()),
            ensemble: EnsembleSection {
                density_per_m3: Some(self.ensemble.density),
                temperature_celsius: None,
                cell_inner_diameter_m: Some(self.ensemble.cell_inner_diameter),
                polarization: Some(self.ensemble.polarization),
            },
            magnetometer: MagnetometerSection {
                bias_field_tesla: Some(m.bias_field),
                larmor_hz: None,
                t2_s: Some(m.t2()),
                readout_coupling: Some(m.readout_coupling),
            },
            noise,
            waveform,
            analysis: AnalysisSection {
                probe_duration_s: Some(a.probe_duration),
                psd_window_s: Some(a.psd_window),
                regularization: Some(a.regularization),
                lowpass_cutoff_hz: Some(a.lowpass_cutoff_hz),
                calibration_amplitude_tesla: Some(a.calibration_amplitude),
                calibration_frequency_hz: Some(a.calibration_frequency_hz),
                calibration_averages: Some(a.calibration_averages),
                null_repeats: Some(a.null_repeats),
                floor_band_half_width_hz: Some(a.floor_band_half_width_hz),
                misalignment_spin: Some(a.misalignment),
            },
            physiology: PhysiologySection {
                distance_m: Some(self.physiology.distance),
                distance_sigma_m: Some(self.physiology.distance_sigma),
                delay_s: Some(self.physiology.delay),
                delay_sigma_s: Some(self.physiology.delay_sigma),
                nerve_distance_m: Some(self.physiology.nerve_distance),
            },
            limits: LimitsSection {
                temperatures_celsius: Some(self.limits.temperatures_celsius.clone()),
                pulse_duration_s: Some(self.limits.pulse_duration),
            },
        }
    }

    /// Flattened `section.key = value` form of [`RunConfig::echo`] for file
    /// headers.
    pub fn snapshot(&self) -> Vec<(String, String)> {
        let v = serde_json::to_value(self.echo()).expect("config serializes");
        let mut out = Vec::new();
        flatten("", &v, &mut out);
        out
    }
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
    use serde_json::Value;
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        Value::Number(n) => match n.as_f64() {
            Some(f) if n.is_f64() => out.push((prefix.to_string(), format!("{f:e}"))),
            _ => out.push((prefix.to_string(), n.to_string())),
        },
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Null => {}
        other => out.push((prefix.to_string(), other.to_string())),
    }
}
