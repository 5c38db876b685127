//! Scenario orchestration: simulate, calibrate, analyse, and write files.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::info;
use serde::Serialize;

use crate::config::{Mode, RunConfig, WaveformSpec};
use crate::dsp::{
    average_simulated, calibrate_continuous, calibrate_pulsed, deconvolve, fit_fid, psd,
    psd_window, snr, CalibrationMode, CalibrationScale, DeconvolutionParams,
};
use crate::error::{Error, Result};
use crate::field::{
    calibration_waveform, fourier_component, invert_wire, nerve_waveform, Axis, FieldWaveform,
};
use crate::io::{
    read_record, write_key_values, write_record, write_spectrum, write_waveform, Header,
};
use crate::metrology::{
    conduction_velocity, pn_amplitude, pn_pulsed_fourier, pn_sensitivity_continuous, Measurement,
};
use crate::physics::{density_at_temperature, AtomEnsemble, T2_CONTINUOUS};
use crate::spin::{
    continuous_record, derive_seed, pulsed_sequence, DetectionRecord, PulsedOptions, Sequence,
};
use crate::units::{
    Ampere, Dimensionless, FourierComponent, PerCubicMeter, Quantity, Sensitivity, Tesla,
    TeslaPerRootHz, TeslaSecond, Unit,
};

const STREAM_CALIBRATION: u64 = 1;
const STREAM_MEASUREMENT: u64 = 2;
const STREAM_NULL: u64 = 3;
const STREAM_SINGLE: u64 = 4;
/// Single-shot floors use this many times `null_repeats` shots.
const SINGLE_SHOT_FACTOR: usize = 16;

/// One reported number.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportEntry {
    pub name: String,
    /// SI value.
    pub value: f64,
    /// SI unit symbol; empty for dimensionless.
    pub unit: String,
    /// Human-readable value in display units.
    pub display: String,
    /// Operation that produced the value.
    pub operation: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunReport {
    pub mode: String,
    pub entries: Vec<ReportEntry>,
    pub files: Vec<PathBuf>,
    /// Wall-clock time; kept out of written files so they stay reproducible.
    #[serde(skip)]
    pub duration: Duration,
}

fn display_number(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e7).contains(&a) {
        format!("{v:.4e}")
    } else {
        format!("{v:.4}")
    }
}

impl RunReport {
    pub fn new(mode: &str) -> Self {
        Self {
            mode: mode.into(),
            ..Self::default()
        }
    }

    pub fn push<U: Unit>(&mut self, name: &str, q: Quantity<U>, operation: &str) {
        self.entries.push(ReportEntry {
            name: name.into(),
            value: q.si(),
            unit: U::SI_SYMBOL.into(),
            display: format!("{} {}", display_number(q.display_value()), U::DISPLAY_SYMBOL)
                .trim_end()
                .to_string(),
            operation: operation.into(),
        });
    }

    pub fn push_measurement<U: Unit>(&mut self, name: &str, m: &Measurement<U>, operation: &str) {
        self.entries.push(ReportEntry {
            name: name.into(),
            value: m.value.si(),
            unit: U::SI_SYMBOL.into(),
            display: m.to_string(),
            operation: operation.into(),
        });
        self.push(&format!("{name}_sigma"), m.sigma, operation);
    }

    pub fn entry(&self, name: &str) -> Option<&ReportEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// SI value of an entry.
    pub fn get(&self, name: &str) -> Option<f64> {
        self.entry(name).map(|e| e.value)
    }

    pub fn key_values(&self) -> Header {
        let mut kv = vec![("mode".to_string(), self.mode.clone())];
        for e in &self.entries {
            let si = format!("{:e} {}", e.value, e.unit);
            kv.push((
                e.name.clone(),
                format!("{} | {} | {}", si.trim_end(), e.display, e.operation),
            ));
        }
        kv
    }

    /// Write `report.txt` (key-value) and `report.json`, and list every
    /// file of the run in the manifest.
    pub fn write(&mut self, dir: &Path) -> Result<()> {
        let txt = dir.join("report.txt");
        let json = dir.join("report.json");
        self.files.push(txt.clone());
        self.files.push(json.clone());
        let mut kv = self.key_values();
        for (i, f) in self.files.iter().enumerate() {
            kv.push((format!("file.{i}"), f.display().to_string()));
        }
        write_key_values(&txt, &kv)?;
        let body = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(&json, body + "\n").map_err(|e| Error::io(&json, e))
    }
}

fn dimensionless(v: f64) -> Quantity<Dimensionless> {
    Quantity::new(v)
}

/// The field the scenario applies.
pub fn scenario_waveform(rc: &RunConfig) -> Result<FieldWaveform> {
    let omega = rc.magnetometer.larmor_omega;
    match &rc.waveform {
        WaveformSpec::Nerve {
            params,
            fourier_target,
        } => {
            let w = nerve_waveform(params, rc.dt)?;
            match fourier_target {
                Some(f) => w.rescaled_to_fourier(omega, *f),
                None => Ok(w),
            }
        }
        WaveformSpec::Calibration => calibration_field(rc),
        WaveformSpec::Null => {
            let len = match rc.mode {
                Mode::Pulsed => crate::field::NerveTemplateParams::pulsed_impulse().window,
                Mode::Continuous => rc.analysis.psd_window,
            };
            FieldWaveform::zeros(((len / rc.dt).round() as usize).max(1), rc.dt, Axis::Z)
        }
    }
}

/// Single-period calibration tone; padded to the PSD window in continuous mode.
pub fn calibration_field(rc: &RunConfig) -> Result<FieldWaveform> {
    let a = &rc.analysis;
    let w = calibration_waveform(a.calibration_amplitude, a.calibration_frequency_hz, rc.dt)?;
    match rc.mode {
        Mode::Pulsed => Ok(w),
        Mode::Continuous => {
            let n = ((a.psd_window / rc.dt).round() as usize).max(w.len());
            w.resized(n)
        }
    }
}

fn noisy(rc: &RunConfig, seed: u64) -> Option<u64> {
    rc.budget.is_some().then_some(seed)
}

/// One A−B pair; noiseless when the config disables noise.
pub fn pulsed_shot(rc: &RunConfig, w: &FieldWaveform, seed: u64) -> Result<DetectionRecord> {
    let opts = PulsedOptions {
        probe_duration: rc.analysis.probe_duration,
        misalignment: rc.analysis.misalignment,
        seed: noisy(rc, seed),
    };
    let (a, b) = pulsed_sequence(&rc.magnetometer, &rc.ensemble, w, &opts)?;
    a.subtract(&b)
}

pub fn pulsed_average(rc: &RunConfig, w: &FieldWaveform, n: usize, seed: u64) -> Result<DetectionRecord> {
    if rc.budget.is_none() {
        let mut r = pulsed_shot(rc, w, seed)?;
        r.n_avg = n;
        return Ok(r.with_meta("n_avg", n));
    }
    average_simulated(n, seed, |s| pulsed_shot(rc, w, s))
}

pub fn continuous_shot(rc: &RunConfig, w: &FieldWaveform, seed: u64) -> Result<DetectionRecord> {
    continuous_record(&rc.magnetometer, &rc.ensemble, w, noisy(rc, seed))
}

pub fn continuous_average(
    rc: &RunConfig,
    w: &FieldWaveform,
    n: usize,
    seed: u64,
) -> Result<DetectionRecord> {
    if rc.budget.is_none() {
        let mut r = continuous_shot(rc, w, seed)?;
        r.n_avg = n;
        return Ok(r.with_meta("n_avg", n));
    }
    average_simulated(n, seed, |s| continuous_shot(rc, w, s))
}

fn out_dir(rc: &RunConfig) -> Result<PathBuf> {
    let dir = rc.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn header(rc: &RunConfig, what: &str) -> Header {
    let mut h = vec![("content".to_string(), what.to_string())];
    h.extend(rc.snapshot());
    h
}

/// Pulsed calibration: averaged A−B records of the calibration tone.
pub fn pulsed_calibration(rc: &RunConfig) -> Result<(CalibrationScale, DetectionRecord)> {
    let cal = calibration_field(rc)?;
    let omega_cal = 2.0 * std::f64::consts::PI * rc.analysis.calibration_frequency_hz;
    let known = fourier_component(&cal, omega_cal).norm();
    let rec = pulsed_average(
        rc,
        &cal,
        rc.analysis.calibration_averages,
        derive_seed(rc.seed, STREAM_CALIBRATION),
    )?;
    let scale = calibrate_pulsed(&rec, known, rc.analysis.psd_window)?;
    Ok((scale, rec))
}

/// Mean two-sided S_xx at the calibration frequency over `repeats` null
/// records, each an average of `n` shots.
fn pulsed_null_psd(
    rc: &RunConfig,
    scale: &CalibrationScale,
    template: &FieldWaveform,
    n: usize,
    repeats: usize,
    stream: u64,
) -> Result<(f64, DetectionRecord)> {
    let zero = FieldWaveform::zeros(template.len(), rc.dt, template.axis())?;
    let base = derive_seed(rc.seed, stream);
    let mut sum = 0.0;
    let mut first = None;
    for r in 0..repeats {
        let rec = pulsed_average(rc, &zero, n, derive_seed(base, r as u64))?;
        sum += scale.windowed_psd(&rec)?;
        first.get_or_insert(rec);
    }
    Ok((sum / repeats as f64, first.expect("repeats >= 1")))
}

pub fn run_pulsed_experiment(rc: &RunConfig) -> Result<RunReport> {
    if rc.mode != Mode::Pulsed {
        return Err(Error::Config("run_pulsed_experiment needs mode = pulsed".into()));
    }
    let t0 = Instant::now();
    let dir = out_dir(rc)?;
    let mut rep = RunReport::new("pulsed");
    let a = &rc.analysis;

    info!("pulsed calibration with {} averages", a.calibration_averages);
    let (scale, cal_rec) = pulsed_calibration(rc)?;

    let w = scenario_waveform(rc)?;
    let applied = fourier_component(&w, rc.magnetometer.larmor_omega).norm();
    info!("pulsed measurement with {} averages", rc.n_avg);
    let meas = pulsed_average(rc, &w, rc.n_avg, derive_seed(rc.seed, STREAM_MEASUREMENT))?;
    let measured: FourierComponent = scale.fourier_component(&meas)?;

    rep.push("calibration_fourier_component", Quantity::<TeslaSecond>::new(scale.reference), "fourier_component");
    rep.push("calibration_factor", dimensionless(scale.factor), "calibrate_pulsed");
    rep.push(
        "calibration_frequency_hz",
        dimensionless(scale.omega / (2.0 * std::f64::consts::PI)),
        "calibrate_pulsed",
    );
    rep.push("applied_fourier_component", Quantity::<TeslaSecond>::new(applied), "fourier_component");
    rep.push("fourier_component", measured, "calibrate_pulsed");

    if rc.budget.is_some() {
        info!("noise floor from {} null records", a.null_repeats);
        let (s_avg, null_rec) =
            pulsed_null_psd(rc, &scale, &w, rc.n_avg, a.null_repeats, STREAM_NULL)?;
        let (s_one, _) = pulsed_null_psd(
            rc,
            &scale,
            &w,
            1,
            SINGLE_SHOT_FACTOR * a.null_repeats,
            STREAM_SINGLE,
        )?;
        let floor = scale.factor * s_avg.sqrt();
        let floor_one = scale.factor * s_one.sqrt();
        // Calibration records are averaged `calibration_averages` times.
        let floor_cal = floor_one / (a.calibration_averages as f64).sqrt();
        rep.push("noise_floor", Quantity::<TeslaSecond>::new(floor), "snr");
        rep.push("single_shot_noise_floor", Quantity::<TeslaSecond>::new(floor_one), "snr");
        rep.push("snr", dimensionless(snr(measured.si(), floor)?), "snr");
        rep.push("single_shot_snr", dimensionless(snr(measured.si(), floor_one)?), "snr");
        rep.push("calibration_snr", dimensionless(snr(scale.reference, floor_cal)?), "snr");
        let null_path = dir.join("null_spectrum.csv");
        let spec = psd_window(&null_rec.samples, null_rec.dt, a.psd_window)?;
        write_spectrum(&null_path, &spec, &header(rc, "null record spectrum"))?;
        rep.files.push(null_path);
    }
    if let Some(b) = &rc.budget {
        rep.push("budget_total", Quantity::<TeslaSecond>::new(b.total), "noise_budget");
        rep.push("budget_projection", Quantity::<TeslaSecond>::new(b.projection), "noise_budget");
        rep.push("budget_shot", Quantity::<TeslaSecond>::new(b.shot), "noise_budget");
        rep.push("budget_classical", Quantity::<TeslaSecond>::new(b.classical), "noise_budget");
    }
    push_limits(&mut rep, rc)?;
    push_velocity(&mut rep, rc)?;

    let files = [
        ("waveform.csv", None, Some(&w)),
        ("calibration_record.csv", Some(&cal_rec), None),
        ("measurement_record.csv", Some(&meas), None),
    ];
    write_files(rc, &dir, &mut rep, &files)?;
    for (name, rec) in [("calibration_spectrum.csv", &cal_rec), ("measurement_spectrum.csv", &meas)] {
        let p = dir.join(name);
        let s = psd_window(&rec.samples, rec.dt, a.psd_window)?;
        write_spectrum(&p, &s, &header(rc, name))?;
        rep.files.push(p);
    }
    rep.duration = t0.elapsed();
    rep.write(&dir)?;
    Ok(rep)
}

fn write_files(
    rc: &RunConfig,
    dir: &Path,
    rep: &mut RunReport,
    files: &[(&str, Option<&DetectionRecord>, Option<&FieldWaveform>)],
) -> Result<()> {
    for (name, rec, w) in files {
        let p = dir.join(name);
        if let Some(r) = rec {
            write_record(&p, r, &header(rc, name))?;
        }
        if let Some(w) = w {
            write_waveform(&p, w, &header(rc, name))?;
        }
        rep.files.push(p);
    }
    Ok(())
}

fn push_limits(rep: &mut RunReport, rc: &RunConfig) -> Result<()> {
    let jx = rc.ensemble.total_spin();
    rep.push("total_spin", dimensionless(jx), "ensemble_spin");
    rep.push("pn_pulsed_fourier", pn_pulsed_fourier(jx)?, "pn_pulsed_fourier");
    let t2 = match rc.mode {
        Mode::Continuous => rc.magnetometer.t2(),
        Mode::Pulsed => T2_CONTINUOUS,
    };
    rep.push("pn_sensitivity_continuous", pn_sensitivity_continuous(jx, t2)?, "pn_sensitivity_continuous");
    Ok(())
}

fn push_velocity(rep: &mut RunReport, rc: &RunConfig) -> Result<()> {
    let p = &rc.physiology;
    let v = conduction_velocity(
        Measurement::new(p.distance, p.distance_sigma)?,
        Measurement::new(p.delay, p.delay_sigma)?,
    )?;
    rep.push_measurement("conduction_velocity", &v, "conduction_velocity");
    Ok(())
}

/// Continuous calibration: fitted response to the averaged calibration tone.
pub fn continuous_calibration(rc: &RunConfig) -> Result<(CalibrationScale, DetectionRecord, FieldWaveform)> {
    let cal = calibration_field(rc)?;
    let rec = continuous_average(
        rc,
        &cal,
        rc.analysis.calibration_averages,
        derive_seed(rc.seed, STREAM_CALIBRATION),
    )?;
    let scale = calibrate_continuous(
        &rec,
        &cal,
        rc.analysis.calibration_amplitude,
        rc.magnetometer.relaxation_rate,
    )?;
    Ok((scale, rec, cal))
}

fn deconv_params(rc: &RunConfig, scale: &CalibrationScale, axis: Axis) -> Result<DeconvolutionParams> {
    let mut p = scale.deconvolution_params(axis)?;
    p.regularization = rc.analysis.regularization;
    p.lowpass_hz = rc.analysis.lowpass_cutoff_hz;
    Ok(p)
}

/// Two-sided field PSD at the Larmor frequency, averaged over a band and
/// over `repeats` deconvolved null records of `n` shots each.
fn continuous_null_psd(
    rc: &RunConfig,
    params: &DeconvolutionParams,
    n: usize,
    repeats: usize,
    stream: u64,
) -> Result<(f64, FieldWaveform)> {
    let len = ((rc.analysis.psd_window / rc.dt).round() as usize).max(2);
    let zero = FieldWaveform::zeros(len, rc.dt, Axis::Z)?;
    let base = derive_seed(rc.seed, stream);
    let f0 = params.omega / (2.0 * std::f64::consts::PI);
    let mut sum = 0.0;
    let mut first = None;
    for r in 0..repeats {
        let rec = continuous_average(rc, &zero, n, derive_seed(base, r as u64))?;
        let field = deconvolve(&rec, params)?;
        let s = psd(field.samples(), rc.dt)?;
        sum += 0.5 * s.band_mean(f0, rc.analysis.floor_band_half_width_hz);
        first.get_or_insert(field);
    }
    Ok((sum / repeats as f64, first.expect("repeats >= 1")))
}

/// Peak-to-peak of the recovered field inside the part of the record where
/// the scenario expects its signal.
fn signal_peak_to_peak(rc: &RunConfig, field: &FieldWaveform) -> f64 {
    let (lo, hi) = match &rc.waveform {
        WaveformSpec::Nerve { params, .. } => (params.onset, params.onset + params.duration),
        WaveformSpec::Calibration => (0.0, 1.0 / rc.analysis.calibration_frequency_hz),
        WaveformSpec::Null => (field.start_time(), field.end_time()),
    };
    let xs: Vec<f64> = (0..field.len())
        .filter(|&k| {
            let t = field.time(k);
            t >= lo && t < hi
        })
        .map(|k| field.samples()[k])
        .collect();
    crate::field::peak_to_peak(&xs)
}

pub fn run_continuous_experiment(rc: &RunConfig) -> Result<RunReport> {
    if rc.mode != Mode::Continuous {
        return Err(Error::Config("run_continuous_experiment needs mode = continuous".into()));
    }
    let t0 = Instant::now();
    let dir = out_dir(rc)?;
    let mut rep = RunReport::new("continuous");
    let a = &rc.analysis;

    info!("continuous calibration with {} averages", a.calibration_averages);
    let (scale, cal_rec, cal_w) = continuous_calibration(rc)?;
    let cal_field = deconvolve(&cal_rec, &deconv_params(rc, &scale, cal_w.axis())?)?;
    let err: f64 = cal_field
        .samples()
        .iter()
        .zip(cal_w.samples())
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    let norm: f64 = cal_w.samples().iter().map(|y| y * y).sum();
    rep.push("calibration_gain", dimensionless(1.0 / scale.factor), "calibrate_continuous");
    rep.push(
        "fitted_larmor_hz",
        dimensionless(scale.omega / (2.0 * std::f64::consts::PI)),
        "fit_response",
    );
    rep.push(
        "fitted_t2",
        Quantity::<crate::units::Second>::new(1.0 / scale.decay_rate.unwrap_or(f64::NAN)),
        "fit_response",
    );
    rep.push(
        "calibration_fit_residual",
        dimensionless(scale.fit_residual.unwrap_or(f64::NAN)),
        "fit_response",
    );
    rep.push("calibration_nrmse", dimensionless((err / norm).sqrt()), "deconvolve");

    let w = scenario_waveform(rc)?;
    info!("continuous measurement with {} averages", rc.n_avg);
    let meas = continuous_average(rc, &w, rc.n_avg, derive_seed(rc.seed, STREAM_MEASUREMENT))?;
    let params = deconv_params(rc, &scale, w.axis())?;
    let field = deconvolve(&meas, &params)?;
    let pp = signal_peak_to_peak(rc, &field);
    rep.push("applied_peak_to_peak", Quantity::<Tesla>::new(signal_peak_to_peak(rc, &w)), "nerve_waveform");
    rep.push("recovered_peak_to_peak", Quantity::<Tesla>::new(pp), "deconvolve");
    rep.push(
        "axial_current",
        Quantity::<Ampere>::new(invert_wire(pp, rc.physiology.nerve_distance)?),
        "invert_wire",
    );

    let mut null_field = None;
    if rc.budget.is_some() {
        info!("noise floor from {} null records", a.null_repeats);
        // Sensitivity is quoted for a field along the calibration axis.
        let floor_params = deconv_params(rc, &scale, cal_w.axis())?;
        let (s_avg, nf) = continuous_null_psd(rc, &floor_params, rc.n_avg, a.null_repeats, STREAM_NULL)?;
        let (s_one, _) =
            continuous_null_psd(rc, &floor_params, 1, SINGLE_SHOT_FACTOR * a.null_repeats, STREAM_SINGLE)?;
        let floor: Sensitivity = Quantity::<TeslaPerRootHz>::new(s_avg.sqrt());
        rep.push("noise_floor", floor, "deconvolve");
        rep.push("single_shot_noise_floor", Quantity::<TeslaPerRootHz>::new(s_one.sqrt()), "deconvolve");
        null_field = Some(nf);
    }
    if let Some(b) = &rc.budget {
        rep.push("budget_total", Quantity::<TeslaPerRootHz>::new(b.total), "noise_budget");
        rep.push("budget_projection", Quantity::<TeslaPerRootHz>::new(b.projection), "noise_budget");
        rep.push("budget_shot", Quantity::<TeslaPerRootHz>::new(b.shot), "noise_budget");
        rep.push("budget_classical", Quantity::<TeslaPerRootHz>::new(b.classical), "noise_budget");
    }
    push_limits(&mut rep, rc)?;
    push_velocity(&mut rep, rc)?;

    let files = [
        ("waveform.csv", None, Some(&w)),
        ("calibration_record.csv", Some(&cal_rec), None),
        ("calibration_field.csv", None, Some(&cal_field)),
        ("measurement_record.csv", Some(&meas), None),
        ("recovered_field.csv", None, Some(&field)),
    ];
    write_files(rc, &dir, &mut rep, &files)?;
    if let Some(nf) = null_field {
        let p = dir.join("null_field_spectrum.csv");
        let s = psd(nf.samples(), rc.dt)?;
        write_spectrum(&p, &s, &header(rc, "deconvolved null field spectrum"))?;
        rep.files.push(p);
    }
    rep.duration = t0.elapsed();
    rep.write(&dir)?;
    Ok(rep)
}

/// Projection-noise limits at each configured temperature.
pub fn run_limits(rc: &RunConfig) -> Result<RunReport> {
    let t0 = Instant::now();
    let mut rep = limits_report(rc)?;
    let dir = out_dir(rc)?;
    rep.duration = t0.elapsed();
    rep.write(&dir)?;
    Ok(rep)
}

/// [`run_limits`] without writing files.
pub fn limits_report(rc: &RunConfig) -> Result<RunReport> {
    let mut rep = RunReport::new("limits");
    let e = &rc.ensemble;
    if e.polarization == 0.0 {
        return Err(Error::invalid(
            "polarization",
            "zero polarization leaves no spin to measure; projection-noise limits are undefined",
        ));
    }
    let t2 = match rc.mode {
        Mode::Continuous => rc.magnetometer.t2(),
        Mode::Pulsed => T2_CONTINUOUS,
    };
    let mut sens = Vec::new();
    for &t in &rc.limits.temperatures_celsius {
        let ens = AtomEnsemble::new(density_at_temperature(t)?, e.cell_inner_diameter, e.polarization)?;
        let jx = ens.total_spin();
        let tag = format!("{t}C");
        rep.push(&format!("density_{tag}"), Quantity::<PerCubicMeter>::new(ens.density), "density_at_temperature");
        rep.push(&format!("total_spin_{tag}"), dimensionless(jx), "ensemble_spin");
        rep.push(&format!("pn_pulsed_fourier_{tag}"), pn_pulsed_fourier(jx)?, "pn_pulsed_fourier");
        rep.push(
            &format!("pn_amplitude_{tag}"),
            pn_amplitude(jx, rc.limits.pulse_duration)?,
            "pn_amplitude",
        );
        let s = pn_sensitivity_continuous(jx, t2)?;
        rep.push(&format!("pn_sensitivity_continuous_{tag}"), s, "pn_sensitivity_continuous");
        sens.push(s.si());
    }
    if let (Some(first), Some(last)) = (sens.first(), sens.last()) {
        if sens.len() > 1 {
            rep.push("sensitivity_ratio_last_to_first", dimensionless(last / first), "pn_sensitivity_continuous");
        }
    }
    Ok(rep)
}

/// Calibrate in the configured mode and write `calibration.txt` plus the
/// calibration record. The scale file is what [`analyze_record`] reads back.
pub fn run_calibration(rc: &RunConfig) -> Result<(CalibrationScale, RunReport)> {
    let t0 = Instant::now();
    let dir = out_dir(rc)?;
    let mut rep = RunReport::new("calibrate");
    let (scale, rec) = match rc.mode {
        Mode::Pulsed => pulsed_calibration(rc)?,
        Mode::Continuous => {
            let (s, r, _) = continuous_calibration(rc)?;
            (s, r)
        }
    };
    rep.push("calibration_factor", dimensionless(scale.factor), "calibrate");
    rep.push(
        "calibration_frequency_hz",
        dimensionless(scale.omega / (2.0 * std::f64::consts::PI)),
        "calibrate",
    );
    if let Some(g) = scale.decay_rate {
        rep.push("fitted_t2", Quantity::<crate::units::Second>::new(1.0 / g), "fit_response");
    }
    let scale_path = dir.join("calibration.txt");
    let mut kv = header(rc, "calibration scale");
    kv.extend(scale.key_values());
    write_key_values(&scale_path, &kv)?;
    rep.files.push(scale_path);
    write_files(rc, &dir, &mut rep, &[("calibration_record.csv", Some(&rec), None)])?;
    rep.duration = t0.elapsed();
    rep.write(&dir)?;
    Ok((scale, rep))
}

/// Options for [`analyze_record`].
#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub calibration: Option<CalibrationScale>,
    /// Field axis assumed when deconvolving a continuous record.
    pub axis: Axis,
    /// Periodogram window, s; the whole record when `None`.
    pub psd_window: Option<f64>,
    pub regularization: f64,
    pub lowpass_hz: f64,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            calibration: None,
            axis: Axis::Z,
            psd_window: None,
            regularization: crate::dsp::deconv::DEFAULT_REGULARIZATION,
            lowpass_hz: crate::dsp::deconv::DEFAULT_LOWPASS_HZ,
        }
    }
}

/// Offline analysis of a record CSV: spectrum, FID fit for pulsed records,
/// and field recovery when a calibration is supplied.
pub fn analyze_record(path: &Path, opts: &AnalyzeOptions, out: &Path) -> Result<RunReport> {
    let t0 = Instant::now();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let rec = read_record(path)?;
    let mut rep = RunReport::new("analyze");
    let src = vec![
        ("content".to_string(), String::new()),
        ("source".to_string(), path.display().to_string()),
    ];
    let with = |what: &str| {
        let mut h = src.clone();
        h[0].1 = what.to_string();
        h
    };

    let window = opts.psd_window.unwrap_or(rec.duration());
    let spec = psd_window(&rec.samples, rec.dt, window)?;
    if let Some(k) = spec.argmax() {
        rep.push("spectrum_peak_hz", dimensionless(spec.frequencies[k]), "psd");
    }
    let sp = out.join("spectrum.csv");
    write_spectrum(&sp, &spec, &with("record spectrum"))?;
    rep.files.push(sp);

    if rec.sequence != Sequence::Continuous {
        let fit = fit_fid(&rec)?;
        rep.push("fid_amplitude", dimensionless(fit.amplitude), "fit_fid");
        rep.push(
            "fid_frequency_hz",
            dimensionless(fit.omega / (2.0 * std::f64::consts::PI)),
            "fit_fid",
        );
        rep.push("fid_phase", dimensionless(fit.phase), "fit_fid");
        rep.push("fid_decay_time", Quantity::<crate::units::Second>::new(1.0 / fit.decay_rate), "fit_fid");
    }

    match &opts.calibration {
        Some(scale) if scale.mode == CalibrationMode::Pulsed => {
            rep.push("fourier_component", scale.fourier_component(&rec)?, "fourier_component");
        }
        Some(scale) => {
            let mut p = scale.deconvolution_params(opts.axis)?;
            p.regularization = opts.regularization;
            p.lowpass_hz = opts.lowpass_hz;
            let field = deconvolve(&rec, &p)?;
            rep.push("recovered_peak_to_peak", Quantity::<Tesla>::new(field.peak_to_peak()), "deconvolve");
            let fp = out.join("recovered_field.csv");
            write_waveform(&fp, &field, &with("recovered field"))?;
            rep.files.push(fp);
        }
        None => {}
    }
    rep.duration = t0.elapsed();
    rep.write(out)?;
    Ok(rep)
}
