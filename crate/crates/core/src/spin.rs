//! Collective-spin propagation in the frame rotating at the Larmor frequency,
//! and synthesis of polarimeter detection records.
//!
//! The transverse spin obeys a linear Ornstein–Uhlenbeck equation in the
//! rotating frame:
//!
//! ```text
//! dJ'_y/dt =  γJ_x [cos(Ωt) B_z − sin(Ωt) B_y] − Γ J'_y + √(2Γ) F_y
//! dJ'_z/dt = −γJ_x [sin(Ωt) B_z + cos(Ωt) B_y] − Γ J'_z + √(2Γ) F_z
//! ```
//!
//! with white Langevin forces of variance J_x/2. Each step applies the decay
//! exactly (`e^{−Γdt}`) and evaluates the field forcing at the interval
//! midpoint, so the mean propagator is second order in `dt`. The noise
//! increment is the exact OU transition, which keeps the stationary variance
//! at J_x/2 for any step size.
//!
//! The lab-frame readout is `J_z = sin(Ωt)·J'_y + cos(Ωt)·J'_z`.

use std::collections::BTreeMap;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{Axis, FieldWaveform};
use crate::physics::{AtomEnsemble, MagnetometerConfig, GAMMA_CS};

/// Transverse spin in the rotating frame, in units of ħ.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpinState {
    pub jy_rot: f64,
    pub jz_rot: f64,
    pub jx: f64,
    pub time: f64,
}

impl SpinState {
    pub fn new(jy_rot: f64, jz_rot: f64, jx: f64, time: f64) -> Self {
        Self {
            jy_rot,
            jz_rot,
            jx,
            time,
        }
    }

    /// Fully pumped along x with no transverse component.
    pub fn pumped(jx: f64, time: f64) -> Self {
        Self::new(0.0, 0.0, jx, time)
    }

    /// |J'_⊥|
    pub fn transverse(&self) -> f64 {
        self.jy_rot.hypot(self.jz_rot)
    }

    /// Lab-frame J_z at this state's time.
    pub fn lab_jz(&self, omega: f64) -> f64 {
        let (s, c) = (omega * self.time).sin_cos();
        s * self.jy_rot + c * self.jz_rot
    }

    /// Lab-frame (J_y, J_z) at this state's time.
    pub fn lab_transverse(&self, omega: f64) -> (f64, f64) {
        let (s, c) = (omega * self.time).sin_cos();
        (c * self.jy_rot - s * self.jz_rot, s * self.jy_rot + c * self.jz_rot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Propagation {
    Deterministic,
    Stochastic,
}

/// Spin states on the driving waveform's grid: `states[k]` is the state at
/// `start + k·dt`, so there is one more state than field samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinTrajectory {
    pub states: Vec<SpinState>,
    pub mode: Propagation,
    pub seed: Option<u64>,
}

impl SpinTrajectory {
    pub fn last(&self) -> &SpinState {
        self.states.last().expect("trajectory always holds the initial state")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// ChaCha8 stream for one shot. Distinct `stream` values give independent
/// sequences under the same seed.
pub fn shot_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-shot seed derived from a run seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One-step propagator for a fixed `dt`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stepper {
    omega: f64,
    dt: f64,
    decay: f64,
    half_decay: f64,
    /// γ·J_x
    drive: f64,
    /// Standard deviation of the exact OU increment per component.
    kick: f64,
}

impl Stepper {
    pub(crate) fn new(config: &MagnetometerConfig, jx: f64, dt: f64) -> Self {
        let g = config.relaxation_rate;
        let decay = (-g * dt).exp();
        Self {
            omega: config.larmor_omega,
            dt,
            decay,
            half_decay: (-0.5 * g * dt).exp(),
            drive: GAMMA_CS * jx,
            kick: (0.5 * jx * (1.0 - decay * decay)).sqrt(),
        }
    }

    /// Advance by one interval over which the field is `b` on `axis`.
    #[inline]
    fn step(&self, s: &mut SpinState, b: f64, axis: Axis) {
        let (sin, cos) = (self.omega * (s.time + 0.5 * self.dt)).sin_cos();
        let f = self.drive * b * self.dt * self.half_decay;
        let (fy, fz) = match axis {
            Axis::Z => (cos * f, -sin * f),
            Axis::Y => (-sin * f, -cos * f),
        };
        s.jy_rot = self.decay * s.jy_rot + fy;
        s.jz_rot = self.decay * s.jz_rot + fz;
        s.time += self.dt;
    }

    #[inline]
    fn step_noisy<R: Rng>(&self, s: &mut SpinState, b: f64, axis: Axis, rng: &mut R) {
        self.step(s, b, axis);
        let ny: f64 = rng.sample(StandardNormal);
        let nz: f64 = rng.sample(StandardNormal);
        s.jy_rot += self.kick * ny;
        s.jz_rot += self.kick * nz;
    }
}

fn check_small_angle(traj: &[SpinState]) {
    if let Some(s) = traj.iter().find(|s| s.transverse() > 0.1 * s.jx.abs()) {
        warn!(
            "transverse spin {:.3e} exceeds 10% of J_x = {:.3e} at t = {:.3e} s; \
             the small-angle model is no longer accurate",
            s.transverse(),
            s.jx,
            s.time
        );
    }
}

/// Mean-value evolution under `waveform`, starting from `initial`.
///
/// The initial state's time is replaced by the waveform start time.
pub fn evolve_mean(
    config: &MagnetometerConfig,
    ensemble: &AtomEnsemble,
    waveform: &FieldWaveform,
    initial: SpinState,
) -> SpinTrajectory {
    let jx = ensemble.total_spin();
    let stepper = Stepper::new(config, jx, waveform.dt());
    let mut s = SpinState {
        jx,
        time: waveform.start_time(),
        ..initial
    };
    let mut states = Vec::with_capacity(waveform.len() + 1);
    states.push(s);
    for &b in waveform.samples() {
        stepper.step(&mut s, b, waveform.axis());
        states.push(s);
    }
    check_small_angle(&states);
    SpinTrajectory {
        states,
        mode: Propagation::Deterministic,
        seed: None,
    }
}

/// Coherent spin state after pumping: transverse components Gaussian with
/// variance J_x/2 each.
pub fn coherent_state<R: Rng>(jx: f64, time: f64, rng: &mut R) -> SpinState {
    let sd = (0.5 * jx).sqrt();
    let y: f64 = rng.sample(StandardNormal);
    let z: f64 = rng.sample(StandardNormal);
    SpinState::new(sd * y, sd * z, jx, time)
}

/// Stochastic evolution from an explicit initial state.
pub fn evolve_stochastic_from<R: Rng>(
    config: &MagnetometerConfig,
    ensemble: &AtomEnsemble,
    waveform: &FieldWaveform,
    initial: SpinState,
    rng: &mut R,
) -> Vec<SpinState> {
    let jx = ensemble.total_spin();
    let stepper = Stepper::new(config, jx, waveform.dt());
    let mut s = SpinState {
        jx,
        time: waveform.start_time(),
        ..initial
    };
    let mut states = Vec::with_capacity(waveform.len() + 1);
    states.push(s);
    for &b in waveform.samples() {
        stepper.step_noisy(&mut s, b, waveform.axis(), rng);
        states.push(s);
    }
    states
}

/// Langevin evolution with projection noise, starting from a freshly pumped
/// coherent spin state. Identical seeds give bit-identical trajectories.
pub fn evolve_stochastic(
    config: &MagnetometerConfig,
    ensemble: &AtomEnsemble,
    waveform: &FieldWaveform,
    seed: u64,
) -> SpinTrajectory {
    let mut rng = shot_rng(seed, 0);
    let jx = ensemble.total_spin();
    let initial = coherent_state(jx, waveform.start_time(), &mut rng);
    let states = evolve_stochastic_from(config, ensemble, waveform, initial, &mut rng);
    SpinTrajectory {
        states,
        mode: Propagation::Stochastic,
        seed: Some(seed),
    }
}

/// Which measurement produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sequence {
    PulsedA,
    PulsedB,
    /// S = S_A − S_B
    PulsedDifference,
    Continuous,
}

impl Sequence {
    pub fn as_str(&self) -> &'static str {
        match self {
            Sequence::PulsedA => "pulsed_a",
            Sequence::PulsedB => "pulsed_b",
            Sequence::PulsedDifference => "pulsed_difference",
            Sequence::Continuous => "continuous",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "pulsed_a" => Sequence::PulsedA,
            "pulsed_b" => Sequence::PulsedB,
            "pulsed_difference" => Sequence::PulsedDifference,
            "continuous" => Sequence::Continuous,
            other => return Err(Error::invalid("sequence", format!("unknown `{other}`"))),
        })
    }
}

/// Polarimeter output, in units of `a·S_x·J_z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub samples: Vec<f64>,
    pub dt: f64,
    /// Time of sample 0, s.
    pub start_time: f64,
    pub sequence: Sequence,
    /// Number of shots averaged into this record.
    pub n_avg: usize,
    pub metadata: BTreeMap<String, String>,
}

impl DetectionRecord {
    pub fn new(samples: Vec<f64>, dt: f64, start_time: f64, sequence: Sequence) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::invalid("dt", format!("{dt} must be > 0")));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("samples", format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            dt,
            start_time,
            sequence,
            n_avg: 1,
            metadata: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start_time + k as f64 * self.dt
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.metadata.insert(key.into(), value.to_string());
        self
    }

    pub fn same_grid(&self, other: &DetectionRecord) -> bool {
        self.len() == other.len() && self.dt == other.dt && self.start_time == other.start_time
    }

    /// The differential signal `self − other` (A − B).
    pub fn subtract(&self, other: &DetectionRecord) -> Result<DetectionRecord> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch(
                "A and B records differ in length, dt or start time".into(),
            ));
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a - b)
            .collect();
        let mut out = DetectionRecord::new(samples, self.dt, self.start_time, Sequence::PulsedDifference)?;
        out.n_avg = self.n_avg.min(other.n_avg);
        out.metadata = self.metadata.clone();
        Ok(out)
    }
}

fn config_metadata(config: &MagnetometerConfig, ensemble: &AtomEnsemble) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("bias_field_tesla".into(), format!("{:e}", config.bias_field));
    m.insert("larmor_omega_rad_per_s".into(), format!("{:e}", config.larmor_omega));
    m.insert("relaxation_rate_per_s".into(), format!("{:e}", config.relaxation_rate));
    m.insert("readout_coupling".into(), format!("{:e}", config.readout_coupling));
    m.insert("shot_psd".into(), format!("{:e}", config.noise.shot_psd));
    m.insert(
        "classical_psd_at_larmor".into(),
        format!("{:e}", config.noise.classical_psd_at_larmor),
    );
    m.insert("total_spin".into(), format!("{:e}", ensemble.total_spin()));
    m
}

/// White Gaussian readout noise whose one-sided PSD is `shot_psd`
/// (per-sample variance `shot_psd / (2·dt)`).
pub fn readout_noise(len: usize, dt: f64, shot_psd: f64, seed: u64) -> Result<Vec<f64>> {
    let mut rng = shot_rng(seed, 0);
    readout_noise_with(len, dt, shot_psd, &mut rng)
}

pub fn readout_noise_with<R: Rng>(
    len: usize,
    dt: f64,
    shot_psd: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(shot_psd >= 0.0) || !shot_psd.is_finite() {
        return Err(Error::invalid("shot_psd", format!("{shot_psd} must be >= 0")));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", format!("{dt} must be > 0")));
    }
    if shot_psd == 0.0 {
        return Ok(vec![0.0; len]);
    }
    let sd = (shot_psd / (2.0 * dt)).sqrt();
    Ok((0..len)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

/// 1/f noise with one-sided PSD `psd_at_ref · f_ref / f`, synthesized by
/// spectral shaping. DC and Nyquist bins are left empty.
pub fn classical_noise_with<R: Rng>(
    len: usize,
    dt: f64,
    psd_at_ref: f64,
    f_ref: f64,
    rng: &mut R,
) -> Vec<f64> {
    if psd_at_ref <= 0.0 || len < 4 {
        return vec![0.0; len];
    }
    let n = len;
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    for k in 1..n.div_ceil(2) {
        let f = k as f64 / (n as f64 * dt);
        let one_sided = psd_at_ref * f_ref / f;
        let sd = (one_sided * n as f64 / (4.0 * dt)).sqrt();
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        let c = Complex64::new(sd * re, sd * im);
        spec[k] = c;
        spec[n - k] = c.conj();
    }
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_inverse(n).process(&mut spec);
    spec.iter().map(|c| c.re / n as f64).collect()
}

fn add_readout_noise<R: Rng>(
    samples: &mut [f64],
    dt: f64,
    config: &MagnetometerConfig,
    rng: &mut R,
) -> Result<()> {
    let white = readout_noise_with(samples.len(), dt, config.noise.shot_psd, rng)?;
    let pink = classical_noise_with(
        samples.len(),
        dt,
        config.noise.classical_psd_at_larmor,
        config.larmor_hz(),
        rng,
    );
    for ((s, w), p) in samples.iter_mut().zip(white).zip(pink) {
        *s += w + p;
    }
    Ok(())
}

/// Parameters of a pump / field / probe cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulsedOptions {
    /// Probe window length T, s.
    pub probe_duration: f64,
    /// Transverse spin (J'_y, J'_z) left by imperfect pumping, identical in
    /// the A and B cycles.
    pub misalignment: [f64; 2],
    /// `None` gives noiseless mean records.
    pub seed: Option<u64>,
}

impl Default for PulsedOptions {
    fn default() -> Self {
        Self {
            probe_duration: 8e-3,
            misalignment: [0.0, 0.0],
            seed: None,
        }
    }
}

fn pulsed_cycle(
    config: &MagnetometerConfig,
    ensemble: &AtomEnsemble,
    waveform: &FieldWaveform,
    opts: &PulsedOptions,
    stream: u64,
    sequence: Sequence,
) -> Result<DetectionRecord> {
    let jx = ensemble.total_spin();
    let dt = waveform.dt();
    let n_probe = (opts.probe_duration / dt).round() as usize;
    let omega = config.larmor_omega;
    let c = config.readout_coupling;
    let stepper = Stepper::new(config, jx, dt);
    let t0 = waveform.start_time();
    let [my, mz] = opts.misalignment;
    let mut samples = Vec::with_capacity(n_probe);

    match opts.seed {
        None => {
            let mut s = SpinState::new(my, mz, jx, t0);
            for &b in waveform.samples() {
                stepper.step(&mut s, b, waveform.axis());
            }
            for _ in 0..n_probe {
                samples.push(c * s.lab_jz(omega));
                stepper.step(&mut s, 0.0, Axis::Z);
            }
        }
        Some(seed) => {
            let mut rng = shot_rng(seed, stream);
            let mut s = coherent_state(jx, t0, &mut rng);
            s.jy_rot += my;
            s.jz_rot += mz;
            for &b in waveform.samples() {
                stepper.step_noisy(&mut s, b, waveform.axis(), &mut rng);
            }
            for _ in 0..n_probe {
                samples.push(c * s.lab_jz(omega));
                stepper.step_noisy(&mut s, 0.0, Axis::Z, &mut rng);
            }
            add_readout_noise(&mut samples, dt, config, &mut rng)?;
        }
    }
    let rec = DetectionRecord::new(samples, dt, 0.0, sequence)?;
    let mut rec = rec
        .with_meta("probe_start_s", format!("{:e}", waveform.end_time()))
        .with_meta("seed", opts.seed.map_or("none".into(), |s| s.to_string()));
    rec.metadata.extend(config_metadata(config, ensemble));
    Ok(rec)
}

/// Simulate the A (field applied) and B (no field) probe records of one
/// pulsed measurement. The field acts with the probe light off, at the
/// configured (dark) relaxation rate. The differential signal is
/// `a.subtract(&b)`.
pub fn pulsed_sequence(
    config: &MagnetometerConfig,
    ensemble: &AtomEnsemble,
    waveform: &FieldWaveform,
    opts: &PulsedOptions,
) -> Result<(DetectionRecord, DetectionRecord)> {
    if !(opts.probe_duration > 0.0) {
        return Err(Error::invalid(
            "probe_duration",
            format!("{} must be > 0", opts.probe_duration),
        ));
    }
    if (opts.probe_duration / waveform.dt()).round() < 2.0 {
        return Err(Error::invalid("probe_duration", "shorter than two samples"));
    }
    if waveform.duration() > 0.2 * config.t2() {
        warn!(
            "field pulse of {:.3e} s is not short against T2 = {:.3e} s",
            waveform.duration(),
            config.t2()
        );
    }
    let a = pulsed_cycle(config, ensemble, waveform, opts, 0, Sequence::PulsedA)?;
    let empty = FieldWaveform::new(
        vec![0.0; waveform.len()],
        waveform.dt(),
        waveform.start_time(),
        waveform.axis(),
    )?;
    let b = pulsed_cycle(config, ensemble, &empty, opts, 1, Sequence::PulsedB)?;
    Ok((a, b))
}

/// Continuous-mode polarimeter record: `a·S_x·J_z` sampled at the end of
/// each field interval, i.e. sample `k` is at `start + (k+1)·dt`.
///
/// With `seed = None` the record is the noiseless mean response to a spin
/// that starts unpolarized in the transverse plane; with a seed the spin
/// starts in its stationary distribution and readout noise is added.
pub fn continuous_record(
    config: &MagnetometerConfig,
    ensemble: &AtomEnsemble,
    waveform: &FieldWaveform,
    seed: Option<u64>,
) -> Result<DetectionRecord> {
    let omega = config.larmor_omega;
    let c = config.readout_coupling;
    let jx = ensemble.total_spin();
    let dt = waveform.dt();
    let mut samples = Vec::with_capacity(waveform.len());
    match seed {
        None => {
            let stepper = Stepper::new(config, jx, dt);
            let mut s = SpinState::pumped(jx, waveform.start_time());
            for &b in waveform.samples() {
                stepper.step(&mut s, b, waveform.axis());
                samples.push(c * s.lab_jz(omega));
            }
        }
        Some(seed) => {
            let mut rng = shot_rng(seed, 0);
            let stepper = Stepper::new(config, jx, dt);
            let mut s = coherent_state(jx, waveform.start_time(), &mut rng);
            for &b in waveform.samples() {
                stepper.step_noisy(&mut s, b, waveform.axis(), &mut rng);
                samples.push(c * s.lab_jz(omega));
            }
            add_readout_noise(&mut samples, dt, config, &mut rng)?;
        }
    }
    let rec = DetectionRecord::new(samples, dt, waveform.start_time() + dt, Sequence::Continuous)?
        .with_meta("seed", seed.map_or("none".into(), |s| s.to_string()))
        .with_meta("axis", waveform.axis());
    let mut rec = rec;
    rec.metadata.extend(config_metadata(config, ensemble));
    Ok(rec)
}
