//! Acceptance criteria. Each test writes one `acceptance N PASS|FAIL` line to
//! stderr (bypassing the test harness capture) and asserts the criterion.
//! Criteria that cannot be met as stated are split: the attainable part is
//! asserted by default, the unattainable part lives in an ignored test that
//! fails when run with `--ignored`.

mod common;

use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

use common::{lab_rk4, mean_var, rel};
use opmag_core::config::WaveformSpec;
use opmag_core::dsp::{damped_sine_peak, deconvolve, psd_at};
use opmag_core::experiment::{
    continuous_average, continuous_calibration, run_pulsed_experiment, scenario_waveform,
};
use opmag_core::field::{
    calibration_waveform, fourier_component, invert_wire, nerve_waveform, wire_field, DEFAULT_DT,
};
use opmag_core::metrology::{conduction_velocity, pn_pulsed_fourier, pn_sensitivity_continuous};
use opmag_core::physics::GAMMA_CS;
use opmag_core::spin::{evolve_mean, evolve_stochastic, evolve_stochastic_from, shot_rng};
use opmag_core::units::{Meter, Second};
use opmag_core::{
    AtomEnsemble, Axis, ExperimentConfig, FieldWaveform, MagnetometerConfig, Measurement, Mode,
    NerveTemplateParams, SpinState,
};

fn report(id: u32, pass: bool, what: &str, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("acceptance {id:>2} {verdict} {what}: {detail}\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn within(got: f64, want: f64, tol: f64) -> bool {
    rel(got, want) <= tol
}

fn check_runtime(id: u32, elapsed: Duration, limit: Duration) {
    let ok = elapsed < limit;
    report(id, ok, "runtime", &format!("{elapsed:.2?} (limit {limit:?})"));
    assert!(ok, "criterion {id} took {elapsed:?}");
}

#[test]
fn c01_calibration_fourier_component() {
    let t0 = Instant::now();
    let f = 700.0;
    let omega = 2.0 * PI * f;
    let w = calibration_waveform(1e-9, f, DEFAULT_DT).unwrap();
    let got = fourier_component(&w, omega).norm();
    let elapsed = t0.elapsed();
    // ∫₀^{1/f} B0 sin(Ωt) e^{−iΩt} dt = −i·B0/(2f)
    let analytic = 1e-9 / (2.0 * f);
    let paper = 0.71e-12;
    let pass = within(got, paper, 0.01) && within(got, analytic, 1e-4);
    report(
        1,
        pass,
        "|B(Ω)| of 1 nT, 700 Hz single period",
        &format!("{:.4} nT·ms, analytic {:.4}, target 0.71 ± 1%", got * 1e12, analytic * 1e12),
    );
    assert!(pass);
    check_runtime(1, elapsed, Duration::from_secs(1));
}

#[test]
fn c02_projection_noise_pulsed() {
    let t0 = Instant::now();
    let ens = AtomEnsemble::new(3.6e16, 5.3e-3, 1.0).unwrap();
    let jx = ens.total_spin();
    let closed = pn_pulsed_fourier(jx).unwrap().si();

    // Zero-field stochastic shots over a 2 ms field window; each transverse
    // component maps to a Fourier-component estimate J'/(γ J_x).
    let cfg = MagnetometerConfig::pulsed_default();
    let w = FieldWaveform::zeros(200, DEFAULT_DT, Axis::Z).unwrap();
    let mut est = Vec::with_capacity(20_000);
    for shot in 0..10_000u64 {
        let s = *evolve_stochastic(&cfg, &ens, &w, shot).last();
        est.push(s.jy_rot / (GAMMA_CS * jx));
        est.push(s.jz_rot / (GAMMA_CS * jx));
    }
    let (_, var) = mean_var(&est);
    let mc = var.sqrt();
    let elapsed = t0.elapsed();
    let paper = 0.30e-15;
    let pass = within(closed, paper, 0.05) && within(mc, closed, 0.05);
    report(
        2,
        pass,
        "pulsed projection-noise limit",
        &format!(
            "closed form {:.4} pT·ms, Monte Carlo (1e4 shots) {:.4}, target 0.30 ± 5%",
            closed * 1e15,
            mc * 1e15
        ),
    );
    assert!(pass);
    check_runtime(2, elapsed, Duration::from_secs(120));
}

#[test]
fn c03_projection_noise_continuous() {
    let ens = AtomEnsemble::new(3.6e16, 5.3e-3, 1.0).unwrap();
    let jx = ens.total_spin();
    let t2 = 0.44e-3;
    let got = pn_sensitivity_continuous(jx, t2).unwrap().si();
    // Stationary OU spin noise J_x/Γ (two-sided, rotating frame, ω → 0)
    // over the field transfer (γ J_x/Γ)², doubled for one-sided.
    let g = 1.0 / t2;
    let oracle = (2.0 * (jx / g) / (GAMMA_CS * jx / g).powi(2)).sqrt();
    let pass = within(got, 29e-15, 0.05) && within(got, oracle, 1e-12);
    report(
        3,
        pass,
        "continuous projection-noise sensitivity",
        &format!(
            "{:.2} fT/√Hz, spectral oracle {:.2}, target 29 ± 5%",
            got * 1e15,
            oracle * 1e15
        ),
    );
    assert!(pass);
}

#[test]
fn c04_wire_model() {
    let i = 0.16e-6;
    let r = 4.5e-3;
    let b = wire_field(i, r).unwrap();
    let back = invert_wire(b, r).unwrap();
    let ampere = 4.0 * PI * 1e-7 * i / (2.0 * PI * r);
    let pass = within(b, 7.1e-12, 0.02) && within(b, ampere, 1e-12) && within(back, i, 1e-12);
    report(
        4,
        pass,
        "infinite-wire field",
        &format!("{:.3} pT at 0.16 µA, 4.5 mm (target 7.1 ± 2%), inverse {:.4} µA", b * 1e12, back * 1e6),
    );
    assert!(pass);
}

#[test]
fn c05_pulse_response() {
    // The closed form neglects relaxation during the pulse, so the check
    // runs with T2 long against the 1.4 ms pulse.
    let f = 700.0;
    let cfg = MagnetometerConfig::from_larmor_hz(f, 1.0).unwrap();
    let ens = AtomEnsemble::room_temperature();
    let jx = ens.total_spin();
    let b0 = 1e-9;
    let w = calibration_waveform(b0, f, DEFAULT_DT).unwrap();
    let tr = evolve_mean(&cfg, &ens, &w, SpinState::pumped(jx, 0.0));
    let got = tr.last().transverse();
    let want = GAMMA_CS * jx * PI * b0 / cfg.larmor_omega;
    let err = rel(got, want);
    let pass = err <= 5e-3;
    report(
        5,
        pass,
        "pulse response theorem",
        &format!("|J'⊥(τ)| / (γ J_x π B0/Ω) − 1 = {:+.2e} at dt = 10 µs (limit 0.5%)", got / want - 1.0),
    );
    assert!(pass);
}

const C6_OMEGA: f64 = 2.0 * PI * 700.0;
const C6_WINDOW: f64 = 8e-3;

/// Numerical two-sided PSD at Ω over the window against the closed form.
fn c6_case(gamma: f64, theta: f64) -> (f64, f64) {
    let dt = DEFAULT_DT;
    let n = (C6_WINDOW / dt).round() as usize;
    let a = 3.0;
    let x: Vec<f64> = (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            a * (C6_OMEGA * t + theta).sin() * (-gamma * t).exp()
        })
        .collect();
    (psd_at(&x, dt, C6_OMEGA), damped_sine_peak(a, gamma, C6_WINDOW))
}

fn c6_run(gammas: &[(f64, &str)]) -> (bool, String) {
    let mut all = true;
    let mut parts = Vec::new();
    for &(g, label) in gammas {
        for (theta, tl) in [(0.0, "0"), (PI / 4.0, "π/4"), (PI / 2.0, "π/2")] {
            let (num, closed) = c6_case(g, theta);
            let d = num / closed - 1.0;
            all &= d.abs() <= 0.05;
            parts.push(format!("Γ={label},θ={tl}: {d:+.3}"));
        }
    }
    (all, format!("{} (limit ±5%)", parts.join("; ")))
}

const C6_DARK: (f64, &str) = (1.0 / 15e-3, "1/15ms");
const C6_FAST: (f64, &str) = (1.0 / 0.44e-3, "1/0.44ms");

/// Reports the whole criterion; asserts the Γ = 1/15 ms half.
#[test]
fn c06_psd_peak_formula() {
    let (all, detail) = c6_run(&[C6_DARK, C6_FAST]);
    report(6, all, "damped-sine PSD peak", &detail);
    let (dark, detail) = c6_run(&[C6_DARK]);
    assert!(dark, "{detail}");
}

/// Γ = 1/0.44 ms at Ω = 2π·700 Hz: the closed form drops the
/// counter-rotating term, which is not small when Γ ≈ Ω/2.
#[test]
#[ignore = "closed form is off by -6%..+58% at Γ = 1/0.44 ms; see README"]
fn c06_psd_peak_formula_fast_decay() {
    let (ok, detail) = c6_run(&[C6_FAST]);
    assert!(ok, "{detail}");
}

fn c9_row(d: f64, sd: f64, t: f64, st: f64) -> String {
    let v = conduction_velocity(
        Measurement::<Meter>::new(d, sd).unwrap(),
        Measurement::<Second>::new(t, st).unwrap(),
    )
    .unwrap();
    v.compact()
}

#[test]
fn c07_deconvolution_round_trip() {
    let t0 = Instant::now();
    let rc = ExperimentConfig::for_mode(Mode::Continuous).resolve().unwrap();
    let (scale, _, _) = continuous_calibration(&rc).unwrap();
    let w = scenario_waveform(&rc).unwrap();
    let rec = continuous_average(&rc, &w, 5000, 17).unwrap();
    let mut p = scale.deconvolution_params(w.axis()).unwrap();
    p.regularization = rc.analysis.regularization;
    p.lowpass_hz = rc.analysis.lowpass_cutoff_hz;
    let field = deconvolve(&rec, &p).unwrap();
    let WaveformSpec::Nerve { params, .. } = &rc.waveform else {
        panic!("continuous default is the nerve scenario");
    };
    let (lo, hi) = (params.onset, params.onset + params.duration);
    let inside: Vec<f64> = (0..field.len())
        .filter(|&k| (lo..hi).contains(&field.time(k)))
        .map(|k| field.samples()[k])
        .collect();
    let max = inside.iter().cloned().fold(f64::MIN, f64::max);
    let min = inside.iter().cloned().fold(f64::MAX, f64::min);
    let pp = max - min;
    let elapsed = t0.elapsed();
    let pass = within(pp, 7e-12, 0.20);
    report(
        7,
        pass,
        "deconvolution round trip, 5000 averages",
        &format!("recovered {:.3} pT peak-to-peak (target 7 ± 20%)", pp * 1e12),
    );
    assert!(pass);
    check_runtime(7, elapsed, Duration::from_secs(300));
}

#[test]
fn c08_snr_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::for_mode(Mode::Pulsed);
    cfg.output_dir = Some(dir.path().to_path_buf());
    let rc = cfg.resolve().unwrap();
    assert_eq!(rc.n_avg, 1000);
    let rep = run_pulsed_experiment(&rc).unwrap();
    let snr = rep.get("snr").unwrap();
    let single = rep.get("single_shot_snr").unwrap();
    let pass = within(snr, 4.1 / 0.20, 0.30) && within(single, 0.6, 0.30);
    report(
        8,
        pass,
        "pulsed SNR",
        &format!(
            "SNR {snr:.2} at 1000 averages (target 20.5 ± 30%), single shot {single:.3} (target 0.6 ± 30%)"
        ),
    );
    assert!(pass);
}

const C9_ROWS: [(f64, f64, f64, f64, &str); 2] = [
    (0.05, 0.01, 1.3e-3, 0.2e-3, "38(9)"),
    (0.07, 0.01, 1.9e-3, 0.1e-3, "37(6)"),
];

/// Reports both rows; asserts the second.
#[test]
fn c09_conduction_velocity() {
    let rows: Vec<(String, &str)> = C9_ROWS
        .iter()
        .map(|&(d, sd, t, st, want)| (c9_row(d, sd, t, st), want))
        .collect();
    let all = rows.iter().all(|(got, want)| got == want);
    let detail = rows
        .iter()
        .map(|(got, want)| format!("{got} m/s (target {want})"))
        .collect::<Vec<_>>()
        .join("; ");
    report(9, all, "conduction velocity", &detail);
    assert_eq!(rows[1].0, rows[1].1);
}

/// 38.46 ± 9.70 m/s rounds to one significant digit of σ as 38(10).
#[test]
#[ignore = "first-order propagation gives 38.5 ± 9.7 m/s, which rounds to 38(10); see README"]
fn c09_conduction_velocity_first_row() {
    let (d, sd, t, st, want) = C9_ROWS[0];
    assert_eq!(c9_row(d, sd, t, st), want);
}

#[test]
fn c10_rotating_frame_matches_lab_frame() {
    let ens = AtomEnsemble::room_temperature();
    let jx = ens.total_spin();
    let n = 1000; // 10 ms
    let pulsed = MagnetometerConfig::pulsed_default();
    let cont = MagnetometerConfig::continuous_default();

    let tone = calibration_waveform(10e-12, 700.0, DEFAULT_DT)
        .unwrap()
        .resized(n)
        .unwrap();
    let nerve = nerve_waveform(&NerveTemplateParams::default(), DEFAULT_DT)
        .unwrap()
        .resized(n)
        .unwrap();
    let mix: Vec<f64> = (0..n)
        .map(|k| {
            let t = (k as f64 + 0.5) * DEFAULT_DT;
            5e-12 * (2.0 * PI * 300.0 * t).sin() + 3e-12 * (2.0 * PI * 1100.0 * t + 0.3).cos()
        })
        .collect();
    let mix = FieldWaveform::new(mix, DEFAULT_DT, 0.0, Axis::Z).unwrap();

    let cases: [(&str, &MagnetometerConfig, &FieldWaveform, SpinState); 3] = [
        ("tone/z", &pulsed, &tone, SpinState::pumped(jx, 0.0)),
        ("nerve/y", &cont, &nerve, SpinState::pumped(jx, 0.0)),
        ("two-tone/z, tilted", &pulsed, &mix, SpinState::new(2e5, -1e5, jx, 0.0)),
    ];
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, cfg, w, init) in cases {
        let tr = evolve_mean(cfg, &ens, w, init);
        let (y0, z0) = init.lab_transverse(cfg.larmor_omega);
        let lab = lab_rk4(cfg.larmor_omega, cfg.relaxation_rate, w, [jx, y0, z0], 20);
        let scale = lab.iter().map(|j| j[1].hypot(j[2])).fold(0.0, f64::max);
        let err = tr
            .states
            .iter()
            .zip(&lab)
            .map(|(s, j)| {
                let (y, z) = s.lab_transverse(cfg.larmor_omega);
                (y - j[1]).hypot(z - j[2])
            })
            .fold(0.0, f64::max)
            / scale;
        worst = worst.max(err);
        parts.push(format!("{name}: {err:.1e}"));
    }
    let pass = worst <= 1e-3;
    report(
        10,
        pass,
        "rotating frame vs lab-frame RK4 over 10 ms",
        &format!("{} (limit 1e-3)", parts.join("; ")),
    );
    assert!(pass);
}

#[test]
fn c11_stationary_spin_variance() {
    let cfg = MagnetometerConfig::continuous_default();
    let ens = AtomEnsemble::room_temperature();
    let jx = ens.total_spin();
    let t2 = cfg.t2();
    let n = (1e4 * t2 / DEFAULT_DT).round() as usize;
    let burn = (10.0 * t2 / DEFAULT_DT).round() as usize;
    let w = FieldWaveform::zeros(n + burn, DEFAULT_DT, Axis::Z).unwrap();
    let mut rng = shot_rng(2024, 0);
    // Start with no transverse spin so the variance has to build up.
    let states = evolve_stochastic_from(&cfg, &ens, &w, SpinState::pumped(jx, 0.0), &mut rng);
    let tail = &states[burn..];
    let ys: Vec<f64> = tail.iter().map(|s| s.jy_rot).collect();
    let zs: Vec<f64> = tail.iter().map(|s| s.jz_rot).collect();
    let (_, vy) = mean_var(&ys);
    let (_, vz) = mean_var(&zs);
    let pass = within(vy, 0.5 * jx, 0.05) && within(vz, 0.5 * jx, 0.05);
    report(
        11,
        pass,
        "stationary transverse variance over 1e4 T2",
        &format!("Var J'_y/(J_x/2) = {:.4}, Var J'_z/(J_x/2) = {:.4} (limit ±5%)", vy / (0.5 * jx), vz / (0.5 * jx)),
    );
    assert!(pass);
}
