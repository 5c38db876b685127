use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn opmag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opmag"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value(report: &str, key: &str) -> f64 {
    let line = report
        .lines()
        .find(|l| l.starts_with(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no {key} in\n{report}"));
    line.split(" = ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap()
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.toml");
    fs::write(
        &p,
        "n_avg = 4\n\
         [analysis]\n\
         calibration_averages = 8\n\
         null_repeats = 2\n",
    )
    .unwrap();
    p.display().to_string()
}

#[test]
fn limits_prints_units_and_operations() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = opmag(&["limits", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("pn_pulsed_fourier_22C = "));
    assert!(text.contains("pT·ms | pn_pulsed_fourier"));
    let r = value(&text, "sensitivity_ratio_last_to_first");
    assert!((r - 0.5).abs() < 0.05);
    assert!(dir.path().join("report.txt").exists());
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn errors_carry_category_and_exit_code() {
    let o = opmag(&["simulate-pulsed", "--mode", "continuous"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[config]"));

    let o = opmag(&["limits", "--config", "/nonexistent/opmag.toml"]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("error[io]") && err.contains("/nonexistent/opmag.toml"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[ensemble]\npolarization = 0.0\n").unwrap();
    let o = opmag(&["limits", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("zero polarization"));

    let o = opmag(&["analyze", "--axis", "x", "r.csv"]);
    assert!(!o.status.success());
}

#[test]
fn calibrate_then_analyze_recovers_calibration_tone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("quiet.toml");
    fs::write(&cfg, "[noise]\nenabled = false\n").unwrap();
    let cal_dir = dir.path().join("cal");
    let o = opmag(&[
        "calibrate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        cal_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let f = value(&stdout(&o), "calibration_frequency_hz");
    assert!((f - 700.0).abs() < 5.0, "{f}");

    let ana = dir.path().join("ana");
    let o = opmag(&[
        "analyze",
        cal_dir.join("calibration_record.csv").to_str().unwrap(),
        "--calibration",
        cal_dir.join("calibration.txt").to_str().unwrap(),
        "--out",
        ana.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    // A 1 nT single period at 700 Hz has |B(Ω)| = B0·π/Ω.
    let expect = 1e-9 * std::f64::consts::PI / (2.0 * std::f64::consts::PI * 700.0);
    let got = value(&text, "fourier_component");
    assert!((got / expect - 1.0).abs() < 1e-6, "{got:e} vs {expect:e}");
    assert!((value(&text, "fid_frequency_hz") - 700.0).abs() < 2.0);
    assert!(ana.join("spectrum.csv").exists());
}

#[test]
fn identical_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = opmag(&[
            "simulate-pulsed",
            "--config",
            &cfg,
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a", "7");
    let b = run("b", "7");
    let c = run("c", "8");
    for f in ["measurement_record.csv", "calibration_record.csv", "null_spectrum.csv", "report.json"] {
        let fa = fs::read_to_string(a.join(f)).unwrap();
        let fb = fs::read_to_string(b.join(f)).unwrap();
        let fc = fs::read_to_string(c.join(f)).unwrap();
        // Paths in headers differ by output directory only.
        let norm = |s: &str, d: &Path| s.replace(d.to_str().unwrap(), "OUT");
        assert_eq!(norm(&fa, &a), norm(&fb, &b), "{f}");
        if f.ends_with(".csv") {
            assert_ne!(norm(&fa, &a), norm(&fc, &c), "{f}");
        }
    }
    let header = fs::read_to_string(a.join("measurement_record.csv")).unwrap();
    assert!(header.contains("# seed = 7"));
    assert!(header.contains("# n_avg = 4"));
}

#[test]
fn avg_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("o");
    let o = opmag(&[
        "simulate-pulsed",
        "--config",
        &cfg,
        "--avg",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let rec = fs::read_to_string(out.join("measurement_record.csv")).unwrap();
    assert!(rec.contains("# n_avg = 3"), "{}", &rec[..rec.len().min(2000)]);
}
