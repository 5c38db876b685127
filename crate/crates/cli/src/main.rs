use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use opmag_core::dsp::CalibrationScale;
use opmag_core::experiment::{
    analyze_record, run_calibration, run_continuous_experiment, run_limits,
    run_pulsed_experiment, AnalyzeOptions,
};
use opmag_core::io::read_key_values;
use opmag_core::{Axis, Error, ExperimentConfig, Mode, Result, RunConfig, RunReport};

#[derive(Parser)]
#[command(name = "opmag", version, about = "Optically pumped magnetometer simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pulsed-mode run: calibration, A−B averaging, |B(Ω)| and SNR.
    SimulatePulsed(Common),
    /// Continuous-mode run: response fit, deconvolution, sensitivity.
    SimulateContinuous(Common),
    /// Calibrate only and write calibration.txt.
    Calibrate(Common),
    /// Projection-noise limits at the configured temperatures.
    Limits(Common),
    /// Analyse an existing record CSV.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Number of averaged shots.
    #[arg(long, value_name = "N")]
    avg: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Record CSV (`time_s,signal`).
    record: PathBuf,
    /// calibration.txt written by `opmag calibrate`.
    #[arg(long, value_name = "PATH")]
    calibration: Option<PathBuf>,
    /// Field axis for continuous deconvolution.
    #[arg(long, default_value = "z", value_parser = parse_axis)]
    axis: Axis,
    /// Periodogram window in seconds.
    #[arg(long, value_name = "S")]
    window: Option<f64>,
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse::<Mode>().map_err(|e| e.to_string())
}

fn parse_axis(s: &str) -> std::result::Result<Axis, String> {
    match s {
        "y" | "Y" => Ok(Axis::Y),
        "z" | "Z" => Ok(Axis::Z),
        _ => Err(format!("axis must be y or z, got `{s}`")),
    }
}

impl Common {
    /// Config file, then command-line overrides. `fixed` pins the mode of
    /// the simulate-* subcommands.
    fn resolve(&self, fixed: Option<Mode>) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_path(p)?,
            None => ExperimentConfig::default(),
        };
        if let (Some(f), Some(m)) = (fixed, self.mode) {
            if f != m {
                return Err(Error::Config(format!("--mode {m} conflicts with this subcommand ({f})")));
            }
        }
        if let Some(m) = fixed.or(self.mode) {
            cfg.mode = Some(m);
        }
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(n) = self.avg {
            cfg.n_avg = Some(n);
        }
        if let Some(o) = &self.out {
            cfg.output_dir = Some(o.clone());
        }
        cfg.resolve()
    }
}

fn print_report(rep: &RunReport) {
    let mut out = std::io::stdout().lock();
    for (k, v) in rep.key_values() {
        // A closed pipe (`| head`) just ends the listing.
        if writeln!(out, "{k} = {v}").is_err() {
            break;
        }
    }
    info!("finished in {:.2?}", rep.duration);
}

fn run(cli: Cli) -> Result<()> {
    let rep = match cli.command {
        Command::SimulatePulsed(c) => run_pulsed_experiment(&c.resolve(Some(Mode::Pulsed))?)?,
        Command::SimulateContinuous(c) => {
            run_continuous_experiment(&c.resolve(Some(Mode::Continuous))?)?
        }
        Command::Calibrate(c) => run_calibration(&c.resolve(None)?)?.1,
        Command::Limits(c) => run_limits(&c.resolve(None)?)?,
        Command::Analyze(a) => {
            let calibration = match &a.calibration {
                Some(p) => Some(CalibrationScale::from_key_values(&read_key_values(p)?)?),
                None => None,
            };
            let opts = AnalyzeOptions {
                calibration,
                axis: a.axis,
                psd_window: a.window,
                ..AnalyzeOptions::default()
            };
            analyze_record(&a.record, &opts, &a.out)?
        }
    };
    print_report(&rep);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
