use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use roslac::geom::StateMask;
use roslac::scenario::{self, RunFlags, ScenarioConfig, CONFIG_FILE};

#[derive(Parser)]
#[command(name = "roslac", version, about = "Joint magnetometer-array localization and calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dipole world and rasterize the true field.
    GenWorld(Common),
    /// Simulate odometry, distorted readings and a fingerprint survey.
    GenDataset(Common),
    /// Build the regression map from the fingerprints.
    BuildMap(Common),
    /// Run the online estimator over the dataset.
    Run(RunArgs),
    /// Score the run against ground truth.
    Eval(Common),
    /// All stages in order.
    Pipeline(RunArgs),
}

#[derive(Args)]
struct Common {
    /// Scenario JSON; defaults to OUT/config.json, then to the built-in scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Reseeds noise, distortions and the survey.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Skip the calibration phase.
    #[arg(long)]
    no_calib: bool,
    /// Use only the newest frame.
    #[arg(long)]
    no_window: bool,
    /// Correct readings with the true calibration first.
    #[arg(long)]
    precalibrated: bool,
    #[arg(long)]
    window_m: Option<f64>,
    /// xy, xyyaw or full.
    #[arg(long)]
    state_mask: Option<StateMask>,
}

impl RunArgs {
    fn flags(&self) -> RunFlags {
        RunFlags {
            no_calib: self.no_calib,
            no_window: self.no_window,
            precalibrated: self.precalibrated,
            window_m: self.window_m,
            state_mask: self.state_mask,
        }
    }
}

fn load_config(args: &Common) -> roslac::Result<ScenarioConfig> {
    let stored = args.out.join(CONFIG_FILE);
    let cfg = match &args.config {
        Some(path) => ScenarioConfig::load(path)?,
        None if stored.exists() => ScenarioConfig::load(&stored)?,
        None => ScenarioConfig::default(),
    };
    Ok(match args.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

fn print_report(report: &roslac::eval::Report) -> roslac::Result<()> {
    let c = &report.frame_class_counts;
    println!(
        "ATE {:.4} m, calibration error {:.3} uT (initial {:.3}), frames well/poor/failed {}/{}/{}, {} fallback",
        report.ate_m,
        report.calib_error_mean_ut,
        report.initial_calib_error_mean_ut,
        c.well,
        c.poor,
        c.failed,
        report.fallback_frames
    );
    Ok(())
}

fn execute(command: &Command) -> roslac::Result<()> {
    match command {
        Command::GenWorld(c) => scenario::cmd_gen_world(&load_config(c)?, &c.out),
        Command::GenDataset(c) => scenario::cmd_gen_dataset(&load_config(c)?, &c.out),
        Command::BuildMap(c) => scenario::cmd_build_map(&load_config(c)?, &c.out),
        Command::Run(r) => {
            let out = scenario::cmd_run(&load_config(&r.common)?, &r.common.out, &r.flags())?;
            println!(
                "{} frames, {} fallback, {:.3} ms/frame",
                out.frames.len(),
                out.fallback_count(),
                out.mean_frame_ms()
            );
            Ok(())
        }
        Command::Eval(c) => print_report(&scenario::cmd_eval(&c.out)?),
        Command::Pipeline(r) => {
            let cfg = load_config(&r.common)?;
            print_report(&scenario::cmd_pipeline(&cfg, &r.common.out, &r.flags())?)
        }
    }
}

fn out_dir(command: &Command) -> &Path {
    match command {
        Command::GenWorld(c) | Command::GenDataset(c) | Command::BuildMap(c) | Command::Eval(c) => &c.out,
        Command::Run(r) | Command::Pipeline(r) => &r.common.out,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("roslac ({}): {e}", out_dir(&cli.command).display());
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
