use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dac_sim::config::{bundled, load_scenario, parse_scenario};
use dac_sim::output::{write_dump, write_run};
use dac_sim::{run, ConfigError, Mode, RunError, Scenario};

#[derive(Parser)]
#[command(
    name = "dac",
    about = "Closed-loop damage-adaptive flight control runs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario in one controller mode.
    Run {
        /// Scenario JSON file, or the name of a bundled scenario.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "dac")]
        mode: Mode,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario duration, s.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        emit_plots: bool,
    },
    /// Run both modes and write paired metrics.
    Compare {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        emit_plots: bool,
    },
}

fn scenario(spec: &str, seed: Option<u64>, duration: Option<f64>) -> Result<Scenario, ConfigError> {
    let path = PathBuf::from(spec);
    let mut sc = match bundled::by_name(spec) {
        Some(text) if !path.exists() => parse_scenario(text)?,
        _ => load_scenario(&path)?,
    };
    if let Some(s) = seed {
        sc = sc.with_seed(s)?;
    }
    if let Some(d) = duration {
        sc = sc.with_duration(d)?;
    }
    Ok(sc)
}

enum Failure {
    Config(String),
    Diverged,
}

fn run_one(sc: &Scenario, mode: Mode, out: &std::path::Path, plots: bool) -> Result<(), Failure> {
    match run(sc, mode) {
        Ok(record) => {
            write_run(sc, &record, out, plots).map_err(|e| Failure::Config(e.to_string()))?;
            Ok(())
        }
        Err(RunError::Diverged { t, reason, partial }) => {
            eprintln!("error: {} run aborted at t = {t}: {reason}", mode.label());
            if let Err(e) = write_dump(&partial.rows, out) {
                eprintln!("error: cannot write dump: {e}");
            }
            Err(Failure::Diverged)
        }
        Err(e @ RunError::Setup(_)) => Err(Failure::Config(e.to_string())),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario: spec,
            mode,
            seed,
            out,
            duration,
            emit_plots,
        } => match scenario(&spec, seed, duration) {
            Ok(sc) => run_one(&sc, mode, &out, emit_plots),
            Err(e) => Err(Failure::Config(e.to_string())),
        },
        Command::Compare {
            scenario: spec,
            out,
            seed,
            duration,
            emit_plots,
        } => match scenario(&spec, seed, duration) {
            Ok(sc) => compare(&sc, &out, emit_plots),
            Err(e) => Err(Failure::Config(e.to_string())),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Diverged) => ExitCode::from(2),
    }
}

fn compare(sc: &Scenario, out: &std::path::Path, plots: bool) -> Result<(), Failure> {
    let mut paired = String::new();
    let mut metrics = Vec::new();
    for mode in [Mode::Mbc, Mode::Dac] {
        let dir = out.join(mode.label());
        run_one(sc, mode, &dir, plots)?;
        let kv = std::fs::read_to_string(dir.join("metrics.kv"))
            .map_err(|e| Failure::Config(e.to_string()))?;
        for line in kv.lines() {
            paired.push_str(&format!("{}.{line}\n", mode.label()));
        }
        metrics.push(kv);
    }
    let value = |kv: &str, key: &str| {
        kv.lines()
            .find_map(|l| l.strip_prefix(&format!("{key}=")))
            .and_then(|v| v.parse::<f64>().ok())
    };
    for line in metrics[0].lines() {
        if let Some((key, _)) = line.split_once('=') {
            if key.ends_with("rms_err") {
                if let (Some(a), Some(b)) = (value(&metrics[0], key), value(&metrics[1], key)) {
                    paired.push_str(&format!("ratio.{key}={}\n", b / a));
                }
            }
        }
    }
    std::fs::write(out.join("paired_metrics.kv"), paired)
        .map_err(|e| Failure::Config(e.to_string()))
}
