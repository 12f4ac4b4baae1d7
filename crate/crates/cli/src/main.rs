use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flowlab::dump::write_field_to;
use flowlab::experiments::{list_scenarios, run_suite, ExperimentConfig};
use flowlab::solver::load_sample;

#[derive(Parser)]
#[command(name = "flowlab", version, about = "Ricci-DeTurck flow laboratory on periodic grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a TOML config; exits 0 iff every pass criterion holds.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: the config's `out`, else `flowlab-out/<scenario>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the scenario names accepted in configs.
    ListScenarios,
    /// Print the sample of a dumped trajectory nearest to TIME in the field dump format.
    DumpField { trajectory: PathBuf, time: f64 },
}

fn run(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<bool, flowlab::FlowError> {
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = out.or(cfg.out.clone()).unwrap_or_else(|| PathBuf::from("flowlab-out").join(cfg.scenario.name()));
    cfg.out = Some(dir.clone());
    let report = run_suite(&cfg)?;
    for line in report.summary_lines() {
        println!("{line}");
    }
    println!("report written to {}", dir.join("report.json").display());
    Ok(report.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, seed, out } => match run(config, seed, out) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(1),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::ListScenarios => {
            for (name, summary) in list_scenarios() {
                println!("{name:<24}{summary}");
            }
            ExitCode::SUCCESS
        }
        Command::DumpField { trajectory, time } => match load_sample(&trajectory, time) {
            Ok(f) => {
                let stdout = std::io::stdout();
                let mut lock = stdout.lock();
                match write_field_to(&f, &mut lock).and_then(|_| lock.flush()) {
                    Ok(()) => ExitCode::SUCCESS,
                    Err(e) => {
                        eprintln!("error: {e}");
                        ExitCode::from(2)
                    }
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
