use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use taskaware::data::{SynthConfig, DEFAULT_VOCAB};
use taskaware::tensor::Fault;
use taskaware_cli::{cmd_gradcheck, cmd_report, cmd_run, cmd_synth, CliError};

#[derive(Parser)]
#[command(
    name = "taskaware",
    version,
    about = "Multi-task text classification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate the experiment described by a config file.
    Run { config: PathBuf },
    /// Write a two-task synthetic corpus with tunable conflict.
    Synth {
        #[arg(long, default_value_t = 500)]
        n_per_task: usize,
        #[arg(long, default_value_t = 0.6)]
        conflict: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_VOCAB)]
        vocab_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and numerical gradients of every op and model variant.
    Gradcheck {
        #[arg(long, hide = true)]
        inject_fault: Option<FaultArg>,
    },
    /// Print a comparison table from one or more record files.
    Report {
        #[arg(required = true)]
        records: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    ReluBackward,
}

fn run(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Run { config } => {
            let summary = cmd_run(&config)?;
            print!("{}", summary.table);
            println!("outputs written to {}", summary.output_dir.display());
        }
        Command::Synth {
            n_per_task,
            conflict,
            seed,
            vocab_size,
            out,
        } => {
            let config = SynthConfig {
                n_per_task,
                vocab_size,
                conflict,
                seed,
            };
            let manifest = cmd_synth(&config, &out)?;
            for t in &manifest.tasks {
                if let Some(file) = &t.data {
                    println!("{}", out.join(file).display());
                }
            }
        }
        Command::Gradcheck { inject_fault } => {
            let fault = inject_fault.map(|FaultArg::ReluBackward| Fault::ReluBackward);
            let (text, passed) = cmd_gradcheck(fault)?;
            print!("{text}");
            if !passed {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Report { records } => print!("{}", cmd_report(&records)?),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
