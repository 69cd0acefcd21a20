//! Command-line front end: `run`, `validate` and `list-models`.

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use geoctrl::experiments::{self, error_report, exit_code};
use geoctrl::models;

#[derive(Parser)]
#[command(
    name = "geoctrl",
    version,
    about = "Run affine-connection control experiments from TOML configs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the built-in models and their parameters.
    ListModels,
    /// Check a config file without running it.
    Validate { config: PathBuf },
}

fn execute(cli: Cli) -> geoctrl::Result<()> {
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Run { config, out } => {
            experiments::configure_threads()?;
            let outcome = experiments::run_file(&config, out.as_deref())?;
            writeln!(stdout, "{}", serde_json::to_string_pretty(&outcome)?)?;
        }
        Command::ListModels => {
            for info in models::list_models() {
                writeln!(stdout, "{:<12} {}", info.name, info.summary)?;
                for (key, default, unit) in &info.parameters {
                    writeln!(stdout, "    {key:<10} = {default:<8} [{unit}]")?;
                }
                writeln!(
                    stdout,
                    "    actuators (default) = {:?}",
                    info.default_actuators
                )?;
            }
        }
        Command::Validate { config } => {
            let experiment = experiments::validate_file(&config)?;
            let mut report = experiment.describe();
            report["valid"] = true.into();
            writeln!(stdout, "{}", serde_json::to_string_pretty(&report)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    std::panic::set_hook(Box::new(|info| {
        let report = serde_json::json!({
            "error": { "kind": "internal", "message": info.to_string(), "exit_code": 101 }
        });
        eprintln!("{report}");
    }));
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = geoctrl::Error::Config(e.to_string().trim_end().to_string());
            eprintln!("{}", error_report(&err));
            return ExitCode::from(exit_code(&err) as u8);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(geoctrl::Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_report(&err));
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
