use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use iupm_monitor::config::RunConfig;
use iupm_monitor::error::{MonitorError, Result};
use iupm_monitor::http::{self, AppState};
use iupm_monitor::prepare::Prepared;
use iupm_monitor::{sweep, verify, Run};

#[derive(Parser)]
#[command(name = "iupm", version, about = "Label-free accuracy monitoring under gradual shift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configuration to completion with the oracle labeler.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Repeat a run once per intervention threshold.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        thresholds: Vec<f64>,
    },
    /// Serve runs over HTTP for interactive labelling.
    Serve {
        /// May be given more than once.
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Recompute a finished run's summary from its step log.
    Verify {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Write a synthetic stream as ingest CSV files.
    Export {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn execute(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Run { config } => {
            let summary = iupm_monitor::run_batch(RunConfig::load(&config)?)?;
            print_json(&summary)?;
        }
        Command::Sweep { config, thresholds } => {
            let rows = sweep::sweep(&RunConfig::load(&config)?, &thresholds)?;
            sweep::write_table(std::io::stdout().lock(), &rows)?;
        }
        Command::Serve { config, port, host } => {
            let runs = config
                .iter()
                .map(|p| Run::open(RunConfig::load(p)?))
                .collect::<Result<Vec<_>>>()?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                eprintln!("listening on http://{}", listener.local_addr()?);
                http::serve(AppState::new(runs), listener).await
            })?;
        }
        Command::Verify { run_dir } => {
            let report = verify::verify(&run_dir)?;
            print_json(&report)?;
            return Ok(report.ok());
        }
        Command::Export { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let prep = Prepared::build(&cfg, None)?;
            let path = iupm_monitor::export::export_stream(&cfg, &prep, &out)?;
            println!("{}", path.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_status(&e))
        }
    }
}

fn exit_status(e: &MonitorError) -> u8 {
    e.exit_code() as u8
}
