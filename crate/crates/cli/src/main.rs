use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gad_cli::{commands, CliError, Layout, RunConfig};

#[derive(Parser)]
#[command(
    name = "gad",
    version,
    about = "Attribution maps filtered by artificial class distancing"
)]
struct Cli {
    /// JSON run configuration; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set support.epochs=3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory shared by all stages.
    #[arg(long, default_value = "out", global = true)]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset (or ingest `dataset.path`).
    GenData,
    /// Train the classifier.
    Train {
        /// Shorthand for `--set classifier.epochs=N`.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train one support regressor per alpha entry.
    Gad,
    /// Write original and filtered maps for the given images.
    Explain {
        /// Sample id; repeatable. Defaults to the configured ids or the eval split.
        #[arg(long = "id")]
        ids: Vec<String>,
    },
    /// Hull complexity and occlusion sensitivity report with overlays.
    Eval,
    /// All stages in order.
    Run,
}

fn run(cli: Cli) -> Result<String, CliError> {
    let mut overrides = cli.overrides;
    if let Command::Train { epochs: Some(n) } = cli.command {
        overrides.push(format!("classifier.epochs={n}"));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let layout = Layout::new(cli.out);
    match cli.command {
        Command::GenData => commands::gen_data(&cfg, &layout),
        Command::Train { .. } => commands::train(&cfg, &layout),
        Command::Gad => commands::gad(&cfg, &layout),
        Command::Explain { ids } => commands::explain(&cfg, &layout, &ids),
        Command::Eval => commands::eval(&cfg, &layout),
        Command::Run => commands::run_all(&cfg, &layout),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
