use std::io::IsTerminal;
use std::sync::Arc;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use taxo_cli::{run, serve, Cli, Command, ServeOpts};
use taxo_core::service::SystemClock;

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Serve { config, opts } => {
            let opts = ServeOpts::resolve(config.as_deref(), opts)?;
            tokio::runtime::Runtime::new()?.block_on(serve(opts, Arc::new(SystemClock)))
        }
        other => {
            print!("{}", run(other)?);
            Ok(())
        }
    }
}
