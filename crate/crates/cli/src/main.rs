use causalkg_cli::{run, Cli};
use clap::Parser;
use tracing_subscriber::EnvFilter;

fn main() {
    let cli = Cli::parse();
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(&cli.log));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(cli) {
        let e = anyhow::Error::new(e);
        eprintln!("error: {e:#}");
        let code = e.downcast_ref::<causalkg_cli::RunError>().map_or(1, |r| r.exit_code());
        std::process::exit(code);
    }
}
