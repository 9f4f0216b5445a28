use clap::Parser;
use nvhcf::cli::{exit_code, run, Cli};

fn main() {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_secs()
        .init();
    if let Err(err) = run(cli) {
        log::error!("{err:#}");
        std::process::exit(exit_code(&err));
    }
}
