use clap::Parser;

fn main() {
    let cli = spintorque_cli::Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = spintorque_cli::run(cli) {
        log::error!("{e}");
        std::process::exit(e.exit_code());
    }
}
