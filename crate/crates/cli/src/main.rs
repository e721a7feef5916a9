use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STEPNET_LOG", "info")).init();
    let cli = stepnet_cli::Cli::parse();
    if let Err(e) = stepnet_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
