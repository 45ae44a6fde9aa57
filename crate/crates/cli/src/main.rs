use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("XSYNTH_LOG", "error")).init();
    let cli = xsynth_cli::Cli::parse();
    if let Err(e) = xsynth_cli::run(cli) {
        eprintln!("xsynth: {e}");
        std::process::exit(e.exit_code());
    }
}
