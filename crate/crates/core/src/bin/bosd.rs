use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BOSD_LOG", "warn")).init();
    if let Err(e) = bosd::cli::run(bosd::cli::Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(bosd::cli::exit_code(&e));
    }
}
