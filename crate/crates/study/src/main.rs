use clap::Parser;
use mvdr_study::cli::{self, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MVDR_LOG", "warn")).init();
    let args = Cli::parse();
    match cli::run(&args) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            eprintln!("{}", cli::error_report(&e));
            std::process::exit(1);
        }
    }
}
