use clap::Parser;
use hydranet::cli::{run, Cli};

fn main() {
    match run(Cli::parse()) {
        Ok(message) => println!("{message}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
