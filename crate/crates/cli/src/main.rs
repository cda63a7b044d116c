use clap::Parser;
use rocesim::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = execute(cli) {
        eprintln!("rocesim: {e}");
        std::process::exit(e.exit_code());
    }
}
