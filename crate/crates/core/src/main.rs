use clap::Parser;

use morphdiff::cli::{exit_code, run, Cli};

fn main() {
    // clap exits with code 2 on its own for malformed invocations
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
