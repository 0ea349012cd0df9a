use clap::Parser;

use fedmcsa_cli::args::Cli;
use fedmcsa_cli::commands::execute;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = execute(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
