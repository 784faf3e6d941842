use clap::Parser;
use quicbench::cli::{execute_command, Cli};

fn main() {
    let cli = Cli::parse();
    std::process::exit(execute_command(cli));
}
