use clap::Parser;
use fairgame::cli::{dispatch, Cli};

fn main() {
    let cli = Cli::parse();
    std::process::exit(dispatch(&cli));
}
