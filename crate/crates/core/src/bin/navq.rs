use clap::Parser;
use navq::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
