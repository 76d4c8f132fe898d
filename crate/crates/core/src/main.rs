use clap::Parser;

fn main() {
    std::process::exit(nodenas::cli::run(nodenas::cli::Cli::parse()));
}
