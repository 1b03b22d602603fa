use clap::Parser;

fn main() {
    std::process::exit(robustmax_cli::run(robustmax_cli::Cli::parse()));
}
