use clap::Parser;

fn main() {
    std::process::exit(pqlap_cli::run(pqlap_cli::Cli::parse()));
}
