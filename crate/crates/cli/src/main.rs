use clap::Parser;

fn main() {
    let cli = ciql_cli::Cli::parse();
    std::process::exit(ciql_cli::run(cli));
}
