use clap::Parser;

fn main() {
    let cli = spinsens::cli::Cli::parse();
    std::process::exit(spinsens::cli::run(cli));
}
