use clap::Parser;

fn main() {
    let cli = exptrial::cli::Cli::parse();
    std::process::exit(exptrial::cli::run(cli));
}
