use clap::Parser;

fn main() {
    std::process::exit(navformer::cli::run(navformer::cli::Cli::parse()));
}
