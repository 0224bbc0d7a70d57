use clap::Parser;

fn main() {
    let cli = star_cli::Cli::parse();
    std::process::exit(star_cli::main_with(cli));
}
