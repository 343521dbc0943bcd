use clap::Parser;

fn main() {
    let cli = hcvsim::cli::Cli::parse();
    if let Err(e) = hcvsim::cli::main_with(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
