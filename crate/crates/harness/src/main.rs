use clap::Parser;

fn main() {
    let cli = amr_harness::cli::Cli::parse();
    if let Err(e) = amr_harness::cli::execute(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
