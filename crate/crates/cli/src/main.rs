use clap::Parser;

// Exit codes: 0 success, 1 runtime failure, 2 usage error (from clap).
fn main() {
    let cli = rfembed_cli::args::Cli::parse();
    if let Err(err) = rfembed_cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
