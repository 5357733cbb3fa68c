use clap::Parser;

fn main() {
    let cli = regiontag_cli::Cli::parse();
    if let Err(e) = regiontag_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(regiontag_cli::exit_code(&e));
    }
}
