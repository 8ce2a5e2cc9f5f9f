use clap::Parser;

fn main() {
    let cli = capsdec::cli::Cli::parse();
    if let Err(e) = capsdec::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}
