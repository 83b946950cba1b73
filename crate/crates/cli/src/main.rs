use clap::Parser;

fn main() {
    let cli = dpdag::Cli::parse();
    if let Err(e) = dpdag::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
