use clap::Parser;

fn main() {
    let cli = attrcert::cli::Cli::parse();
    if let Err(e) = attrcert::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
