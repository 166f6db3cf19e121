use clap::Parser;

fn main() {
    let cli = ds3m::cli::Cli::parse();
    if let Err(e) = ds3m::cli::execute(cli) {
        eprintln!("error: {e}");
        std::process::exit(ds3m::cli::exit_code(&e));
    }
}
