use clap::Parser;

use fedcloud::cli::{execute, init_logging, Cli};

fn main() {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    std::process::exit(execute(cli));
}
