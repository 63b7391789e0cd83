use clap::Parser;

use rollout_knapsack::cli::{run_command, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run_command(&cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
