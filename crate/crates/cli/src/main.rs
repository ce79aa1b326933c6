use clap::Parser;
use fima_cli::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(lines) => {
            if !cli.common.quiet {
                for l in lines {
                    println!("{l}");
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
