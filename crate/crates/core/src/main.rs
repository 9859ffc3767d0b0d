mod cli;

use clap::Parser;

fn main() {
    let parsed = cli::Cli::try_parse().unwrap_or_else(|e| {
        // clap prints its own message; keep help/version on exit 0
        let code = if e.use_stderr() { 1 } else { 0 };
        let _ = e.print();
        std::process::exit(code);
    });
    if let Err(e) = cli::run(parsed) {
        eprintln!("error: {e}");
        std::process::exit(cli::exit_code(&e));
    }
}
