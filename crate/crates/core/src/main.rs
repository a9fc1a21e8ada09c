use clap::Parser;

use maskreg::cli::{run_experiment, Cli, EXIT_ERROR};

fn main() {
    let cli = Cli::parse();
    let code = match cli.resolve().and_then(|cfg| run_experiment(&cfg)) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            outcome.exit_code
        }
        Err(e) => {
            let msg = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{msg}");
            EXIT_ERROR
        }
    };
    std::process::exit(code);
}
