use std::process::ExitCode;

use clap::Parser;
use lgcompose::commands::{self, Cli, Command};
use lgcompose::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Gen(a) => commands::gen(a, cli.seed),
        Command::Train(a) => {
            let summary = commands::train(a, cli.seed)?;
            let h = &summary.history;
            println!(
                "trained {} epochs{}; wrote {}",
                h.epochs_run,
                if h.converged { " (converged)" } else { "" },
                summary.final_path.display()
            );
            Ok(())
        }
        Command::Eval(a) => {
            let report = commands::eval(a, cli.seed)?;
            println!(
                "active patterns: {}; transformers: {:?}; max masked MSE per pixel: {:.3e}",
                report.active_pattern_count,
                report.transformer_classes,
                report.max_masked_mse()
            );
            Ok(())
        }
        Command::Render(a) => commands::render(a, cli.seed),
        Command::Verify(a) => {
            let results = commands::verify(a, cli.seed)?;
            for r in &results {
                println!("{}", commands::format_result(r));
            }
            match results.iter().find(|r| !r.passed) {
                Some(r) => Err(CliError::Verification(r.name.to_string())),
                None => Ok(()),
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
