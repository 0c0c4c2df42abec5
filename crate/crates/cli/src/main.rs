//! `camx`: class activation maps and axiom checks for small ReLU CNNs.

mod axioms;
mod common;
mod identity;
mod perturb;
mod visualize;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use common::{CliResult, EXIT_USAGE};

#[derive(Parser, Debug)]
#[command(
    name = "camx",
    version,
    about = "Class activation maps and axiom checks for ReLU CNNs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write one heatmap for one image
    Visualize(visualize::VisualizeArgs),
    /// Tile heatmaps for several classes and methods into one image
    Compare(visualize::CompareArgs),
    /// Sensitivity / conservation residuals over an image directory
    Axioms(axioms::AxiomsArgs),
    /// Confidence drop after masking each heatmap's top 20% of pixels
    Perturb(perturb::PerturbArgs),
    /// Check the score decomposition at one or all layers
    CheckIdentity(identity::IdentityArgs),
    /// Compare logits against the fixtures recorded in a model manifest
    CheckFixtures(identity::FixturesArgs),
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Visualize(a) => visualize::visualize(a),
        Command::Compare(a) => visualize::compare(a),
        Command::Axioms(a) => axioms::axioms(a),
        Command::Perturb(a) => perturb::perturb(a),
        Command::CheckIdentity(a) => identity::check_identity(a),
        Command::CheckFixtures(a) => identity::check_fixtures_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("camx: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
