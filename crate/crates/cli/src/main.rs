//! Command-line front end: corpus synthesis, training with feature flags,
//! generation, evaluation, and the ablation drivers.
//!
//! Exit codes: 0 on success, 1 for I/O and validation failures, 3 when
//! training aborts on a non-finite loss.

mod ablate;
mod evaluate;
mod generate;
mod manifest;
mod runs;
mod synth;
mod train;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "umt", version, about = "Terse/verbose unsupervised translation at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic terse/verbose corpus pair.
    Synth(synth::SynthArgs),
    /// Train a model on a synthesized data directory.
    Train(train::TrainArgs),
    /// Translate a file of lines with a trained model.
    Generate(generate::GenerateArgs),
    /// Score a trained model on the aligned test set.
    Evaluate(evaluate::EvaluateArgs),
    /// Train and evaluate the three padding schemas.
    AblateSchemas(ablate::AblateArgs),
    /// Train and evaluate the four feature-flag variants.
    AblateVariants(ablate::AblateArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => synth::run(args),
        Command::Train(args) => train::run(args),
        Command::Generate(args) => generate::run(args),
        Command::Evaluate(args) => evaluate::run(args),
        Command::AblateSchemas(args) => ablate::run_schemas(args),
        Command::AblateVariants(args) => ablate::run_variants(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}

fn exit_code(err: &anyhow::Error) -> i32 {
    let non_finite = err
        .chain()
        .filter_map(|cause| cause.downcast_ref::<umt_core::Error>())
        .any(|e| matches!(e, umt_core::Error::NonFiniteLoss { .. }));
    if non_finite {
        3
    } else {
        1
    }
}
