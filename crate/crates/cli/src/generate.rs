//! `umt generate`: translate a file of lines with a trained model, one
//! output line per input line.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use umt_core::corpus::Example;
use umt_core::Lang;

use crate::manifest::ManifestBuilder;
use crate::runs::{load_model, vocab_path, LoadedModel};

/// s2t reads verbose lines and writes poems; t2s reads poems (lines joined
/// by `|`) and writes verbose lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Direction {
    S2t,
    T2s,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Vocabulary file; defaults to vocab.txt beside the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub direction: Direction,
    /// Input text, one example per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file; the manifest lands beside it as <name>.manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: GenerateArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new("generate");
    let vocab_file = vocab_path(&args.model, &args.vocab);
    let loaded = load_model(&args.model, &vocab_file)?;
    let text = fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;

    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let rendered = translate_line(&loaded, args.direction, line)
            .with_context(|| format!("line {} of {}", i + 1, args.input.display()))?;
        out.push_str(&rendered);
        out.push('\n');
    }
    fs::write(&args.out, &out).with_context(|| format!("writing {}", args.out.display()))?;

    manifest
        .config("model", args.model.display())
        .config("vocab", vocab_file.display())
        .config("direction", format!("{:?}", args.direction).to_lowercase())
        .config("input", args.input.display())
        .input(&args.model)
        .input(&vocab_file)
        .input(&args.input)
        .output(&args.out);
    let manifest_name = format!(
        "{}.manifest.json",
        args.out.file_name().map_or("out".into(), |n| n.to_string_lossy())
    );
    manifest.write(&args.out.with_file_name(manifest_name))?;

    println!("wrote {} lines to {}", text.lines().count(), args.out.display());
    Ok(())
}

/// Empty lines pass through empty; everything else goes through the model.
fn translate_line(loaded: &LoadedModel, direction: Direction, line: &str) -> Result<String> {
    if line.is_empty() {
        return Ok(String::new());
    }
    let (ids, from) = match direction {
        Direction::S2t => (loaded.verbose_input(&as_example(line)), Lang::Src),
        Direction::T2s => (loaded.terse_input(&as_example(line))?, Lang::Tgt),
    };
    if ids.is_empty() {
        return Ok(String::new());
    }
    let generated = loaded.translate(from, &ids)?;
    Ok(match direction {
        Direction::S2t => loaded.render_terse(&generated),
        Direction::T2s => loaded.render_verbose(&generated),
    })
}

fn as_example(line: &str) -> Example {
    Example { lines: line.split('|').map(str::to_string).collect() }
}
