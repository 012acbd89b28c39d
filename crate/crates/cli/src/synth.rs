//! `umt synth`: generate the synthetic terse/verbose corpus pair.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use umt_core::corpus::write_corpus;
use umt_core::SynthConfig;

use crate::manifest::ManifestBuilder;
use crate::runs::seed_override;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Terse character inventory size.
    #[arg(long, default_value_t = 50)]
    pub vocab_size: usize,
    /// Training examples per side (the two sides use disjoint poems).
    #[arg(long, default_value_t = 2000)]
    pub train_n: usize,
    /// Aligned test pairs.
    #[arg(long, default_value_t = 200)]
    pub test_n: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Target mean repetition ratio of the terse poems. Small character
    /// inventories force high baseline repetition; raise this to match.
    #[arg(long)]
    pub target_rr: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: SynthArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new("synth");
    let seed = seed_override()?.unwrap_or(args.seed);
    let mut cfg = SynthConfig {
        terse_vocab: args.vocab_size,
        n_train: args.train_n,
        n_test: args.test_n,
        seed,
        ..SynthConfig::default()
    };
    if let Some(rr) = args.target_rr {
        cfg.target_rr = rr;
    }
    let output = umt_core::synth::generate(&cfg)?;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let files = [
        ("terse.txt", &output.terse_train),
        ("verbose.txt", &output.verbose_train),
        ("test.terse.txt", &output.test_terse),
        ("test.verbose.txt", &output.test_verbose),
    ];
    for (name, examples) in files {
        let path = args.out.join(name);
        write_corpus(&path, examples)
            .with_context(|| format!("writing {}", path.display()))?;
        manifest.output(&path);
    }
    let rule_path = args.out.join("rule.tsv");
    output.rule.save(&rule_path)?;
    manifest.output(&rule_path);

    let max_verbose_len = output
        .verbose_train
        .iter()
        .chain(&output.test_verbose)
        .map(|ex| ex.text().chars().count())
        .max()
        .unwrap_or(0);
    manifest
        .seed(seed)
        .config("vocab_size", cfg.terse_vocab)
        .config("suffix_vocab", cfg.suffix_vocab)
        .config("bank2", cfg.bank2)
        .config("bank3", cfg.bank3)
        .config("train_n", cfg.n_train)
        .config("test_n", cfg.n_test)
        .config("target_rr", cfg.target_rr)
        .config("p_long", cfg.p_long)
        .config("filler_p", cfg.filler_p)
        .config("calibrated_reuse", output.reuse)
        .config("measured_rr", output.measured_rr)
        .config("length_ratio", output.length_ratio)
        .config("max_verbose_len", max_verbose_len);
    manifest.write(&args.out.join("manifest.json"))?;

    println!(
        "synthesized {}+{} training examples and {} test pairs in {} \
         (terse rr {:.3}, length ratio {:.2}, longest verbose line {})",
        args.train_n,
        args.train_n,
        args.test_n,
        args.out.display(),
        output.measured_rr,
        output.length_ratio,
        max_verbose_len,
    );
    Ok(())
}
