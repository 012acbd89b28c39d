//! Ablation drivers: train and evaluate a family of runs that differ in a
//! single setting, then write one comparison table across them.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use umt_core::TrainConfig;

use crate::evaluate::{run_evaluation, Metrics};
use crate::manifest::ManifestBuilder;
use crate::runs::{load_model, seed_override, vocab_path};
use crate::train::{run_training, DEFAULT_DIMS};

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Data directory from `umt synth`.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory; each run lands in its own subdirectory.
    #[arg(long)]
    pub out: PathBuf,
    /// key=value config applied to every run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

const SCHEMAS: [&[usize]; 3] = [&[2, 2, 3], &[2, 3, 2], &[3, 2, 2]];

/// Flag combinations in the order naive, penalty only, padding only, both.
const VARIANTS: [(&str, bool, bool); 4] = [
    ("naive", false, false),
    ("rl", false, true),
    ("padding", true, false),
    ("full", true, true),
];

fn base_config(args: &AblateArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(seed) = seed_override()? {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Train one run into `dir` and score it into `dir/eval`.
fn train_and_evaluate(data: &Path, dir: &Path, cfg: &TrainConfig) -> Result<Metrics> {
    run_training(data, dir, cfg, DEFAULT_DIMS, None)?;
    let model_path = dir.join("model.umtp");
    let vocab_file = vocab_path(&model_path, &None);
    let loaded = load_model(&model_path, &vocab_file)?;
    run_evaluation(&loaded, &model_path, &vocab_file, data, &dir.join("eval"))
}

/// `umt ablate-schemas`: padding on, one run per segmentation schema.
pub fn run_schemas(args: AblateArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new("ablate-schemas");
    let base = base_config(&args)?;
    let mut csv = String::from("schema,ppl_s2t,ppl_t2s,bleu\n");
    for schema in SCHEMAS {
        let name: Vec<String> = schema.iter().map(usize::to_string).collect();
        let name = name.join("-");
        let cfg = TrainConfig {
            schema: schema.to_vec(),
            enable_padding: true,
            ..base.clone()
        };
        let dir = args.out.join(format!("schema-{name}"));
        let metrics = train_and_evaluate(&args.data, &dir, &cfg)?;
        csv.push_str(&format!(
            "{name},{:.6},{:.6},{:.6}\n",
            metrics.ppl_s2t, metrics.ppl_t2s, metrics.bleu.composite
        ));
        manifest.output(&dir);
    }
    finish(manifest, &args, &base, "schemas.csv", &csv)
}

/// `umt ablate-variants`: one run per feature-flag combination.
pub fn run_variants(args: AblateArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new("ablate-variants");
    let base = base_config(&args)?;
    let mut csv = String::from("variant,ppl_s2t,ppl_t2s,bleu,rr,coverage\n");
    for (name, padding, rl) in VARIANTS {
        let cfg = TrainConfig {
            enable_padding: padding,
            enable_rl: rl,
            ..base.clone()
        };
        let dir = args.out.join(name);
        let metrics = train_and_evaluate(&args.data, &dir, &cfg)?;
        csv.push_str(&format!(
            "{name},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            metrics.ppl_s2t,
            metrics.ppl_t2s,
            metrics.bleu.composite,
            metrics.rr,
            metrics.coverage.total
        ));
        manifest.output(&dir);
    }
    finish(manifest, &args, &base, "variants.csv", &csv)
}

fn finish(
    mut manifest: ManifestBuilder,
    args: &AblateArgs,
    base: &TrainConfig,
    table_name: &str,
    csv: &str,
) -> Result<()> {
    let table_path = args.out.join(table_name);
    fs::write(&table_path, csv).with_context(|| format!("writing {}", table_path.display()))?;
    if let Some(path) = &args.config {
        manifest.input(path);
    }
    manifest
        .seed(base.seed)
        .config_block(&base.to_key_values())
        .input(&args.data)
        .output(&table_path);
    manifest.write(&args.out.join("manifest.json"))?;
    print!("{csv}");
    Ok(())
}
