//! `umt train`: build the shared vocabulary from a synthesized data
//! directory, train a model, and write the checkpoint with its artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use umt_core::corpus::read_corpus;
use umt_core::padding::SegmentationSchema;
use umt_core::train::{prepare_poems, prepare_prose, StepReport};
use umt_core::{Model, ModelDims, PaddingInfo, TrainConfig, Vocabulary};

use crate::manifest::ManifestBuilder;
use crate::runs::seed_override;

/// Desk-scale defaults sized so a full training run finishes in minutes on
/// one CPU core.
pub const DEFAULT_DIMS: ModelDims = ModelDims {
    d_model: 64,
    n_heads: 2,
    n_layers: 2,
    d_ff: 256,
    max_len: 80,
};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Data directory holding terse.txt and verbose.txt.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for vocab.txt, model.umtp, steps.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// key=value config file; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train with phrase-segmentation padding on the terse side.
    #[arg(long, overrides_with = "no_padding")]
    pub padding: bool,
    /// Train without padding (the default).
    #[arg(long, overrides_with = "padding")]
    pub no_padding: bool,
    /// Train with the repetition penalty on expansions.
    #[arg(long, overrides_with = "no_rl")]
    pub rl: bool,
    /// Train without the repetition penalty (the default).
    #[arg(long, overrides_with = "rl")]
    pub no_rl: bool,
    /// Padding schema, e.g. 2-2-3.
    #[arg(long)]
    pub schema: Option<String>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

pub fn run(args: TrainArgs) -> Result<()> {
    let (cfg, dims) = resolve(&args)?;
    run_training(&args.data, &args.out, &cfg, dims, args.config.as_deref())
}

/// Apply config file, flag, and environment overrides in that order.
fn resolve(args: &TrainArgs) -> Result<(TrainConfig, ModelDims)> {
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.batch {
        cfg.batch = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(text) = &args.schema {
        let parsed = SegmentationSchema::parse(text, cfg.pad_factor)?;
        cfg.schema = parsed.segments().to_vec();
    }
    if args.padding {
        cfg.enable_padding = true;
    } else if args.no_padding {
        cfg.enable_padding = false;
    }
    if args.rl {
        cfg.enable_rl = true;
    } else if args.no_rl {
        cfg.enable_rl = false;
    }
    if let Some(seed) = seed_override()? {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let dims = ModelDims {
        d_model: args.d_model.unwrap_or(DEFAULT_DIMS.d_model),
        n_heads: args.n_heads.unwrap_or(DEFAULT_DIMS.n_heads),
        n_layers: args.n_layers.unwrap_or(DEFAULT_DIMS.n_layers),
        d_ff: args.d_ff.unwrap_or(DEFAULT_DIMS.d_ff),
        max_len: args.max_len.unwrap_or(DEFAULT_DIMS.max_len),
    };
    Ok((cfg, dims))
}

/// The resolved variant flags, recorded verbatim in the manifest.
fn variant_flags(cfg: &TrainConfig) -> String {
    let padding = if cfg.enable_padding { "--padding" } else { "--no-padding" };
    let rl = if cfg.enable_rl { "--rl" } else { "--no-rl" };
    format!("{padding} {rl}")
}

/// A full training run: one corpus pair in, one artifact directory out.
/// Also the work horse of the ablation drivers. The step trace is written
/// even when training aborts on a non-finite loss, so the trace can be
/// inspected afterwards.
pub fn run_training(
    data: &Path,
    out: &Path,
    cfg: &TrainConfig,
    dims: ModelDims,
    config_path: Option<&Path>,
) -> Result<()> {
    let mut manifest = ManifestBuilder::new("train");
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let terse_path = data.join("terse.txt");
    let verbose_path = data.join("verbose.txt");
    let terse = read_corpus(&terse_path)
        .with_context(|| format!("reading {}", terse_path.display()))?;
    let verbose = read_corpus(&verbose_path)
        .with_context(|| format!("reading {}", verbose_path.display()))?;

    let all_lines = terse
        .iter()
        .chain(&verbose)
        .flat_map(|ex| ex.lines.iter().map(String::as_str));
    let vocab = Vocabulary::build(all_lines, 1)?;

    let schema = cfg.segmentation()?;
    let tgt_corpus = prepare_poems(&vocab, &terse, &schema, cfg.enable_padding)?;
    let src_corpus = prepare_prose(&vocab, &verbose);
    check_lengths(&tgt_corpus, "terse", dims.max_len)?;
    check_lengths(&src_corpus, "verbose", dims.max_len)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::new(vocab.len(), dims, &mut rng)?;

    let mut reports = Vec::with_capacity(cfg.steps);
    let result = umt_core::train::train(
        &mut model,
        &src_corpus,
        &tgt_corpus,
        cfg,
        &mut rng,
        &mut reports,
        |report, _| {
            if report.step % 200 == 0 || report.step == cfg.steps {
                eprintln!(
                    "step {}/{}: lm {:.4} bt {:.4} rl {:+.4} rr {:.3}",
                    report.step, cfg.steps, report.lm, report.bt, report.rl, report.rr
                );
            }
            Ok(())
        },
    );

    let steps_path = out.join("steps.csv");
    write_steps_csv(&steps_path, &reports)?;
    result?;

    let vocab_path = out.join("vocab.txt");
    vocab.save(&vocab_path)?;
    let padding = PaddingInfo { enabled: cfg.enable_padding, schema };
    let model_path = out.join("model.umtp");
    model.to_checkpoint(&vocab, &padding).save(&model_path)?;

    if let Some(path) = config_path {
        manifest.input(path);
    }
    manifest
        .seed(cfg.seed)
        .config_block(&cfg.to_key_values())
        .config("flags", variant_flags(cfg))
        .config("d_model", dims.d_model)
        .config("n_heads", dims.n_heads)
        .config("n_layers", dims.n_layers)
        .config("d_ff", dims.d_ff)
        .config("max_len", dims.max_len)
        .input(&terse_path)
        .input(&verbose_path)
        .output(&vocab_path)
        .output(&model_path)
        .output(&steps_path);
    manifest.write(&out.join("manifest.json"))?;

    let last = reports.last();
    println!(
        "trained {} steps ({} params, vocab {}) into {}{}",
        cfg.steps,
        model.count_params(),
        vocab.len(),
        out.display(),
        last.map_or(String::new(), |r| format!(", final composite {:.4}", r.composite)),
    );
    Ok(())
}

/// Both encoder input and the BOS-shifted decoder input must fit max_len.
fn check_lengths(corpus: &[Vec<u32>], side: &str, max_len: usize) -> Result<()> {
    if let Some((i, seq)) = corpus.iter().enumerate().max_by_key(|(_, s)| s.len()) {
        if seq.len() + 1 > max_len {
            bail!(
                "{side} example {i} prepares to {} tokens; max_len {max_len} \
                 supports at most {}",
                seq.len(),
                max_len - 1,
            );
        }
    }
    Ok(())
}

fn write_steps_csv(path: &Path, reports: &[StepReport]) -> Result<()> {
    let mut csv = String::from("step,lm,bt,rl,composite,rr\n");
    for r in reports {
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.step, r.lm, r.bt, r.rl, r.composite, r.rr
        ));
    }
    fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
