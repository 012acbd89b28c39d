//! `umt evaluate`: score a trained model on the aligned test set and write
//! metrics.csv plus a per-example breakdown.
//!
//! The metrics.csv rows are exactly: ppl_s2t, ppl_t2s, bleu, bleu1..bleu4,
//! brevity_penalty, rr, coverage, coverage_first_half, coverage_second_half.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use umt_core::corpus::read_corpus;
use umt_core::eval::{bleu, conditional_perplexity, coverage, repetition_ratio};
use umt_core::{BleuReport, Coverage, Error, Lang, SynthRule};

use crate::manifest::ManifestBuilder;
use crate::runs::{load_model, vocab_path, LoadedModel};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Vocabulary file; defaults to vocab.txt beside the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Data directory holding test.terse.txt, test.verbose.txt, rule.tsv.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for metrics.csv and per_example.tsv.
    #[arg(long)]
    pub out: PathBuf,
}

pub struct Metrics {
    pub ppl_s2t: f64,
    pub ppl_t2s: f64,
    pub bleu: BleuReport,
    /// Mean repetition ratio of the non-empty generated expansions.
    pub rr: f64,
    pub coverage: Coverage,
}

pub fn run(args: EvaluateArgs) -> Result<()> {
    let vocab_file = vocab_path(&args.model, &args.vocab);
    let loaded = load_model(&args.model, &vocab_file)?;
    run_evaluation(&loaded, &args.model, &vocab_file, &args.data, &args.out)?;
    Ok(())
}

/// Generate expansions for the whole test set and score every metric.
/// Shared with the ablation drivers, which keep the returned metrics for
/// their comparison tables.
pub fn run_evaluation(
    loaded: &LoadedModel,
    model_path: &Path,
    vocab_file: &Path,
    data: &Path,
    out: &Path,
) -> Result<Metrics> {
    let mut manifest = ManifestBuilder::new("evaluate");
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let terse_path = data.join("test.terse.txt");
    let verbose_path = data.join("test.verbose.txt");
    let rule_path = data.join("rule.tsv");
    let terse = read_corpus(&terse_path)
        .with_context(|| format!("reading {}", terse_path.display()))?;
    let verbose = read_corpus(&verbose_path)
        .with_context(|| format!("reading {}", verbose_path.display()))?;
    if terse.len() != verbose.len() {
        return Err(Error::Length {
            op: "aligned test set",
            expected: terse.len(),
            actual: verbose.len(),
        }
        .into());
    }
    let rule = SynthRule::load(&rule_path)
        .with_context(|| format!("reading {}", rule_path.display()))?;
    let table = rule.to_id_table(&loaded.vocab)?;

    let mut terse_inputs = Vec::with_capacity(terse.len());
    let mut refs = Vec::with_capacity(terse.len());
    let mut cands = Vec::with_capacity(terse.len());
    let mut covs = Vec::with_capacity(terse.len());
    let mut per_example = String::from("id\tcandidate\treference\tbleu4\trr\n");
    let mut rr_sum = 0.0;
    let mut rr_count = 0usize;
    for (i, (t, v)) in terse.iter().zip(&verbose).enumerate() {
        let terse_raw = umt_core::corpus::encode_lines(&loaded.vocab, t).concat();
        let terse_in = loaded.terse_input(t)?;
        let cand = loaded.translate(Lang::Tgt, &terse_in)?;
        let reference = loaded.verbose_input(v);

        let example_bleu =
            bleu(std::slice::from_ref(&cand), std::slice::from_ref(&reference))?.composite;
        let rr = if cand.is_empty() { 0.0 } else { repetition_ratio(&cand)? };
        if !cand.is_empty() {
            rr_sum += rr;
            rr_count += 1;
        }
        covs.push(coverage(&terse_raw, &cand, &table)?);
        per_example.push_str(&format!(
            "{i}\t{}\t{}\t{:.4}\t{:.4}\n",
            loaded.render_verbose(&cand),
            loaded.render_verbose(&reference),
            example_bleu,
            rr,
        ));

        terse_inputs.push(terse_in);
        refs.push(reference);
        cands.push(cand);
    }

    let metrics = Metrics {
        ppl_s2t: conditional_perplexity(&loaded.model, Lang::Src, &refs, &terse_inputs)?,
        ppl_t2s: conditional_perplexity(&loaded.model, Lang::Tgt, &terse_inputs, &refs)?,
        bleu: bleu(&cands, &refs)?,
        rr: if rr_count == 0 { 0.0 } else { rr_sum / rr_count as f64 },
        coverage: mean_coverage(&covs),
    };

    let metrics_path = out.join("metrics.csv");
    fs::write(&metrics_path, metrics_csv(&metrics))
        .with_context(|| format!("writing {}", metrics_path.display()))?;
    let per_example_path = out.join("per_example.tsv");
    fs::write(&per_example_path, per_example)
        .with_context(|| format!("writing {}", per_example_path.display()))?;

    manifest
        .config("model", model_path.display())
        .config("vocab", vocab_file.display())
        .config("data", data.display())
        .input(model_path)
        .input(vocab_file)
        .input(&terse_path)
        .input(&verbose_path)
        .input(&rule_path)
        .output(&metrics_path)
        .output(&per_example_path);
    manifest.write(&out.join("manifest.json"))?;

    println!(
        "evaluated {} pairs: bleu {:.2}, rr {:.3}, coverage {:.3}, \
         ppl s2t {:.2}, ppl t2s {:.2}",
        terse.len(),
        metrics.bleu.composite,
        metrics.rr,
        metrics.coverage.total,
        metrics.ppl_s2t,
        metrics.ppl_t2s,
    );
    Ok(metrics)
}

fn mean_coverage(covs: &[Coverage]) -> Coverage {
    let n = covs.len().max(1) as f64;
    Coverage {
        total: covs.iter().map(|c| c.total).sum::<f64>() / n,
        first_half: covs.iter().map(|c| c.first_half).sum::<f64>() / n,
        second_half: covs.iter().map(|c| c.second_half).sum::<f64>() / n,
    }
}

fn metrics_csv(m: &Metrics) -> String {
    let mut csv = String::from("metric,value\n");
    let rows = [
        ("ppl_s2t", m.ppl_s2t),
        ("ppl_t2s", m.ppl_t2s),
        ("bleu", m.bleu.composite),
        ("bleu1", m.bleu.precisions[0]),
        ("bleu2", m.bleu.precisions[1]),
        ("bleu3", m.bleu.precisions[2]),
        ("bleu4", m.bleu.precisions[3]),
        ("brevity_penalty", m.bleu.brevity_penalty),
        ("rr", m.rr),
        ("coverage", m.coverage.total),
        ("coverage_first_half", m.coverage.first_half),
        ("coverage_second_half", m.coverage.second_half),
    ];
    for (name, value) in rows {
        csv.push_str(&format!("{name},{value:.6}\n"));
    }
    csv
}
