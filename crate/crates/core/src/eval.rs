//! Evaluation metrics: repetition ratio, character-level corpus BLEU,
//! autoencoding and conditional perplexity, and expansion coverage.
//!
//! The BLEU fixtures in the tests were computed by hand from the clipped
//! n-gram definition and are frozen as literals; the implementation has to
//! reproduce them, not the other way around.

use std::collections::{HashMap, HashSet};

use umt_tensor::{Element, Tensor};

use crate::corpus::Lang;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::synth::ExpansionTable;
use crate::vocab::{BOS, PAD, SEGPAD};

/// Fraction of characters that repeat an earlier one: 1 - distinct/total.
pub fn repetition_ratio(ids: &[u32]) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::InvalidInput {
            op: "repetition_ratio",
            msg: "empty sequence".into(),
        });
    }
    let distinct = ids.iter().collect::<HashSet<_>>().len();
    Ok(1.0 - distinct as f64 / ids.len() as f64)
}

const BLEU_MAX_N: usize = 4;
const BLEU_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuReport {
    /// Clipped n-gram precisions for n = 1..=4, as percentages.
    pub precisions: [f64; BLEU_MAX_N],
    pub brevity_penalty: f64,
    /// Geometric mean of the floored precisions times the brevity penalty,
    /// as a percentage.
    pub composite: f64,
}

/// Corpus-level BLEU over id sequences. Candidates and references are
/// aligned by position; counts pool over the whole corpus before the
/// precision quotients are taken.
pub fn bleu(cands: &[Vec<u32>], refs: &[Vec<u32>]) -> Result<BleuReport> {
    if cands.len() != refs.len() {
        return Err(Error::Length {
            op: "bleu",
            expected: refs.len(),
            actual: cands.len(),
        });
    }
    if cands.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut matches = [0usize; BLEU_MAX_N];
    let mut totals = [0usize; BLEU_MAX_N];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (cand, rf) in cands.iter().zip(refs) {
        cand_len += cand.len();
        ref_len += rf.len();
        for n in 1..=BLEU_MAX_N {
            let mut ref_counts: HashMap<&[u32], usize> = HashMap::new();
            for gram in rf.windows(n) {
                *ref_counts.entry(gram).or_insert(0) += 1;
            }
            let mut cand_counts: HashMap<&[u32], usize> = HashMap::new();
            for gram in cand.windows(n) {
                *cand_counts.entry(gram).or_insert(0) += 1;
            }
            for (gram, count) in cand_counts {
                matches[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += cand.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; BLEU_MAX_N];
    for n in 0..BLEU_MAX_N {
        if totals[n] > 0 {
            precisions[n] = matches[n] as f64 / totals[n] as f64;
        }
    }
    let brevity_penalty = if cand_len == 0 {
        0.0
    } else if cand_len < ref_len {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };
    let mean_log: f64 = precisions.iter().map(|p| p.max(BLEU_FLOOR).ln()).sum::<f64>()
        / BLEU_MAX_N as f64;
    Ok(BleuReport {
        precisions: precisions.map(|p| p * 100.0),
        brevity_penalty,
        composite: brevity_penalty * mean_log.exp() * 100.0,
    })
}

/// Summed negative log likelihood of `targets` under `logits` rows, skipping
/// rows whose target is PAD or SEGPAD so padded and unpadded runs stay
/// comparable. Returns the total and the number of scored rows.
fn nll_rows<E: Element>(logits: &Tensor<E>, targets: &[u32]) -> Result<(f64, usize)> {
    let (rows, v) = logits.dims2()?;
    if targets.len() != rows {
        return Err(Error::Length { op: "nll", expected: rows, actual: targets.len() });
    }
    let mut total = 0.0;
    let mut count = 0;
    for (row, &target) in targets.iter().enumerate() {
        if target == PAD || target == SEGPAD {
            continue;
        }
        if target as usize >= v {
            return Err(Error::InvalidInput {
                op: "nll",
                msg: format!("target id {target} outside vocabulary of {v}"),
            });
        }
        let data = &logits.data()[row * v..(row + 1) * v];
        let mut m = data[0];
        for &x in data {
            m = m.max(x);
        }
        let mut sum = 0.0;
        for &x in data {
            sum += (x - m).to_f64().exp();
        }
        let lse = m.to_f64() + sum.ln();
        total += lse - data[target as usize].to_f64();
        count += 1;
    }
    Ok((total, count))
}

fn teacher_forced_nll<E: Element>(
    model: &Model<E>,
    cond_lang: Lang,
    cond: &[u32],
    out_lang: Lang,
    out: &[u32],
) -> Result<(f64, usize)> {
    let hidden = model.encode_ids(cond_lang, cond)?;
    let mut forced = Vec::with_capacity(out.len() + 1);
    forced.push(BOS);
    forced.extend_from_slice(out);
    let logits = model.decode_teacher_forced(out_lang, &hidden, &forced)?;
    let mut targets = Vec::with_capacity(out.len() + 1);
    targets.extend_from_slice(out);
    targets.push(crate::vocab::EOS);
    nll_rows(&logits, &targets)
}

/// exp of the mean per-character negative log likelihood when each sequence
/// is decoded conditioned on its own encoding.
pub fn autoencoding_perplexity<E: Element>(
    model: &Model<E>,
    lang: Lang,
    seqs: &[Vec<u32>],
) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut total = 0.0;
    let mut count = 0;
    for seq in seqs {
        let (t, c) = teacher_forced_nll(model, lang, seq, lang, seq)?;
        total += t;
        count += c;
    }
    perplexity_from(total, count)
}

/// Perplexity of each target sequence given the aligned source sequence,
/// decoded on the target-language side.
pub fn conditional_perplexity<E: Element>(
    model: &Model<E>,
    src_lang: Lang,
    srcs: &[Vec<u32>],
    tgts: &[Vec<u32>],
) -> Result<f64> {
    if srcs.len() != tgts.len() {
        return Err(Error::Length {
            op: "conditional_perplexity",
            expected: srcs.len(),
            actual: tgts.len(),
        });
    }
    if srcs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut total = 0.0;
    let mut count = 0;
    for (src, tgt) in srcs.iter().zip(tgts) {
        let (t, c) = teacher_forced_nll(model, src_lang, src, src_lang.other(), tgt)?;
        total += t;
        count += c;
    }
    perplexity_from(total, count)
}

fn perplexity_from(total: f64, count: usize) -> Result<f64> {
    if count == 0 {
        return Err(Error::InvalidInput {
            op: "perplexity",
            msg: "no scored positions".into(),
        });
    }
    Ok((total / count as f64).exp())
}

/// Fractions of source characters whose full expansion appears contiguously
/// in the generated sequence, overall and per half of the source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coverage {
    pub total: f64,
    pub first_half: f64,
    pub second_half: f64,
}

pub fn coverage(src: &[u32], generated: &[u32], table: &ExpansionTable) -> Result<Coverage> {
    if src.is_empty() {
        return Err(Error::InvalidInput { op: "coverage", msg: "empty source".into() });
    }
    let covered: Vec<bool> = src
        .iter()
        .map(|&id| {
            let exp = table.expansion(id)?;
            Ok(generated.windows(exp.len()).any(|w| w == exp))
        })
        .collect::<Result<_>>()?;
    let frac = |span: &[bool]| {
        if span.is_empty() {
            return 0.0;
        }
        span.iter().filter(|&&c| c).count() as f64 / span.len() as f64
    };
    let mid = src.len() / 2;
    let (first, second) = if src.len() < 2 {
        (&covered[..], &covered[..])
    } else {
        covered.split_at(mid)
    };
    Ok(Coverage {
        total: frac(&covered),
        first_half: frac(first),
        second_half: frac(second),
    })
}
