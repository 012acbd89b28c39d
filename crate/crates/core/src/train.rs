//! Training configuration and loop.
//!
//! The composite objective mixes three parts. The denoising part decodes
//! each corrupted sequence back to its clean form on its own language side.
//! The back-translation part greedily translates a batch off the gradient
//! tape, then scores the reconstruction of the original from the generated
//! translation. The repetition part sends each vernacular line on a round
//! trip through the poem register and weights the line's reconstruction
//! likelihood by (tau - RR) of the round trip: examples whose round trip
//! came back more repetitive than the threshold get their reconstruction
//! pushed down, less repetitive ones get pulled up, and one exactly at the
//! threshold contributes nothing.
//!
//! Each loss is split into a prepare step (noise draws, greedy generation;
//! no tape involvement) and a differentiable scoring step over the frozen
//! prepared batch. Generation therefore cannot leak into the gradient
//! graph, and the scoring steps are plain deterministic functions of the
//! parameters, which is what makes finite-difference checks of the full
//! losses possible.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use umt_tensor::optim::{Adam, AdamConfig};
use umt_tensor::{Element, Tape, Tensor, Var};

use crate::corpus::{Lang, TokenSeq};
use crate::error::{Error, Result};
use crate::eval::repetition_ratio;
use crate::model::{Batch, Model, TracedModel};
use crate::noise::{add_noise, NoiseSpec};
use crate::padding::{pad_poem, SegmentationSchema};
use crate::vocab::{Vocabulary, BLANK, EOS, PAD};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub tau: f64,
    pub p_drop: f64,
    pub p_blank: f64,
    pub swap_window: usize,
    pub schema: Vec<usize>,
    pub pad_factor: usize,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub enable_padding: bool,
    pub enable_rl: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 1.0,
            tau: 0.35,
            p_drop: 0.1,
            p_blank: 0.1,
            swap_window: 2,
            schema: vec![2, 2, 3],
            pad_factor: 2,
            batch: 8,
            steps: 2000,
            lr: 3e-4,
            seed: 42,
            enable_padding: false,
            enable_rl: false,
        }
    }
}

impl TrainConfig {
    /// Parse a flat key=value file. Every key must be one of the known
    /// settings; unknown or repeated keys are errors so typos cannot
    /// silently fall back to defaults.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key {key}")));
            }
            let bad = |kind: &str| err(format!("{key}: expected {kind}, got {value:?}"));
            macro_rules! num {
                ($field:ident, $kind:expr) => {
                    cfg.$field = value.parse().map_err(|_| bad($kind))?
                };
            }
            match key {
                "alpha1" => num!(alpha1, "a number"),
                "alpha2" => num!(alpha2, "a number"),
                "alpha3" => num!(alpha3, "a number"),
                "tau" => num!(tau, "a number"),
                "p_drop" => num!(p_drop, "a number"),
                "p_blank" => num!(p_blank, "a number"),
                "swap_window" => num!(swap_window, "a non-negative integer"),
                "pad_factor" => num!(pad_factor, "a positive integer"),
                "batch" => num!(batch, "a positive integer"),
                "steps" => num!(steps, "a non-negative integer"),
                "lr" => num!(lr, "a number"),
                "seed" => num!(seed, "an integer"),
                "enable_padding" => num!(enable_padding, "true or false"),
                "enable_rl" => num!(enable_rl, "true or false"),
                "schema" => {
                    let parsed = SegmentationSchema::parse(value, cfg.pad_factor)
                        .map_err(|e| err(e.to_string()))?;
                    cfg.schema = parsed.segments().to_vec();
                }
                _ => return Err(err(format!("unknown key {key}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidInput { op: "config", msg });
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
        ] {
            if !v.is_finite() || v < 0.0 {
                return fail(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return fail(format!("tau = {} outside [0, 1]", self.tau));
        }
        NoiseSpec::new(self.p_drop, self.p_blank, self.swap_window)?;
        if self.batch == 0 {
            return fail("batch must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail(format!("lr = {} must be positive", self.lr));
        }
        self.segmentation()?;
        Ok(())
    }

    pub fn segmentation(&self) -> Result<SegmentationSchema> {
        SegmentationSchema::new(self.schema.clone(), self.pad_factor)
    }

    pub fn noise(&self) -> Result<NoiseSpec> {
        NoiseSpec::new(self.p_drop, self.p_blank, self.swap_window)
    }

    /// Render back to the key=value format `parse` accepts.
    pub fn to_key_values(&self) -> String {
        let schema: Vec<String> = self.schema.iter().map(usize::to_string).collect();
        let mut out = String::new();
        let _ = writeln!(out, "alpha1={}", self.alpha1);
        let _ = writeln!(out, "alpha2={}", self.alpha2);
        let _ = writeln!(out, "alpha3={}", self.alpha3);
        let _ = writeln!(out, "tau={}", self.tau);
        let _ = writeln!(out, "p_drop={}", self.p_drop);
        let _ = writeln!(out, "p_blank={}", self.p_blank);
        let _ = writeln!(out, "swap_window={}", self.swap_window);
        let _ = writeln!(out, "schema={}", schema.join("-"));
        let _ = writeln!(out, "pad_factor={}", self.pad_factor);
        let _ = writeln!(out, "batch={}", self.batch);
        let _ = writeln!(out, "steps={}", self.steps);
        let _ = writeln!(out, "lr={}", self.lr);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "enable_padding={}", self.enable_padding);
        let _ = writeln!(out, "enable_rl={}", self.enable_rl);
        out
    }
}

/// Poem examples to model-ready id sequences: lines are encoded, padded per
/// the schema when enabled, and concatenated.
pub fn prepare_poems(
    vocab: &Vocabulary,
    examples: &[crate::corpus::Example],
    schema: &SegmentationSchema,
    enable_padding: bool,
) -> Result<Vec<Vec<u32>>> {
    examples
        .iter()
        .map(|ex| {
            let lines = crate::corpus::encode_lines(vocab, ex);
            if enable_padding {
                pad_poem(&lines, schema)
            } else {
                Ok(lines.concat())
            }
        })
        .collect()
}

/// Prose examples to id sequences: lines encoded and concatenated.
pub fn prepare_prose(vocab: &Vocabulary, examples: &[crate::corpus::Example]) -> Vec<Vec<u32>> {
    examples
        .iter()
        .map(|ex| crate::corpus::encode_lines(vocab, ex).concat())
        .collect()
}

/// Noised/clean pairs for the denoising loss, with the noise already drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct LmBatch {
    pub noised_src: Vec<Vec<u32>>,
    pub clean_src: Vec<Vec<u32>>,
    pub noised_tgt: Vec<Vec<u32>>,
    pub clean_tgt: Vec<Vec<u32>>,
}

fn corrupt_side(
    seqs: &[Vec<u32>],
    lang: Lang,
    spec: &NoiseSpec,
    rng: &mut impl Rng,
) -> Vec<Vec<u32>> {
    seqs.iter()
        .map(|ids| {
            let seq = TokenSeq { ids: ids.clone(), lang };
            let mut noised = add_noise(&seq, spec, rng).ids;
            if noised.is_empty() {
                noised.push(BLANK);
            }
            noised
        })
        .collect()
}

/// Corrupt one batch per side. A sequence noised down to nothing becomes a
/// single BLANK so the encoder still has an input.
pub fn lm_prepare(
    src: &[Vec<u32>],
    tgt: &[Vec<u32>],
    spec: &NoiseSpec,
    rng: &mut impl Rng,
) -> LmBatch {
    LmBatch {
        noised_src: corrupt_side(src, Lang::Src, spec, rng),
        clean_src: src.to_vec(),
        noised_tgt: corrupt_side(tgt, Lang::Tgt, spec, rng),
        clean_tgt: tgt.to_vec(),
    }
}

fn reconstruction_ce<E: Element>(
    tape: &mut Tape<E>,
    tm: &TracedModel<E>,
    enc_lang: Lang,
    enc_seqs: &[Vec<u32>],
    dec_lang: Lang,
    dec_seqs: &[Vec<u32>],
) -> Result<Var> {
    let enc_batch = Batch::input(enc_seqs)?;
    let enc = tm.encode_batch(tape, enc_lang, &enc_batch)?;
    let (dec_in, targets) = Batch::decoder(dec_seqs)?;
    let logits = tm.decode_batch(tape, dec_lang, enc, &enc_batch, &dec_in)?;
    Ok(tape.cross_entropy(logits, &targets, PAD)?)
}

/// Mean of the two denoising autoencoder losses.
pub fn lm_loss_from<E: Element>(
    tape: &mut Tape<E>,
    tm: &TracedModel<E>,
    batch: &LmBatch,
) -> Result<Var> {
    let ce_s = reconstruction_ce(tape, tm, Lang::Src, &batch.noised_src, Lang::Src, &batch.clean_src)?;
    let ce_t = reconstruction_ce(tape, tm, Lang::Tgt, &batch.noised_tgt, Lang::Tgt, &batch.clean_tgt)?;
    let sum = tape.add(ce_s, ce_t)?;
    Ok(tape.scale(sum, E::from_f64(0.5)))
}

/// Round-trip translations for the back-translation loss, generated off the
/// tape and then frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct BtBatch {
    pub src: Vec<Vec<u32>>,
    pub tgt: Vec<Vec<u32>>,
    /// Greedy translations of `src` into the target language.
    pub tgt_from_src: Vec<Vec<u32>>,
    /// Greedy expansions of `tgt` into the source language.
    pub src_from_tgt: Vec<Vec<u32>>,
    /// Mean repetition ratio of the non-empty expansions, 0 if all empty.
    pub expansion_rr: f64,
}

fn generation_cap<E: Element>(model: &Model<E>) -> usize {
    model.dims().max_len - 1
}

pub fn bt_prepare<E: Element>(
    model: &Model<E>,
    src: &[Vec<u32>],
    tgt: &[Vec<u32>],
) -> Result<BtBatch> {
    let cap = generation_cap(model);
    let translate = |seqs: &[Vec<u32>], from: Lang| -> Result<Vec<Vec<u32>>> {
        seqs.iter()
            .map(|ids| Ok(model.generate_greedy(from, from.other(), ids, cap)?.ids))
            .collect()
    };
    let tgt_from_src = translate(src, Lang::Src)?;
    let src_from_tgt = translate(tgt, Lang::Tgt)?;
    let rrs: Vec<f64> = src_from_tgt
        .iter()
        .filter(|ids| !ids.is_empty())
        .map(|ids| repetition_ratio(ids))
        .collect::<Result<_>>()?;
    let expansion_rr = if rrs.is_empty() { 0.0 } else { rrs.iter().sum::<f64>() / rrs.len() as f64 };
    Ok(BtBatch {
        src: src.to_vec(),
        tgt: tgt.to_vec(),
        tgt_from_src,
        src_from_tgt,
        expansion_rr,
    })
}

/// An empty generation leaves the encoder with nothing to attend to; a lone
/// EOS stands in for it.
fn or_eos(seqs: &[Vec<u32>]) -> Vec<Vec<u32>> {
    seqs.iter()
        .map(|s| if s.is_empty() { vec![EOS] } else { s.clone() })
        .collect()
}

/// Mean of the two reconstruction losses through the frozen translations.
pub fn bt_loss_from<E: Element>(
    tape: &mut Tape<E>,
    tm: &TracedModel<E>,
    batch: &BtBatch,
) -> Result<Var> {
    let ce_s = reconstruction_ce(
        tape,
        tm,
        Lang::Tgt,
        &or_eos(&batch.tgt_from_src),
        Lang::Src,
        &batch.src,
    )?;
    let ce_t = reconstruction_ce(
        tape,
        tm,
        Lang::Src,
        &or_eos(&batch.src_from_tgt),
        Lang::Tgt,
        &batch.tgt,
    )?;
    let sum = tape.add(ce_s, ce_t)?;
    Ok(tape.scale(sum, E::from_f64(0.5)))
}

/// Frozen round trips and their (tau - RR) weights for the repetition loss.
#[derive(Debug, Clone, PartialEq)]
pub struct RlBatch {
    pub src: Vec<Vec<u32>>,
    /// Greedy poem per vernacular line; the reconstruction conditions on it.
    pub poems: Vec<Vec<u32>>,
    /// Greedy expansion of each poem back into the vernacular register.
    /// Only its repetition ratio enters the loss; empty round trips are
    /// skipped.
    pub roundtrips: Vec<Vec<u32>>,
    /// tau - RR of each round trip, 0 for skipped ones.
    pub coeffs: Vec<f64>,
    /// Full batch size used as the loss denominator.
    pub batch_size: usize,
}

pub fn rl_prepare<E: Element>(model: &Model<E>, src: &[Vec<u32>], tau: f64) -> Result<RlBatch> {
    let cap = generation_cap(model);
    let poems = src
        .iter()
        .map(|ids| Ok(model.generate_greedy(Lang::Src, Lang::Tgt, ids, cap)?.ids))
        .collect::<Result<Vec<_>>>()?;
    rl_from_poems(model, src, poems, tau)
}

/// Round-trip already generated poems; the training loop reuses the
/// back-translation poems of the same batch instead of decoding them twice.
pub fn rl_from_poems<E: Element>(
    model: &Model<E>,
    src: &[Vec<u32>],
    poems: Vec<Vec<u32>>,
    tau: f64,
) -> Result<RlBatch> {
    if poems.len() != src.len() {
        return Err(Error::Length { op: "rl_batch", expected: src.len(), actual: poems.len() });
    }
    let cap = generation_cap(model);
    let mut roundtrips = Vec::with_capacity(poems.len());
    let mut coeffs = Vec::with_capacity(poems.len());
    for poem in &poems {
        let trip = if poem.is_empty() {
            Vec::new()
        } else {
            model.generate_greedy(Lang::Tgt, Lang::Src, poem, cap)?.ids
        };
        coeffs.push(if trip.is_empty() { 0.0 } else { tau - repetition_ratio(&trip)? });
        roundtrips.push(trip);
    }
    Ok(RlBatch { src: src.to_vec(), batch_size: src.len(), poems, roundtrips, coeffs })
}

/// Sum over examples of coeff * per-token cross-entropy of the original
/// line conditioned on its frozen poem, divided by the full batch size.
/// Skipped examples contribute zero but still count in the denominator.
pub fn rl_loss_from<E: Element>(
    tape: &mut Tape<E>,
    tm: &TracedModel<E>,
    batch: &RlBatch,
) -> Result<Var> {
    let n = batch.src.len();
    if batch.poems.len() != n || batch.roundtrips.len() != n || batch.coeffs.len() != n {
        return Err(Error::Length {
            op: "rl_loss",
            expected: n,
            actual: batch.poems.len().min(batch.roundtrips.len()).min(batch.coeffs.len()),
        });
    }
    if batch.batch_size == 0 {
        return Err(Error::InvalidInput { op: "rl_loss", msg: "empty batch".into() });
    }
    let mut lines = Vec::new();
    let mut poems = Vec::new();
    let mut coeffs = Vec::new();
    for (((line, poem), trip), &coeff) in
        batch.src.iter().zip(&batch.poems).zip(&batch.roundtrips).zip(&batch.coeffs)
    {
        if poem.is_empty() || trip.is_empty() {
            continue;
        }
        lines.push(line.clone());
        poems.push(poem.clone());
        coeffs.push(coeff);
    }
    if poems.is_empty() {
        return Ok(tape.constant(Tensor::scalar(E::ZERO)));
    }
    let enc_batch = Batch::input(&poems)?;
    let enc = tm.encode_batch(tape, Lang::Tgt, &enc_batch)?;
    let (dec_in, targets) = Batch::decoder(&lines)?;
    let logits = tm.decode_batch(tape, Lang::Src, enc, &enc_batch, &dec_in)?;
    let v = tape.value(logits).shape()[1];
    let mut total: Option<Var> = None;
    for (b, &coeff) in coeffs.iter().enumerate() {
        let rows = tape.slice(logits, 0, b * dec_in.t, dec_in.t)?;
        debug_assert_eq!(tape.value(rows).shape(), [dec_in.t, v]);
        let ce = tape.cross_entropy(rows, &targets[b * dec_in.t..(b + 1) * dec_in.t], PAD)?;
        let term = tape.scale(ce, E::from_f64(coeff));
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    let total = total.expect("at least one scored expansion");
    Ok(tape.scale(total, E::from_f64(1.0 / batch.batch_size as f64)))
}

/// alpha1 * lm + alpha2 * bt + alpha3 * rl.
pub fn composite_loss<E: Element>(
    tape: &mut Tape<E>,
    lm: Var,
    bt: Var,
    rl: Option<Var>,
    cfg: &TrainConfig,
) -> Result<Var> {
    let a = tape.scale(lm, E::from_f64(cfg.alpha1));
    let b = tape.scale(bt, E::from_f64(cfg.alpha2));
    let mut out = tape.add(a, b)?;
    if let Some(rl) = rl {
        let c = tape.scale(rl, E::from_f64(cfg.alpha3));
        out = tape.add(out, c)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub lm: f64,
    pub bt: f64,
    pub rl: f64,
    pub composite: f64,
    /// Mean repetition ratio of this step's poem expansions.
    pub rr: f64,
}

fn sample_batch(corpus: &[Vec<u32>], n: usize, rng: &mut impl Rng) -> Vec<Vec<u32>> {
    (0..n).map(|_| corpus[rng.gen_range(0..corpus.len())].clone()).collect()
}

/// Run the training loop, appending one report per step and invoking the
/// callback after each parameter update (for checkpointing). On a non-finite
/// loss the report for the offending step is still appended before the error
/// returns, so the trace can be inspected.
pub fn train<F>(
    model: &mut Model<f32>,
    src_corpus: &[Vec<u32>],
    tgt_corpus: &[Vec<u32>],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
    reports: &mut Vec<StepReport>,
    mut after_step: F,
) -> Result<()>
where
    F: FnMut(&StepReport, &Model<f32>) -> Result<()>,
{
    cfg.validate()?;
    if src_corpus.is_empty() || tgt_corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let spec = cfg.noise()?;
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut tape = Tape::new();
    for step in 1..=cfg.steps {
        let src = sample_batch(src_corpus, cfg.batch, rng);
        let tgt = sample_batch(tgt_corpus, cfg.batch, rng);

        let lm_batch = lm_prepare(&src, &tgt, &spec, rng);
        let bt_batch = bt_prepare(model, &src, &tgt)?;
        let rl_batch = if cfg.enable_rl {
            Some(rl_from_poems(model, &src, bt_batch.tgt_from_src.clone(), cfg.tau)?)
        } else {
            None
        };

        tape.reset();
        let tm = model.bind(&mut tape);
        let lm = lm_loss_from(&mut tape, &tm, &lm_batch)?;
        let bt = bt_loss_from(&mut tape, &tm, &bt_batch)?;
        let rl = rl_batch
            .as_ref()
            .map(|b| rl_loss_from(&mut tape, &tm, b))
            .transpose()?;
        let loss = composite_loss(&mut tape, lm, bt, rl, cfg)?;

        let report = StepReport {
            step,
            lm: tape.value(lm).item().to_f64(),
            bt: tape.value(bt).item().to_f64(),
            rl: rl.map_or(0.0, |v| tape.value(v).item().to_f64()),
            composite: tape.value(loss).item().to_f64(),
            rr: bt_batch.expansion_rr,
        };
        let vars = tm.param_vars().to_vec();
        reports.push(report);
        if !report.composite.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }

        let grads = tape.backward(loss)?;
        let grad_refs: Vec<Option<&Tensor<f32>>> = vars.iter().map(|&v| grads.get(v)).collect();
        let mut params = model.params_mut();
        adam.step(&mut params, &grad_refs)?;
        drop(params);

        after_step(&reports[reports.len() - 1], model)?;
    }
    Ok(())
}
