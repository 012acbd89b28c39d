//! The four-component translation model: encoders and decoders for both
//! language sides over one shared character embedding table.
//!
//! Two forward paths exist. The traced path runs batched on a gradient tape
//! for training; the plain path runs off-tape with per-layer key/value
//! caches for incremental greedy decoding, which keeps generation out of the
//! gradient graph by construction and avoids re-encoding the prefix at every
//! step. A consistency test pins the two paths to each other.
//!
//! Parameters live in one flat store with stable names ("enc_s.l0.attn.q.w",
//! ...); the architecture structs hold indices into it. The store order is
//! the init, checkpoint, and optimizer order.

use rand::{Rng, SeedableRng};

use umt_tensor::checkpoint::Checkpoint;
use umt_tensor::{kernels, Element, Tape, Tensor, Var};

use crate::corpus::{Lang, TokenSeq};
use crate::error::{Error, Result};
use crate::padding::SegmentationSchema;
use crate::vocab::{Vocabulary, BOS, EOS, PAD};

const MASK: f64 = -1e9;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self { d_model: 128, n_heads: 4, n_layers: 3, d_ff: 512, max_len: 128 }
    }
}

impl ModelDims {
    fn validate(&self) -> Result<()> {
        if self.d_model == 0
            || self.n_heads == 0
            || self.n_layers == 0
            || self.d_ff == 0
            || self.max_len == 0
        {
            return Err(Error::InvalidInput { op: "model", msg: "zero dimension".into() });
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidInput {
                op: "model",
                msg: format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads),
            });
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Index into the flat parameter store.
type P = usize;

struct LinearP {
    w: P,
    b: P,
}

struct NormP {
    g: P,
    b: P,
}

struct AttnP {
    ln: NormP,
    q: LinearP,
    k: LinearP,
    v: LinearP,
    o: LinearP,
}

struct FfnP {
    ln: NormP,
    w1: LinearP,
    w2: LinearP,
}

struct EncLayerP {
    attn: AttnP,
    ffn: FfnP,
}

struct DecLayerP {
    self_attn: AttnP,
    cross_attn: AttnP,
    ffn: FfnP,
}

struct EncStackP {
    layers: Vec<EncLayerP>,
    ln: NormP,
}

struct DecStackP {
    layers: Vec<DecLayerP>,
    ln: NormP,
}

struct Arch {
    embedding: P,
    enc_s: EncStackP,
    enc_t: EncStackP,
    dec_s: DecStackP,
    dec_t: DecStackP,
}

struct Builder<'r, E, R: Rng> {
    dims: ModelDims,
    names: Vec<String>,
    store: Vec<Tensor<E>>,
    rng: &'r mut R,
}

impl<E: Element, R: Rng> Builder<'_, E, R> {
    fn weight(&mut self, name: String, rows: usize, cols: usize) -> P {
        let r = 1.0 / (rows as f64).sqrt();
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(vec![rows, cols], |_| {
            E::from_f64((rng.gen::<f64>() * 2.0 - 1.0) * r)
        });
        self.push(name, t)
    }

    fn vector(&mut self, name: String, len: usize, value: f64) -> P {
        self.push(name, Tensor::full(vec![len], E::from_f64(value)))
    }

    fn push(&mut self, name: String, t: Tensor<E>) -> P {
        self.names.push(name);
        self.store.push(t);
        self.store.len() - 1
    }

    fn linear(&mut self, prefix: &str, rows: usize, cols: usize) -> LinearP {
        LinearP {
            w: self.weight(format!("{prefix}.w"), rows, cols),
            b: self.vector(format!("{prefix}.b"), cols, 0.0),
        }
    }

    fn norm(&mut self, prefix: &str) -> NormP {
        NormP {
            g: self.vector(format!("{prefix}.g"), self.dims.d_model, 1.0),
            b: self.vector(format!("{prefix}.b"), self.dims.d_model, 0.0),
        }
    }

    fn attn(&mut self, prefix: &str) -> AttnP {
        let d = self.dims.d_model;
        AttnP {
            ln: self.norm(&format!("{prefix}.ln")),
            q: self.linear(&format!("{prefix}.q"), d, d),
            k: self.linear(&format!("{prefix}.k"), d, d),
            v: self.linear(&format!("{prefix}.v"), d, d),
            o: self.linear(&format!("{prefix}.o"), d, d),
        }
    }

    fn ffn(&mut self, prefix: &str) -> FfnP {
        let (d, f) = (self.dims.d_model, self.dims.d_ff);
        FfnP {
            ln: self.norm(&format!("{prefix}.ln")),
            w1: self.linear(&format!("{prefix}.w1"), d, f),
            w2: self.linear(&format!("{prefix}.w2"), f, d),
        }
    }

    fn enc_stack(&mut self, prefix: &str) -> EncStackP {
        let layers = (0..self.dims.n_layers)
            .map(|l| EncLayerP {
                attn: self.attn(&format!("{prefix}.l{l}.attn")),
                ffn: self.ffn(&format!("{prefix}.l{l}.ffn")),
            })
            .collect();
        EncStackP { layers, ln: self.norm(&format!("{prefix}.ln")) }
    }

    fn dec_stack(&mut self, prefix: &str) -> DecStackP {
        let layers = (0..self.dims.n_layers)
            .map(|l| DecLayerP {
                self_attn: self.attn(&format!("{prefix}.l{l}.self")),
                cross_attn: self.attn(&format!("{prefix}.l{l}.cross")),
                ffn: self.ffn(&format!("{prefix}.l{l}.ffn")),
            })
            .collect();
        DecStackP { layers, ln: self.norm(&format!("{prefix}.ln")) }
    }
}

pub struct Model<E> {
    dims: ModelDims,
    vocab_size: usize,
    names: Vec<String>,
    store: Vec<Tensor<E>>,
    pe: Tensor<E>,
    arch: Arch,
}

impl<E: Element> Model<E> {
    pub fn new(vocab_size: usize, dims: ModelDims, rng: &mut impl Rng) -> Result<Self> {
        dims.validate()?;
        if vocab_size <= crate::vocab::NUM_SPECIALS {
            return Err(Error::InvalidInput {
                op: "model",
                msg: format!("vocabulary of {vocab_size} has no content tokens"),
            });
        }
        let mut b = Builder { dims, names: Vec::new(), store: Vec::new(), rng };
        let embedding = b.weight("embedding".into(), vocab_size, dims.d_model);
        debug_assert_eq!(embedding, 0);
        let arch = Arch {
            embedding,
            enc_s: b.enc_stack("enc_s"),
            enc_t: b.enc_stack("enc_t"),
            dec_s: b.dec_stack("dec_s"),
            dec_t: b.dec_stack("dec_t"),
        };
        Ok(Self {
            dims,
            vocab_size,
            names: b.names,
            store: b.store,
            pe: sinusoidal_pe(dims.max_len, dims.d_model),
            arch,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn count_params(&self) -> usize {
        self.store.iter().map(Tensor::numel).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<E>> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&self.store[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<E>> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.store[i])
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    /// Named mutable views over every parameter, in store order. The
    /// optimizer relies on this order being identical across steps.
    pub fn params_mut(&mut self) -> Vec<(&str, &mut Tensor<E>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.store.iter_mut())
            .collect()
    }

    fn enc(&self, lang: Lang) -> &EncStackP {
        match lang {
            Lang::Src => &self.arch.enc_s,
            Lang::Tgt => &self.arch.enc_t,
        }
    }

    fn dec(&self, lang: Lang) -> &DecStackP {
        match lang {
            Lang::Src => &self.arch.dec_s,
            Lang::Tgt => &self.arch.dec_t,
        }
    }

    /// Register every parameter on the tape. The embedding is bound once, so
    /// all four stacks share the same tape node and its gradient accumulates
    /// from every use.
    pub fn bind<'m>(&'m self, tape: &mut Tape<E>) -> TracedModel<'m, E> {
        let vars = self.store.iter().map(|t| tape.param(t)).collect();
        TracedModel { model: self, vars }
    }
}

fn sinusoidal_pe<E: Element>(max_len: usize, d: usize) -> Tensor<E> {
    Tensor::from_fn(vec![max_len, d], |idx| {
        let (t, i) = (idx / d, idx % d);
        let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let angle = t as f64 * freq;
        E::from_f64(if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// A batch of right-padded id rows, flattened row-major to b*t.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<u32>,
    pub lens: Vec<usize>,
    pub b: usize,
    pub t: usize,
}

impl Batch {
    /// Encoder input: sequences padded with PAD to the longest length.
    pub fn input(seqs: &[Vec<u32>]) -> Result<Batch> {
        if seqs.is_empty() {
            return Err(Error::InvalidInput { op: "batch", msg: "no sequences".into() });
        }
        let t = seqs.iter().map(Vec::len).max().unwrap();
        if t == 0 {
            return Err(Error::InvalidInput { op: "batch", msg: "all sequences empty".into() });
        }
        let mut ids = Vec::with_capacity(seqs.len() * t);
        for s in seqs {
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat(PAD).take(t - s.len()));
        }
        Ok(Batch { ids, lens: seqs.iter().map(Vec::len).collect(), b: seqs.len(), t })
    }

    /// Decoder input/target pair: input rows are BOS + sequence, targets are
    /// sequence + EOS, both padded with PAD (which the loss ignores).
    pub fn decoder(seqs: &[Vec<u32>]) -> Result<(Batch, Vec<u32>)> {
        if seqs.is_empty() {
            return Err(Error::InvalidInput { op: "batch", msg: "no sequences".into() });
        }
        let t = seqs.iter().map(Vec::len).max().unwrap() + 1;
        let mut ids = Vec::with_capacity(seqs.len() * t);
        let mut targets = Vec::with_capacity(seqs.len() * t);
        for s in seqs {
            ids.push(BOS);
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat(PAD).take(t - s.len() - 1));
            targets.extend_from_slice(s);
            targets.push(EOS);
            targets.extend(std::iter::repeat(PAD).take(t - s.len() - 1));
        }
        let lens = seqs.iter().map(|s| s.len() + 1).collect();
        Ok((Batch { ids, lens, b: seqs.len(), t }, targets))
    }
}

/// Tape-bound view of the model for one training step.
pub struct TracedModel<'m, E> {
    model: &'m Model<E>,
    vars: Vec<Var>,
}

impl<E: Element> TracedModel<'_, E> {
    fn p(&self, idx: P) -> Var {
        self.vars[idx]
    }

    pub fn embedding_var(&self) -> Var {
        self.p(self.model.arch.embedding)
    }

    pub fn var_of(&self, name: &str) -> Option<Var> {
        let i = self.model.names.iter().position(|n| n == name)?;
        Some(self.vars[i])
    }

    /// Vars in store order, aligned with `Model::params_mut`.
    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    fn linear(&self, tape: &mut Tape<E>, x: Var, lin: &LinearP) -> Result<Var> {
        let xw = tape.matmul(x, self.p(lin.w))?;
        Ok(tape.add(xw, self.p(lin.b))?)
    }

    fn layer_norm(&self, tape: &mut Tape<E>, x: Var, ln: &NormP) -> Result<Var> {
        Ok(tape.layer_norm(x, self.p(ln.g), self.p(ln.b), E::from_f64(LN_EPS))?)
    }

    /// Pre-norm residual attention block. Queries come from LN(x); keys and
    /// values from LN(x) too when `kv` is None (self-attention), otherwise
    /// from the given encoder output (cross-attention).
    fn attention(
        &self,
        tape: &mut Tape<E>,
        p: &AttnP,
        x: Var,
        kv: Option<(Var, usize)>,
        bq: usize,
        tq: usize,
        masks: &[Tensor<E>],
    ) -> Result<Var> {
        let dims = self.model.dims;
        let (dh, nh) = (dims.head_dim(), dims.n_heads);
        let xn = self.layer_norm(tape, x, &p.ln)?;
        let (kv_src, tkv) = match kv {
            Some((enc, t_enc)) => (enc, t_enc),
            None => (xn, tq),
        };
        let q = self.linear(tape, xn, &p.q)?;
        let k = self.linear(tape, kv_src, &p.k)?;
        let v = self.linear(tape, kv_src, &p.v)?;
        let scale = E::from_f64(1.0 / (dh as f64).sqrt());

        let mut rows = Vec::with_capacity(bq);
        for b in 0..bq {
            let qb = tape.slice(q, 0, b * tq, tq)?;
            let kb = tape.slice(k, 0, b * tkv, tkv)?;
            let vb = tape.slice(v, 0, b * tkv, tkv)?;
            let mask = tape.constant(masks[b].clone());
            let mut heads = Vec::with_capacity(nh);
            for h in 0..nh {
                let qh = tape.slice(qb, 1, h * dh, dh)?;
                let kh = tape.slice(kb, 1, h * dh, dh)?;
                let vh = tape.slice(vb, 1, h * dh, dh)?;
                let kt = tape.transpose(kh)?;
                let scores = tape.matmul(qh, kt)?;
                let scores = tape.scale(scores, scale);
                let scores = tape.add(scores, mask)?;
                let att = tape.softmax(scores, 1)?;
                heads.push(tape.matmul(att, vh)?);
            }
            rows.push(tape.concat(&heads, 1)?);
        }
        let ctx = tape.concat(&rows, 0)?;
        let out = self.linear(tape, ctx, &p.o)?;
        Ok(tape.add(x, out)?)
    }

    fn ffn(&self, tape: &mut Tape<E>, p: &FfnP, x: Var) -> Result<Var> {
        let xn = self.layer_norm(tape, x, &p.ln)?;
        let h = self.linear(tape, xn, &p.w1)?;
        let h = tape.relu(h);
        let out = self.linear(tape, h, &p.w2)?;
        Ok(tape.add(x, out)?)
    }

    fn embed(&self, tape: &mut Tape<E>, batch: &Batch) -> Result<Var> {
        let dims = self.model.dims;
        if batch.t > dims.max_len {
            return Err(Error::OverLength { len: batch.t, max: dims.max_len });
        }
        let emb = tape.embedding(self.embedding_var(), &batch.ids)?;
        let emb = tape.scale(emb, E::from_f64((dims.d_model as f64).sqrt()));
        let d = dims.d_model;
        let pe = &self.model.pe;
        let pos = Tensor::from_fn(vec![batch.b * batch.t, d], |idx| {
            let (row, col) = (idx / d, idx % d);
            pe.data()[(row % batch.t) * d + col]
        });
        let pos = tape.constant(pos);
        Ok(tape.add(emb, pos)?)
    }

    pub fn encode_batch(&self, tape: &mut Tape<E>, lang: Lang, batch: &Batch) -> Result<Var> {
        let mut x = self.embed(tape, batch)?;
        let masks: Vec<Tensor<E>> = batch
            .lens
            .iter()
            .map(|&len| pad_mask(batch.t, batch.t, len))
            .collect();
        let stack = self.model.enc(lang);
        for layer in &stack.layers {
            x = self.attention(tape, &layer.attn, x, None, batch.b, batch.t, &masks)?;
            x = self.ffn(tape, &layer.ffn, x)?;
        }
        self.layer_norm(tape, x, &stack.ln)
    }

    /// Teacher-forced decoder pass; returns logits of shape (b * t, V).
    pub fn decode_batch(
        &self,
        tape: &mut Tape<E>,
        lang: Lang,
        enc: Var,
        src: &Batch,
        dec_in: &Batch,
    ) -> Result<Var> {
        let mut x = self.embed(tape, dec_in)?;
        let self_masks: Vec<Tensor<E>> = dec_in
            .lens
            .iter()
            .map(|&len| causal_mask(dec_in.t, len))
            .collect();
        let cross_masks: Vec<Tensor<E>> = src
            .lens
            .iter()
            .map(|&len| pad_mask(dec_in.t, src.t, len))
            .collect();
        let stack = self.model.dec(lang);
        for layer in &stack.layers {
            x = self.attention(tape, &layer.self_attn, x, None, dec_in.b, dec_in.t, &self_masks)?;
            x = self.attention(
                tape,
                &layer.cross_attn,
                x,
                Some((enc, src.t)),
                dec_in.b,
                dec_in.t,
                &cross_masks,
            )?;
            x = self.ffn(tape, &layer.ffn, x)?;
        }
        let x = self.layer_norm(tape, x, &stack.ln)?;
        let proj = tape.transpose(self.embedding_var())?;
        Ok(tape.matmul(x, proj)?)
    }
}

fn pad_mask<E: Element>(tq: usize, tkv: usize, len_kv: usize) -> Tensor<E> {
    Tensor::from_fn(vec![tq, tkv], |idx| {
        if idx % tkv >= len_kv {
            E::from_f64(MASK)
        } else {
            E::ZERO
        }
    })
}

fn causal_mask<E: Element>(t: usize, len: usize) -> Tensor<E> {
    Tensor::from_fn(vec![t, t], |idx| {
        let (row, col) = (idx / t, idx % t);
        if col > row || col >= len {
            E::from_f64(MASK)
        } else {
            E::ZERO
        }
    })
}

/// Encoder output for one sequence on the plain (untraced) path.
pub struct Hidden<E> {
    pub h: Tensor<E>,
    pub len: usize,
}

impl<E: Element> Model<E> {
    pub fn encode(&self, seq: &TokenSeq) -> Result<Hidden<E>> {
        self.encode_ids(seq.lang, &seq.ids)
    }

    /// Single-sequence encoder forward with plain kernels.
    pub fn encode_ids(&self, lang: Lang, ids: &[u32]) -> Result<Hidden<E>> {
        let dims = self.dims;
        let t = ids.len();
        if t > dims.max_len {
            return Err(Error::OverLength { len: t, max: dims.max_len });
        }
        if t == 0 {
            return Err(Error::InvalidInput { op: "encode", msg: "empty sequence".into() });
        }
        let emb = kernels::embedding_lookup(&self.store[self.arch.embedding], ids)?;
        let mut x = kernels::scale(&emb, E::from_f64((dims.d_model as f64).sqrt()));
        let d = dims.d_model;
        for (row, dst) in x.data_mut().chunks_exact_mut(d).enumerate() {
            for (j, v) in dst.iter_mut().enumerate() {
                *v += self.pe.data()[row * d + j];
            }
        }
        let stack = self.enc(lang);
        for layer in &stack.layers {
            x = self.plain_self_attention(&layer.attn, &x)?;
            x = self.plain_ffn(&layer.ffn, &x)?;
        }
        let x = self.plain_norm(&stack.ln, &x)?;
        Ok(Hidden { h: x, len: t })
    }

    fn tensor(&self, p: P) -> &Tensor<E> {
        &self.store[p]
    }

    fn plain_norm(&self, ln: &NormP, x: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(kernels::layer_norm(x, self.tensor(ln.g), self.tensor(ln.b), E::from_f64(LN_EPS))?)
    }

    fn plain_linear(&self, lin: &LinearP, x: &Tensor<E>) -> Result<Tensor<E>> {
        let xw = kernels::matmul(x, self.tensor(lin.w))?;
        Ok(kernels::add(&xw, self.tensor(lin.b))?)
    }

    fn plain_self_attention(&self, p: &AttnP, x: &Tensor<E>) -> Result<Tensor<E>> {
        let (dh, nh) = (self.dims.head_dim(), self.dims.n_heads);
        let xn = self.plain_norm(&p.ln, x)?;
        let q = self.plain_linear(&p.q, &xn)?;
        let k = self.plain_linear(&p.k, &xn)?;
        let v = self.plain_linear(&p.v, &xn)?;
        let t = x.shape()[0];
        let mut ctx = Tensor::zeros(vec![t, nh * dh]);
        for h in 0..nh {
            attend_head(&q, &k, &v, h * dh, dh, &mut ctx);
        }
        let out = self.plain_linear(&p.o, &ctx)?;
        Ok(kernels::add(x, &out)?)
    }

    fn plain_ffn(&self, p: &FfnP, x: &Tensor<E>) -> Result<Tensor<E>> {
        let xn = self.plain_norm(&p.ln, x)?;
        let h = self.plain_linear(&p.w1, &xn)?;
        let h = kernels::relu(&h);
        let out = self.plain_linear(&p.w2, &h)?;
        Ok(kernels::add(x, &out)?)
    }

    /// Incremental decoder over a fixed encoder output.
    pub fn decoder<'m>(&'m self, lang: Lang, hidden: &Hidden<E>) -> Result<PlainDecoder<'m, E>> {
        let stack = self.dec(lang);
        let mut cross = Vec::with_capacity(stack.layers.len());
        for layer in &stack.layers {
            let k = self.plain_linear(&layer.cross_attn.k, &hidden.h)?;
            let v = self.plain_linear(&layer.cross_attn.v, &hidden.h)?;
            cross.push((k, v));
        }
        Ok(PlainDecoder {
            model: self,
            lang,
            cross,
            self_k: vec![Vec::new(); stack.layers.len()],
            self_v: vec![Vec::new(); stack.layers.len()],
            pos: 0,
        })
    }

    /// Full teacher-forced logits for one sequence; `target` must begin with
    /// BOS. Row i conditions on target[0..=i], so cross-entropy of row i
    /// against target[i+1] (EOS at the end) gives the negative log
    /// likelihood.
    pub fn decode_teacher_forced(
        &self,
        lang: Lang,
        hidden: &Hidden<E>,
        target: &[u32],
    ) -> Result<Tensor<E>> {
        if target.first() != Some(&BOS) {
            return Err(Error::MissingBos);
        }
        if target.len() > self.dims.max_len {
            return Err(Error::OverLength { len: target.len(), max: self.dims.max_len });
        }
        let mut dec = self.decoder(lang, hidden)?;
        let v = self.vocab_size;
        let mut data = Vec::with_capacity(target.len() * v);
        for &tok in target {
            data.extend_from_slice(dec.step(tok)?.data());
        }
        Ok(Tensor::new(vec![target.len(), v], data)?)
    }

    /// Greedy decoding, entirely off the gradient tape. Returns generated
    /// content without BOS/EOS; stops at EOS or after max_len tokens.
    pub fn generate_greedy(
        &self,
        src_lang: Lang,
        tgt_lang: Lang,
        ids: &[u32],
        max_len: usize,
    ) -> Result<TokenSeq> {
        let hidden = self.encode_ids(src_lang, ids)?;
        let mut dec = self.decoder(tgt_lang, &hidden)?;
        let mut out = Vec::new();
        let mut tok = BOS;
        let cap = max_len.min(self.dims.max_len.saturating_sub(1));
        for _ in 0..cap {
            let logits = dec.step(tok)?;
            let next = kernels::argmax(logits.data()) as u32;
            if next == EOS {
                break;
            }
            out.push(next);
            tok = next;
        }
        Ok(TokenSeq { ids: out, lang: tgt_lang })
    }
}

/// Per-head scaled dot attention of every query row over all key/value
/// rows, writing into the head's column band of `ctx`. Causality on the
/// incremental path comes from the cache holding only the prefix.
fn attend_head<E: Element>(
    q: &Tensor<E>,
    k: &Tensor<E>,
    v: &Tensor<E>,
    off: usize,
    dh: usize,
    ctx: &mut Tensor<E>,
) {
    let tq = q.shape()[0];
    let tk = k.shape()[0];
    let d = q.shape()[1];
    let scale = E::from_f64(1.0 / (dh as f64).sqrt());
    let mut scores = vec![E::ZERO; tk];
    for i in 0..tq {
        let qrow = &q.data()[i * d + off..i * d + off + dh];
        for (j, s) in scores.iter_mut().enumerate() {
            let krow = &k.data()[j * d + off..j * d + off + dh];
            let mut dot = E::ZERO;
            for (a, b) in qrow.iter().zip(krow) {
                dot += *a * *b;
            }
            *s = dot * scale;
        }
        softmax_in_place(&mut scores);
        let crow = &mut ctx.data_mut()[i * d + off..i * d + off + dh];
        for (j, &p) in scores.iter().enumerate() {
            let vrow = &v.data()[j * d + off..j * d + off + dh];
            for (c, &x) in crow.iter_mut().zip(vrow) {
                *c += p * x;
            }
        }
    }
}

fn softmax_in_place<E: Element>(row: &mut [E]) {
    let mut m = row[0];
    for &x in row.iter() {
        m = m.max(x);
    }
    let mut sum = E::ZERO;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x = *x / sum;
    }
}

pub struct PlainDecoder<'m, E> {
    model: &'m Model<E>,
    lang: Lang,
    cross: Vec<(Tensor<E>, Tensor<E>)>,
    self_k: Vec<Vec<E>>,
    self_v: Vec<Vec<E>>,
    pos: usize,
}

impl<E: Element> PlainDecoder<'_, E> {
    /// Feed one input token, get the logits for the next position.
    pub fn step(&mut self, token: u32) -> Result<Tensor<E>> {
        let dims = self.model.dims;
        let d = dims.d_model;
        if self.pos >= dims.max_len {
            return Err(Error::OverLength { len: self.pos + 1, max: dims.max_len });
        }
        let emb = kernels::embedding_lookup(self.model.tensor(self.model.arch.embedding), &[token])?;
        let mut x = kernels::scale(&emb, E::from_f64((d as f64).sqrt()));
        for (j, xv) in x.data_mut().iter_mut().enumerate() {
            *xv += self.model.pe.data()[self.pos * d + j];
        }
        let stack = self.model.dec(self.lang);
        let (dh, nh) = (dims.head_dim(), dims.n_heads);
        for (l, layer) in stack.layers.iter().enumerate() {
            // Masked self-attention over the cached prefix plus this step.
            let xn = self.model.plain_norm(&layer.self_attn.ln, &x)?;
            let q = self.model.plain_linear(&layer.self_attn.q, &xn)?;
            let k = self.model.plain_linear(&layer.self_attn.k, &xn)?;
            let v = self.model.plain_linear(&layer.self_attn.v, &xn)?;
            self.self_k[l].extend_from_slice(k.data());
            self.self_v[l].extend_from_slice(v.data());
            let cached = self.pos + 1;
            let kt = Tensor::new(vec![cached, d], self.self_k[l].clone())?;
            let vt = Tensor::new(vec![cached, d], self.self_v[l].clone())?;
            let mut ctx = Tensor::zeros(vec![1, d]);
            for h in 0..nh {
                attend_head(&q, &kt, &vt, h * dh, dh, &mut ctx);
            }
            let out = self.model.plain_linear(&layer.self_attn.o, &ctx)?;
            x = kernels::add(&x, &out)?;

            // Cross-attention over the precomputed encoder keys/values.
            let xn = self.model.plain_norm(&layer.cross_attn.ln, &x)?;
            let q = self.model.plain_linear(&layer.cross_attn.q, &xn)?;
            let (ck, cv) = &self.cross[l];
            let mut ctx = Tensor::zeros(vec![1, d]);
            for h in 0..nh {
                attend_head(&q, ck, cv, h * dh, dh, &mut ctx);
            }
            let out = self.model.plain_linear(&layer.cross_attn.o, &ctx)?;
            x = kernels::add(&x, &out)?;

            x = self.model.plain_ffn(&layer.ffn, &x)?;
        }
        let x = self.model.plain_norm(&stack.ln, &x)?;
        let mut logits = Tensor::zeros(vec![1, self.model.vocab_size]);
        kernels::gemm_acc(
            &mut logits,
            E::ONE,
            &x,
            false,
            self.model.tensor(self.model.arch.embedding),
            true,
        );
        self.pos += 1;
        Ok(logits)
    }
}

/// Poem-side preprocessing settings carried inside checkpoints so that
/// generation and evaluation apply the same transform as training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddingInfo {
    pub enabled: bool,
    pub schema: SegmentationSchema,
}

impl Model<f32> {
    pub fn to_checkpoint(&self, vocab: &Vocabulary, padding: &PaddingInfo) -> Checkpoint {
        let d = self.dims;
        let mut dims = vec![
            ("d_model".to_string(), d.d_model as u32),
            ("n_heads".to_string(), d.n_heads as u32),
            ("n_layers".to_string(), d.n_layers as u32),
            ("d_ff".to_string(), d.d_ff as u32),
            ("max_len".to_string(), d.max_len as u32),
            ("pad_enabled".to_string(), padding.enabled as u32),
            ("pad_factor".to_string(), padding.schema.pad_factor() as u32),
            ("schema_len".to_string(), padding.schema.segments().len() as u32),
        ];
        for (i, &s) in padding.schema.segments().iter().enumerate() {
            dims.push((format!("schema_{i}"), s as u32));
        }
        Checkpoint {
            vocab_size: self.vocab_size as u32,
            vocab_hash: vocab.hash(),
            dims,
            params: self
                .names
                .iter()
                .cloned()
                .zip(self.store.iter().cloned())
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, PaddingInfo)> {
        let dims = ModelDims {
            d_model: ck.dim("d_model")? as usize,
            n_heads: ck.dim("n_heads")? as usize,
            n_layers: ck.dim("n_layers")? as usize,
            d_ff: ck.dim("d_ff")? as usize,
            max_len: ck.dim("max_len")? as usize,
        };
        let mut seed_rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::new(ck.vocab_size as usize, dims, &mut seed_rng)?;
        for (name, t) in model.names.iter().zip(model.store.iter_mut()) {
            let stored = ck.param(name)?;
            if stored.shape() != t.shape() {
                return Err(Error::InvalidInput {
                    op: "checkpoint",
                    msg: format!(
                        "parameter {name}: shape {:?} in file, {:?} expected",
                        stored.shape(),
                        t.shape()
                    ),
                });
            }
            *t = stored.clone();
        }
        let n_seg = ck.dim("schema_len")? as usize;
        let segments = (0..n_seg)
            .map(|i| Ok(ck.dim(&format!("schema_{i}"))? as usize))
            .collect::<Result<Vec<_>>>()?;
        let padding = PaddingInfo {
            enabled: ck.dim("pad_enabled")? != 0,
            schema: SegmentationSchema::new(segments, ck.dim("pad_factor")? as usize)?,
        };
        Ok((model, padding))
    }
}
