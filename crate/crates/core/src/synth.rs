//! Synthetic terse/verbose language pair with a known translation oracle.
//!
//! The terse register is a quatrain language: four lines of seven characters
//! drawn from two- and three-character phrase banks in a 2-2-3 arrangement.
//! The verbose register expands every terse character into an anchored
//! phrase that begins with the character itself followed by one or two
//! suffix characters from a disjoint alphabet, with occasional filler
//! characters between expansions. Because expansions are anchored and the
//! two alphabets never mix, the oracle is injective and coverage of a terse
//! character can be decided by a contiguous substring search.
//!
//! Fillers are chosen by hashing the line content and gap index, so the same
//! terse line always expands to the same verbose line no matter where it
//! occurs. All other randomness flows from one seeded generator, making
//! corpus generation reproducible byte for byte.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

const TERSE_BASE: u32 = 0x4E00;
const SUFFIX_BASE: u32 = 0x30A1;
const MAX_SUFFIX_VOCAB: usize = 85;

const LINE_SHAPE: [usize; 3] = [2, 2, 3];
const POEM_LINES: usize = 4;

const CALIBRATION_POEMS: usize = 200;
const RR_TOLERANCE: f64 = 0.05;
const LENGTH_RATIO_BAND: (f64, f64) = (2.1, 2.5);

#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Distinct terse characters; 20 at minimum.
    pub terse_vocab: usize,
    /// Distinct suffix/filler characters on the verbose side.
    pub suffix_vocab: usize,
    /// Number of two-character and three-character phrases in the banks.
    pub bank2: usize,
    pub bank3: usize,
    /// Unaligned training poems per side.
    pub n_train: usize,
    /// Aligned held-out pairs.
    pub n_test: usize,
    /// Desired mean repetition ratio of terse poems.
    pub target_rr: f64,
    /// Probability that an expansion takes two suffixes instead of one.
    pub p_long: f64,
    /// Probability of a filler character at each gap between expansions.
    pub filler_p: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            terse_vocab: 40,
            suffix_vocab: 48,
            bank2: 40,
            bank3: 40,
            n_train: 2000,
            n_test: 200,
            target_rr: 0.30,
            p_long: 0.25,
            filler_p: 0.05,
            seed: 42,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidInput { op: "synth", msg });
        if self.terse_vocab < 20 {
            return fail(format!("terse_vocab {} is below the floor of 20", self.terse_vocab));
        }
        if self.suffix_vocab < 8 || self.suffix_vocab > MAX_SUFFIX_VOCAB {
            return fail(format!(
                "suffix_vocab {} outside 8..={MAX_SUFFIX_VOCAB}",
                self.suffix_vocab
            ));
        }
        if self.bank2 < 4 || self.bank3 < 4 {
            return fail("phrase banks need at least 4 entries each".into());
        }
        if self.bank2 * 2 < self.terse_vocab {
            return fail(format!(
                "bank2 {} cannot cover a {}-character inventory",
                self.bank2, self.terse_vocab
            ));
        }
        if self.n_train < 500 {
            return fail(format!("n_train {} is below the floor of 500", self.n_train));
        }
        if self.n_test == 0 {
            return fail("n_test must be positive".into());
        }
        for (name, p) in [
            ("target_rr", self.target_rr),
            ("p_long", self.p_long),
            ("filler_p", self.filler_p),
        ] {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return fail(format!("{name} {p} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

fn terse_char(i: usize) -> char {
    char::from_u32(TERSE_BASE + i as u32).unwrap()
}

fn suffix_char(i: usize) -> char {
    char::from_u32(SUFFIX_BASE + i as u32).unwrap()
}

/// The expansion rule: the full verbose phrase for every terse character,
/// plus the filler alphabet and filler probability.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRule {
    expansions: BTreeMap<char, Vec<char>>,
    filler_alphabet: Vec<char>,
    filler_p: f64,
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: impl IntoIterator<Item = u8>, salt: u64) -> u64 {
    let mut h = FNV_OFFSET ^ salt;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn hash_unit(line: &str, gap: usize, salt: u64) -> f64 {
    let bytes = line
        .bytes()
        .chain(std::iter::once(0xFF))
        .chain((gap as u64).to_le_bytes());
    (fnv1a(bytes, salt) >> 11) as f64 / (1u64 << 53) as f64
}

impl SynthRule {
    fn generate(cfg: &SynthConfig, rng: &mut impl Rng) -> Self {
        let mut expansions = BTreeMap::new();
        for i in 0..cfg.terse_vocab {
            let c = terse_char(i);
            let n_suffix = if rng.gen::<f64>() < cfg.p_long { 2 } else { 1 };
            let mut exp = vec![c];
            for _ in 0..n_suffix {
                exp.push(suffix_char(rng.gen_range(0..cfg.suffix_vocab)));
            }
            expansions.insert(c, exp);
        }
        SynthRule {
            expansions,
            filler_alphabet: (0..cfg.suffix_vocab).map(suffix_char).collect(),
            filler_p: cfg.filler_p,
        }
    }

    pub fn expansion_of(&self, c: char) -> Result<&[char]> {
        self.expansions
            .get(&c)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidInput {
                op: "oracle",
                msg: format!("character {c:?} has no expansion rule"),
            })
    }

    fn filler_for(&self, line: &str, gap: usize) -> Option<char> {
        if hash_unit(line, gap, 1) < self.filler_p {
            let pick = hash_unit(line, gap, 2);
            let idx = ((pick * self.filler_alphabet.len() as f64) as usize)
                .min(self.filler_alphabet.len() - 1);
            Some(self.filler_alphabet[idx])
        } else {
            None
        }
    }

    /// Expand one terse line. Depends only on the line content, so the same
    /// line always yields the same verbose text.
    pub fn oracle_translate(&self, line: &str) -> Result<String> {
        let mut out = String::new();
        for (gap, c) in line.chars().enumerate() {
            out.extend(self.filler_for(line, gap));
            out.extend(self.expansion_of(c)?);
        }
        out.extend(self.filler_for(line, line.chars().count()));
        Ok(out)
    }

    pub fn oracle_translate_example(&self, poem: &Example) -> Result<Example> {
        let lines = poem
            .lines
            .iter()
            .map(|l| self.oracle_translate(l))
            .collect::<Result<Vec<_>>>()?;
        Ok(Example { lines })
    }

    /// Rule file: a `filler` header with the filler alphabet and probability,
    /// then one tab-separated line per character with its full expansion.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        let alphabet: String = self.filler_alphabet.iter().collect();
        writeln!(out, "filler\t{alphabet}\t{}", self.filler_p)?;
        for (c, exp) in &self.expansions {
            let exp: String = exp.iter().collect();
            writeln!(out, "{c}\t{exp}")?;
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.display().to_string(),
            line,
            msg,
        };
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty rule file".into()))?;
        let mut fields = header.split('\t');
        let (tag, alphabet, p) = (fields.next(), fields.next(), fields.next());
        if tag != Some("filler") || fields.next().is_some() {
            return Err(parse_err(1, "expected filler\\t<alphabet>\\t<p> header".into()));
        }
        let alphabet: Vec<char> =
            alphabet.ok_or_else(|| parse_err(1, "missing filler alphabet".into()))?.chars().collect();
        let filler_p: f64 = p
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| parse_err(1, "missing or invalid filler probability".into()))?;
        let mut expansions = BTreeMap::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (c, exp) = (fields.next(), fields.next());
            let c = c.and_then(|c| {
                let mut it = c.chars();
                it.next().filter(|_| it.next().is_none())
            });
            match (c, exp, fields.next()) {
                (Some(c), Some(exp), None) => {
                    let exp: Vec<char> = exp.chars().collect();
                    if exp.first() != Some(&c) {
                        return Err(parse_err(i + 1, format!("expansion of {c:?} is not anchored")));
                    }
                    if expansions.insert(c, exp).is_some() {
                        return Err(parse_err(i + 1, format!("duplicate rule for {c:?}")));
                    }
                }
                _ => return Err(parse_err(i + 1, "expected <char>\\t<expansion>".into())),
            }
        }
        if expansions.is_empty() {
            return Err(parse_err(1, "rule file has no expansions".into()));
        }
        Ok(SynthRule { expansions, filler_alphabet: alphabet, filler_p })
    }

    /// Resolve the rule to vocabulary ids for coverage computation. Every
    /// character involved must be present in the vocabulary.
    pub fn to_id_table(&self, vocab: &Vocabulary) -> Result<ExpansionTable> {
        let id_of = |c: char| {
            vocab.id_of(&c.to_string()).ok_or_else(|| Error::InvalidInput {
                op: "expansion_table",
                msg: format!("character {c:?} missing from vocabulary"),
            })
        };
        let mut pairs = Vec::with_capacity(self.expansions.len());
        for (&c, exp) in &self.expansions {
            let ids = exp.iter().map(|&e| id_of(e)).collect::<Result<Vec<_>>>()?;
            pairs.push((id_of(c)?, ids));
        }
        Ok(ExpansionTable::from_pairs(pairs))
    }
}

/// Expansion rule resolved to vocabulary ids.
#[derive(Debug, Clone)]
pub struct ExpansionTable {
    map: HashMap<u32, Vec<u32>>,
}

impl ExpansionTable {
    pub fn from_pairs(pairs: Vec<(u32, Vec<u32>)>) -> Self {
        Self { map: pairs.into_iter().collect() }
    }

    pub fn expansion(&self, id: u32) -> Result<&[u32]> {
        self.map.get(&id).map(Vec::as_slice).ok_or_else(|| Error::InvalidInput {
            op: "coverage",
            msg: format!("id {id} has no expansion"),
        })
    }
}

struct Banks {
    two: Vec<[char; 2]>,
    three: Vec<[char; 3]>,
}

fn draw_banks(cfg: &SynthConfig, rng: &mut impl Rng) -> Result<Banks> {
    fn fill<const N: usize>(
        bank: &mut Vec<[char; N]>,
        count: usize,
        vocab: usize,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let mut seen: HashSet<[char; N]> = bank.iter().copied().collect();
        let mut attempts = 0;
        while bank.len() < count {
            attempts += 1;
            if attempts > count * 200 {
                return Err(Error::InvalidInput {
                    op: "synth",
                    msg: format!("cannot draw {count} distinct {N}-character phrases"),
                });
            }
            let mut phrase = [' '; N];
            for slot in &mut phrase {
                *slot = terse_char(rng.gen_range(0..vocab));
            }
            if seen.insert(phrase) {
                bank.push(phrase);
            }
        }
        Ok(())
    }

    // Tile the shuffled inventory pairwise into the two-character bank before
    // random filling, so every character is reachable from some phrase; an
    // odd leftover pairs with the first shuffled character.
    let mut inventory: Vec<char> = (0..cfg.terse_vocab).map(terse_char).collect();
    inventory.shuffle(rng);
    let mut two: Vec<[char; 2]> = inventory
        .chunks(2)
        .map(|pair| [pair[0], pair.get(1).copied().unwrap_or(inventory[0])])
        .collect();
    fill(&mut two, cfg.bank2, cfg.terse_vocab, rng)?;
    let mut three = Vec::new();
    fill(&mut three, cfg.bank3, cfg.terse_vocab, rng)?;
    Ok(Banks { two, three })
}

/// One quatrain. With probability `reuse`, a phrase slot repeats a phrase
/// already used in this poem instead of drawing fresh from its bank.
fn gen_poem(banks: &Banks, reuse: f64, rng: &mut impl Rng) -> Vec<String> {
    let mut used2: Vec<usize> = Vec::new();
    let mut used3: Vec<usize> = Vec::new();
    let mut lines = Vec::with_capacity(POEM_LINES);
    for _ in 0..POEM_LINES {
        let mut line = String::new();
        for &width in &LINE_SHAPE {
            let used = if width == 2 { &mut used2 } else { &mut used3 };
            let bank_len = if width == 2 { banks.two.len() } else { banks.three.len() };
            let idx = if !used.is_empty() && rng.gen::<f64>() < reuse {
                used[rng.gen_range(0..used.len())]
            } else {
                rng.gen_range(0..bank_len)
            };
            used.push(idx);
            if width == 2 {
                line.extend(banks.two[idx]);
            } else {
                line.extend(banks.three[idx]);
            }
        }
        lines.push(line);
    }
    lines
}

fn poem_rr(lines: &[String]) -> f64 {
    let mut distinct = HashSet::new();
    let mut total = 0usize;
    for line in lines {
        for c in line.chars() {
            distinct.insert(c);
            total += 1;
        }
    }
    1.0 - distinct.len() as f64 / total as f64
}

/// Pick the phrase-reuse probability whose simulated mean repetition ratio
/// lands closest to the target, erroring if even the best grid point misses
/// by more than the tolerance.
fn calibrate_reuse(cfg: &SynthConfig, banks: &Banks) -> Result<f64> {
    let mut best = (f64::INFINITY, 0.0);
    for step in 0..20 {
        let reuse = step as f64 * 0.05;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
        let mean: f64 = (0..CALIBRATION_POEMS)
            .map(|_| poem_rr(&gen_poem(banks, reuse, &mut rng)))
            .sum::<f64>()
            / CALIBRATION_POEMS as f64;
        let dist = (mean - cfg.target_rr).abs();
        if dist < best.0 {
            best = (dist, reuse);
        }
    }
    if best.0 > RR_TOLERANCE {
        return Err(Error::InvalidInput {
            op: "synth",
            msg: format!(
                "no reuse setting reaches repetition {:.2} within {RR_TOLERANCE}",
                cfg.target_rr
            ),
        });
    }
    Ok(best.1)
}

#[derive(Debug)]
pub struct SynthOutput {
    pub rule: SynthRule,
    pub terse_train: Vec<Example>,
    pub verbose_train: Vec<Example>,
    pub test_terse: Vec<Example>,
    pub test_verbose: Vec<Example>,
    /// Calibrated phrase-reuse probability.
    pub reuse: f64,
    /// Mean repetition ratio of the generated terse poems.
    pub measured_rr: f64,
    /// Verbose characters per terse character over the test pairs.
    pub length_ratio: f64,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rule = SynthRule::generate(cfg, &mut rng);
    let banks = draw_banks(cfg, &mut rng)?;
    let reuse = calibrate_reuse(cfg, &banks)?;

    let total = 2 * cfg.n_train + cfg.n_test;
    let mut poems = Vec::with_capacity(total);
    let mut seen = HashSet::new();
    let mut attempts = 0;
    while poems.len() < total {
        attempts += 1;
        if attempts > total * 200 {
            return Err(Error::InvalidInput {
                op: "synth",
                msg: format!("cannot draw {total} distinct poems; enlarge the banks"),
            });
        }
        let lines = gen_poem(&banks, reuse, &mut rng);
        if seen.insert(lines.join("|")) {
            poems.push(Example { lines });
        }
    }

    let measured_rr =
        poems.iter().map(|p| poem_rr(&p.lines)).sum::<f64>() / poems.len() as f64;

    let test_poems = poems.split_off(2 * cfg.n_train);
    let verbose_poems = poems.split_off(cfg.n_train);
    let terse_train = poems;

    // Both training sides must exercise the whole inventory, or the learned
    // vocabulary cannot resolve the rule table at evaluation time.
    for (side, side_poems) in [("terse", &terse_train), ("verbose", &verbose_poems)] {
        let used: HashSet<char> = side_poems
            .iter()
            .flat_map(|p| p.lines.iter().flat_map(|l| l.chars()))
            .collect();
        if let Some(missing) = (0..cfg.terse_vocab).map(terse_char).find(|c| !used.contains(c)) {
            return Err(Error::InvalidInput {
                op: "synth",
                msg: format!("{side}-side training poems never use {missing:?}; raise n_train"),
            });
        }
    }

    let verbose_train = verbose_poems
        .iter()
        .map(|p| rule.oracle_translate_example(p))
        .collect::<Result<Vec<_>>>()?;
    let test_verbose = test_poems
        .iter()
        .map(|p| rule.oracle_translate_example(p))
        .collect::<Result<Vec<_>>>()?;

    let (terse_chars, verbose_chars) = test_poems
        .iter()
        .zip(&test_verbose)
        .map(|(t, v)| (t.text().chars().count(), v.text().chars().count()))
        .fold((0usize, 0usize), |acc, x| (acc.0 + x.0, acc.1 + x.1));
    let length_ratio = verbose_chars as f64 / terse_chars as f64;
    if length_ratio < LENGTH_RATIO_BAND.0 || length_ratio > LENGTH_RATIO_BAND.1 {
        return Err(Error::InvalidInput {
            op: "synth",
            msg: format!(
                "length ratio {length_ratio:.3} outside [{}, {}]; adjust p_long or filler_p",
                LENGTH_RATIO_BAND.0, LENGTH_RATIO_BAND.1
            ),
        });
    }

    Ok(SynthOutput {
        rule,
        terse_train,
        verbose_train,
        test_terse: test_poems,
        test_verbose,
        reuse,
        measured_rr,
        length_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig { n_train: 500, n_test: 50, ..SynthConfig::default() }
    }

    #[test]
    fn expansions_are_anchored_with_one_or_two_suffixes() {
        let out = generate(&small_cfg()).unwrap();
        assert_eq!(out.rule.expansions.len(), 40);
        for (c, exp) in &out.rule.expansions {
            assert_eq!(exp[0], *c);
            assert!(exp.len() == 2 || exp.len() == 3);
            for s in &exp[1..] {
                let code = *s as u32;
                assert!((SUFFIX_BASE..SUFFIX_BASE + 48).contains(&code));
            }
        }
    }

    #[test]
    fn oracle_is_a_function_of_the_line_alone() {
        let out = generate(&small_cfg()).unwrap();
        let line = &out.terse_train[0].lines[0];
        let a = out.rule.oracle_translate(line).unwrap();
        let b = out.rule.oracle_translate(line).unwrap();
        assert_eq!(a, b);
        assert!(a.chars().count() >= 2 * line.chars().count());
    }

    #[test]
    fn oracle_without_fillers_is_a_homomorphism() {
        let cfg = SynthConfig { filler_p: 0.0, ..small_cfg() };
        let out = generate(&cfg).unwrap();
        let a: String = (0..4).map(terse_char).collect();
        let b: String = (4..7).map(terse_char).collect();
        let joined = out.rule.oracle_translate(&format!("{a}{b}")).unwrap();
        let split = format!(
            "{}{}",
            out.rule.oracle_translate(&a).unwrap(),
            out.rule.oracle_translate(&b).unwrap()
        );
        assert_eq!(joined, split);
    }

    #[test]
    fn every_oracle_expansion_is_fully_covered() {
        let out = generate(&small_cfg()).unwrap();
        let all_text: Vec<String> = out
            .terse_train
            .iter()
            .chain(&out.verbose_train)
            .chain(&out.test_terse)
            .chain(&out.test_verbose)
            .map(|e| e.lines.join("\n"))
            .collect();
        let vocab = Vocabulary::build(all_text.iter().map(String::as_str), 1).unwrap();
        let table = out.rule.to_id_table(&vocab).unwrap();
        for (t, v) in out.test_terse.iter().zip(&out.test_verbose).take(20) {
            let src = vocab.encode(&t.text());
            let gen = vocab.encode(&v.text());
            let c = crate::eval::coverage(&src, &gen, &table).unwrap();
            assert_eq!((c.total, c.first_half, c.second_half), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn repetition_lands_within_the_tolerance_band() {
        let out = generate(&small_cfg()).unwrap();
        assert!(
            (out.measured_rr - 0.30).abs() <= RR_TOLERANCE + 0.02,
            "measured {} for target 0.30",
            out.measured_rr
        );
    }

    #[test]
    fn length_ratio_sits_in_the_documented_band() {
        let out = generate(&small_cfg()).unwrap();
        assert!(out.length_ratio >= 2.1 && out.length_ratio <= 2.5, "{}", out.length_ratio);
    }

    #[test]
    fn poems_have_quatrain_shape() {
        let out = generate(&small_cfg()).unwrap();
        for poem in out.terse_train.iter().take(50) {
            assert_eq!(poem.lines.len(), 4);
            for line in &poem.lines {
                assert_eq!(line.chars().count(), 7);
            }
        }
    }

    #[test]
    fn corpora_are_disjoint() {
        let out = generate(&small_cfg()).unwrap();
        let texts = |v: &[Example]| -> HashSet<String> { v.iter().map(Example::text).collect() };
        let a = texts(&out.terse_train);
        let c = texts(&out.test_terse);
        assert!(a.is_disjoint(&c));
        let b = texts(&out.verbose_train);
        let cv = texts(&out.test_verbose);
        assert!(b.is_disjoint(&cv));
    }

    #[test]
    fn same_seed_reproduces_identical_corpora() {
        let a = generate(&small_cfg()).unwrap();
        let b = generate(&small_cfg()).unwrap();
        assert_eq!(a.rule, b.rule);
        assert_eq!(a.terse_train, b.terse_train);
        assert_eq!(a.verbose_train, b.verbose_train);
        assert_eq!(a.test_terse, b.test_terse);
        assert_eq!(a.test_verbose, b.test_verbose);
        assert_eq!(a.reuse, b.reuse);
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate(&small_cfg()).unwrap();
        let b = generate(&SynthConfig { seed: 43, ..small_cfg() }).unwrap();
        assert_ne!(a.terse_train, b.terse_train);
    }

    #[test]
    fn rule_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rule.tsv");
        let out = generate(&small_cfg()).unwrap();
        out.rule.save(&path).unwrap();
        let back = SynthRule::load(&path).unwrap();
        assert_eq!(out.rule, back);
        let line = &out.terse_train[3].lines[2];
        assert_eq!(
            out.rule.oracle_translate(line).unwrap(),
            back.oracle_translate(line).unwrap()
        );
    }

    #[test]
    fn rule_load_rejects_unanchored_expansions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rule.tsv");
        fs::write(&path, "filler\tab\t0.05\nx\tyz\n").unwrap();
        assert!(matches!(SynthRule::load(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn config_floors_are_enforced() {
        let bad = SynthConfig { terse_vocab: 10, ..small_cfg() };
        assert!(generate(&bad).is_err());
        let bad = SynthConfig { n_train: 100, ..small_cfg() };
        assert!(generate(&bad).is_err());
        let bad = SynthConfig { terse_vocab: 90, bank2: 40, ..small_cfg() };
        assert!(generate(&bad).is_err());
    }

    #[test]
    fn training_text_alone_resolves_the_rule_table() {
        let cfg = SynthConfig { terse_vocab: 61, ..small_cfg() };
        let out = generate(&cfg).unwrap();
        let train_text: Vec<String> = out
            .terse_train
            .iter()
            .chain(&out.verbose_train)
            .map(|e| e.lines.join("\n"))
            .collect();
        let vocab = Vocabulary::build(train_text.iter().map(String::as_str), 1).unwrap();
        out.rule.to_id_table(&vocab).unwrap();
    }
}
