//! Conditional next-token log-probability oracles.
//!
//! A [`Scorer`] stands in for the translation model: given a conditioning
//! source and a decoded prefix it returns natural-log probabilities for the
//! requested candidate tokens, normalized over its whole vocabulary (never
//! renormalized over the candidate set). Scorers must be pure: identical
//! arguments give bit-identical outputs.
//!
//! Two in-process scorers are provided. [`TableScorer`] reads explicit rows
//! from a text fixture and can fill missing rows from a seeded generator.
//! [`PlantedAlignmentScorer`] is a word-for-word "translation model" whose
//! marker preferences peak at a known gold placement, used to build
//! benchmarks with ground truth.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{CodecError, Result};
use crate::types::{is_marker, TokenId, TokenSeq, Vocabulary, CLOSE, EOS, OPEN, PREFIX};

/// One row request inside a batch: score `candidates` after `prefix`.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub prefix: &'a [TokenId],
    pub candidates: &'a [TokenId],
}

pub trait Scorer: Send + Sync {
    /// Size of the vocabulary the log-probs are normalized over.
    fn vocab_size(&self) -> usize;

    fn next_token_logprobs(&self, source: &[TokenId], prefix: &[TokenId], candidates: &[TokenId]) -> Result<Vec<f64>>;

    /// Scores several prefixes against one source in a single invocation.
    fn batch_logprobs(&self, source: &[TokenId], queries: &[Query<'_>]) -> Result<Vec<Vec<f64>>> {
        queries
            .iter()
            .map(|q| self.next_token_logprobs(source, q.prefix, q.candidates))
            .collect()
    }
}

impl<S: Scorer + ?Sized> Scorer for std::sync::Arc<S> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_token_logprobs(&self, source: &[TokenId], prefix: &[TokenId], candidates: &[TokenId]) -> Result<Vec<f64>> {
        (**self).next_token_logprobs(source, prefix, candidates)
    }

    fn batch_logprobs(&self, source: &[TokenId], queries: &[Query<'_>]) -> Result<Vec<Vec<f64>>> {
        (**self).batch_logprobs(source, queries)
    }
}

/// Cumulative log-probs of `target` (framed as `PREFIX · body · EOS`) given
/// `source`. Entry 0 is 0 and entry `j` covers the first `j` tokens after
/// the prefix.
pub fn sequence_trace(scorer: &dyn Scorer, source: &[TokenId], target: &[TokenId]) -> Result<Vec<f64>> {
    if target.first() != Some(&PREFIX) {
        return Err(CodecError::MalformedHypothesis(
            "target must start with the decode prefix".into(),
        ));
    }
    let queries: Vec<Query<'_>> = (1..target.len())
        .map(|i| Query {
            prefix: &target[..i],
            candidates: std::slice::from_ref(&target[i]),
        })
        .collect();
    let rows = scorer.batch_logprobs(source, &queries)?;
    let mut trace = Vec::with_capacity(target.len());
    let mut acc = 0.0;
    trace.push(acc);
    for row in rows {
        acc += row[0];
        trace.push(acc);
    }
    Ok(trace)
}

/// Chain-rule log-probability of a framed target sequence.
pub fn sequence_logprob(scorer: &dyn Scorer, source: &[TokenId], target: &[TokenId]) -> Result<f64> {
    Ok(*sequence_trace(scorer, source, target)?
        .last()
        .expect("trace always has the initial entry"))
}

/// Counts batch invocations on the wrapped scorer.
pub struct CountingScorer<'a> {
    inner: &'a dyn Scorer,
    calls: AtomicU64,
}

impl<'a> CountingScorer<'a> {
    pub fn new(inner: &'a dyn Scorer) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Scorer for CountingScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn next_token_logprobs(&self, source: &[TokenId], prefix: &[TokenId], candidates: &[TokenId]) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.next_token_logprobs(source, prefix, candidates)
    }

    fn batch_logprobs(&self, source: &[TokenId], queries: &[Query<'_>]) -> Result<Vec<Vec<f64>>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.batch_logprobs(source, queries)
    }
}

// Stable hashing. Scorers hash token *surfaces* so that their outputs do not
// depend on the order in which a vocabulary happened to assign ids.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

const DRIFT_SALT: u64 = 0x2545_f491_4f6c_dd1d;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unit(h: u64) -> f64 {
    // (0, 1), never exactly zero
    ((h >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

fn gaussian(h: u64) -> f64 {
    let u1 = unit(h);
    let u2 = unit(mix(h ^ 0x5bd1_e995));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn surface_codes(vocab: &Vocabulary) -> Vec<u64> {
    vocab.iter().map(|(_, s)| fnv1a(s.as_bytes())).collect()
}

fn context_hash(seed: u64, codes: &[u64], source: &[TokenId], prefix: &[TokenId]) -> Result<u64> {
    let mut h = mix(seed);
    for part in [source, prefix] {
        for &tok in part {
            let code = *codes.get(tok as usize).ok_or(CodecError::UnknownToken(tok))?;
            h = mix(h ^ code);
        }
        h = mix(h ^ 0xa076_1d64_78bd_642f);
    }
    Ok(h)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_ids(ids: &[TokenId], vocab_size: usize) -> Result<()> {
    match ids.iter().find(|&&t| t as usize >= vocab_size) {
        Some(&bad) => Err(CodecError::UnknownToken(bad)),
        None => Ok(()),
    }
}

type RowKey = (TokenSeq, TokenSeq);

/// Lookup-table scorer.
///
/// Explicit entries win; missing tokens fall back to a seeded pseudo-random
/// row (log-softmax over the whole vocabulary) when a seed is set, and to
/// `default_logprob` otherwise.
///
/// Fixture format, one item per line:
///
/// ```text
/// # comment
/// !default -9.5
/// !seed 7
/// !spread 1.5
/// <source surfaces>\t<prefix surfaces>\t<token>\t<logprob>
/// ```
///
/// Keys are space-separated surfaces and may be empty; the prefix key
/// includes the decode-prefix surface.
#[derive(Debug, Clone)]
pub struct TableScorer {
    vocab_size: usize,
    codes: Vec<u64>,
    rows: HashMap<RowKey, HashMap<TokenId, f64>>,
    default_logprob: f64,
    seed: Option<u64>,
    spread: f64,
}

impl TableScorer {
    /// Every token gets `-ln |V|` unless an entry says otherwise.
    pub fn uniform(vocab: &Vocabulary) -> Self {
        Self {
            vocab_size: vocab.len(),
            codes: surface_codes(vocab),
            rows: HashMap::new(),
            default_logprob: -(vocab.len() as f64).ln(),
            seed: None,
            spread: 1.0,
        }
    }

    /// Fills every row from a seeded generator with logit scale `spread`.
    pub fn random(vocab: &Vocabulary, seed: u64, spread: f64) -> Self {
        Self {
            seed: Some(seed),
            spread,
            ..Self::uniform(vocab)
        }
    }

    pub fn with_default(mut self, default_logprob: f64) -> Self {
        self.default_logprob = default_logprob;
        self
    }

    pub fn insert(&mut self, source: &[TokenId], prefix: &[TokenId], token: TokenId, logprob: f64) {
        self.rows
            .entry((source.to_vec(), prefix.to_vec()))
            .or_default()
            .insert(token, logprob);
    }

    pub fn default_logprob(&self) -> f64 {
        self.default_logprob
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Parses a fixture, interning its surfaces into `vocab`. The scorer's
    /// vocabulary size is `vocab.len()` after interning.
    pub fn from_fixture(text: &str, vocab: &mut Vocabulary) -> Result<Self> {
        let mut default_logprob = None;
        let mut seed = None;
        let mut spread = 1.0;
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |message: String| CodecError::Fixture { line: line_no, message };
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(directive) = line.strip_prefix('!') {
                let mut parts = directive.split_whitespace();
                let (Some(key), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(err(format!("bad directive {line:?}")));
                };
                match key {
                    "default" => {
                        default_logprob = Some(value.parse().map_err(|_| err(format!("bad default {value:?}")))?)
                    }
                    "seed" => seed = Some(value.parse().map_err(|_| err(format!("bad seed {value:?}")))?),
                    "spread" => spread = value.parse().map_err(|_| err(format!("bad spread {value:?}")))?,
                    other => return Err(err(format!("unknown directive {other:?}"))),
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [source, prefix, token, logprob] = fields[..] else {
                return Err(err(format!("expected 4 tab-separated fields, got {}", fields.len())));
            };
            let logprob: f64 = logprob
                .trim()
                .parse()
                .map_err(|_| err(format!("bad log-prob {logprob:?}")))?;
            if logprob.is_nan() || logprob > 0.0 {
                return Err(err(format!("log-prob {logprob} must be <= 0")));
            }
            let token = token.trim();
            if token.is_empty() || token.contains(' ') {
                return Err(err(format!("bad token {token:?}")));
            }
            entries.push((
                source.split_whitespace().map(str::to_owned).collect::<Vec<_>>(),
                prefix.split_whitespace().map(str::to_owned).collect::<Vec<_>>(),
                token.to_owned(),
                logprob,
            ));
        }
        let mut interned = Vec::with_capacity(entries.len());
        for (source, prefix, token, logprob) in entries {
            interned.push((
                vocab.intern_all(&source),
                vocab.intern_all(&prefix),
                vocab.intern(&token),
                logprob,
            ));
        }
        let mut scorer = Self::uniform(vocab);
        scorer.seed = seed;
        scorer.spread = spread;
        if let Some(d) = default_logprob {
            scorer.default_logprob = d;
        }
        for (source, prefix, token, logprob) in interned {
            scorer.insert(&source, &prefix, token, logprob);
        }
        Ok(scorer)
    }

    /// Serializes explicit entries back into the fixture format, sorted.
    pub fn to_fixture(&self, vocab: &Vocabulary) -> Result<String> {
        let mut out = String::new();
        writeln!(out, "!default {}", self.default_logprob).unwrap();
        if let Some(seed) = self.seed {
            writeln!(out, "!seed {seed}").unwrap();
            writeln!(out, "!spread {}", self.spread).unwrap();
        }
        let mut lines = Vec::new();
        for ((source, prefix), row) in &self.rows {
            let source = vocab.surfaces(source)?.join(" ");
            let prefix = vocab.surfaces(prefix)?.join(" ");
            for (&tok, &lp) in row {
                let tok = vocab.surface(tok).ok_or(CodecError::UnknownToken(tok))?;
                lines.push(format!("{source}\t{prefix}\t{tok}\t{lp}"));
            }
        }
        lines.sort();
        for line in lines {
            out.push_str(&line);
            out.push('\n');
        }
        Ok(out)
    }

    fn generated_row(&self, ctx: u64) -> Vec<f64> {
        let logits: Vec<f64> = self
            .codes
            .iter()
            .take(self.vocab_size)
            .map(|&code| self.spread * gaussian(mix(ctx ^ code)))
            .collect();
        let norm = log_sum_exp(logits.iter().copied());
        logits.into_iter().map(|l| l - norm).collect()
    }
}

impl Scorer for TableScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token_logprobs(&self, source: &[TokenId], prefix: &[TokenId], candidates: &[TokenId]) -> Result<Vec<f64>> {
        check_ids(source, self.vocab_size)?;
        check_ids(prefix, self.vocab_size)?;
        check_ids(candidates, self.vocab_size)?;
        let explicit = self.rows.get(&(source.to_vec(), prefix.to_vec()));
        let generated = match self.seed {
            Some(seed) if candidates.iter().any(|c| explicit.is_none_or(|r| !r.contains_key(c))) => {
                Some(self.generated_row(context_hash(seed, &self.codes, source, prefix)?))
            }
            _ => None,
        };
        Ok(candidates
            .iter()
            .map(|c| {
                explicit
                    .and_then(|row| row.get(c).copied())
                    .or_else(|| generated.as_ref().map(|g| g[*c as usize]))
                    .unwrap_or(self.default_logprob)
            })
            .collect())
    }
}

/// Shape of a [`PlantedAlignmentScorer`].
///
/// Logits are relative to a baseline of 0 shared by every uninvolved
/// vocabulary entry. The marker logit is `confidence + spike` at the gold
/// gap and decays linearly away from it: a pair that grows the span (open
/// early, close late) pays `soft_penalty`, one that shrinks or shifts it
/// pays `hard_penalty`, plus `slope` per extra gap of distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedParams {
    pub seed: u64,
    /// Standard deviation of the Gaussian perturbation on active logits.
    /// Word logits draw it from the marker-free context, so markers in the
    /// source or prefix do not reshuffle it.
    pub noise: f64,
    /// Extra word-logit perturbation that does depend on markers, as a
    /// fraction of `noise`.
    pub drift: f64,
    pub confidence: f64,
    pub spike: f64,
    pub soft_penalty: f64,
    pub hard_penalty: f64,
    pub slope: f64,
    /// Largest total penalty; far-off gaps level out at `confidence - max_penalty`.
    pub max_penalty: f64,
    /// Logit of a marker the model does not expect at all.
    pub marker_floor: f64,
    /// Number of word pairs `s<i>` / `t<i>` in the lexicon.
    pub lexicon: usize,
}

impl PlantedParams {
    pub fn new(seed: u64, noise: f64) -> Self {
        Self {
            seed,
            noise,
            drift: 0.1,
            confidence: 4.0,
            spike: 2.5,
            soft_penalty: 1.0,
            hard_penalty: 3.0,
            slope: 1.0,
            max_penalty: 4.0,
            marker_floor: -4.0,
            lexicon: 40,
        }
    }
}

pub fn source_word(i: usize) -> String {
    format!("s{i}")
}

pub fn target_word(i: usize) -> String {
    format!("t{i}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Word {
    Source(usize),
    Target(usize),
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Unopened,
    Open,
    Closed,
}

/// A synthetic bilingual model with a known answer.
///
/// Source word `s<i>` translates to target word `t<i>` in order, so a source
/// span `start..end` aligns to target gaps `(start, end)`. Conditioned on a
/// marked source the model prefers emitting markers at exactly those gaps;
/// conditioned on a plain source it never prefers markers. When the
/// conditioning text is in the target language the model translates back,
/// which gives the reverse span score.
#[derive(Debug, Clone)]
pub struct PlantedAlignmentScorer {
    params: PlantedParams,
    vocab_size: usize,
    codes: Vec<u64>,
    words: Vec<Word>,
    source_ids: Vec<TokenId>,
    target_ids: Vec<TokenId>,
}

impl PlantedAlignmentScorer {
    /// Interns the lexicon into `vocab` and snapshots its size.
    pub fn new(vocab: &mut Vocabulary, params: PlantedParams) -> Self {
        let source_ids: Vec<TokenId> = (0..params.lexicon).map(|i| vocab.intern(&source_word(i))).collect();
        let target_ids: Vec<TokenId> = (0..params.lexicon).map(|i| vocab.intern(&target_word(i))).collect();
        let mut words = vec![Word::Other; vocab.len()];
        for (i, (&s, &t)) in source_ids.iter().zip(&target_ids).enumerate() {
            words[s as usize] = Word::Source(i);
            words[t as usize] = Word::Target(i);
        }
        Self {
            params,
            vocab_size: vocab.len(),
            codes: surface_codes(vocab),
            words,
            source_ids,
            target_ids,
        }
    }

    pub fn params(&self) -> &PlantedParams {
        &self.params
    }

    pub fn source_id(&self, i: usize) -> TokenId {
        self.source_ids[i]
    }

    pub fn target_id(&self, i: usize) -> TokenId {
        self.target_ids[i]
    }

    /// Word-for-word translation of source-language tokens.
    pub fn translate(&self, source: &[TokenId]) -> TokenSeq {
        source
            .iter()
            .filter_map(|&t| match self.words.get(t as usize) {
                Some(Word::Source(i)) => Some(self.target_ids[*i]),
                _ => None,
            })
            .collect()
    }

    fn marker_logit(&self, gap: usize, gold: usize, opening: bool) -> f64 {
        let p = &self.params;
        if gap == gold {
            return p.confidence + p.spike;
        }
        let dist = gap.abs_diff(gold) as f64;
        // Opening before gold or closing after it widens the span.
        let widens = (gap < gold) == opening;
        let penalty = if widens { p.soft_penalty } else { p.hard_penalty };
        p.confidence - (penalty + p.slope * (dist - 1.0)).min(p.max_penalty)
    }

    /// Active logits as (token, logit) pairs; all other tokens sit at 0.
    fn active_logits(&self, source: &[TokenId], prefix: &[TokenId]) -> Vec<(TokenId, f64)> {
        let p = &self.params;
        let body = match prefix.first() {
            Some(&PREFIX) => &prefix[1..],
            _ => prefix,
        };
        let emitted = body.iter().filter(|&&t| !is_marker(t) && t != EOS).count();
        let reverse = source
            .iter()
            .any(|&t| matches!(self.words.get(t as usize), Some(Word::Target(_))));

        if reverse {
            let expected = match source.get(emitted).and_then(|&t| self.words.get(t as usize)) {
                Some(Word::Target(i)) => Some(self.source_ids[*i]),
                Some(_) => None,
                None => Some(EOS),
            };
            let mut out = vec![(OPEN, p.marker_floor), (CLOSE, p.marker_floor)];
            out.extend(expected.map(|e| (e, p.confidence)));
            return out;
        }

        let plain: Vec<TokenId> = source.iter().copied().filter(|&t| !is_marker(t)).collect();
        let gold = match (
            source.iter().position(|&t| t == OPEN),
            source.iter().position(|&t| t == CLOSE),
        ) {
            (Some(o), Some(c)) if o < c => Some((o, c - 1)),
            _ => None,
        };
        let expected = match plain.get(emitted).and_then(|&t| self.words.get(t as usize)) {
            Some(Word::Source(i)) => Some(self.target_ids[*i]),
            Some(_) => None,
            None => Some(EOS),
        };
        let phase = match (body.contains(&OPEN), body.contains(&CLOSE)) {
            (false, _) => Phase::Unopened,
            (true, false) => Phase::Open,
            (true, true) => Phase::Closed,
        };
        let (open_logit, close_logit) = match (gold, phase) {
            (Some((go, _)), Phase::Unopened) => (self.marker_logit(emitted, go, true), p.marker_floor),
            (Some((_, gc)), Phase::Open) => (p.marker_floor, self.marker_logit(emitted, gc, false)),
            _ => (p.marker_floor, p.marker_floor),
        };
        let mut out = vec![(OPEN, open_logit), (CLOSE, close_logit)];
        out.extend(expected.map(|e| (e, p.confidence)));
        out
    }
}

impl Scorer for PlantedAlignmentScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token_logprobs(&self, source: &[TokenId], prefix: &[TokenId], candidates: &[TokenId]) -> Result<Vec<f64>> {
        check_ids(source, self.vocab_size)?;
        check_ids(prefix, self.vocab_size)?;
        check_ids(candidates, self.vocab_size)?;
        let mut active = self.active_logits(source, prefix);
        let p = &self.params;
        if p.noise > 0.0 {
            let ctx = context_hash(p.seed, &self.codes, source, prefix)?;
            let strip = |xs: &[TokenId]| xs.iter().copied().filter(|&t| !is_marker(t)).collect::<TokenSeq>();
            let plain_ctx = context_hash(p.seed, &self.codes, &strip(source), &strip(prefix))?;
            for (tok, logit) in active.iter_mut() {
                if *logit <= p.marker_floor {
                    continue;
                }
                let code = self.codes[*tok as usize];
                *logit += if is_marker(*tok) {
                    p.noise * gaussian(mix(ctx ^ code))
                } else {
                    p.noise * gaussian(mix(plain_ctx ^ code))
                        + p.drift * p.noise * gaussian(mix(ctx ^ code ^ DRIFT_SALT))
                };
            }
        }
        // Z = (|V| - |active|) * e^0 + sum over active logits.
        let idle = (self.vocab_size - active.len()) as f64;
        let max = active.iter().map(|a| a.1).fold(0.0f64, f64::max);
        let z = idle * (-max).exp() + active.iter().map(|a| (a.1 - max).exp()).sum::<f64>();
        let norm = max + z.ln();
        Ok(candidates
            .iter()
            .map(|c| active.iter().find(|a| a.0 == *c).map_or(0.0, |a| a.1) - norm)
            .collect())
    }
}
