//! Tokens, spans, templates and placements.
//!
//! Placements live in *gap* coordinates over the marker-free template: gap
//! `g` is the slot immediately before content token `g`, and gap `n` is the
//! slot after the last token. The frame tokens [`PREFIX`] and [`EOS`] never
//! host markers.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{CodecError, Result};

pub type TokenId = u32;
pub type TokenSeq = Vec<TokenId>;

/// Opening span marker.
pub const OPEN: TokenId = 0;
/// Closing span marker.
pub const CLOSE: TokenId = 1;
/// Decode prefix, e.g. a target-language code.
pub const PREFIX: TokenId = 2;
/// End of sequence.
pub const EOS: TokenId = 3;

const RESERVED: usize = 4;

pub fn is_marker(id: TokenId) -> bool {
    id == OPEN || id == CLOSE
}

/// Bijective surface/id table. The four reserved ids are always `0..4`;
/// only their surfaces are configurable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    surface_to_id: HashMap<String, TokenId>,
    id_to_surface: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new("[", "]", "<tgt>", "</s>").expect("default reserved surfaces are distinct")
    }
}

impl Vocabulary {
    pub fn new(open: &str, close: &str, prefix: &str, eos: &str) -> Result<Self> {
        let mut vocab = Self {
            surface_to_id: HashMap::new(),
            id_to_surface: Vec::new(),
        };
        for surface in [open, close, prefix, eos] {
            if vocab.surface_to_id.contains_key(surface) {
                return Err(CodecError::Config(format!("reserved surface {surface:?} used twice")));
            }
            vocab.push(surface);
        }
        Ok(vocab)
    }

    fn push(&mut self, surface: &str) -> TokenId {
        let id = self.id_to_surface.len() as TokenId;
        self.surface_to_id.insert(surface.to_owned(), id);
        self.id_to_surface.push(surface.to_owned());
        id
    }

    /// Returns the id for `surface`, adding it if unseen.
    pub fn intern(&mut self, surface: &str) -> TokenId {
        match self.surface_to_id.get(surface) {
            Some(&id) => id,
            None => self.push(surface),
        }
    }

    pub fn intern_all<S: AsRef<str>>(&mut self, surfaces: &[S]) -> TokenSeq {
        surfaces.iter().map(|s| self.intern(s.as_ref())).collect()
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.surface_to_id.get(surface).copied()
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.id_to_surface.get(id as usize).map(String::as_str)
    }

    pub fn surfaces(&self, ids: &[TokenId]) -> Result<Vec<&str>> {
        ids.iter()
            .map(|&id| self.surface(id).ok_or(CodecError::UnknownToken(id)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.id_to_surface.len()
    }

    /// True when only the reserved tokens are present.
    pub fn is_empty(&self) -> bool {
        self.id_to_surface.len() == RESERVED
    }

    pub fn contains(&self, id: TokenId) -> bool {
        (id as usize) < self.id_to_surface.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenId, &str)> {
        self.id_to_surface
            .iter()
            .enumerate()
            .map(|(id, s)| (id as TokenId, s.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl LabeledSpan {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        Self {
            start,
            end,
            label: label.into(),
        }
    }

    fn check(&self, len: usize) -> Result<()> {
        if self.start < self.end && self.end <= len {
            Ok(())
        } else {
            Err(CodecError::Bounds {
                start: self.start,
                end: self.end,
                len,
            })
        }
    }

    fn overlaps(&self, other: &LabeledSpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// A plain source sentence with its `m` labeled spans.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceExample {
    pub tokens: TokenSeq,
    pub spans: Vec<LabeledSpan>,
}

impl SourceExample {
    pub fn new(tokens: TokenSeq, spans: Vec<LabeledSpan>) -> Result<Self> {
        let example = Self { tokens, spans };
        example.validate()?;
        Ok(example)
    }

    /// Checks bounds, marker-freeness, and that no two spans overlap or nest.
    pub fn validate(&self) -> Result<()> {
        if self.tokens.iter().any(|&t| is_marker(t)) {
            return Err(CodecError::Validation("source contains a marker token".into()));
        }
        for span in &self.spans {
            span.check(self.tokens.len())?;
        }
        for (i, a) in self.spans.iter().enumerate() {
            for b in &self.spans[i + 1..] {
                if a.overlaps(b) {
                    return Err(CodecError::Validation(format!(
                        "spans {}..{} and {}..{} overlap",
                        a.start, a.end, b.start, b.end
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Source tokens with exactly one marker pair around one span.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedSource {
    pub tokens: TokenSeq,
    pub span_label: String,
}

impl MarkedSource {
    /// The source with its markers removed.
    pub fn plain(&self) -> TokenSeq {
        self.tokens.iter().copied().filter(|&t| !is_marker(t)).collect()
    }

    /// The tokens between the markers.
    pub fn span_tokens(&self) -> &[TokenId] {
        let open = self.tokens.iter().position(|&t| t == OPEN).unwrap_or(0);
        let close = self.tokens.iter().position(|&t| t == CLOSE).unwrap_or(open);
        &self.tokens[(open + 1).min(close)..close]
    }
}

/// Marker-free translation into which markers are injected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    tokens: TokenSeq,
}

impl Template {
    pub fn new(tokens: TokenSeq) -> Result<Self> {
        if let Some(&bad) = tokens.iter().find(|&&t| is_marker(t) || t == PREFIX || t == EOS) {
            return Err(CodecError::Validation(format!(
                "template contains reserved token {bad}"
            )));
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// One marker pair in gap coordinates over a template of length `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Placement {
    pub open_gap: usize,
    pub close_gap: usize,
}

impl Placement {
    pub fn new(open_gap: usize, close_gap: usize) -> Self {
        Self { open_gap, close_gap }
    }

    pub fn validate(&self, n: usize, allow_empty: bool) -> Result<()> {
        let ordered = if allow_empty {
            self.open_gap <= self.close_gap
        } else {
            self.open_gap < self.close_gap
        };
        if ordered && self.close_gap <= n {
            Ok(())
        } else {
            Err(CodecError::Bounds {
                start: self.open_gap,
                end: self.close_gap,
                len: n,
            })
        }
    }

    /// Span overlap in template coordinates; adjacent spans do not overlap.
    pub fn overlaps(&self, other: &Placement) -> bool {
        self.open_gap < other.close_gap && other.open_gap < self.close_gap
    }

    /// 1-based position of the opening marker in the decoded sequence,
    /// counting tokens after the prefix.
    pub fn open_position(&self) -> usize {
        self.open_gap + 1
    }
}

/// A complete decoded sequence `PREFIX · template ⊕ markers · EOS`.
///
/// `trace[j]` is the cumulative log-prob of the first `j` tokens after the
/// prefix, so `trace[0] == 0` and `trace.len() == tokens.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: TokenSeq,
    pub trace: Vec<f64>,
    pub placement: Placement,
    pub score: f64,
}

impl Hypothesis {
    /// Length of the decoded sequence after the prefix, `|y|`.
    pub fn decoded_len(&self) -> usize {
        self.tokens.len() - 1
    }

    /// Tokens strictly between the markers.
    pub fn span_tokens(&self) -> &[TokenId] {
        // +1 skips the prefix, +1 skips OPEN; the close marker sits after
        // the open marker and the spanned content.
        let start = self.placement.open_gap + 2;
        let end = self.placement.close_gap + 2;
        &self.tokens[start..end]
    }

    /// Checks the structural invariants against `template`.
    pub fn check(&self, template: &Template, allow_empty: bool) -> Result<()> {
        let body = match (self.tokens.first(), self.tokens.last()) {
            (Some(&PREFIX), Some(&EOS)) if self.tokens.len() >= 2 => &self.tokens[1..self.tokens.len() - 1],
            _ => {
                return Err(CodecError::MalformedHypothesis(
                    "missing prefix or end-of-sequence".into(),
                ))
            }
        };
        let (plain, placement) = strip_markers(body, allow_empty)?;
        if plain != template.tokens() || placement != self.placement {
            return Err(CodecError::MalformedHypothesis(
                "hypothesis does not reproduce its template".into(),
            ));
        }
        if self.trace.len() != self.tokens.len()
            || self.trace[0] != 0.0
            || self.trace.windows(2).any(|w| w[1] > w[0])
            || self.trace.last() != Some(&self.score)
        {
            return Err(CodecError::MalformedHypothesis("trace is inconsistent".into()));
        }
        Ok(())
    }
}

/// Surrounds `span` with one marker pair.
pub fn insert_markers(source: &[TokenId], span: &LabeledSpan) -> Result<MarkedSource> {
    span.check(source.len())?;
    let mut tokens = Vec::with_capacity(source.len() + 2);
    tokens.extend_from_slice(&source[..span.start]);
    tokens.push(OPEN);
    tokens.extend_from_slice(&source[span.start..span.end]);
    tokens.push(CLOSE);
    tokens.extend_from_slice(&source[span.end..]);
    Ok(MarkedSource {
        tokens,
        span_label: span.label.clone(),
    })
}

/// Removes the single marker pair, returning the plain tokens and the gaps
/// the markers occupied.
pub fn strip_markers(seq: &[TokenId], allow_empty: bool) -> Result<(TokenSeq, Placement)> {
    let mut plain = Vec::with_capacity(seq.len());
    let mut open = None;
    let mut close = None;
    for &tok in seq {
        match tok {
            OPEN if open.is_none() && close.is_none() => open = Some(plain.len()),
            CLOSE if open.is_some() && close.is_none() => close = Some(plain.len()),
            OPEN | CLOSE => {
                return Err(CodecError::MalformedHypothesis(
                    "duplicated or misordered markers".into(),
                ))
            }
            _ => plain.push(tok),
        }
    }
    let (Some(open_gap), Some(close_gap)) = (open, close) else {
        return Err(CodecError::MalformedHypothesis("missing marker".into()));
    };
    if !allow_empty && open_gap == close_gap {
        return Err(CodecError::MalformedHypothesis("empty span".into()));
    }
    Ok((plain, Placement::new(open_gap, close_gap)))
}

/// Inverse of [`strip_markers`] for content tokens (no frame).
pub fn placement_to_sequence(template: &Template, p: Placement) -> Result<TokenSeq> {
    p.validate(template.len(), true)?;
    let t = template.tokens();
    let mut seq = Vec::with_capacity(t.len() + 2);
    seq.extend_from_slice(&t[..p.open_gap]);
    seq.push(OPEN);
    seq.extend_from_slice(&t[p.open_gap..p.close_gap]);
    seq.push(CLOSE);
    seq.extend_from_slice(&t[p.close_gap..]);
    Ok(seq)
}

/// `PREFIX · body · EOS`.
pub fn frame(body: &[TokenId]) -> TokenSeq {
    let mut seq = Vec::with_capacity(body.len() + 2);
    seq.push(PREFIX);
    seq.extend_from_slice(body);
    seq.push(EOS);
    seq
}

/// Number of ways to place `m` ordered, disjoint marker pairs into `n + 1`
/// gaps. With empty spans allowed this is `C(n + 2m, 2m)`; otherwise each
/// pair must enclose at least one token (adjacent pairs may share a gap).
pub fn count_placements(n: usize, m: usize, allow_empty: bool) -> u128 {
    if allow_empty {
        return binomial((n + 2 * m) as u128, (2 * m) as u128);
    }
    // ways[g]: placements of the pairs so far whose last marker sits at gap g.
    let mut ways = vec![0u128; n + 1];
    ways[0] = 1;
    for _ in 0..m {
        let mut next = vec![0u128; n + 1];
        let mut acc = 0u128;
        // open >= previous close, close > open
        let mut opens = vec![0u128; n + 1];
        for g in 0..=n {
            acc += ways[g];
            opens[g] = acc;
        }
        let mut acc = 0u128;
        for g in 1..=n {
            acc += opens[g - 1];
            next[g] = acc;
        }
        ways = next;
    }
    ways.iter().sum()
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}
