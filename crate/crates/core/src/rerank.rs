//! Re-ranking of the top-k hypotheses and translate-train filtering.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scorer::{sequence_logprob, Scorer};
use crate::types::{frame, Hypothesis, TokenId, TokenSeq};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub hypothesis: Hypothesis,
    pub hyp_score: f64,
    pub span_tokens: TokenSeq,
    pub span_score: f64,
    pub lexical_score: Option<f64>,
}

impl ScoredCandidate {
    pub fn new(hypothesis: Hypothesis, span_score: f64) -> Self {
        Self {
            hyp_score: hypothesis.score,
            span_tokens: hypothesis.span_tokens().to_vec(),
            hypothesis,
            span_score,
            lexical_score: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub lexical_threshold: f64,
    pub span_logprob_threshold: f64,
    pub enabled: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            lexical_threshold: 0.5,
            span_logprob_threshold: -5.0,
            enabled: true,
        }
    }
}

/// Which spans of the top hypothesis may compete with it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanMatch {
    /// Equal, or a contiguous run of its tokens.
    #[default]
    Contiguous,
    /// Equal, or any order-preserving subsequence.
    Gapped,
}

impl SpanMatch {
    pub fn admits(self, candidate: &[TokenId], top: &[TokenId]) -> bool {
        if candidate.is_empty() || candidate.len() > top.len() {
            return candidate == top;
        }
        match self {
            SpanMatch::Contiguous => top.windows(candidate.len()).any(|w| w == candidate),
            SpanMatch::Gapped => {
                let mut it = top.iter();
                candidate.iter().all(|c| it.any(|t| t == c))
            }
        }
    }
}

/// Log-probability of regenerating the source span from a projected span,
/// i.e. the scorer run in the reverse direction. `-inf` for an empty
/// projected span.
pub fn span_score(scorer: &dyn Scorer, e_src: &[TokenId], e_tgt: &[TokenId]) -> Result<f64> {
    if e_tgt.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    sequence_logprob(scorer, e_tgt, &frame(e_src))
}

/// Index of the re-ranked winner with contiguous span matching.
pub fn rerank(candidates: &[ScoredCandidate]) -> Option<usize> {
    rerank_with(candidates, SpanMatch::Contiguous)
}

/// Orders by hypothesis score, keeps the top hypothesis and those whose
/// span is contained in its span, and returns the best span score among
/// them. Ties go to the higher hypothesis score.
pub fn rerank_with(candidates: &[ScoredCandidate], rule: SpanMatch) -> Option<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| candidates[b].hyp_score.total_cmp(&candidates[a].hyp_score));
    let &top = order.first()?;
    let top_span = &candidates[top].span_tokens;
    let mut best = top;
    for &i in &order[1..] {
        let c = &candidates[i];
        if rule.admits(&c.span_tokens, top_span) && c.span_score > candidates[best].span_score {
            best = i;
        }
    }
    Some(best)
}

fn fold(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Normalized edit similarity after case folding and whitespace
/// normalization; 1.0 for two empty strings.
pub fn lexical_span_score(a: &str, b: &str) -> f64 {
    let (a, b) = (fold(a), fold(b));
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(&a, &b) as f64 / longest as f64
}

/// Whether a translate-train example survives filtering: it is dropped only
/// when both scores fall below their thresholds.
pub fn keep_example(lexical_score: f64, span_score: f64, cfg: &FilterConfig) -> bool {
    !(cfg.enabled && lexical_score < cfg.lexical_threshold && span_score < cfg.span_logprob_threshold)
}

/// [`keep_example`] for a candidate; one without a lexical score is kept.
pub fn filter_example(candidate: &ScoredCandidate, cfg: &FilterConfig) -> bool {
    candidate
        .lexical_score
        .is_none_or(|lex| keep_example(lex, candidate.span_score, cfg))
}
