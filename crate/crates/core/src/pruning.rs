//! Opening-marker pruning.
//!
//! The template is teacher-forced twice, once conditioned on the marked
//! source and once on the plain source. Tokens whose log-prob moves a lot
//! are the ones the model would rather precede with an opening marker, so
//! only the gaps in front of them stay eligible.

use serde::{Deserialize, Serialize};

use crate::error::{CodecError, Result};
use crate::scorer::{Query, Scorer};
use crate::types::{Template, TokenId, PREFIX};

/// Per-token absolute log-prob differences, `deltas[i]` for content token
/// `i` (0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaProfile {
    pub deltas: Vec<f64>,
}

impl DeltaProfile {
    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub sigma: usize,
    pub enabled: bool,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            alpha1: 0.5,
            alpha2: 0.1,
            sigma: 5,
            enabled: true,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha2.partial_cmp(&self.alpha1) != Some(std::cmp::Ordering::Less) {
            return Err(CodecError::Config(format!(
                "alpha2 ({}) must be below alpha1 ({})",
                self.alpha2, self.alpha1
            )));
        }
        Ok(())
    }
}

/// Gaps where the opening marker may be emitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenGapSet {
    allowed: Vec<bool>,
    pub fallback_used: bool,
}

impl OpenGapSet {
    /// Every gap `0..=n`.
    pub fn all(n: usize) -> Self {
        Self {
            allowed: vec![true; n + 1],
            fallback_used: false,
        }
    }

    pub fn from_gaps(n: usize, gaps: impl IntoIterator<Item = usize>) -> Self {
        let mut allowed = vec![false; n + 1];
        for g in gaps {
            allowed[g] = true;
        }
        Self {
            allowed,
            fallback_used: false,
        }
    }

    pub fn contains(&self, gap: usize) -> bool {
        self.allowed.get(gap).copied().unwrap_or(false)
    }

    /// Template length this set was built for.
    pub fn template_len(&self) -> usize {
        self.allowed.len() - 1
    }

    pub fn gaps(&self) -> Vec<usize> {
        self.allowed
            .iter()
            .enumerate()
            .filter_map(|(g, &ok)| ok.then_some(g))
            .collect()
    }
}

/// Teacher-forced log-prob deltas between marked and plain conditioning.
pub fn compute_deltas(
    scorer: &dyn Scorer,
    template: &Template,
    source_plain: &[TokenId],
    source_marked: &[TokenId],
) -> Result<DeltaProfile> {
    let mut framed = Vec::with_capacity(template.len() + 1);
    framed.push(PREFIX);
    framed.extend_from_slice(template.tokens());
    let queries: Vec<Query<'_>> = (0..template.len())
        .map(|i| Query {
            prefix: &framed[..i + 1],
            candidates: std::slice::from_ref(&framed[i + 1]),
        })
        .collect();
    let marked = scorer.batch_logprobs(source_marked, &queries)?;
    let plain = scorer.batch_logprobs(source_plain, &queries)?;
    Ok(DeltaProfile {
        deltas: marked.iter().zip(&plain).map(|(m, p)| (m[0] - p[0]).abs()).collect(),
    })
}

/// Strong positions (delta above `alpha1`) plus weaker neighbours within
/// `sigma` of a strong one (delta above `alpha2`). Token `i` contributes
/// the gap in front of it. With no strong position every gap is admitted.
pub fn candidate_open_gaps(profile: &DeltaProfile, cfg: &PruneConfig) -> OpenGapSet {
    let n = profile.len();
    if !cfg.enabled {
        return OpenGapSet::all(n);
    }
    let strong: Vec<usize> = (0..n).filter(|&i| profile.deltas[i] > cfg.alpha1).collect();
    if strong.is_empty() {
        return OpenGapSet {
            fallback_used: true,
            ..OpenGapSet::all(n)
        };
    }
    let near = (0..n).filter(|&i| profile.deltas[i] > cfg.alpha2 && strong.iter().any(|&j| i.abs_diff(j) <= cfg.sigma));
    OpenGapSet::from_gaps(n, strong.iter().copied().chain(near))
}
