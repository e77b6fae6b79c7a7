//! JSONL record schemas and their conversion to engine types.

use codec_core::pipeline::{ProjectionResult, Status};
use codec_core::{CodecError, LabeledSpan, Placement, SourceExample, Template, Vocabulary};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

/// One input line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleRecord {
    pub id: String,
    pub source_tokens: Vec<String>,
    pub spans: Vec<SpanRecord>,
    pub template_tokens: Vec<String>,
    /// Independent translation of each span, for lexical filtering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span_translations: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub open_gap: usize,
    pub close_gap: usize,
    pub hyp_score: f64,
    /// `null` for an empty span, which has no reverse score.
    pub span_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedSpanRecord {
    pub open_gap: Option<usize>,
    pub close_gap: Option<usize>,
    pub label: String,
    pub hyp_score: Option<f64>,
    pub span_score: Option<f64>,
    pub lexical_score: Option<f64>,
    pub candidates: Vec<CandidateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub nodes_expanded: u64,
    pub scorer_calls: u64,
    pub bound_pruned: u64,
    pub gap_pruned: u64,
    /// `null` unless timing was requested, so output stays reproducible.
    pub wall_ms: Option<f64>,
}

/// One output line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub id: String,
    pub config: String,
    pub status: Status,
    pub projected_spans: Vec<ProjectedSpanRecord>,
    pub diagnostics: DiagnosticsRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapPair {
    pub open_gap: usize,
    pub close_gap: usize,
}

impl From<Placement> for GapPair {
    fn from(p: Placement) -> Self {
        Self {
            open_gap: p.open_gap,
            close_gap: p.close_gap,
        }
    }
}

impl From<GapPair> for Placement {
    fn from(g: GapPair) -> Self {
        Placement::new(g.open_gap, g.close_gap)
    }
}

/// Sidecar line with the gold placements of one generated example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub id: String,
    pub gold: Vec<GapPair>,
}

/// Parsed, validated example ready for the engine.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub example: SourceExample,
    pub template: Template,
    pub span_translations: Option<Vec<String>>,
}

impl ExampleRecord {
    /// Interns surfaces into `vocab` and validates the record.
    pub fn prepare(&self, vocab: &mut Vocabulary) -> Result<Prepared, CodecError> {
        let source = vocab.intern_all(&self.source_tokens);
        let template = vocab.intern_all(&self.template_tokens);
        let spans = self
            .spans
            .iter()
            .map(|s| LabeledSpan::new(s.start, s.end, s.label.clone()))
            .collect::<Vec<_>>();
        if !spans.is_empty() && template.is_empty() {
            return Err(CodecError::Validation("empty template for a record with spans".into()));
        }
        if let Some(t) = &self.span_translations {
            if t.len() != spans.len() {
                return Err(CodecError::Validation(format!(
                    "{} span translations for {} spans",
                    t.len(),
                    spans.len()
                )));
            }
        }
        Ok(Prepared {
            id: self.id.clone(),
            example: SourceExample::new(source, spans)?,
            template: Template::new(template)?,
            span_translations: self.span_translations.clone(),
        })
    }
}

impl ResultRecord {
    pub fn from_projection(id: &str, config: &str, result: &ProjectionResult, timing: bool) -> Self {
        let d = &result.diagnostics;
        Self {
            id: id.to_owned(),
            config: config.to_owned(),
            status: result.status,
            projected_spans: result
                .spans
                .iter()
                .map(|s| ProjectedSpanRecord {
                    open_gap: s.placement.map(|p| p.open_gap),
                    close_gap: s.placement.map(|p| p.close_gap),
                    label: s.label.clone(),
                    hyp_score: s.hyp_score,
                    span_score: s.span_score.filter(|x| x.is_finite()),
                    lexical_score: s.lexical_score,
                    candidates: s
                        .candidates
                        .iter()
                        .map(|c| CandidateRecord {
                            open_gap: c.placement.open_gap,
                            close_gap: c.placement.close_gap,
                            hyp_score: c.hyp_score,
                            span_score: c.span_score.is_finite().then_some(c.span_score),
                        })
                        .collect(),
                })
                .collect(),
            diagnostics: DiagnosticsRecord {
                nodes_expanded: d.nodes_expanded,
                scorer_calls: d.scorer_calls,
                bound_pruned: d.bound_pruned,
                gap_pruned: d.gap_pruned,
                wall_ms: timing.then_some(d.wall_time.as_secs_f64() * 1e3),
            },
        }
    }

    pub fn placements(&self) -> Vec<Option<Placement>> {
        self.projected_spans
            .iter()
            .map(|s| match (s.open_gap, s.close_gap) {
                (Some(o), Some(c)) => Some(Placement::new(o, c)),
                _ => None,
            })
            .collect()
    }
}
