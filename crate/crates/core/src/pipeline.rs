//! End-to-end projection of a multi-span example.
//!
//! An example with `m` spans becomes `m` single-span problems. Each one is
//! pruned, searched and re-ranked independently; the winners are then
//! recombined and inherit their labels positionally.

use serde::{Deserialize, Serialize};

use crate::error::{CodecError, Result};
use crate::pruning::{candidate_open_gaps, compute_deltas, PruneConfig};
use crate::rerank::{
    filter_example, lexical_span_score, rerank_with, span_score, FilterConfig, ScoredCandidate, SpanMatch,
};
use crate::scorer::{CountingScorer, Scorer};
use crate::search::{brute_force_topk, constrained_dfs, csbs_search, Diagnostics, SearchConfig, SearchInput};
use crate::types::{insert_markers, MarkedSource, Placement, SourceExample, Template, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapPolicy {
    /// Remove the whole example.
    DropExample,
    /// Keep spans in descending hypothesis score, dropping conflicts.
    GreedyByScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Branch-and-bound DFS with the configured bound.
    Dfs,
    /// Constrained-space beam search.
    Csbs { beam: usize },
    /// Exhaustive enumeration.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub strategy: Strategy,
    pub search: SearchConfig,
    pub prune: PruneConfig,
    pub filter: FilterConfig,
    pub rerank: bool,
    pub span_match: SpanMatch,
    pub overlap_policy: OverlapPolicy,
}

impl PipelineConfig {
    /// Defaults for `mode`: look-ahead 1, whole-example overlap removal and
    /// lexical filtering for translate-train; look-ahead 5, greedy overlap
    /// resolution and no filtering for translate-test.
    pub fn for_mode(mode: Mode) -> Self {
        let train = mode == Mode::Train;
        Self {
            mode,
            strategy: Strategy::Dfs,
            search: SearchConfig {
                delta: if train { 1 } else { 5 },
                ..SearchConfig::default()
            },
            prune: PruneConfig::default(),
            filter: FilterConfig {
                enabled: train,
                ..FilterConfig::default()
            },
            rerank: true,
            span_match: SpanMatch::Contiguous,
            overlap_policy: if train {
                OverlapPolicy::DropExample
            } else {
                OverlapPolicy::GreedyByScore
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.search.validate()?;
        self.prune.validate()?;
        if !(0.0..=1.0).contains(&self.filter.lexical_threshold) {
            return Err(CodecError::Config(format!(
                "lexical threshold {} outside [0, 1]",
                self.filter.lexical_threshold
            )));
        }
        if let Strategy::Csbs { beam: 0 } = self.strategy {
            return Err(CodecError::Config("beam size must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::for_mode(Mode::Test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Partial,
    DroppedOverlap,
    DroppedFilter,
    DroppedUnprojected,
}

impl Status {
    pub fn is_dropped(self) -> bool {
        matches!(
            self,
            Status::DroppedOverlap | Status::DroppedFilter | Status::DroppedUnprojected
        )
    }
}

/// One searched hypothesis of a sub-problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedPlacement {
    pub placement: Placement,
    pub hyp_score: f64,
    pub span_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSpan {
    pub label: String,
    /// `None` when the span could not be projected.
    pub placement: Option<Placement>,
    pub hyp_score: Option<f64>,
    pub span_score: Option<f64>,
    pub lexical_score: Option<f64>,
    /// The sub-problem's top-k, best hypothesis score first.
    pub candidates: Vec<RankedPlacement>,
}

impl ProjectedSpan {
    fn unprojected(label: &str, candidates: Vec<RankedPlacement>) -> Self {
        Self {
            label: label.to_owned(),
            placement: None,
            hyp_score: None,
            span_score: None,
            lexical_score: None,
            candidates,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub spans: Vec<ProjectedSpan>,
    pub status: Status,
    pub diagnostics: Diagnostics,
}

/// Independent span translations used for lexical filtering.
#[derive(Debug, Clone, Copy)]
pub struct LexicalContext<'a> {
    pub vocab: &'a Vocabulary,
    /// One surface string per source span.
    pub translations: &'a [String],
}

/// One marked copy of the source per labeled span, in span order.
pub fn decompose(example: &SourceExample) -> Result<Vec<MarkedSource>> {
    example.validate()?;
    example
        .spans
        .iter()
        .map(|span| insert_markers(&example.tokens, span))
        .collect()
}

/// Resolves overlaps between independently projected spans.
pub fn recombine(spans: Vec<ProjectedSpan>, policy: OverlapPolicy) -> (Vec<ProjectedSpan>, Status) {
    let any_missing = spans.iter().any(|s| s.placement.is_none());
    match policy {
        OverlapPolicy::DropExample => {
            if any_missing {
                return (Vec::new(), Status::DroppedUnprojected);
            }
            let placed: Vec<Placement> = spans.iter().filter_map(|s| s.placement).collect();
            let overlap = placed
                .iter()
                .enumerate()
                .any(|(i, a)| placed[i + 1..].iter().any(|b| a.overlaps(b)));
            if overlap {
                (Vec::new(), Status::DroppedOverlap)
            } else {
                (spans, Status::Ok)
            }
        }
        OverlapPolicy::GreedyByScore => {
            let mut order: Vec<usize> = (0..spans.len()).filter(|&i| spans[i].placement.is_some()).collect();
            order.sort_by(|&a, &b| {
                let (sa, sb) = (
                    spans[a].hyp_score.unwrap_or(f64::NEG_INFINITY),
                    spans[b].hyp_score.unwrap_or(f64::NEG_INFINITY),
                );
                sb.total_cmp(&sa)
            });
            let mut kept: Vec<Placement> = Vec::new();
            let mut spans = spans;
            let mut dropped = false;
            for i in order {
                let p = spans[i].placement.expect("filtered to placed spans");
                if kept.iter().any(|k| k.overlaps(&p)) {
                    let candidates = std::mem::take(&mut spans[i].candidates);
                    spans[i] = ProjectedSpan::unprojected(&spans[i].label, candidates);
                    dropped = true;
                } else {
                    kept.push(p);
                }
            }
            let status = if dropped || any_missing {
                Status::Partial
            } else {
                Status::Ok
            };
            (spans, status)
        }
    }
}

/// Prunes, searches and re-ranks one marked source.
fn project_span(
    example: &SourceExample,
    span_index: usize,
    marked: &MarkedSource,
    template: &Template,
    scorer: &dyn Scorer,
    cfg: &PipelineConfig,
    lexical: Option<LexicalContext<'_>>,
) -> Result<(ProjectedSpan, Diagnostics)> {
    let counting = CountingScorer::new(scorer);
    let span = &example.spans[span_index];
    let gaps = if cfg.prune.enabled && !template.is_empty() {
        let deltas = compute_deltas(&counting, template, &example.tokens, &marked.tokens)?;
        Some(candidate_open_gaps(&deltas, &cfg.prune))
    } else {
        None
    };
    let input = SearchInput {
        source: &marked.tokens,
        template,
        scorer: &counting,
        open_gaps: gaps.as_ref(),
    };
    let allow_empty = cfg.search.allow_empty_spans;
    let (hypotheses, mut diag) = match cfg.strategy {
        Strategy::Dfs => {
            let out = constrained_dfs(&input, &cfg.search)?;
            (out.hypotheses, out.diagnostics)
        }
        Strategy::Csbs { beam } => {
            let mut out = csbs_search(&input, beam, allow_empty)?;
            out.hypotheses.truncate(cfg.search.k);
            (out.hypotheses, out.diagnostics)
        }
        Strategy::Oracle => (
            brute_force_topk(&input, cfg.search.k, allow_empty)?,
            Diagnostics::default(),
        ),
    };
    // Search counted its own invocations; keep only the pruning and
    // span-scoring ones from the wrapper.
    let search_calls = diag.scorer_calls;

    let e_src = &example.tokens[span.start..span.end];
    let mut scored = Vec::with_capacity(hypotheses.len());
    for h in hypotheses {
        let s = span_score(&counting, e_src, h.span_tokens())?;
        let mut c = ScoredCandidate::new(h, s);
        if let Some(lex) = lexical {
            if let Some(translation) = lex.translations.get(span_index) {
                let projected = lex.vocab.surfaces(&c.span_tokens)?.join(" ");
                c.lexical_score = Some(lexical_span_score(translation, &projected));
            }
        }
        scored.push(c);
    }
    diag.scorer_calls = counting.calls();
    if matches!(cfg.strategy, Strategy::Oracle) {
        diag.completed = scored.len() as u64;
    } else {
        debug_assert!(search_calls <= diag.scorer_calls);
    }

    let candidates: Vec<RankedPlacement> = scored
        .iter()
        .map(|c| RankedPlacement {
            placement: c.hypothesis.placement,
            hyp_score: c.hyp_score,
            span_score: c.span_score,
        })
        .collect();
    let winner = if cfg.rerank {
        rerank_with(&scored, cfg.span_match)
    } else {
        (!scored.is_empty()).then_some(0)
    };
    let projected = match winner {
        Some(i) => {
            let w = &scored[i];
            ProjectedSpan {
                label: span.label.clone(),
                placement: Some(w.hypothesis.placement),
                hyp_score: Some(w.hyp_score),
                span_score: Some(w.span_score),
                lexical_score: w.lexical_score,
                candidates,
            }
        }
        None => ProjectedSpan::unprojected(&span.label, candidates),
    };
    Ok((projected, diag))
}

/// Projects every labeled span of `example` into `template`.
pub fn project(
    example: &SourceExample,
    template: &Template,
    scorer: &dyn Scorer,
    cfg: &PipelineConfig,
    lexical: Option<LexicalContext<'_>>,
) -> Result<ProjectionResult> {
    cfg.validate()?;
    let started = std::time::Instant::now();
    let marked = decompose(example)?;
    let mut diagnostics = Diagnostics::default();
    let mut spans = Vec::with_capacity(marked.len());
    let mut filtered = false;
    for (i, m) in marked.iter().enumerate() {
        let (span, diag) = project_span(example, i, m, template, scorer, cfg, lexical)?;
        diagnostics.merge(&diag);
        if let (Mode::Train, Some(placement)) = (cfg.mode, span.placement) {
            let winner = ScoredCandidate {
                hypothesis: crate::types::Hypothesis {
                    tokens: Vec::new(),
                    trace: Vec::new(),
                    placement,
                    score: span.hyp_score.unwrap_or(f64::NEG_INFINITY),
                },
                hyp_score: span.hyp_score.unwrap_or(f64::NEG_INFINITY),
                span_tokens: Vec::new(),
                span_score: span.span_score.unwrap_or(f64::NEG_INFINITY),
                lexical_score: span.lexical_score,
            };
            filtered |= !filter_example(&winner, &cfg.filter);
        }
        spans.push(span);
    }
    // Whole-projection time, including pruning and span scoring.
    diagnostics.wall_time = started.elapsed();
    if filtered {
        return Ok(ProjectionResult {
            spans: Vec::new(),
            status: Status::DroppedFilter,
            diagnostics,
        });
    }
    let (spans, status) = recombine(spans, cfg.overlap_policy);
    Ok(ProjectionResult {
        spans,
        status,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::{PlantedAlignmentScorer, PlantedParams, TableScorer};
    use crate::search::BoundMode;
    use crate::types::{LabeledSpan, TokenId};

    fn placed(label: &str, o: usize, c: usize, score: f64) -> ProjectedSpan {
        ProjectedSpan {
            label: label.into(),
            placement: Some(Placement::new(o, c)),
            hyp_score: Some(score),
            span_score: Some(-1.0),
            lexical_score: None,
            candidates: vec![],
        }
    }

    #[test]
    fn decompose_examples() {
        let ex = SourceExample {
            tokens: vec![10, 11, 12, 13],
            spans: vec![],
        };
        assert!(decompose(&ex).unwrap().is_empty());
        let ex = SourceExample {
            tokens: vec![10, 11, 12, 13],
            spans: vec![LabeledSpan::new(0, 1, "PER"), LabeledSpan::new(2, 4, "LOC")],
        };
        let parts = decompose(&ex).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].tokens, vec![0, 10, 1, 11, 12, 13]);
        assert_eq!(parts[1].tokens, vec![10, 11, 0, 12, 13, 1]);
        assert_eq!(parts[1].span_label, "LOC");
        let nested = SourceExample {
            tokens: vec![10, 11, 12, 13],
            spans: vec![LabeledSpan::new(0, 3, "PER"), LabeledSpan::new(1, 2, "LOC")],
        };
        assert!(matches!(decompose(&nested), Err(CodecError::Validation(_))));
    }

    #[test]
    fn recombine_policies() {
        let disjoint = vec![placed("A", 0, 2, -1.0), placed("B", 2, 3, -2.0)];
        let (spans, status) = recombine(disjoint.clone(), OverlapPolicy::DropExample);
        assert_eq!(status, Status::Ok);
        assert_eq!(spans.len(), 2);

        let clash = vec![placed("A", 0, 2, -5.0), placed("B", 1, 3, -2.0)];
        let (spans, status) = recombine(clash.clone(), OverlapPolicy::DropExample);
        assert_eq!(status, Status::DroppedOverlap);
        assert!(spans.is_empty());

        let (spans, status) = recombine(clash, OverlapPolicy::GreedyByScore);
        assert_eq!(status, Status::Partial);
        assert_eq!(spans[0].placement, None);
        assert_eq!(spans[1].placement, Some(Placement::new(1, 3)));

        let (_, status) = recombine(disjoint, OverlapPolicy::GreedyByScore);
        assert_eq!(status, Status::Ok);
    }

    #[test]
    fn recombine_unprojected() {
        let spans = vec![placed("A", 0, 2, -1.0), ProjectedSpan::unprojected("B", vec![])];
        assert_eq!(
            recombine(spans.clone(), OverlapPolicy::GreedyByScore).1,
            Status::Partial
        );
        assert_eq!(
            recombine(spans, OverlapPolicy::DropExample).1,
            Status::DroppedUnprojected
        );
    }

    fn planted() -> (Vocabulary, PlantedAlignmentScorer) {
        let mut v = Vocabulary::default();
        let s = PlantedAlignmentScorer::new(&mut v, PlantedParams::new(21, 0.0));
        (v, s)
    }

    #[test]
    fn no_spans_costs_nothing() {
        let (_, s) = planted();
        let ex = SourceExample::new(vec![s.source_id(1), s.source_id(2)], vec![]).unwrap();
        let t = Template::new(s.translate(&ex.tokens)).unwrap();
        let out = project(&ex, &t, &s, &PipelineConfig::default(), None).unwrap();
        assert_eq!(out.status, Status::Ok);
        assert!(out.spans.is_empty());
        assert_eq!(out.diagnostics.scorer_calls, 0);
    }

    #[test]
    fn recovers_two_gold_spans() {
        let (v, s) = planted();
        let src: Vec<TokenId> = [3, 7, 1, 9, 4, 4, 2, 8].iter().map(|&i| s.source_id(i)).collect();
        let spans = vec![LabeledSpan::new(1, 3, "PER"), LabeledSpan::new(5, 6, "LOC")];
        let ex = SourceExample::new(src.clone(), spans).unwrap();
        let t = Template::new(s.translate(&src)).unwrap();
        for mode in [Mode::Train, Mode::Test] {
            let cfg = PipelineConfig::for_mode(mode);
            let translations: Vec<String> = ["t7 t1", "t4"].iter().map(|x| x.to_string()).collect();
            let lex = LexicalContext {
                vocab: &v,
                translations: &translations,
            };
            let out = project(&ex, &t, &s, &cfg, Some(lex)).unwrap();
            assert_eq!(out.status, Status::Ok);
            assert_eq!(out.spans[0].placement, Some(Placement::new(1, 3)));
            assert_eq!(out.spans[1].placement, Some(Placement::new(5, 6)));
            assert_eq!(out.spans[0].label, "PER");
            assert_eq!(out.spans[0].lexical_score, Some(1.0));
            assert!(out.diagnostics.scorer_calls > 0);
        }
    }

    #[test]
    fn pruning_keeps_answers_and_saves_nodes() {
        let (_, s) = planted();
        let src: Vec<TokenId> = (0..14).map(|i| s.source_id(i)).collect();
        let t = Template::new(s.translate(&src)).unwrap();
        for start in [0, 4, 9] {
            let ex = SourceExample::new(src.clone(), vec![LabeledSpan::new(start, start + 2, "X")]).unwrap();
            let mut cfg = PipelineConfig::default();
            cfg.search.delta = 3;
            let pruned = project(&ex, &t, &s, &cfg, None).unwrap();
            cfg.prune.enabled = false;
            let full = project(&ex, &t, &s, &cfg, None).unwrap();
            assert_eq!(pruned.spans[0].placement, full.spans[0].placement);
            assert!(pruned.diagnostics.nodes_expanded < full.diagnostics.nodes_expanded);
        }
    }

    #[test]
    fn strategies_agree_without_noise() {
        let (_, s) = planted();
        let src: Vec<TokenId> = (0..6).map(|i| s.source_id(i)).collect();
        let ex = SourceExample::new(src.clone(), vec![LabeledSpan::new(2, 4, "X")]).unwrap();
        let t = Template::new(s.translate(&src)).unwrap();
        for strategy in [Strategy::Dfs, Strategy::Csbs { beam: 4 }, Strategy::Oracle] {
            let cfg = PipelineConfig {
                strategy,
                ..PipelineConfig::default()
            };
            let out = project(&ex, &t, &s, &cfg, None).unwrap();
            assert_eq!(out.spans[0].placement, Some(Placement::new(2, 4)), "{strategy:?}");
        }
    }

    #[test]
    fn filter_drops_train_example() {
        let (v, s) = planted();
        let src: Vec<TokenId> = (0..4).map(|i| s.source_id(i)).collect();
        let ex = SourceExample::new(src.clone(), vec![LabeledSpan::new(1, 2, "X")]).unwrap();
        let t = Template::new(s.translate(&src)).unwrap();
        let mut cfg = PipelineConfig::for_mode(Mode::Train);
        // gold span scores well, so only an impossible threshold drops it
        cfg.filter.span_logprob_threshold = 0.0;
        let translations = vec!["zzzz".to_string()];
        let lex = LexicalContext {
            vocab: &v,
            translations: &translations,
        };
        let out = project(&ex, &t, &s, &cfg, Some(lex)).unwrap();
        assert_eq!(out.status, Status::DroppedFilter);
        cfg.filter.enabled = false;
        assert_eq!(project(&ex, &t, &s, &cfg, Some(lex)).unwrap().status, Status::Ok);
    }

    #[test]
    fn empty_search_marks_span_unprojected() {
        let mut v = Vocabulary::default();
        let ids = v.intern_all(&["a"]);
        let s = TableScorer::random(&v, 1, 1.0);
        let ex = SourceExample::new(ids.clone(), vec![LabeledSpan::new(0, 1, "X")]).unwrap();
        let empty = Template::new(vec![]).unwrap();
        let out = project(&ex, &empty, &s, &PipelineConfig::default(), None).unwrap();
        assert_eq!(out.status, Status::Partial);
        assert_eq!(out.spans[0].placement, None);
        let train = PipelineConfig::for_mode(Mode::Train);
        assert_eq!(
            project(&ex, &empty, &s, &train, None).unwrap().status,
            Status::DroppedUnprojected
        );
    }

    #[test]
    fn rerank_off_returns_top_hypothesis() {
        let mut v = Vocabulary::default();
        let ids = v.intern_all(&["a", "b", "c", "d"]);
        let s = TableScorer::random(&v, 5, 2.0);
        let ex = SourceExample::new(ids.clone(), vec![LabeledSpan::new(1, 3, "X")]).unwrap();
        let t = Template::new(ids.clone()).unwrap();
        let mut cfg = PipelineConfig {
            rerank: false,
            ..PipelineConfig::default()
        };
        cfg.search.bound_mode = BoundMode::Exact;
        let out = project(&ex, &t, &s, &cfg, None).unwrap();
        let best = out.spans[0].candidates[0];
        assert_eq!(out.spans[0].placement, Some(best.placement));
        assert!(out.spans[0]
            .candidates
            .windows(2)
            .all(|w| w[0].hyp_score >= w[1].hyp_score));
    }
}
