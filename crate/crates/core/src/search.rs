//! Top-k constrained search over marker placements.
//!
//! Every decoding step offers at most two tokens: the next template token
//! (or end-of-sequence once the template and both markers are out) and the
//! next marker. [`constrained_dfs`] walks this tree depth-first, best
//! candidate first, and only descends into a child whose cumulative
//! log-prob is strictly above the current lower bound. [`brute_force_topk`]
//! scores every placement and is the reference the DFS is tested against;
//! [`csbs_search`] is the beam-search baseline over the same space.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{CodecError, Result};
use crate::pruning::OpenGapSet;
use crate::scorer::{sequence_trace, Query, Scorer};
use crate::types::{
    count_placements, frame, placement_to_sequence, Hypothesis, Placement, Template, TokenId, TokenSeq, CLOSE, EOS,
    OPEN, PREFIX,
};

/// Oracle enumeration refuses templates longer than this.
pub const ORACLE_MAX_LEN: usize = 64;
/// Oracle enumeration refuses spaces larger than this.
pub const ORACLE_MAX_PLACEMENTS: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundMode {
    /// Score of the k-th best complete hypothesis.
    Exact,
    /// The k-th hypothesis' prefix score a few steps ahead of the partial.
    Heuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub k: usize,
    /// Look-ahead for the heuristic bound; `usize::MAX` behaves like the
    /// exact bound.
    pub delta: usize,
    pub bound_mode: BoundMode,
    pub batch_size: usize,
    pub allow_empty_spans: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            k: 5,
            delta: 5,
            bound_mode: BoundMode::Heuristic,
            batch_size: 16,
            allow_empty_spans: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(CodecError::Config("k must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(CodecError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Search counters. Everything except `scorer_calls` and `wall_time` is
/// independent of the batch size.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub nodes_expanded: u64,
    pub scorer_calls: u64,
    pub bound_pruned: u64,
    pub gap_pruned: u64,
    pub completed: u64,
    pub wall_time: Duration,
}

impl Diagnostics {
    pub fn merge(&mut self, other: &Diagnostics) {
        self.nodes_expanded += other.nodes_expanded;
        self.scorer_calls += other.scorer_calls;
        self.bound_pruned += other.bound_pruned;
        self.gap_pruned += other.gap_pruned;
        self.completed += other.completed;
        self.wall_time += other.wall_time;
    }
}

/// One 1-projection problem.
#[derive(Clone, Copy)]
pub struct SearchInput<'a> {
    /// Marked source the scorer conditions on.
    pub source: &'a [TokenId],
    pub template: &'a Template,
    pub scorer: &'a dyn Scorer,
    /// Opening-marker gaps; `None` admits every gap.
    pub open_gaps: Option<&'a OpenGapSet>,
}

impl SearchInput<'_> {
    fn gap_allowed(&self, gap: usize) -> bool {
        self.open_gaps.is_none_or(|g| g.contains(gap))
    }

    fn check(&self) -> Result<()> {
        match self.open_gaps {
            Some(g) if g.template_len() != self.template.len() => Err(CodecError::Config(format!(
                "open-gap set built for length {} used with template of length {}",
                g.template_len(),
                self.template.len()
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Best first.
    pub hypotheses: Vec<Hypothesis>,
    pub diagnostics: Diagnostics,
}

/// Bounded min-heap of complete hypotheses.
///
/// At equal scores the earlier-completed hypothesis is kept.
#[derive(Debug, Clone)]
pub struct TopKHeap {
    k: usize,
    entries: Vec<(Hypothesis, u64)>,
    next_seq: u64,
}

impl TopKHeap {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            entries: Vec::with_capacity(k + 1),
            next_seq: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.k
    }

    fn worst_index(&self) -> Option<usize> {
        (0..self.entries.len()).min_by(|&a, &b| {
            let (ha, sa) = &self.entries[a];
            let (hb, sb) = &self.entries[b];
            ha.score.total_cmp(&hb.score).then(sb.cmp(sa))
        })
    }

    /// Inserts `h`, evicting the worst entry when over capacity.
    pub fn push(&mut self, h: Hypothesis) -> Option<Hypothesis> {
        self.entries.push((h, self.next_seq));
        self.next_seq += 1;
        if self.entries.len() > self.k {
            let worst = self.worst_index().expect("heap is non-empty");
            Some(self.entries.swap_remove(worst).0)
        } else {
            None
        }
    }

    /// The k-th best hypothesis, once `k` are held.
    pub fn kth(&self) -> Option<&Hypothesis> {
        if self.is_full() {
            self.worst_index().map(|i| &self.entries[i].0)
        } else {
            None
        }
    }

    pub fn kth_score(&self) -> f64 {
        self.kth().map_or(f64::NEG_INFINITY, |h| h.score)
    }

    /// Best first; ties in completion order.
    pub fn into_sorted(mut self) -> Vec<Hypothesis> {
        self.entries
            .sort_by(|(ha, sa), (hb, sb)| hb.score.total_cmp(&ha.score).then(sa.cmp(sb)));
        self.entries.into_iter().map(|(h, _)| h).collect()
    }
}

/// Score of the k-th best complete hypothesis, `-inf` until `k` exist.
pub fn exact_bound(heap: &TopKHeap) -> f64 {
    heap.kth_score()
}

/// Trace index used by the heuristic bound for a partial of length `j`:
/// `min(max(j + delta, q), len)`.
pub fn heuristic_index(j: usize, delta: usize, q: usize, len: usize) -> usize {
    j.saturating_add(delta).max(q).min(len)
}

/// Heuristic bound read off a reference trace (`trace[0] == 0`).
pub fn bound_from_trace(trace: &[f64], j: usize, delta: usize, q: usize) -> f64 {
    trace[heuristic_index(j, delta, q, trace.len() - 1)]
}

/// Length-indexed bound: the k-th hypothesis' cumulative score `delta`
/// steps past the partial, never earlier than its own opening marker.
pub fn heuristic_bound(heap: &TopKHeap, j: usize, delta: usize) -> f64 {
    match heap.kth() {
        Some(kth) => bound_from_trace(&kth.trace, j, delta, kth.placement.open_position()),
        None => f64::NEG_INFINITY,
    }
}

/// Decoding state of a partial hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct State {
    emitted: usize,
    open: Option<usize>,
    close: Option<usize>,
    done: bool,
}

impl State {
    const ROOT: State = State {
        emitted: 0,
        open: None,
        close: None,
        done: false,
    };

    fn apply(self, tok: TokenId) -> State {
        let mut next = self;
        match tok {
            OPEN => next.open = Some(self.emitted),
            CLOSE => next.close = Some(self.emitted),
            EOS => next.done = true,
            _ => next.emitted += 1,
        }
        next
    }

    fn placement(&self) -> Placement {
        Placement::new(
            self.open.expect("complete hypotheses are opened"),
            self.close.expect("complete hypotheses are closed"),
        )
    }
}

/// Candidate generation shared by the DFS and the beam baseline.
struct Space<'a> {
    template: &'a [TokenId],
    allow_empty: bool,
    gap_allowed: Vec<bool>,
    /// `open_reachable[g]`: some gap `>= g` can still host the opening marker.
    open_reachable: Vec<bool>,
}

struct Candidates {
    tokens: [TokenId; 2],
    len: usize,
    gap_suppressed: bool,
}

impl Candidates {
    fn as_slice(&self) -> &[TokenId] {
        &self.tokens[..self.len]
    }
}

impl<'a> Space<'a> {
    fn new(input: &SearchInput<'a>, allow_empty: bool) -> Self {
        let template = input.template.tokens();
        let n = template.len();
        let gap_allowed: Vec<bool> = (0..=n).map(|g| input.gap_allowed(g)).collect();
        let mut open_reachable = vec![false; n + 2];
        for g in (0..=n).rev() {
            let usable = gap_allowed[g] && (g < n || allow_empty);
            open_reachable[g] = usable || open_reachable[g + 1];
        }
        Self {
            template,
            allow_empty,
            gap_allowed,
            open_reachable,
        }
    }

    fn candidates(&self, s: State) -> Candidates {
        let n = self.template.len();
        let mut c = Candidates {
            tokens: [0; 2],
            len: 0,
            gap_suppressed: false,
        };
        if s.done {
            return c;
        }
        if s.emitted < n {
            // Skip template tokens that would make an opening marker unreachable.
            if s.open.is_some() || self.open_reachable[s.emitted + 1] {
                c.tokens[c.len] = self.template[s.emitted];
                c.len += 1;
            }
        } else if s.close.is_some() {
            c.tokens[c.len] = EOS;
            c.len += 1;
        }
        match (s.open, s.close) {
            (None, _) if s.emitted < n || self.allow_empty => {
                if self.gap_allowed[s.emitted] {
                    c.tokens[c.len] = OPEN;
                    c.len += 1;
                } else {
                    c.gap_suppressed = true;
                }
            }
            (Some(o), None) if s.emitted > o || self.allow_empty => {
                c.tokens[c.len] = CLOSE;
                c.len += 1;
            }
            _ => {}
        }
        c
    }
}

/// A partial hypothesis awaiting scores for its candidate continuations.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierNode {
    /// Decoded tokens including the leading prefix.
    pub prefix: TokenSeq,
    pub candidates: Vec<TokenId>,
}

/// Scores a frontier, `batch_size` partials per scorer invocation. Returns
/// one row per node and the number of invocations made.
pub fn batched_expand(
    scorer: &dyn Scorer,
    source: &[TokenId],
    frontier: &[FrontierNode],
    batch_size: usize,
) -> Result<(Vec<Vec<f64>>, u64)> {
    let mut rows = Vec::with_capacity(frontier.len());
    let mut calls = 0;
    for chunk in frontier.chunks(batch_size.max(1)) {
        let queries: Vec<Query<'_>> = chunk
            .iter()
            .map(|node| Query {
                prefix: &node.prefix,
                candidates: &node.candidates,
            })
            .collect();
        rows.extend(scorer.batch_logprobs(source, &queries)?);
        calls += 1;
    }
    Ok((rows, calls))
}

struct Dfs<'a> {
    input: SearchInput<'a>,
    cfg: SearchConfig,
    space: Space<'a>,
    heap: TopKHeap,
    diag: Diagnostics,
    tokens: TokenSeq,
    trace: Vec<f64>,
    prefetched: HashMap<TokenSeq, Vec<f64>>,
}

impl<'a> Dfs<'a> {
    fn bound(&self, j: usize) -> f64 {
        match self.cfg.bound_mode {
            BoundMode::Exact => exact_bound(&self.heap),
            BoundMode::Heuristic => heuristic_bound(&self.heap, j, self.cfg.delta),
        }
    }

    /// Scores for the node at `self.tokens`. With batching, one invocation
    /// also covers up to `batch_size - 1` nodes of its subtree, breadth
    /// first; the trajectory is unaffected because scores are pure.
    fn scores(&mut self, state: State, candidates: &[TokenId]) -> Result<Vec<f64>> {
        if let Some(row) = self.prefetched.remove(&self.tokens) {
            return Ok(row);
        }
        let mut batch = vec![(
            FrontierNode {
                prefix: self.tokens.clone(),
                candidates: candidates.to_vec(),
            },
            state,
        )];
        let mut next = 0;
        while batch.len() < self.cfg.batch_size && next < batch.len() {
            let (node, st) = batch[next].clone();
            next += 1;
            for &tok in &node.candidates {
                if batch.len() >= self.cfg.batch_size {
                    break;
                }
                let child = st.apply(tok);
                let cands = self.space.candidates(child);
                if cands.len == 0 {
                    continue;
                }
                let mut prefix = node.prefix.clone();
                prefix.push(tok);
                if self.prefetched.contains_key(&prefix) {
                    continue;
                }
                batch.push((
                    FrontierNode {
                        prefix,
                        candidates: cands.as_slice().to_vec(),
                    },
                    child,
                ));
            }
        }
        let nodes: Vec<FrontierNode> = batch.into_iter().map(|(n, _)| n).collect();
        let (rows, calls) = batched_expand(self.input.scorer, self.input.source, &nodes, nodes.len())?;
        self.diag.scorer_calls += calls;
        let mut rows = rows.into_iter();
        let first = rows.next().expect("batch holds the requested node");
        for (node, row) in nodes.into_iter().skip(1).zip(rows) {
            self.prefetched.insert(node.prefix, row);
        }
        Ok(first)
    }

    fn visit(&mut self, state: State) -> Result<()> {
        if state.done {
            let score = *self.trace.last().expect("trace starts at zero");
            self.diag.completed += 1;
            self.heap.push(Hypothesis {
                tokens: self.tokens.clone(),
                trace: self.trace.clone(),
                placement: state.placement(),
                score,
            });
            return Ok(());
        }
        let cands = self.space.candidates(state);
        if cands.gap_suppressed {
            self.diag.gap_pruned += 1;
        }
        if cands.len == 0 {
            return Ok(());
        }
        self.diag.nodes_expanded += 1;
        let scores = self.scores(state, cands.as_slice())?;
        let mut order: Vec<usize> = (0..cands.len).collect();
        // Stable: on equal scores the template token (index 0) goes first.
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        let base = *self.trace.last().expect("trace starts at zero");
        for idx in order {
            let tok = cands.tokens[idx];
            let logp = base + scores[idx];
            let gamma = self.bound(self.tokens.len());
            if logp > gamma {
                self.tokens.push(tok);
                self.trace.push(logp);
                self.visit(state.apply(tok))?;
                self.tokens.pop();
                self.trace.pop();
            } else {
                self.diag.bound_pruned += 1;
            }
        }
        Ok(())
    }
}

/// Depth-first branch-and-bound for the `k` most probable placements.
///
/// Returns fewer than `k` hypotheses when the constrained space is smaller,
/// and none when it is empty.
pub fn constrained_dfs(input: &SearchInput<'_>, cfg: &SearchConfig) -> Result<SearchOutcome> {
    cfg.validate()?;
    input.check()?;
    let started = Instant::now();
    let mut dfs = Dfs {
        input: *input,
        cfg: *cfg,
        space: Space::new(input, cfg.allow_empty_spans),
        heap: TopKHeap::new(cfg.k),
        diag: Diagnostics::default(),
        tokens: vec![PREFIX],
        trace: vec![0.0],
        prefetched: HashMap::new(),
    };
    dfs.visit(State::ROOT)?;
    let mut diagnostics = dfs.diag;
    diagnostics.wall_time = started.elapsed();
    Ok(SearchOutcome {
        hypotheses: dfs.heap.into_sorted(),
        diagnostics,
    })
}

/// Scores every admissible placement and returns the best `k`, ties broken
/// by placement order.
pub fn brute_force_topk(input: &SearchInput<'_>, k: usize, allow_empty: bool) -> Result<Vec<Hypothesis>> {
    input.check()?;
    let n = input.template.len();
    let size = count_placements(n, 1, allow_empty);
    if n > ORACLE_MAX_LEN {
        return Err(CodecError::Capacity {
            size,
            reason: format!("template length {n} > {ORACLE_MAX_LEN}"),
        });
    }
    if size > ORACLE_MAX_PLACEMENTS {
        return Err(CodecError::Capacity {
            size,
            reason: format!("more than {ORACLE_MAX_PLACEMENTS} placements"),
        });
    }
    let mut all = Vec::new();
    for open in (0..=n).filter(|&g| input.gap_allowed(g)) {
        let first_close = if allow_empty { open } else { open + 1 };
        for close in first_close..=n {
            let placement = Placement::new(open, close);
            let tokens = frame(&placement_to_sequence(input.template, placement)?);
            let trace = sequence_trace(input.scorer, input.source, &tokens)?;
            let score = *trace.last().expect("non-empty trace");
            all.push(Hypothesis {
                tokens,
                trace,
                placement,
                score,
            });
        }
    }
    all.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.placement.cmp(&b.placement)));
    all.truncate(k);
    Ok(all)
}

/// Beam search restricted to the template-plus-marker space. All
/// hypotheses finish at the same length, so the beam advances in lockstep
/// and each step is one scorer invocation.
pub fn csbs_search(input: &SearchInput<'_>, beam_size: usize, allow_empty: bool) -> Result<SearchOutcome> {
    if beam_size == 0 {
        return Err(CodecError::Config("beam size must be at least 1".into()));
    }
    input.check()?;
    let started = Instant::now();
    let space = Space::new(input, allow_empty);
    let mut diag = Diagnostics::default();
    let mut beam = vec![(State::ROOT, vec![PREFIX], vec![0.0f64])];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !beam.is_empty() {
        let mut frontier = Vec::with_capacity(beam.len());
        let mut parents = Vec::with_capacity(beam.len());
        for (i, (state, tokens, _)) in beam.iter().enumerate() {
            let cands = space.candidates(*state);
            if cands.gap_suppressed {
                diag.gap_pruned += 1;
            }
            if cands.len > 0 {
                frontier.push(FrontierNode {
                    prefix: tokens.clone(),
                    candidates: cands.as_slice().to_vec(),
                });
                parents.push(i);
            }
        }
        if frontier.is_empty() {
            break;
        }
        diag.nodes_expanded += frontier.len() as u64;
        let (rows, calls) = batched_expand(input.scorer, input.source, &frontier, frontier.len())?;
        diag.scorer_calls += calls;
        let mut children: Vec<(f64, usize, TokenId)> = Vec::new();
        for ((node, row), &parent) in frontier.iter().zip(&rows).zip(&parents) {
            let base = *beam[parent].2.last().expect("trace starts at zero");
            for (&tok, &lp) in node.candidates.iter().zip(row) {
                children.push((base + lp, parent, tok));
            }
        }
        children.sort_by(|a, b| b.0.total_cmp(&a.0));
        diag.bound_pruned += children.len().saturating_sub(beam_size) as u64;
        children.truncate(beam_size);
        let mut next = Vec::with_capacity(children.len());
        for (logp, parent, tok) in children {
            let (state, tokens, trace) = &beam[parent];
            let state = state.apply(tok);
            let mut tokens = tokens.clone();
            tokens.push(tok);
            let mut trace = trace.clone();
            trace.push(logp);
            if state.done {
                diag.completed += 1;
                finished.push(Hypothesis {
                    tokens,
                    trace,
                    placement: state.placement(),
                    score: logp,
                });
            } else {
                next.push((state, tokens, trace));
            }
        }
        beam = next;
    }
    finished.sort_by(|a, b| b.score.total_cmp(&a.score));
    diag.wall_time = started.elapsed();
    Ok(SearchOutcome {
        hypotheses: finished,
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::{PlantedAlignmentScorer, PlantedParams, TableScorer};
    use crate::types::{insert_markers, LabeledSpan, Vocabulary};

    fn hyp(trace: Vec<f64>, open_gap: usize) -> Hypothesis {
        let score = *trace.last().unwrap();
        Hypothesis {
            tokens: vec![PREFIX; trace.len()],
            trace,
            placement: Placement::new(open_gap, open_gap + 1),
            score,
        }
    }

    #[test]
    fn heap_keeps_best_k_and_reports_kth() {
        let mut h = TopKHeap::new(2);
        assert_eq!(exact_bound(&h), f64::NEG_INFINITY);
        h.push(hyp(vec![0.0, -3.0], 0));
        assert_eq!(exact_bound(&h), f64::NEG_INFINITY);
        h.push(hyp(vec![0.0, -5.0], 1));
        assert_eq!(exact_bound(&h), -5.0);
        let evicted = h.push(hyp(vec![0.0, -4.0], 2)).unwrap();
        assert_eq!(evicted.score, -5.0);
        assert_eq!(exact_bound(&h), -4.0);
        let sorted = h.into_sorted();
        assert_eq!(sorted.iter().map(|x| x.score).collect::<Vec<_>>(), vec![-3.0, -4.0]);
    }

    #[test]
    fn heap_ties_keep_earlier() {
        let mut h = TopKHeap::new(1);
        h.push(hyp(vec![0.0, -2.0], 0));
        let evicted = h.push(hyp(vec![0.0, -2.0], 5)).unwrap();
        assert_eq!(evicted.placement.open_gap, 5);
        assert_eq!(h.kth().unwrap().placement.open_gap, 0);
    }

    #[test]
    fn exact_bound_matches_illustration() {
        let mut h = TopKHeap::new(3);
        for s in [-20.4, -36.7, -31.0] {
            h.push(hyp(vec![0.0, s], 0));
        }
        assert_eq!(exact_bound(&h), -36.7);
    }

    #[test]
    fn heuristic_bound_arithmetic() {
        let trace = [0.0, -1.0, -2.0, -3.0, -4.0];
        assert_eq!(heuristic_index(1, 1, 0, 4), 2);
        assert_eq!(bound_from_trace(&trace, 1, 1, 0), -2.0);
        // delta past the end clamps to the full score
        for j in 1..=4 {
            assert_eq!(bound_from_trace(&trace, j, 3, 0), -4.0);
            assert_eq!(bound_from_trace(&trace, j, usize::MAX, 0), -4.0);
        }
        // a late opening marker holds the bound at its position
        assert_eq!(bound_from_trace(&trace, 1, 1, 3), -3.0);
        assert_eq!(heuristic_index(2, 0, 4, 6), 4);
    }

    #[test]
    fn heuristic_bound_dominates_exact() {
        let mut h = TopKHeap::new(2);
        assert_eq!(heuristic_bound(&h, 1, 1), f64::NEG_INFINITY);
        h.push(hyp(vec![0.0, -0.5, -1.0, -4.0, -4.2], 1));
        h.push(hyp(vec![0.0, -0.1, -2.0, -2.5, -3.0], 0));
        for j in 1..6 {
            for delta in 0..6 {
                assert!(heuristic_bound(&h, j, delta) >= exact_bound(&h));
            }
        }
        // kth is the -4.2 hypothesis, opening marker at position 2
        assert_eq!(heuristic_bound(&h, 1, 0), -1.0);
        assert_eq!(heuristic_bound(&h, 2, 1), -4.0);
    }

    fn random_instance(seed: u64, n: usize) -> (Vocabulary, TableScorer, Template, TokenSeq) {
        let mut v = Vocabulary::default();
        let words: Vec<String> = (0..n.max(2)).map(|i| format!("w{i}")).collect();
        let ids = v.intern_all(&words);
        let scorer = TableScorer::random(&v, seed, 1.5);
        let template = Template::new(ids[..n].to_vec()).unwrap();
        let source = insert_markers(&ids, &LabeledSpan::new(0, 1, "X")).unwrap().tokens;
        (v, scorer, template, source)
    }

    #[test]
    fn dfs_matches_oracle_small() {
        for seed in 0..30 {
            for n in 1..=5 {
                let (_, scorer, template, source) = random_instance(seed, n);
                let input = SearchInput {
                    source: &source,
                    template: &template,
                    scorer: &scorer,
                    open_gaps: None,
                };
                let cfg = SearchConfig {
                    k: 2,
                    bound_mode: BoundMode::Exact,
                    ..SearchConfig::default()
                };
                let got = constrained_dfs(&input, &cfg).unwrap().hypotheses;
                let want = brute_force_topk(&input, 2, false).unwrap();
                assert_eq!(got.len(), want.len());
                for (g, w) in got.iter().zip(&want) {
                    assert_eq!(g.placement, w.placement, "seed {seed} n {n}");
                    assert!((g.score - w.score).abs() < 1e-9);
                    g.check(&template, false).unwrap();
                }
            }
        }
    }

    #[test]
    fn whole_space_when_k_is_large() {
        let (_, scorer, template, source) = random_instance(9, 5);
        let input = SearchInput {
            source: &source,
            template: &template,
            scorer: &scorer,
            open_gaps: None,
        };
        for allow_empty in [false, true] {
            let cfg = SearchConfig {
                k: 100,
                allow_empty_spans: allow_empty,
                ..SearchConfig::default()
            };
            let out = constrained_dfs(&input, &cfg).unwrap();
            assert_eq!(out.hypotheses.len() as u128, count_placements(5, 1, allow_empty));
            let oracle = brute_force_topk(&input, 100, allow_empty).unwrap();
            assert_eq!(oracle.len(), out.hypotheses.len());
        }
    }

    #[test]
    fn empty_template_has_no_solution() {
        let (_, scorer, _, source) = random_instance(1, 2);
        let template = Template::new(vec![]).unwrap();
        let input = SearchInput {
            source: &source,
            template: &template,
            scorer: &scorer,
            open_gaps: None,
        };
        let out = constrained_dfs(&input, &SearchConfig::default()).unwrap();
        assert!(out.hypotheses.is_empty());
        let cfg = SearchConfig {
            allow_empty_spans: true,
            ..SearchConfig::default()
        };
        let out = constrained_dfs(&input, &cfg).unwrap();
        assert_eq!(out.hypotheses.len(), 1);
        assert_eq!(out.hypotheses[0].tokens, vec![PREFIX, OPEN, CLOSE, EOS]);
    }

    #[test]
    fn oracle_respects_gap_restriction_and_guard() {
        let (_, scorer, template, source) = random_instance(4, 5);
        let gaps = OpenGapSet::from_gaps(5, [2]);
        let input = SearchInput {
            source: &source,
            template: &template,
            scorer: &scorer,
            open_gaps: Some(&gaps),
        };
        let all = brute_force_topk(&input, 100, false).unwrap();
        assert_eq!(all.len(), 3);
        assert!(all.iter().all(|h| h.placement.open_gap == 2));
        let dfs = constrained_dfs(
            &input,
            &SearchConfig {
                k: 100,
                ..SearchConfig::default()
            },
        )
        .unwrap();
        assert_eq!(dfs.hypotheses.len(), 3);

        let unrestricted = SearchInput {
            open_gaps: None,
            ..input
        };
        assert_eq!(brute_force_topk(&unrestricted, 1000, false).unwrap().len(), 15);

        let long = Template::new(vec![template.tokens()[0]; 65]).unwrap();
        let too_long = SearchInput {
            template: &long,
            open_gaps: None,
            ..input
        };
        assert!(matches!(
            brute_force_topk(&too_long, 1, false),
            Err(CodecError::Capacity { .. })
        ));
    }

    #[test]
    fn mismatched_gap_set_is_rejected() {
        let (_, scorer, template, source) = random_instance(4, 5);
        let gaps = OpenGapSet::all(3);
        let input = SearchInput {
            source: &source,
            template: &template,
            scorer: &scorer,
            open_gaps: Some(&gaps),
        };
        assert!(constrained_dfs(&input, &SearchConfig::default()).is_err());
    }

    #[test]
    fn equal_scores_at_bound_are_pruned() {
        // Every step has the same log-prob, so every complete hypothesis
        // ties; with k = 1 every later completion is cut at the bound.
        let mut v = Vocabulary::default();
        let ids = v.intern_all(&["a", "b"]);
        let scorer = TableScorer::uniform(&v);
        let template = Template::new(ids.clone()).unwrap();
        let source = vec![OPEN, ids[0], CLOSE];
        let input = SearchInput {
            source: &source,
            template: &template,
            scorer: &scorer,
            open_gaps: None,
        };
        let cfg = SearchConfig {
            k: 1,
            bound_mode: BoundMode::Exact,
            ..SearchConfig::default()
        };
        let out = constrained_dfs(&input, &cfg).unwrap();
        assert_eq!(out.diagnostics.completed, 1);
        // template token first on ties, so the markers go as late as possible
        assert_eq!(out.hypotheses[0].placement, Placement::new(1, 2));
    }

    #[test]
    fn batching_only_changes_call_counts() {
        for seed in 0..20 {
            let (_, scorer, template, source) = random_instance(seed, 7);
            let input = SearchInput {
                source: &source,
                template: &template,
                scorer: &scorer,
                open_gaps: None,
            };
            let one = constrained_dfs(
                &input,
                &SearchConfig {
                    batch_size: 1,
                    delta: 2,
                    ..SearchConfig::default()
                },
            )
            .unwrap();
            let many = constrained_dfs(
                &input,
                &SearchConfig {
                    batch_size: 16,
                    delta: 2,
                    ..SearchConfig::default()
                },
            )
            .unwrap();
            assert_eq!(one.hypotheses, many.hypotheses);
            let strip = |d: &Diagnostics| Diagnostics {
                scorer_calls: 0,
                wall_time: Duration::ZERO,
                ..d.clone()
            };
            assert_eq!(strip(&one.diagnostics), strip(&many.diagnostics));
            assert_eq!(one.diagnostics.scorer_calls, one.diagnostics.nodes_expanded);
            assert!(many.diagnostics.scorer_calls <= one.diagnostics.scorer_calls);
        }
    }

    #[test]
    fn batched_expand_single_call_for_small_frontier() {
        let (_, scorer, template, source) = random_instance(2, 4);
        let frontier: Vec<FrontierNode> = (0..5)
            .map(|i| FrontierNode {
                prefix: [PREFIX]
                    .into_iter()
                    .chain(template.tokens()[..i % 4].iter().copied())
                    .collect(),
                candidates: vec![OPEN, template.tokens()[i % 4]],
            })
            .collect();
        let (rows, calls) = batched_expand(&scorer, &source, &frontier, 16).unwrap();
        assert_eq!(calls, 1);
        assert_eq!(rows.len(), 5);
        let (rows1, calls1) = batched_expand(&scorer, &source, &frontier, 1).unwrap();
        assert_eq!(calls1, 5);
        assert_eq!(rows, rows1);
    }

    #[test]
    fn csbs_exhaustive_beam_equals_oracle() {
        for seed in 0..20 {
            let (_, scorer, template, source) = random_instance(seed, 5);
            let input = SearchInput {
                source: &source,
                template: &template,
                scorer: &scorer,
                open_gaps: None,
            };
            let out = csbs_search(&input, 15, false).unwrap();
            let oracle = brute_force_topk(&input, 15, false).unwrap();
            assert_eq!(out.hypotheses.len(), 15);
            assert_eq!(out.hypotheses[0].placement, oracle[0].placement);
            for h in &out.hypotheses {
                h.check(&template, false).unwrap();
            }
        }
    }

    #[test]
    fn greedy_beam_misses_a_late_payoff() {
        // Template [a]. Opening immediately looks worse than emitting `a`
        // first, but every continuation after `a` is expensive.
        let mut v = Vocabulary::default();
        let a = v.intern("a");
        let mut s = TableScorer::uniform(&v).with_default(-20.0);
        let src = vec![OPEN, a, CLOSE];
        s.insert(&src, &[PREFIX], a, 0.6f64.ln());
        s.insert(&src, &[PREFIX], OPEN, 0.4f64.ln());
        s.insert(&src, &[PREFIX, OPEN], a, 0.9f64.ln());
        s.insert(&src, &[PREFIX, OPEN, a], CLOSE, 0.9f64.ln());
        s.insert(&src, &[PREFIX, OPEN, a, CLOSE], EOS, 0.9f64.ln());
        let template = Template::new(vec![a]).unwrap();
        let input = SearchInput {
            source: &src,
            template: &template,
            scorer: &s,
            open_gaps: None,
        };
        // With empty spans allowed, `a` first leads to `[ ]` at the end.
        let greedy = csbs_search(&input, 1, true).unwrap();
        let oracle = brute_force_topk(&input, 1, true).unwrap();
        assert_eq!(oracle[0].placement, Placement::new(0, 1));
        assert_ne!(greedy.hypotheses[0].placement, oracle[0].placement);
        let wide = csbs_search(&input, 2, true).unwrap();
        assert_eq!(wide.hypotheses[0].placement, oracle[0].placement);
    }

    #[test]
    fn planted_gold_is_top1() {
        let mut v = Vocabulary::default();
        let s = PlantedAlignmentScorer::new(&mut v, PlantedParams::new(1, 0.0));
        let src: Vec<TokenId> = (0..8).map(|i| s.source_id(i)).collect();
        let template = Template::new(s.translate(&src)).unwrap();
        for (start, end) in [(0, 1), (2, 5), (7, 8), (0, 8)] {
            let marked = insert_markers(&src, &LabeledSpan::new(start, end, "X")).unwrap();
            let input = SearchInput {
                source: &marked.tokens,
                template: &template,
                scorer: &s,
                open_gaps: None,
            };
            let oracle = brute_force_topk(&input, 1, false).unwrap();
            assert_eq!(oracle[0].placement, Placement::new(start, end));
            for delta in [1, 3, 5] {
                let out = constrained_dfs(
                    &input,
                    &SearchConfig {
                        delta,
                        ..SearchConfig::default()
                    },
                )
                .unwrap();
                assert_eq!(out.hypotheses[0].placement, Placement::new(start, end));
            }
        }
    }
}
