//! Property tests for the constrained search over random table scorers.

use codec_core::pruning::OpenGapSet;
use codec_core::search::{brute_force_topk, constrained_dfs, csbs_search, BoundMode, SearchConfig, SearchInput};
use codec_core::types::{insert_markers, LabeledSpan};
use codec_core::{TableScorer, Template, TokenId, Vocabulary};
use proptest::prelude::*;

struct World {
    scorer: TableScorer,
    source: Vec<TokenId>,
    template: Template,
}

fn world(seed: u64, spread: f64, src_len: usize, tpl: &[usize], span: (usize, usize)) -> World {
    let mut vocab = Vocabulary::default();
    let words = vocab.intern_all(&["a", "b", "c", "d", "e", "f"]);
    let scorer = TableScorer::random(&vocab, seed, spread);
    let plain: Vec<TokenId> = (0..src_len).map(|i| words[i % words.len()]).collect();
    let (start, len) = span;
    let start = start % src_len;
    let end = (start + 1 + len % (src_len - start)).min(src_len);
    let source = insert_markers(&plain, &LabeledSpan::new(start, end, "X"))
        .unwrap()
        .tokens;
    let template = Template::new(tpl.iter().map(|&i| words[i]).collect()).unwrap();
    World {
        scorer,
        source,
        template,
    }
}

fn instance() -> impl Strategy<Value = (u64, f64, usize, Vec<usize>, (usize, usize))> {
    (
        any::<u64>(),
        0.2f64..4.0,
        1usize..6,
        prop::collection::vec(0usize..6, 1..9),
        (0usize..6, 0usize..6),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_dfs_equals_brute_force((seed, spread, n, tpl, span) in instance(), k in 1usize..8, b in 1usize..20) {
        let w = world(seed, spread, n, &tpl, span);
        let input = SearchInput { source: &w.source, template: &w.template, scorer: &w.scorer, open_gaps: None };
        let cfg = SearchConfig { k, bound_mode: BoundMode::Exact, batch_size: b, ..SearchConfig::default() };
        let dfs = constrained_dfs(&input, &cfg).unwrap().hypotheses;
        let brute = brute_force_topk(&input, k, false).unwrap();
        prop_assert_eq!(dfs.len(), brute.len());
        for (x, y) in dfs.iter().zip(&brute) {
            prop_assert_eq!(x.placement, y.placement);
            prop_assert!((x.score - y.score).abs() <= 1e-9);
        }
    }

    #[test]
    fn every_hypothesis_reproduces_template((seed, spread, n, tpl, span) in instance(), delta in 0usize..6, gaps in prop::collection::vec(any::<bool>(), 9)) {
        let w = world(seed, spread, n, &tpl, span);
        let len = w.template.len();
        let mut allowed = OpenGapSet::from_gaps(len, (0..len).filter(|&g| gaps[g]));
        if allowed.gaps().is_empty() {
            allowed = OpenGapSet::all(len);
        }
        let input = SearchInput { source: &w.source, template: &w.template, scorer: &w.scorer, open_gaps: Some(&allowed) };
        let cfg = SearchConfig { delta, ..SearchConfig::default() };
        let mut hyps = constrained_dfs(&input, &cfg).unwrap().hypotheses;
        hyps.extend(csbs_search(&input, 3, false).unwrap().hypotheses);
        prop_assert!(!hyps.is_empty());
        for h in &hyps {
            prop_assert!(h.check(&w.template, false).is_ok());
            prop_assert!(allowed.contains(h.placement.open_gap));
        }
    }

    #[test]
    fn batch_size_only_changes_call_count((seed, spread, n, tpl, span) in instance(), delta in 1usize..5, b in 2usize..20) {
        let w = world(seed, spread, n, &tpl, span);
        let input = SearchInput { source: &w.source, template: &w.template, scorer: &w.scorer, open_gaps: None };
        let one = constrained_dfs(&input, &SearchConfig { delta, batch_size: 1, ..SearchConfig::default() }).unwrap();
        let many = constrained_dfs(&input, &SearchConfig { delta, batch_size: b, ..SearchConfig::default() }).unwrap();
        prop_assert_eq!(&one.hypotheses, &many.hypotheses);
        prop_assert_eq!(one.diagnostics.nodes_expanded, many.diagnostics.nodes_expanded);
        prop_assert!(many.diagnostics.scorer_calls <= one.diagnostics.scorer_calls);
    }

    #[test]
    fn clamped_heuristic_is_exact((seed, spread, n, tpl, span) in instance(), k in 1usize..6, extra in 0usize..4) {
        let w = world(seed, spread, n, &tpl, span);
        let input = SearchInput { source: &w.source, template: &w.template, scorer: &w.scorer, open_gaps: None };
        let exact = constrained_dfs(&input, &SearchConfig { k, bound_mode: BoundMode::Exact, ..SearchConfig::default() }).unwrap();
        let delta = w.template.len() + 3 + extra;
        let heur = constrained_dfs(&input, &SearchConfig { k, delta, ..SearchConfig::default() }).unwrap();
        prop_assert_eq!(exact.hypotheses, heur.hypotheses);
    }
}
