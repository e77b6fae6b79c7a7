//! Seeded synthetic instance generators with known answers.

use std::ops::RangeInclusive;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scorer::{target_word, PlantedAlignmentScorer, PlantedParams, TableScorer};
use crate::types::{LabeledSpan, Placement, SourceExample, Template, TokenId, Vocabulary};

const LABELS: [&str; 3] = ["PER", "ORG", "LOC"];

#[derive(Debug, Clone)]
pub struct PlantedInstance {
    pub id: String,
    pub example: SourceExample,
    pub template: Template,
    /// Gold placement for each span, in span order.
    pub gold: Vec<Placement>,
    /// Reference translation of each span.
    pub span_translations: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PlantedSuite {
    pub vocab: Vocabulary,
    pub scorer: Arc<PlantedAlignmentScorer>,
    pub instances: Vec<PlantedInstance>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteSpec {
    pub seed: u64,
    pub count: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub max_spans: usize,
    pub max_span_len: usize,
    pub noise: f64,
}

impl SuiteSpec {
    pub fn new(seed: u64, count: usize, lengths: RangeInclusive<usize>, noise: f64) -> Self {
        Self {
            seed,
            count,
            min_len: *lengths.start(),
            max_len: *lengths.end(),
            max_spans: 1,
            max_span_len: 3,
            noise,
        }
    }

    pub fn with_spans(mut self, max_spans: usize) -> Self {
        self.max_spans = max_spans;
        self
    }
}

/// Disjoint spans in increasing order; fewer than requested when the
/// sentence is too short.
fn sample_spans(rng: &mut ChaCha8Rng, n: usize, count: usize, max_len: usize) -> Vec<(usize, usize)> {
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for _ in 0..count * 8 {
        if spans.len() == count {
            break;
        }
        let len = rng.random_range(1..=max_len.min(n).max(1));
        let start = rng.random_range(0..=n - len);
        let end = start + len;
        if spans.iter().all(|&(s, e)| end <= s || e <= start) {
            spans.push((start, end));
        }
    }
    spans.sort_unstable();
    spans
}

/// Planted-alignment instances sharing one scorer. Gold placements equal
/// the source span boundaries because the lexicon aligns word for word.
pub fn build_planted_suite(spec: &SuiteSpec) -> PlantedSuite {
    let mut vocab = Vocabulary::default();
    let params = PlantedParams::new(spec.seed, spec.noise);
    let scorer = PlantedAlignmentScorer::new(&mut vocab, params);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let instances = (0..spec.count)
        .map(|idx| {
            let n = rng.random_range(spec.min_len.max(1)..=spec.max_len.max(spec.min_len).max(1));
            let words: Vec<usize> = (0..n).map(|_| rng.random_range(0..params.lexicon)).collect();
            let tokens: Vec<TokenId> = words.iter().map(|&w| scorer.source_id(w)).collect();
            let m = rng.random_range(1..=spec.max_spans.max(1));
            let bounds = sample_spans(&mut rng, n, m, spec.max_span_len.max(1));
            let spans = bounds
                .iter()
                .map(|&(s, e)| LabeledSpan::new(s, e, LABELS[rng.random_range(0..LABELS.len())]))
                .collect();
            let span_translations = bounds
                .iter()
                .map(|&(s, e)| {
                    words[s..e]
                        .iter()
                        .map(|&w| target_word(w))
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            PlantedInstance {
                id: format!("planted-{}-{idx}", spec.seed),
                template: Template::new(scorer.translate(&tokens)).expect("lexicon words are not reserved"),
                example: SourceExample::new(tokens, spans).expect("sampled spans are disjoint"),
                gold: bounds.iter().map(|&(s, e)| Placement::new(s, e)).collect(),
                span_translations,
            }
        })
        .collect();
    PlantedSuite {
        vocab,
        scorer: Arc::new(scorer),
        instances,
    }
}

/// A random-table instance with one span; there is no gold, only the oracle.
#[derive(Debug, Clone)]
pub struct TableInstance {
    pub id: String,
    pub vocab: Vocabulary,
    pub scorer: TableScorer,
    pub example: SourceExample,
    pub template: Template,
}

pub fn build_table_suite(seed: u64, count: usize, lengths: RangeInclusive<usize>) -> Vec<TableInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vocab = Vocabulary::default();
    let words = vocab.intern_all(&(0..12).map(|i| format!("w{i}")).collect::<Vec<_>>());
    (0..count)
        .map(|idx| {
            let scorer = TableScorer::random(&vocab, rng.random(), rng.random_range(0.5..3.0));
            let src_len = rng.random_range(1..=6);
            let source: Vec<TokenId> = (0..src_len).map(|_| words[rng.random_range(0..words.len())]).collect();
            let (s, e) = sample_spans(&mut rng, src_len, 1, src_len)[0];
            let n = rng.random_range(lengths.clone());
            let template: Vec<TokenId> = (0..n).map(|_| words[rng.random_range(0..words.len())]).collect();
            TableInstance {
                id: format!("table-{seed}-{idx}"),
                vocab: vocab.clone(),
                scorer,
                example: SourceExample::new(source, vec![LabeledSpan::new(s, e, "X")]).expect("single span"),
                template: Template::new(template).expect("plain words"),
            }
        })
        .collect()
}
