//! Ablation harness: runs named search configurations over a suite with
//! known gold placements and reports accuracy and cost.

use anyhow::{bail, Context};
use codec_core::pipeline::{project, LexicalContext, Mode, PipelineConfig, Strategy};
use codec_core::search::BoundMode;
use codec_core::{Placement, Scorer, Vocabulary};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::records::Prepared;

/// Arms in report order.
pub const STANDARD_ARMS: [&str; 10] = [
    "exact",
    "exact+rerank",
    "delta=1",
    "delta=3",
    "delta=1+[",
    "delta=3+[",
    "csbs-2",
    "csbs-4",
    "csbs-8",
    "csbs-16",
];

/// The full method: look-ahead 3, opening-marker pruning and re-ranking.
pub const CODEC_ARM: &str = "delta=3+[";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arm {
    pub name: &'static str,
    pub config: PipelineConfig,
}

/// Resolves an arm name on top of `base` (translate-test defaults plus
/// shared flags such as `k` and the batch size).
pub fn arm(name: &str, base: &PipelineConfig) -> anyhow::Result<Arm> {
    let Some(&name) = STANDARD_ARMS.iter().find(|&&a| a == name) else {
        bail!(
            "unknown bench arm {name:?}; expected one of {}",
            STANDARD_ARMS.join(", ")
        );
    };
    let mut c = *base;
    c.prune.enabled = false;
    c.rerank = true;
    c.strategy = Strategy::Dfs;
    c.search.bound_mode = BoundMode::Heuristic;
    match name {
        "exact" | "exact+rerank" => {
            c.search.bound_mode = BoundMode::Exact;
            c.rerank = name == "exact+rerank";
        }
        "delta=1" | "delta=3" | "delta=1+[" | "delta=3+[" => {
            c.search.delta = if name.starts_with("delta=1") { 1 } else { 3 };
            c.prune.enabled = name.ends_with("+[");
        }
        _ => {
            let beam = name["csbs-".len()..]
                .parse()
                .expect("standard arm names are well formed");
            c.strategy = Strategy::Csbs { beam };
            // plain beam search: its best hypothesis is the answer
            c.rerank = false;
        }
    }
    Ok(Arm { name, config: c })
}

/// Base configuration for bench arms.
pub fn base_config(k: usize, batch_size: usize) -> PipelineConfig {
    let mut c = PipelineConfig::for_mode(Mode::Test);
    c.search.k = k;
    c.search.batch_size = batch_size;
    c
}

#[derive(Debug, Clone)]
pub struct BenchInstance {
    pub prepared: Prepared,
    pub gold: Vec<Placement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub config: String,
    pub examples: usize,
    pub spans: usize,
    pub gold_top1_accuracy: f64,
    pub gold_in_topk_rate: f64,
    pub mean_nodes: f64,
    pub mean_scorer_calls: f64,
    pub mean_wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, config: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.config == config)
    }

    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<14} {:>9} {:>9} {:>11} {:>11} {:>10}\n",
            "config", "top1_acc", "in_topk", "mean_nodes", "mean_calls", "mean_ms"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<14} {:>9.4} {:>9.4} {:>11.2} {:>11.2} {:>10.3}\n",
                r.config, r.gold_top1_accuracy, r.gold_in_topk_rate, r.mean_nodes, r.mean_scorer_calls, r.mean_wall_ms
            ));
        }
        out
    }
}

#[derive(Default)]
struct Tally {
    hits: usize,
    in_topk: usize,
    spans: usize,
    nodes: u64,
    calls: u64,
    wall_ms: f64,
}

pub fn run_arm(
    instances: &[BenchInstance],
    scorer: &dyn Scorer,
    vocab: &Vocabulary,
    arm: &Arm,
) -> anyhow::Result<BenchRow> {
    let per_instance: Vec<Tally> = instances
        .par_iter()
        .map(|inst| {
            let p = &inst.prepared;
            let lexical = p
                .span_translations
                .as_deref()
                .map(|translations| LexicalContext { vocab, translations });
            let result = project(&p.example, &p.template, scorer, &arm.config, lexical)
                .with_context(|| format!("{} on {}", arm.name, p.id))?;
            let mut t = Tally {
                spans: inst.gold.len(),
                nodes: result.diagnostics.nodes_expanded,
                calls: result.diagnostics.scorer_calls,
                wall_ms: result.diagnostics.wall_time.as_secs_f64() * 1e3,
                ..Tally::default()
            };
            for (span, gold) in result.spans.iter().zip(&inst.gold) {
                t.hits += usize::from(span.placement == Some(*gold));
                t.in_topk += usize::from(span.candidates.iter().any(|c| c.placement == *gold));
            }
            Ok(t)
        })
        .collect::<anyhow::Result<_>>()?;
    // summed in input order so the report does not depend on scheduling
    let total = per_instance.into_iter().fold(Tally::default(), |mut acc, t| {
        acc.hits += t.hits;
        acc.in_topk += t.in_topk;
        acc.spans += t.spans;
        acc.nodes += t.nodes;
        acc.calls += t.calls;
        acc.wall_ms += t.wall_ms;
        acc
    });
    let n = instances.len().max(1) as f64;
    let spans = total.spans.max(1) as f64;
    Ok(BenchRow {
        config: arm.name.to_owned(),
        examples: instances.len(),
        spans: total.spans,
        gold_top1_accuracy: total.hits as f64 / spans,
        gold_in_topk_rate: total.in_topk as f64 / spans,
        mean_nodes: total.nodes as f64 / n,
        mean_scorer_calls: total.calls as f64 / n,
        mean_wall_ms: total.wall_ms / n,
    })
}

pub fn run_bench(
    instances: &[BenchInstance],
    scorer: &dyn Scorer,
    vocab: &Vocabulary,
    arms: &[Arm],
) -> anyhow::Result<BenchReport> {
    let rows = arms
        .iter()
        .map(|a| run_arm(instances, scorer, vocab, a))
        .collect::<anyhow::Result<_>>()?;
    Ok(BenchReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arms_resolve() {
        let base = base_config(5, 16);
        for name in STANDARD_ARMS {
            let a = arm(name, &base).unwrap();
            assert!(a.config.validate().is_ok());
        }
        let exact = arm("exact", &base).unwrap().config;
        assert_eq!(exact.search.bound_mode, BoundMode::Exact);
        assert!(!exact.rerank && !exact.prune.enabled);
        let codec = arm(CODEC_ARM, &base).unwrap().config;
        assert_eq!(codec.search.delta, 3);
        assert!(codec.rerank && codec.prune.enabled);
        assert_eq!(
            arm("csbs-8", &base).unwrap().config.strategy,
            Strategy::Csbs { beam: 8 }
        );
        assert!(arm("delta=2", &base).is_err());
    }
}
