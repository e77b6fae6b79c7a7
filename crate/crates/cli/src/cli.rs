//! Argument parsing and subcommands.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use codec_core::pipeline::{project, LexicalContext, Mode, PipelineConfig, Strategy};
use codec_core::pruning::PruneConfig;
use codec_core::search::BoundMode;
use codec_core::suite::{build_planted_suite, SuiteSpec};
use codec_core::{Placement, Scorer, Vocabulary};
use rayon::prelude::*;

use crate::bench::{self, BenchInstance, STANDARD_ARMS};
use crate::records::{ExampleRecord, GapPair, GoldRecord, Prepared, ResultRecord, SpanRecord};
use crate::scorers::ScorerSpec;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_BAD_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "codec", version, about = "Constrained decoding for label projection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Project the spans of every input record into its template.
    Project(ProjectArgs),
    /// Brute-force top-k over every placement (small inputs only).
    Oracle(EngineArgs),
    /// Generate a planted suite and its gold sidecar.
    Gen(GenArgs),
    /// Run the ablation arms over a generated suite.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Train,
    Test,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Train => Mode::Train,
            ModeArg::Test => Mode::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SearchArg {
    /// Branch-and-bound with the length-indexed bound.
    Codec,
    /// Branch-and-bound with the exact bound.
    Exact,
    /// Constrained-space beam search.
    Csbs,
    /// Exhaustive enumeration.
    Oracle,
}

#[derive(Debug, Clone, Args)]
pub struct IoArgs {
    /// Input JSONL (default: stdin).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output JSONL (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ScorerArgs {
    /// table:<path> | planted[:<seed>[:<noise>]] | bridge[:<url>]
    #[arg(long)]
    pub scorer: String,
    /// Bridge base URL; falls back to CODEC_BRIDGE_URL.
    #[arg(long)]
    pub bridge_url: Option<String>,
    /// Seed for `planted` when the scorer spec carries none.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; output order never depends on it.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    #[command(flatten)]
    pub io: IoArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    /// train: look-ahead 1, drop overlapping or filtered examples.
    /// test: look-ahead 5, resolve overlaps greedily.
    #[arg(long, value_enum, default_value_t = ModeArg::Test)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Heuristic-bound look-ahead (default: 1 in train mode, 5 in test mode).
    #[arg(long)]
    pub delta: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha1: f64,
    #[arg(long, default_value_t = 0.1)]
    pub alpha2: f64,
    #[arg(long, default_value_t = 5)]
    pub sigma: usize,
    /// Partial hypotheses scored per scorer invocation.
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long)]
    pub no_prune: bool,
    #[arg(long)]
    pub no_rerank: bool,
    /// Disable lexical filtering (train mode only filters).
    #[arg(long)]
    pub no_filter: bool,
    #[arg(long)]
    pub allow_empty_spans: bool,
    #[arg(long, default_value_t = 0.5)]
    pub lex_threshold: f64,
    #[arg(long, default_value_t = -5.0, allow_hyphen_values = true)]
    pub span_threshold: f64,
    /// Report wall time in diagnostics (makes output non-reproducible).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ProjectArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, value_enum, default_value_t = SearchArg::Codec)]
    pub search: SearchArg,
    /// Beam size for --search csbs.
    #[arg(long, default_value_t = 16)]
    pub beam: usize,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 3)]
    pub min_len: usize,
    #[arg(long, default_value_t = 12)]
    pub max_len: usize,
    /// Logit noise of the planted scorer the suite is meant for.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 1)]
    pub max_spans: usize,
    #[arg(long, default_value_t = 3)]
    pub max_span_len: usize,
    /// Suite JSONL (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Gold sidecar JSONL.
    #[arg(long)]
    pub gold: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Suite JSONL.
    #[arg(long)]
    pub input: PathBuf,
    /// Gold sidecar from `gen`.
    #[arg(long)]
    pub gold: PathBuf,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    /// Comma-separated arms (default: all).
    #[arg(long, value_delimiter = ',')]
    pub arms: Vec<String>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Machine-readable report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FATAL } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Project(a) => cmd_project(&a.engine, a.search, a.beam),
        Command::Oracle(a) => cmd_project(&a, SearchArg::Oracle, 1),
        Command::Gen(a) => cmd_gen(&a).map(|_| EXIT_OK),
        Command::Bench(a) => cmd_bench(&a).map(|_| EXIT_OK),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FATAL
        }
    }
}

fn config_name(search: SearchArg) -> &'static str {
    match search {
        SearchArg::Codec => "codec",
        SearchArg::Exact => "exact",
        SearchArg::Csbs => "csbs",
        SearchArg::Oracle => "oracle",
    }
}

pub fn pipeline_config(e: &EngineArgs, search: SearchArg, beam: usize) -> anyhow::Result<PipelineConfig> {
    let mut c = PipelineConfig::for_mode(e.mode.into());
    c.search.k = e.k;
    if let Some(d) = e.delta {
        c.search.delta = d;
    }
    c.search.batch_size = e.batch_size;
    c.search.allow_empty_spans = e.allow_empty_spans;
    c.search.bound_mode = if search == SearchArg::Exact {
        BoundMode::Exact
    } else {
        BoundMode::Heuristic
    };
    c.strategy = match search {
        SearchArg::Codec | SearchArg::Exact => Strategy::Dfs,
        SearchArg::Csbs => Strategy::Csbs { beam },
        SearchArg::Oracle => Strategy::Oracle,
    };
    c.prune = PruneConfig {
        alpha1: e.alpha1,
        alpha2: e.alpha2,
        sigma: e.sigma,
        enabled: !e.no_prune,
    };
    c.filter.lexical_threshold = e.lex_threshold;
    c.filter.span_logprob_threshold = e.span_threshold;
    c.filter.enabled &= !e.no_filter;
    c.rerank = !e.no_rerank;
    c.validate()?;
    Ok(c)
}

fn read_input(path: Option<&Path>) -> anyhow::Result<String> {
    let mut text = String::new();
    match path {
        Some(p) => {
            File::open(p)
                .with_context(|| format!("opening {}", p.display()))?
                .read_to_string(&mut text)
                .with_context(|| format!("reading {}", p.display()))?;
        }
        None => {
            io::stdin().read_to_string(&mut text).context("reading stdin")?;
        }
    }
    Ok(text)
}

fn open_output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_jsonl<T: serde::Serialize>(out: &mut dyn Write, items: impl IntoIterator<Item = T>) -> anyhow::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *out, &item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Parses and validates every non-blank line; bad lines are reported on
/// stderr and skipped.
pub fn load_examples(text: &str, vocab: &mut Vocabulary) -> (Vec<Prepared>, usize) {
    let mut good = Vec::new();
    let mut bad = 0;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<ExampleRecord>(line)
            .map_err(|e| e.to_string())
            .and_then(|r| r.prepare(vocab).map_err(|e| e.to_string()));
        match parsed {
            Ok(p) => good.push(p),
            Err(e) => {
                eprintln!("line {}: {e}", idx + 1);
                bad += 1;
            }
        }
    }
    (good, bad)
}

fn thread_pool(workers: usize) -> anyhow::Result<rayon::ThreadPool> {
    if workers == 0 {
        bail!("--workers must be at least 1");
    }
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

fn scorer_for(args: &ScorerArgs, vocab: &mut Vocabulary) -> anyhow::Result<Arc<dyn Scorer>> {
    let spec: ScorerSpec = if args.scorer == "planted" {
        format!("planted:{}", args.seed).parse()?
    } else {
        args.scorer.parse()?
    };
    spec.build(vocab, args.bridge_url.as_deref())
}

/// Projects records in parallel, preserving input order.
pub fn project_all(
    examples: &[Prepared],
    scorer: &dyn Scorer,
    vocab: &Vocabulary,
    cfg: &PipelineConfig,
    config_name: &str,
    timing: bool,
    workers: usize,
) -> anyhow::Result<Vec<ResultRecord>> {
    thread_pool(workers)?.install(|| {
        examples
            .par_iter()
            .map(|p| {
                let lexical = p
                    .span_translations
                    .as_deref()
                    .map(|translations| LexicalContext { vocab, translations });
                let result = project(&p.example, &p.template, scorer, cfg, lexical)
                    .with_context(|| format!("record {}", p.id))?;
                Ok(ResultRecord::from_projection(&p.id, config_name, &result, timing))
            })
            .collect()
    })
}

fn cmd_project(e: &EngineArgs, search: SearchArg, beam: usize) -> anyhow::Result<i32> {
    let cfg = pipeline_config(e, search, beam)?;
    let text = read_input(e.io.input.as_deref())?;
    let mut vocab = Vocabulary::default();
    let (examples, bad) = load_examples(&text, &mut vocab);
    let scorer = scorer_for(&e.scorer, &mut vocab)?;
    let results = project_all(
        &examples,
        scorer.as_ref(),
        &vocab,
        &cfg,
        config_name(search),
        e.timing,
        e.scorer.workers,
    )?;
    let mut out = open_output(e.io.output.as_deref())?;
    write_jsonl(&mut *out, &results)?;
    Ok(if bad > 0 { EXIT_BAD_INPUT } else { EXIT_OK })
}

/// Suite records and gold sidecar lines for a planted suite.
pub fn generate(spec: &SuiteSpec) -> (Vec<ExampleRecord>, Vec<GoldRecord>) {
    let suite = build_planted_suite(spec);
    let surfaces = |ids: &[codec_core::TokenId]| -> Vec<String> {
        suite
            .vocab
            .surfaces(ids)
            .expect("suite tokens come from its vocabulary")
            .into_iter()
            .map(str::to_owned)
            .collect()
    };
    suite
        .instances
        .iter()
        .map(|inst| {
            let record = ExampleRecord {
                id: inst.id.clone(),
                source_tokens: surfaces(&inst.example.tokens),
                spans: inst
                    .example
                    .spans
                    .iter()
                    .map(|s| SpanRecord {
                        start: s.start,
                        end: s.end,
                        label: s.label.clone(),
                    })
                    .collect(),
                template_tokens: surfaces(inst.template.tokens()),
                span_translations: Some(inst.span_translations.clone()),
            };
            let gold = GoldRecord {
                id: inst.id.clone(),
                gold: inst.gold.iter().copied().map(GapPair::from).collect(),
            };
            (record, gold)
        })
        .unzip()
}

fn cmd_gen(a: &GenArgs) -> anyhow::Result<()> {
    if a.count == 0 {
        bail!("--count must be at least 1");
    }
    if a.min_len == 0 || a.min_len > a.max_len {
        bail!("need 1 <= --min-len <= --max-len");
    }
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        bail!("--noise must be a finite non-negative number");
    }
    let spec = SuiteSpec {
        max_span_len: a.max_span_len.max(1),
        ..SuiteSpec::new(a.seed, a.count, a.min_len..=a.max_len, a.noise).with_spans(a.max_spans.max(1))
    };
    let (records, gold) = generate(&spec);
    write_jsonl(&mut *open_output(a.output.as_deref())?, &records)?;
    write_jsonl(&mut *open_output(Some(&a.gold))?, &gold)?;
    Ok(())
}

/// Pairs suite records with their gold lines by id.
pub fn attach_gold(examples: Vec<Prepared>, gold_text: &str) -> anyhow::Result<Vec<BenchInstance>> {
    let mut gold = std::collections::HashMap::new();
    for (idx, line) in gold_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let g: GoldRecord = serde_json::from_str(line).with_context(|| format!("gold line {}", idx + 1))?;
        gold.insert(g.id, g.gold);
    }
    examples
        .into_iter()
        .map(|p| {
            let g = gold
                .remove(&p.id)
                .with_context(|| format!("no gold for record {}", p.id))?;
            if g.len() != p.example.spans.len() {
                bail!(
                    "record {}: {} gold placements for {} spans",
                    p.id,
                    g.len(),
                    p.example.spans.len()
                );
            }
            Ok(BenchInstance {
                prepared: p,
                gold: g.into_iter().map(Placement::from).collect(),
            })
        })
        .collect()
}

fn cmd_bench(a: &BenchArgs) -> anyhow::Result<()> {
    let text = read_input(Some(&a.input))?;
    let mut vocab = Vocabulary::default();
    let (examples, bad) = load_examples(&text, &mut vocab);
    if bad > 0 {
        bail!("{bad} malformed suite line(s)");
    }
    let gold_text = std::fs::read_to_string(&a.gold).with_context(|| format!("reading {}", a.gold.display()))?;
    let instances = attach_gold(examples, &gold_text)?;
    let scorer = scorer_for(&a.scorer, &mut vocab)?;
    let base = bench::base_config(a.k, a.batch_size);
    let names: Vec<&str> = if a.arms.is_empty() {
        STANDARD_ARMS.to_vec()
    } else {
        a.arms.iter().map(String::as_str).collect()
    };
    let arms = names
        .iter()
        .map(|n| bench::arm(n, &base))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let report =
        thread_pool(a.scorer.workers)?.install(|| bench::run_bench(&instances, scorer.as_ref(), &vocab, &arms))?;
    print!("{}", report.table());
    if let Some(path) = &a.report {
        let json = serde_json::to_string_pretty(&report)?;
        std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
