//! `--scorer` parsing and construction.

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use codec_bridge_client::{resolve_url, BridgeScorer};
use codec_core::scorer::PlantedParams;
use codec_core::{PlantedAlignmentScorer, Scorer, TableScorer, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub enum ScorerSpec {
    /// Lookup-table fixture file.
    Table(PathBuf),
    /// Planted-alignment scorer with a seed and noise level.
    Planted { seed: u64, noise: f64 },
    /// Remote bridge; `None` defers to `--bridge-url` or the environment.
    Bridge(Option<String>),
}

impl FromStr for ScorerSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "table" if !rest.is_empty() => Ok(Self::Table(PathBuf::from(rest))),
            "planted" => {
                let mut parts = rest.split(':');
                let seed = parts
                    .next()
                    .filter(|p| !p.is_empty())
                    .ok_or_else(|| anyhow!("planted scorer needs a seed: planted:<seed>[:<noise>]"))?
                    .parse()
                    .context("planted seed")?;
                let noise = match parts.next() {
                    Some(n) => n.parse().context("planted noise")?,
                    None => 0.0,
                };
                if parts.next().is_some() {
                    bail!("too many fields in {s:?}");
                }
                if !(noise >= 0.0 && f64::is_finite(noise)) {
                    bail!("planted noise must be a finite non-negative number");
                }
                Ok(Self::Planted { seed, noise })
            }
            "bridge" => Ok(Self::Bridge((!rest.is_empty()).then(|| rest.to_owned()))),
            _ => bail!("unknown scorer {s:?}; expected table:<path>, planted:<seed>[:<noise>] or bridge[:<url>]"),
        }
    }
}

impl ScorerSpec {
    /// Builds the scorer once every record surface is interned; local
    /// scorers may intern more (fixture or lexicon surfaces) and size
    /// themselves to the final vocabulary.
    pub fn build(&self, vocab: &mut Vocabulary, bridge_url: Option<&str>) -> anyhow::Result<Arc<dyn Scorer>> {
        Ok(match self {
            Self::Table(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Arc::new(
                    TableScorer::from_fixture(&text, vocab).with_context(|| format!("loading {}", path.display()))?,
                )
            }
            Self::Planted { seed, noise } => {
                Arc::new(PlantedAlignmentScorer::new(vocab, PlantedParams::new(*seed, *noise)))
            }
            Self::Bridge(url) => {
                let url = resolve_url(url.as_deref().or(bridge_url))
                    .ok_or_else(|| anyhow!("no bridge URL: use bridge:<url>, --bridge-url or CODEC_BRIDGE_URL"))?;
                Arc::new(BridgeScorer::connect(&url, Arc::new(vocab.clone()))?)
            }
        })
    }
}
