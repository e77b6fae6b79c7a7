//! A [`Scorer`] backed by a remote bridge service speaking JSON over HTTP.
//!
//! Engine token ids are mapped to surface strings through the caller's
//! [`Vocabulary`], so the vocabulary must already contain every surface the
//! engine will ask about.

pub mod protocol;

use std::sync::Arc;
use std::time::Duration;

use codec_core::scorer::Query;
use codec_core::{CodecError, Result, Scorer, TokenId, Vocabulary};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;

use protocol::{
    BatchRequest, BatchResponse, ErrorBody, Health, LogprobRequest, LogprobResponse, SequenceRequest, SequenceResponse,
    PROTOCOL_VERSION,
};

/// Environment variable consulted when no bridge URL is given explicitly.
pub const BRIDGE_URL_ENV: &str = "CODEC_BRIDGE_URL";

const TIMEOUT: Duration = Duration::from_secs(120);

/// Explicit URL first, then [`BRIDGE_URL_ENV`].
pub fn resolve_url(explicit: Option<&str>) -> Option<String> {
    explicit
        .map(str::to_owned)
        .or_else(|| std::env::var(BRIDGE_URL_ENV).ok())
        .filter(|u| !u.trim().is_empty())
}

#[derive(Debug, Clone)]
pub struct BridgeScorer {
    client: Client,
    base: String,
    vocab: Arc<Vocabulary>,
    health: Health,
}

fn scorer_err(e: impl std::fmt::Display) -> CodecError {
    CodecError::Scorer(e.to_string())
}

impl BridgeScorer {
    /// Connects and checks `/health`.
    pub fn connect(url: &str, vocab: Arc<Vocabulary>) -> Result<Self> {
        let client = Client::builder().timeout(TIMEOUT).build().map_err(scorer_err)?;
        let base = url.trim_end_matches('/').to_owned();
        let resp = client
            .get(format!("{base}/health"))
            .send()
            .map_err(|e| scorer_err(format!("bridge unreachable at {base}: {e}")))?;
        let health: Health = decode(resp)?;
        Ok(Self {
            client,
            base,
            vocab,
            health,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.health.model_id
    }

    /// Vocabulary size reported by the remote model.
    pub fn remote_vocab_size(&self) -> usize {
        self.health.vocab_size
    }

    fn surfaces(&self, ids: &[TokenId]) -> Result<Vec<String>> {
        Ok(self.vocab.surfaces(ids)?.into_iter().map(str::to_owned).collect())
    }

    fn request(&self, source: &[String], prefix: &[TokenId], candidates: &[TokenId]) -> Result<LogprobRequest> {
        if candidates.is_empty() {
            return Err(CodecError::Scorer("empty candidate list".into()));
        }
        Ok(LogprobRequest {
            v: PROTOCOL_VERSION.into(),
            source_tokens: source.to_vec(),
            prefix_tokens: self.surfaces(prefix)?,
            candidate_tokens: self.surfaces(candidates)?,
        })
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R> {
        let resp = self
            .client
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .map_err(scorer_err)?;
        decode(resp)
    }

    /// Whole-sequence log-probability computed by the bridge.
    pub fn sequence(&self, source: &[TokenId], target: &[TokenId]) -> Result<f64> {
        let body = SequenceRequest {
            v: PROTOCOL_VERSION.into(),
            source: self.surfaces(source)?,
            target: self.surfaces(target)?,
        };
        let resp: SequenceResponse = self.post("/sequence", &body)?;
        Ok(resp.logprob)
    }
}

fn decode<R: DeserializeOwned>(resp: reqwest::blocking::Response) -> Result<R> {
    let status = resp.status();
    if status.is_success() {
        return resp.json().map_err(|e| scorer_err(format!("bad bridge response: {e}")));
    }
    let text = resp.text().unwrap_or_default();
    let detail = match serde_json::from_str::<ErrorBody>(&text) {
        Ok(ErrorBody { error, token: Some(t) }) => format!("{error} (token {t:?})"),
        Ok(ErrorBody { error, token: None }) => error,
        Err(_) => text,
    };
    let kind = if status == StatusCode::UNPROCESSABLE_ENTITY {
        "bridge cannot encode token"
    } else {
        "bridge error"
    };
    Err(CodecError::Scorer(format!("{kind}: HTTP {status}: {detail}")))
}

fn checked(resp: LogprobResponse, expected: usize) -> Result<Vec<f64>> {
    if resp.logprobs.len() != expected {
        return Err(CodecError::Scorer(format!(
            "bridge returned {} log-probs for {expected} candidates",
            resp.logprobs.len()
        )));
    }
    if let Some(bad) = resp.logprobs.iter().find(|x| x.is_nan() || **x > 1e-9) {
        return Err(CodecError::Scorer(format!("bridge returned invalid log-prob {bad}")));
    }
    Ok(resp.logprobs)
}

impl Scorer for BridgeScorer {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn next_token_logprobs(&self, source: &[TokenId], prefix: &[TokenId], candidates: &[TokenId]) -> Result<Vec<f64>> {
        let src = self.surfaces(source)?;
        let body = self.request(&src, prefix, candidates)?;
        checked(self.post("/logprobs", &body)?, candidates.len())
    }

    fn batch_logprobs(&self, source: &[TokenId], queries: &[Query<'_>]) -> Result<Vec<Vec<f64>>> {
        match queries {
            [] => Ok(Vec::new()),
            [q] => Ok(vec![self.next_token_logprobs(source, q.prefix, q.candidates)?]),
            _ => {
                let src = self.surfaces(source)?;
                let requests = queries
                    .iter()
                    .map(|q| self.request(&src, q.prefix, q.candidates))
                    .collect::<Result<Vec<_>>>()?;
                let body = BatchRequest {
                    v: PROTOCOL_VERSION.into(),
                    requests,
                };
                let resp: BatchResponse = self.post("/logprobs_batch", &body)?;
                if resp.responses.len() != queries.len() {
                    return Err(CodecError::Scorer(format!(
                        "bridge answered {} of {} batched requests",
                        resp.responses.len(),
                        queries.len()
                    )));
                }
                resp.responses
                    .into_iter()
                    .zip(queries)
                    .map(|(r, q)| checked(r, q.candidates.len()))
                    .collect()
            }
        }
    }
}
