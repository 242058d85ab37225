//! HTTP client for the model protocol (see [`crate::protocol`]).

use std::collections::BTreeMap;
use std::time::Duration;

use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{validate_retention, ModelBackend, VocabDistribution};
use crate::error::{Error, Result};
use crate::proposer::{FillModel, PosTagTable};
use crate::protocol::{
    ErrorResponse, FillRequest, FillResponse, InfoResponse, MaskedRequest, NextRequest,
    ProbsResponse, FILL_PATH, INFO_PATH, MASKED_PATH, NEXT_PATH,
};
use crate::sequence::{validate_tokens, TokenId};

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub auth_token: Option<String>,
    /// Retries after the first attempt, for retryable failures only.
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
    pub pool_size: usize,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self {
            auth_token: None,
            max_retries: 3,
            initial_backoff: Duration::from_millis(100),
            timeout: Duration::from_secs(60),
            pool_size: 8,
        }
    }
}

/// A backend reached over HTTP. Every endpoint is idempotent, so failed
/// requests flagged retryable are simply re-sent with exponential backoff.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    base_url: String,
    client: Client,
    options: RemoteOptions,
    info: InfoResponse,
}

impl RemoteBackend {
    /// Connects and probes `/v1/info`.
    pub fn connect(base_url: &str, options: RemoteOptions) -> Result<Self> {
        let client = Client::builder()
            .timeout(options.timeout)
            .pool_max_idle_per_host(options.pool_size)
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        let mut backend = Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            client,
            options,
            info: InfoResponse {
                vocab_size: 0,
                model_name: String::new(),
                pos_tags: false,
                pos_tag_table: None,
            },
        };
        let info: InfoResponse = backend.send(INFO_PATH, None::<&()>)?;
        if info.vocab_size == 0 {
            return Err(Error::Backend("server reports an empty vocabulary".into()));
        }
        if let Some(table) = &info.pos_tag_table {
            if table.len() != info.vocab_size {
                return Err(Error::VocabularyMismatch {
                    expected: info.vocab_size,
                    actual: table.len(),
                });
            }
        }
        backend.info = info;
        Ok(backend)
    }

    pub fn info(&self) -> &InfoResponse {
        &self.info
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// Part-of-speech table advertised by the server, if any.
    pub fn pos_tag_table(&self) -> Result<PosTagTable> {
        match (&self.info.pos_tags, &self.info.pos_tag_table) {
            (true, Some(table)) => PosTagTable::from_tags(table.clone()),
            _ => Err(Error::StrategyUnavailable(
                "server does not publish a part-of-speech table".into(),
            )),
        }
    }

    fn send<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: Option<&B>) -> Result<R> {
        let url = format!("{}{}", self.base_url, path);
        let mut backoff = self.options.initial_backoff;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.send_once(&url, body) {
                Ok(resp) => return Ok(resp),
                Err(err) => {
                    let retryable = match &err {
                        Error::Transport { retryable, .. } | Error::Remote { retryable, .. } => {
                            *retryable
                        }
                        _ => false,
                    };
                    if !retryable || attempt > self.options.max_retries {
                        return Err(match err {
                            Error::Transport {
                                message, retryable, ..
                            } => Error::Transport {
                                message,
                                retryable,
                                attempts: attempt,
                            },
                            other => other,
                        });
                    }
                    log::debug!("{url}: attempt {attempt} failed ({err}); retrying in {backoff:?}");
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
            }
        }
    }

    fn send_once<B: Serialize, R: DeserializeOwned>(
        &self,
        url: &str,
        body: Option<&B>,
    ) -> Result<R> {
        let mut req = match body {
            Some(b) => self.client.post(url).json(b),
            None => self.client.get(url),
        };
        if let Some(token) = &self.options.auth_token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| Error::Transport {
            message: e.to_string(),
            retryable: true,
            attempts: 1,
        })?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| Error::Transport {
            message: format!("reading response body: {e}"),
            retryable: true,
            attempts: 1,
        })?;
        if status.is_success() {
            return serde_json::from_slice(&bytes)
                .map_err(|e| Error::Backend(format!("undecodable response from {url}: {e}")));
        }
        let (message, retryable) = match serde_json::from_slice::<ErrorResponse>(&bytes) {
            Ok(e) => (e.error, e.retryable),
            Err(_) => (
                String::from_utf8_lossy(&bytes).into_owned(),
                status.is_server_error() || status.as_u16() == 429,
            ),
        };
        Err(Error::Remote {
            status: status.as_u16(),
            message,
            retryable,
        })
    }

    fn distribution(&self, probs: Vec<f64>) -> Result<VocabDistribution> {
        if probs.len() != self.info.vocab_size {
            return Err(Error::VocabularyMismatch {
                expected: self.info.vocab_size,
                actual: probs.len(),
            });
        }
        VocabDistribution::new(probs)
    }
}

impl ModelBackend for RemoteBackend {
    fn name(&self) -> &str {
        &self.info.model_name
    }

    fn vocab_size(&self) -> usize {
        self.info.vocab_size
    }

    fn next_token_distribution(&self, context: &[TokenId]) -> Result<VocabDistribution> {
        if context.is_empty() {
            return Err(Error::EmptyContext);
        }
        validate_tokens(context, self.info.vocab_size)?;
        let resp: ProbsResponse = self.send(
            NEXT_PATH,
            Some(&NextRequest {
                tokens: context.to_vec(),
            }),
        )?;
        self.distribution(resp.probs)
    }

    fn masked_distribution(
        &self,
        context: &[TokenId],
        retention: &[f64],
        seed: u64,
    ) -> Result<VocabDistribution> {
        if context.is_empty() {
            return Err(Error::EmptyContext);
        }
        validate_tokens(context, self.info.vocab_size)?;
        validate_retention(retention, context.len())?;
        let resp: ProbsResponse = self.send(
            MASKED_PATH,
            Some(&MaskedRequest {
                tokens: context.to_vec(),
                retain: retention.to_vec(),
                seed,
            }),
        )?;
        self.distribution(resp.probs)
    }
}

impl FillModel for RemoteBackend {
    fn fill(&self, context: &[TokenId], positions: &[usize]) -> Result<BTreeMap<usize, TokenId>> {
        let req = FillRequest {
            tokens: context.to_vec(),
            mask_positions: positions.to_vec(),
        };
        let resp: FillResponse = match self.send(FILL_PATH, Some(&req)) {
            Ok(r) => r,
            Err(Error::Remote {
                status: 404 | 501,
                message,
                ..
            }) => {
                return Err(Error::StrategyUnavailable(format!(
                    "fill endpoint: {message}"
                )))
            }
            Err(e) => return Err(e),
        };
        let mut fills = BTreeMap::new();
        for (key, token) in resp.fills {
            let pos: usize = key
                .parse()
                .map_err(|_| Error::Backend(format!("fill key {key:?} is not a position")))?;
            validate_tokens(&[token], self.info.vocab_size)?;
            fills.insert(pos, token);
        }
        Ok(fills)
    }
}
