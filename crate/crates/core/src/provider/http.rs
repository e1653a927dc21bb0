use std::time::Duration;

use reqwest::blocking::{Client, Response};
use reqwest::{StatusCode, Url};
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{ErrorBody, LogitsResponse, TextBody, TokensBody, VocabResponse};
use super::{check_ids, Provider, ProviderError, VocabHash, VocabInfo, PROTOCOL_VERSION};
use crate::types::{LogProbVector, TokenId};

/// Provider backed by a remote wire-protocol server.
#[derive(Debug)]
pub struct HttpProvider {
    base: Url,
    client: Client,
    info: VocabInfo,
}

impl HttpProvider {
    /// Fetches `/v1/vocab` and checks the protocol version.
    pub fn connect(uri: &str) -> Result<Self, ProviderError> {
        let connect_failed = |reason: String| ProviderError::ConnectFailed {
            uri: uri.to_string(),
            reason,
        };
        let mut base = Url::parse(uri).map_err(|e| connect_failed(e.to_string()))?;
        if !matches!(base.scheme(), "http" | "https") {
            return Err(connect_failed(format!(
                "unsupported scheme {}",
                base.scheme()
            )));
        }
        if !base.path().ends_with('/') {
            let path = format!("{}/", base.path());
            base.set_path(&path);
        }
        let client = Client::builder()
            .connect_timeout(Duration::from_secs(5))
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| connect_failed(e.to_string()))?;

        let url = base
            .join("v1/vocab")
            .map_err(|e| connect_failed(e.to_string()))?;
        let resp = client
            .get(url)
            .send()
            .map_err(|e| connect_failed(e.to_string()))?;
        let vocab: VocabResponse = decode(resp)?;
        if vocab.protocol_version != PROTOCOL_VERSION {
            return Err(ProviderError::ProtocolVersionMismatch {
                expected: PROTOCOL_VERSION,
                actual: vocab.protocol_version,
            });
        }
        let vocab_hash: VocabHash = vocab
            .vocab_hash
            .parse()
            .map_err(ProviderError::UpstreamMalformed)?;
        if vocab.vocab_size == 0 {
            return Err(ProviderError::UpstreamMalformed("vocab_size is 0".into()));
        }
        let eos = match vocab.eos_id {
            Some(id) if id as usize >= vocab.vocab_size => {
                return Err(ProviderError::UpstreamMalformed(format!(
                    "eos_id {id} outside vocabulary"
                )))
            }
            other => other.map(TokenId),
        };
        let info = VocabInfo {
            vocab_size: vocab.vocab_size,
            vocab_hash,
            normalized: vocab.normalized,
            eos,
        };
        log::debug!(
            "connected to {uri}: {} tokens, hash {}",
            info.vocab_size,
            info.vocab_hash
        );
        Ok(Self { base, client, info })
    }

    fn post<B: Serialize, R: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<R, ProviderError> {
        let url = self
            .base
            .join(path)
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let resp = self
            .client
            .post(url)
            .json(body)
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        decode(resp)
    }
}

fn decode<R: DeserializeOwned>(resp: Response) -> Result<R, ProviderError> {
    let status = resp.status();
    let bytes = resp
        .bytes()
        .map_err(|e| ProviderError::Transport(e.to_string()))?;
    if status == StatusCode::OK {
        return serde_json::from_slice(&bytes)
            .map_err(|e| ProviderError::UpstreamMalformed(e.to_string()));
    }
    match serde_json::from_slice::<ErrorBody>(&bytes) {
        Ok(err) => Err(ProviderError::Upstream {
            code: err.error.code,
            message: err.error.message,
        }),
        Err(_) => Err(ProviderError::Transport(format!(
            "HTTP {status}: {}",
            String::from_utf8_lossy(&bytes)
        ))),
    }
}

fn wire_ids(ids: &[TokenId]) -> TokensBody {
    TokensBody {
        tokens: ids.iter().map(|t| t.0).collect(),
    }
}

impl Provider for HttpProvider {
    fn vocab_info(&self) -> &VocabInfo {
        &self.info
    }

    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbVector, ProviderError> {
        check_ids(context, self.info.vocab_size)?;
        let resp: LogitsResponse = self.post("v1/logits", &wire_ids(context))?;
        let values = resp.logprobs.into_iter().map(|v| v.0).collect();
        LogProbVector::with_len(values, self.info.vocab_size)
            .map_err(|e| ProviderError::UpstreamMalformed(e.to_string()))
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, ProviderError> {
        let resp: TokensBody = self.post(
            "v1/tokenize",
            &TextBody {
                text: text.to_string(),
            },
        )?;
        let ids: Vec<TokenId> = resp.tokens.into_iter().map(TokenId).collect();
        check_ids(&ids, self.info.vocab_size)
            .map_err(|e| ProviderError::UpstreamMalformed(e.to_string()))?;
        Ok(ids)
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<String, ProviderError> {
        check_ids(ids, self.info.vocab_size)?;
        let resp: TextBody = self.post("v1/detokenize", &wire_ids(ids))?;
        Ok(resp.text)
    }
}
