use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::query::Zoom;

use super::{ComposeRequest, Composer, Embedder, ProviderError};

/// Placeholders: `{question}`, `{passages}`, `{budget}`, `{shape}`, `{example_id}`.
pub const DEFAULT_PROMPT_TEMPLATE: &str = "\
Answer the question using only the passages below. End every sentence with the identifier \
of the passage it relies on in square brackets, for example [{example_id}]. Do not cite \
anything else. Use at most {budget} words{shape}. If the passages do not answer the \
question, say that the evidence is inconclusive.

Question: {question}

Passages:
{passages}
";

const CLAIM_PROMPT: &str = "\
List every factual claim made by the text below, one per line, in the form \
`subject | relation | object`. Output nothing else.

Text:
";

const MAX_ERROR_BODY: usize = 512;

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub embed_model: String,
    pub compose_model: String,
    pub dimension: usize,
    pub max_retries: u32,
    /// First retry delay; doubled after every failed attempt.
    pub backoff_base: Duration,
    pub max_in_flight: usize,
    pub timeout: Duration,
    pub prompt_template: String,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, dimension: usize) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            api_key: None,
            embed_model: "default".into(),
            compose_model: "default".into(),
            dimension,
            max_retries: 3,
            backoff_base: Duration::from_secs(1),
            max_in_flight: 8,
            timeout: Duration::from_secs(60),
            prompt_template: DEFAULT_PROMPT_TEMPLATE.into(),
        }
    }
}

/// Counting gate bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.max {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug)]
struct RemoteClient {
    config: RemoteConfig,
    http: reqwest::blocking::Client,
    gate: Gate,
}

impl RemoteClient {
    fn new(config: RemoteConfig) -> Result<Arc<Self>, ProviderError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        let gate = Gate {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            max: config.max_in_flight.max(1),
        };
        Ok(Arc::new(RemoteClient { config, http, gate }))
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, ProviderError> {
        let url = format!("{}/{path}", self.config.base_url.trim_end_matches('/'));
        let mut delay = self.config.backoff_base;
        let mut attempt = 0;
        loop {
            let outcome = {
                let _slot = self.gate.enter();
                self.post_once(&url, body)
            };
            match outcome {
                Ok(resp) => return Ok(resp),
                Err((err, retryable)) => {
                    if !retryable || attempt >= self.config.max_retries {
                        return Err(err);
                    }
                    tracing::warn!(%url, attempt, error = %err, "provider request failed, retrying");
                    std::thread::sleep(delay);
                    delay = delay.saturating_mul(2);
                    attempt += 1;
                }
            }
        }
    }

    fn post_once<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        url: &str,
        body: &Req,
    ) -> Result<Resp, (ProviderError, bool)> {
        let mut req = self.http.post(url).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| (ProviderError::Unavailable(e.to_string()), true))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| (ProviderError::Unavailable(e.to_string()), true))?;
        if !status.is_success() {
            let retryable = status.is_server_error() || status.as_u16() == 429;
            let mut body = text;
            if body.len() > MAX_ERROR_BODY {
                let mut cut = MAX_ERROR_BODY;
                while !body.is_char_boundary(cut) {
                    cut -= 1;
                }
                body.truncate(cut);
                body.push('…');
            }
            return Err((
                ProviderError::Http {
                    status: status.as_u16(),
                    body,
                },
                retryable,
            ));
        }
        serde_json::from_str(&text).map_err(|e| (ProviderError::BadResponse(e.to_string()), false))
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

#[derive(Serialize)]
struct ComposeBody<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct ComposeResponse {
    text: String,
}

/// `POST {base_url}/embed` with `{model, input}`, expecting `{vectors}`.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    client: Arc<RemoteClient>,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteConfig) -> Result<Self, ProviderError> {
        Ok(RemoteEmbedder {
            client: RemoteClient::new(config)?,
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.client.config.dimension
    }

    fn model_id(&self) -> &str {
        &self.client.config.embed_model
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, ProviderError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let resp: EmbedResponse = self.client.post(
            "embed",
            &EmbedRequest {
                model: &self.client.config.embed_model,
                input: texts,
            },
        )?;
        if resp.vectors.len() != texts.len() {
            return Err(ProviderError::BadResponse(format!(
                "expected {} vectors, got {}",
                texts.len(),
                resp.vectors.len()
            )));
        }
        let expected = self.dimension();
        if let Some(bad) = resp.vectors.iter().find(|v| v.len() != expected) {
            return Err(ProviderError::DimensionMismatch {
                expected,
                got: bad.len(),
            });
        }
        Ok(resp.vectors)
    }
}

/// `POST {base_url}/compose` with `{model, prompt, max_tokens}`, expecting `{text}`.
#[derive(Debug, Clone)]
pub struct RemoteComposer {
    client: Arc<RemoteClient>,
}

impl RemoteComposer {
    pub fn new(config: RemoteConfig) -> Result<Self, ProviderError> {
        Ok(RemoteComposer {
            client: RemoteClient::new(config)?,
        })
    }

    pub fn render_prompt(&self, request: &ComposeRequest<'_>) -> String {
        render_prompt(&self.client.config.prompt_template, request)
    }

    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String, ProviderError> {
        let body = ComposeBody {
            model: &self.client.config.compose_model,
            prompt,
            max_tokens,
        };
        let resp: ComposeResponse = self.client.post("compose", &body)?;
        Ok(resp.text)
    }
}

pub(crate) fn render_prompt(template: &str, request: &ComposeRequest<'_>) -> String {
    let passages: String = request
        .passages
        .iter()
        .map(|p| format!("[{}] {}\n", p.chunk_id, p.text.trim()))
        .collect();
    let example = request
        .passages
        .first()
        .map_or("pub#v1#c0", |p| p.chunk_id.as_str());
    let shape = if request.zoom == Zoom::Headline {
        " in exactly one sentence"
    } else {
        ""
    };
    template
        .replace("{question}", request.question.trim())
        .replace("{passages}", passages.trim_end())
        .replace("{budget}", &request.zoom.word_budget().to_string())
        .replace("{shape}", shape)
        .replace("{example_id}", example)
}

impl Composer for RemoteComposer {
    fn model_id(&self) -> &str {
        &self.client.config.compose_model
    }

    fn compose(&self, request: &ComposeRequest<'_>) -> Result<String, ProviderError> {
        let prompt = self.render_prompt(request);
        self.complete(&prompt, request.zoom.word_budget() * 2)
    }

    fn extract_claims(&self, text: &str) -> Result<Vec<String>, ProviderError> {
        let prompt = format!("{CLAIM_PROMPT}{text}");
        let out = self.complete(&prompt, 512)?;
        Ok(out
            .lines()
            .map(str::trim)
            .filter(|l| l.contains('|'))
            .map(str::to_string)
            .collect())
    }
}
