//! Blocking HTTP client for the inference service.
//!
//! Endpoints: `GET /v1/info`, `POST /v1/caption`, `POST /v1/embed/text` and
//! `POST /v1/embed/image`, all JSON. Large batches are split into
//! `max_batch` chunks, sent with bounded concurrency and reassembled in
//! request order. Returned vectors are re-normalized locally.

use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use log::{debug, warn};
use reqwest::blocking::Client;
use reqwest::{StatusCode, Url};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::providers::{Captioner, ImageEmbedder, TextEmbedder};
use crate::types::{l2_normalize, CaptionRecord, EmbeddingVector, ImageRecord};

#[derive(Debug, Clone)]
pub struct RemoteEndpoint {
    pub base_url: Url,
    pub timeout: Duration,
    pub max_batch: usize,
    /// Total attempts per request for transport failures and 503s.
    pub retries: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff: Duration,
    pub max_in_flight: usize,
}

impl RemoteEndpoint {
    pub fn new(base_url: &str) -> Result<Self> {
        let base_url =
            Url::parse(base_url).map_err(|e| Error::InvalidArgument(format!("bad endpoint url {base_url:?}: {e}")))?;
        if !matches!(base_url.scheme(), "http" | "https") {
            return Err(Error::InvalidArgument(format!(
                "endpoint must be http(s), got {}",
                base_url.scheme()
            )));
        }
        Ok(Self {
            base_url,
            timeout: Duration::from_secs(120),
            max_batch: 64,
            retries: 3,
            backoff: Duration::from_millis(500),
            max_in_flight: 4,
        })
    }

    fn url(&self, path: &str) -> Url {
        let mut url = self.base_url.clone();
        let joined = format!("{}{}", url.path().trim_end_matches('/'), path);
        url.set_path(&joined);
        url
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceInfo {
    pub caption_model_id: String,
    pub embed_model_id: String,
    pub dim: usize,
    pub max_batch: usize,
}

#[derive(Serialize)]
struct CaptionRequest<'a> {
    image_b64: &'a str,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct CaptionResponse {
    caption: String,
}

#[derive(Serialize)]
struct EmbedTextRequest<'a> {
    texts: &'a [String],
}

#[derive(Serialize)]
struct EmbedImageRequest<'a> {
    images_b64: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
    dim: usize,
}

/// Connected client; one instance serves all three provider roles.
pub struct RemoteClient {
    endpoint: RemoteEndpoint,
    http: Client,
    info: ServiceInfo,
    prompt: String,
    caption_provider_id: String,
}

impl RemoteClient {
    /// Builds the HTTP client and fetches `/v1/info`.
    pub fn connect(endpoint: RemoteEndpoint) -> Result<Self> {
        if endpoint.max_batch == 0 {
            return Err(Error::InvalidArgument("max_batch must be at least 1".into()));
        }
        let http = Client::builder()
            .timeout(endpoint.timeout)
            .build()
            .map_err(|e| Error::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        let mut client = Self {
            endpoint,
            http,
            info: ServiceInfo {
                caption_model_id: String::new(),
                embed_model_id: String::new(),
                dim: 0,
                max_batch: 1,
            },
            prompt: String::new(),
            caption_provider_id: String::new(),
        };
        let info: ServiceInfo = client.request("/v1/info", None::<&()>)?;
        if info.dim == 0 || info.max_batch == 0 || info.embed_model_id.is_empty() {
            return Err(Error::Service {
                status: 200,
                body: format!("invalid /v1/info payload: {info:?}"),
            });
        }
        client.caption_provider_id = info.caption_model_id.clone();
        client.info = info;
        Ok(client)
    }

    /// Sets the caption prompt; a non-empty prompt becomes part of the
    /// caption provider id so caches made with different prompts differ.
    pub fn with_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.prompt = prompt.into();
        self.caption_provider_id = if self.prompt.is_empty() {
            self.info.caption_model_id.clone()
        } else {
            format!("{}?prompt={}", self.info.caption_model_id, self.prompt)
        };
        self
    }

    pub fn info(&self) -> &ServiceInfo {
        &self.info
    }

    fn effective_batch(&self) -> usize {
        self.endpoint.max_batch.min(self.info.max_batch).max(1)
    }

    fn request<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: Option<&B>) -> Result<R> {
        let url = self.endpoint.url(path);
        let attempts = self.endpoint.retries.max(1);
        let mut delay = self.endpoint.backoff;
        let mut last_err = None;
        for attempt in 1..=attempts {
            let req = match body {
                Some(b) => self.http.post(url.clone()).json(b),
                None => self.http.get(url.clone()),
            };
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp.json::<R>().map_err(|e| Error::Service {
                            status: status.as_u16(),
                            body: format!("undecodable response body: {e}"),
                        });
                    }
                    let text = resp.text().unwrap_or_default();
                    let err = Error::Service {
                        status: status.as_u16(),
                        body: text,
                    };
                    if status != StatusCode::SERVICE_UNAVAILABLE {
                        return Err(err);
                    }
                    last_err = Some(err);
                }
                Err(e) => {
                    last_err = Some(Error::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    });
                }
            }
            if attempt < attempts {
                warn!("{path}: attempt {attempt}/{attempts} failed, retrying in {delay:?}");
                thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(last_err.expect("at least one attempt"))
    }

    /// Runs `f` over consecutive chunks of `0..n`, at most `max_in_flight`
    /// at a time, and concatenates the outputs in chunk order.
    fn run_chunked<T, F>(&self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(std::ops::Range<usize>) -> Result<Vec<T>> + Sync,
    {
        let batch = self.effective_batch();
        let chunks: Vec<_> = (0..n).step_by(batch).map(|s| s..(s + batch).min(n)).collect();
        let slots: Vec<Mutex<Option<Result<Vec<T>>>>> = chunks.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.endpoint.max_in_flight.clamp(1, chunks.len().max(1));
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(range) = chunks.get(i) else { break };
                    debug!("chunk {i}: items {range:?}");
                    let out = f(range.clone()).map_err(|e| match e {
                        Error::AtIndex { index, source } => Error::AtIndex {
                            index: index + range.start,
                            source,
                        },
                        other => other,
                    });
                    *slots[i].lock().unwrap() = Some(out);
                });
            }
        });
        let mut all = Vec::with_capacity(n);
        for slot in slots {
            all.extend(slot.into_inner().unwrap().expect("every chunk ran")?);
        }
        Ok(all)
    }

    fn decode_embeddings(&self, resp: EmbedResponse, expected: usize) -> Result<Vec<EmbeddingVector>> {
        if resp.embeddings.len() != expected {
            return Err(Error::CountMismatch {
                expected,
                got: resp.embeddings.len(),
            });
        }
        if resp.dim != self.info.dim {
            return Err(Error::DimMismatch {
                expected: self.info.dim,
                got: resp.dim,
            });
        }
        resp.embeddings
            .iter()
            .enumerate()
            .map(|(index, v)| {
                if v.len() != self.info.dim {
                    return Err(Error::AtIndex {
                        index,
                        source: Box::new(Error::DimMismatch {
                            expected: self.info.dim,
                            got: v.len(),
                        }),
                    });
                }
                l2_normalize(v).map_err(|e| Error::AtIndex {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }

    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        self.run_chunked(texts.len(), |range| {
            let chunk = &texts[range];
            let resp: EmbedResponse = self.request("/v1/embed/text", Some(&EmbedTextRequest { texts: chunk }))?;
            self.decode_embeddings(resp, chunk.len())
        })
    }

    pub fn embed_images(&self, records: &[ImageRecord]) -> Result<Vec<EmbeddingVector>> {
        if records.is_empty() {
            return Ok(Vec::new());
        }
        // read everything before the first request so bad paths fail fast
        let encoded = records
            .iter()
            .map(|r| {
                fs::read(&r.path)
                    .map(|b| BASE64.encode(b))
                    .map_err(|e| Error::io(&r.path, e))
            })
            .collect::<Result<Vec<_>>>()?;
        self.run_chunked(records.len(), |range| {
            let chunk = &encoded[range];
            let resp: EmbedResponse =
                self.request("/v1/embed/image", Some(&EmbedImageRequest { images_b64: chunk }))?;
            self.decode_embeddings(resp, chunk.len())
        })
    }

    pub fn caption(&self, record: &ImageRecord) -> Result<CaptionRecord> {
        let bytes = fs::read(&record.path).map_err(|e| Error::io(&record.path, e))?;
        let image_b64 = BASE64.encode(bytes);
        let resp: CaptionResponse = self.request(
            "/v1/caption",
            Some(&CaptionRequest {
                image_b64: &image_b64,
                prompt: &self.prompt,
            }),
        )?;
        let caption = resp.caption.trim();
        if caption.is_empty() {
            return Err(Error::EmptyCaption(record.id.clone()));
        }
        CaptionRecord::new(record.id.clone(), caption, self.caption_provider_id.clone())
    }
}

impl TextEmbedder for RemoteClient {
    fn provider_id(&self) -> &str {
        &self.info.embed_model_id
    }

    fn dim(&self) -> usize {
        self.info.dim
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        RemoteClient::embed_texts(self, texts)
    }
}

impl ImageEmbedder for RemoteClient {
    fn provider_id(&self) -> &str {
        &self.info.embed_model_id
    }

    fn dim(&self) -> usize {
        self.info.dim
    }

    fn embed_images(&self, records: &[ImageRecord]) -> Result<Vec<EmbeddingVector>> {
        RemoteClient::embed_images(self, records)
    }
}

impl Captioner for RemoteClient {
    fn provider_id(&self) -> &str {
        &self.caption_provider_id
    }

    fn caption(&self, record: &ImageRecord) -> Result<CaptionRecord> {
        RemoteClient::caption(self, record)
    }
}
