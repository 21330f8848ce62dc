use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{EmbeddingBundle, EncoderError, TextEncoder};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExternalConfig {
    /// Environment variable holding the endpoint URL.
    pub url_env: String,
    /// Environment variable holding the bearer token (optional).
    pub key_env: String,
    pub timeout_ms: u64,
    pub retries: u32,
    pub max_in_flight: usize,
    pub batch_size: usize,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        Self {
            url_env: "GRID_EMBED_URL".into(),
            key_env: "GRID_EMBED_KEY".into(),
            timeout_ms: 30_000,
            retries: 2,
            max_in_flight: 4,
            batch_size: 64,
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
    #[serde(default)]
    tokens: Vec<Vec<Vec<f64>>>,
}

struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Client for an embedding service speaking
/// `POST {texts:[..]} -> {embeddings:[[..]], tokens:[[[..]]]}`.
pub struct ExternalEncoder {
    url: String,
    key: Option<String>,
    dim: usize,
    cfg: ExternalConfig,
    agent: ureq::Agent,
    permits: Permits,
    cancelled: AtomicBool,
}

impl ExternalEncoder {
    pub fn new(url: impl Into<String>, key: Option<String>, dim: usize, cfg: ExternalConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: url.into(),
            key,
            dim,
            permits: Permits {
                free: Mutex::new(cfg.max_in_flight.max(1)),
                cv: Condvar::new(),
            },
            cfg,
            agent,
            cancelled: AtomicBool::new(false),
        }
    }

    pub fn from_env(dim: usize, cfg: ExternalConfig) -> Result<Self, EncoderError> {
        let url = std::env::var(&cfg.url_env)
            .map_err(|_| EncoderError::Config(format!("environment variable {} is not set", cfg.url_env)))?;
        let key = std::env::var(&cfg.key_env).ok();
        Ok(Self::new(url, key, dim, cfg))
    }

    /// Makes every pending and future request fail with `Cancelled`.
    pub fn cancel(&self) {
        self.cancelled.store(true, Ordering::SeqCst);
    }

    fn call_once(&self, texts: &[String]) -> Result<EmbedResponse, (Option<u16>, String)> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(EmbedRequest { texts })
            .map_err(|e| (None, e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err((Some(status), body));
        }
        resp.body_mut()
            .read_json::<EmbedResponse>()
            .map_err(|e| (Some(status), format!("malformed response: {e}")))
    }

    fn to_bundles(&self, texts: &[String], resp: EmbedResponse) -> Result<Vec<EmbeddingBundle>, String> {
        if resp.embeddings.len() != texts.len() {
            return Err(format!(
                "{} embeddings for {} texts",
                resp.embeddings.len(),
                texts.len()
            ));
        }
        let mut out = Vec::with_capacity(texts.len());
        for (i, y) in resp.embeddings.into_iter().enumerate() {
            if y.len() != self.dim || y.iter().any(|v| !v.is_finite()) {
                return Err(format!("embedding {i} has width {} or non-finite values", y.len()));
            }
            let rows = resp.tokens.get(i).filter(|t| !t.is_empty()).cloned().unwrap_or_else(|| vec![y.clone()]);
            let mut words = Array2::zeros((rows.len(), self.dim));
            for (r, row) in rows.iter().enumerate() {
                if row.len() != self.dim || row.iter().any(|v| !v.is_finite()) {
                    return Err(format!("token row {r} of text {i} is malformed"));
                }
                words.row_mut(r).assign(&Array1::from(row.clone()));
            }
            out.push(EmbeddingBundle {
                word_tokens: words,
                sentence_embedding: Array1::from(y),
            });
        }
        Ok(out)
    }

    fn request(&self, texts: &[String]) -> Result<Vec<EmbeddingBundle>, EncoderError> {
        let _permit = self.permits.acquire();
        let attempts = self.cfg.retries + 1;
        let mut last = (None, String::new());
        for attempt in 1..=attempts {
            if self.cancelled.load(Ordering::SeqCst) {
                return Err(EncoderError::Cancelled);
            }
            match self.call_once(texts) {
                Ok(resp) => {
                    return self.to_bundles(texts, resp).map_err(|message| EncoderError::ExternalService {
                        attempts: attempt,
                        status: Some(200),
                        message,
                    })
                }
                Err(e) => last = e,
            }
            if attempt < attempts {
                std::thread::sleep(Duration::from_millis(25 << attempt.min(6)));
            }
        }
        Err(EncoderError::ExternalService {
            attempts,
            status: last.0,
            message: last.1,
        })
    }
}

impl TextEncoder for ExternalEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<EmbeddingBundle, EncoderError> {
        Ok(self.encode_batch(&[text.to_string()])?.remove(0))
    }

    fn encode_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingBundle>, EncoderError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EncoderError::EmptyText);
        }
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.cfg.batch_size.max(1)) {
            out.extend(self.request(chunk)?);
        }
        Ok(out)
    }

    fn digest(&self) -> String {
        format!("external-{}-d{}", self.url, self.dim)
    }
}
