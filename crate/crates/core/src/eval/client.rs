use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::prompt::{build_prompt, format_subtask};
use crate::graph::Trace;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("no answer within {0:?}")]
    Timeout(Duration),
    #[error("transport: {0}")]
    Transport(String),
    #[error("server returned {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response: {0}")]
    Malformed(String),
    #[error("client configuration: {0}")]
    Config(String),
}

/// Text in, text out. Implementations must give up after `timeout`.
pub trait PlannerClient: Send + Sync {
    fn complete(&self, prompt: &str, timeout: Duration) -> Result<String, ClientError>;

    fn name(&self) -> String;
}

type Script = Box<dyn Fn(&str, usize) -> Result<String, ClientError> + Send + Sync>;

/// Scripted client for tests: answers from a closure of (prompt, call index),
/// optionally after a fixed delay.
pub struct MockClient {
    script: Script,
    delay: Duration,
    calls: AtomicUsize,
}

impl MockClient {
    pub fn from_fn(f: impl Fn(&str, usize) -> Result<String, ClientError> + Send + Sync + 'static) -> Self {
        Self {
            script: Box::new(f),
            delay: Duration::ZERO,
            calls: AtomicUsize::new(0),
        }
    }

    /// Always the same answer.
    pub fn constant(answer: impl Into<String>) -> Self {
        let answer = answer.into();
        Self::from_fn(move |_, _| Ok(answer.clone()))
    }

    /// Cycles through `answers` in call order.
    pub fn sequence(answers: Vec<String>) -> Self {
        assert!(!answers.is_empty(), "empty script");
        Self::from_fn(move |_, i| Ok(answers[i % answers.len()].clone()))
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl PlannerClient for MockClient {
    fn complete(&self, prompt: &str, timeout: Duration) -> Result<String, ClientError> {
        let i = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.delay > timeout {
            std::thread::sleep(timeout);
            return Err(ClientError::Timeout(timeout));
        }
        std::thread::sleep(self.delay);
        (self.script)(prompt, i)
    }

    fn name(&self) -> String {
        "mock".into()
    }
}

/// Knows the ground truth: every prompt the harness can build for the given
/// traces maps to its correct answer line.
pub struct EchoOracleClient {
    answers: HashMap<String, String>,
}

impl EchoOracleClient {
    pub fn new(traces: &[Trace], n_shots: usize) -> Self {
        let mut answers = HashMap::new();
        for tr in traces {
            for (st, sub) in tr.stages.iter().zip(&tr.subtasks) {
                let prompt = build_prompt(&tr.instruction, &st.robot, &st.scene, n_shots);
                answers
                    .entry(prompt)
                    .or_insert_with(|| format!("The answer is known.\nSo output: {}", format_subtask(*sub, &st.scene)));
            }
        }
        Self { answers }
    }
}

impl PlannerClient for EchoOracleClient {
    fn complete(&self, prompt: &str, _timeout: Duration) -> Result<String, ClientError> {
        self.answers
            .get(prompt)
            .cloned()
            .ok_or_else(|| ClientError::Malformed("prompt not in the oracle table".into()))
    }

    fn name(&self) -> String {
        "echo-oracle".into()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpClientConfig {
    pub url_env: String,
    pub key_env: String,
    pub model_env: String,
    pub temperature: f64,
}

impl Default for HttpClientConfig {
    fn default() -> Self {
        Self {
            url_env: "GRID_LLM_URL".into(),
            key_env: "GRID_LLM_KEY".into(),
            model_env: "GRID_LLM_MODEL".into(),
            temperature: 0.0,
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: String,
}

/// Chat-completion endpoint: `POST {model, messages, temperature}` answered
/// with `{choices: [{message: {content}}]}`.
pub struct HttpClient {
    url: String,
    key: Option<String>,
    model: String,
    temperature: f64,
}

impl HttpClient {
    pub fn new(url: impl Into<String>, key: Option<String>, model: impl Into<String>, temperature: f64) -> Self {
        Self {
            url: url.into(),
            key,
            model: model.into(),
            temperature,
        }
    }

    pub fn from_env(cfg: &HttpClientConfig) -> Result<Self, ClientError> {
        let url = std::env::var(&cfg.url_env)
            .map_err(|_| ClientError::Config(format!("environment variable {} is not set", cfg.url_env)))?;
        let model = std::env::var(&cfg.model_env).unwrap_or_else(|_| "default".into());
        Ok(Self::new(url, std::env::var(&cfg.key_env).ok(), model, cfg.temperature))
    }
}

impl PlannerClient for HttpClient {
    fn complete(&self, prompt: &str, timeout: Duration) -> Result<String, ClientError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body = ChatRequest {
            model: &self.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.temperature,
        };
        let mut resp = req.send_json(&body).map_err(|e| match e {
            ureq::Error::Timeout(_) => ClientError::Timeout(timeout),
            other => ClientError::Transport(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        if status != 200 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(ClientError::Status { status, body });
        }
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| ClientError::Malformed(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ClientError::Malformed("no choices".into()))
    }

    fn name(&self) -> String {
        format!("http:{}", self.model)
    }
}
