//! Chat-completion client over HTTP with retry on transient failures.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Completion, LlmError, LlmProvider, LlmRequest, TokenCounts};
use crate::embedding::excerpt;

pub const DEFAULT_TOKEN_ENV: &str = "FUSIONRAG_LLM_TOKEN";

fn default_timeout_s() -> u64 {
    60
}

fn default_max_retries() -> u32 {
    2
}

fn default_max_in_flight() -> usize {
    4
}

fn default_token_env() -> String {
    DEFAULT_TOKEN_ENV.to_string()
}

fn default_backoff_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    pub model: String,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_token_env")]
    pub token_env: String,
    /// First retry waits this long; each further retry doubles it.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl ProviderConfig {
    pub fn new(endpoint_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            model: model.into(),
            timeout_s: default_timeout_s(),
            max_retries: default_max_retries(),
            max_in_flight: default_max_in_flight(),
            token_env: default_token_env(),
            backoff_ms: default_backoff_ms(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
}

/// The single HTTP operation the client needs, so tests can count attempts.
#[async_trait]
pub trait HttpTransport: Send + Sync {
    async fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError>;
}

#[derive(Debug, Clone, Default)]
pub struct ReqwestTransport {
    client: reqwest::Client,
}

impl ReqwestTransport {
    pub fn new() -> Self {
        Self::default()
    }
}

#[async_trait]
impl HttpTransport for ReqwestTransport {
    async fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError> {
        crate::note_outbound_request();
        let mut req = self.client.post(url).timeout(timeout).json(body);
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let classify = |e: reqwest::Error| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connect(e.to_string())
            }
        };
        let resp = req.send().await.map_err(classify)?;
        let status = resp.status().as_u16();
        let body = resp.text().await.map_err(classify)?;
        Ok(HttpReply { status, body })
    }
}

pub struct ChatCompletionProvider {
    config: ProviderConfig,
    token: Option<String>,
    transport: Arc<dyn HttpTransport>,
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

fn is_transient(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

impl ChatCompletionProvider {
    pub fn new(config: ProviderConfig, token: Option<String>, transport: Arc<dyn HttpTransport>) -> Self {
        Self {
            config,
            token,
            transport,
        }
    }

    /// Reads the bearer token from the configured environment variable.
    pub fn from_env(config: ProviderConfig, transport: Arc<dyn HttpTransport>) -> Self {
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        Self::new(config, token, transport)
    }

    fn body(&self, request: &LlmRequest) -> serde_json::Value {
        json!({
            "model": self.config.model,
            "messages": [
                { "role": "system", "content": request.system_prompt },
                { "role": "user", "content": request.user_prompt },
            ],
            "max_tokens": request.max_output_tokens,
            "temperature": request.temperature,
        })
    }

    fn parse(body: &str) -> Result<Completion, LlmError> {
        let reply: ChatReply =
            serde_json::from_str(body).map_err(|e| LlmError::Malformed(e.to_string()))?;
        let text = reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Malformed("response has no completion text".into()))?;
        Ok(Completion {
            text,
            token_counts: reply.usage.map(|u| TokenCounts {
                prompt: u.prompt_tokens,
                completion: u.completion_tokens,
            }),
        })
    }
}

#[async_trait]
impl LlmProvider for ChatCompletionProvider {
    fn name(&self) -> &str {
        &self.config.model
    }

    async fn complete(&self, request: &LlmRequest) -> Result<Completion, LlmError> {
        let body = self.body(request);
        let timeout = Duration::from_secs(self.config.timeout_s);
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let wait = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                tokio::time::sleep(Duration::from_millis(wait)).await;
            }
            let sent = tokio::time::timeout(
                timeout,
                self.transport
                    .post_json(&self.config.endpoint_url, self.token.as_deref(), &body, timeout),
            )
            .await;
            match sent {
                Err(_) | Ok(Err(TransportError::Timeout)) => {
                    return Err(LlmError::Timeout {
                        after_ms: timeout.as_millis() as u64,
                    })
                }
                Ok(Err(TransportError::Connect(message))) => {
                    last = message;
                }
                Ok(Ok(reply)) if (200..300).contains(&reply.status) => {
                    return Self::parse(&reply.body);
                }
                Ok(Ok(reply)) if is_transient(reply.status) => {
                    last = format!("HTTP {}: {}", reply.status, excerpt(&reply.body));
                }
                Ok(Ok(reply)) => {
                    return Err(LlmError::Provider {
                        status: reply.status,
                        body: excerpt(&reply.body),
                    })
                }
            }
            tracing::warn!(attempt = attempt + 1, error = %last, "transient llm failure");
        }
        Err(LlmError::RetryExhausted { attempts, last })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::CallSite;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Mutex;

    struct Scripted {
        replies: Mutex<Vec<Result<HttpReply, TransportError>>>,
        attempts: AtomicU32,
        seen: Mutex<Vec<(Option<String>, serde_json::Value)>>,
    }

    impl Scripted {
        fn new(mut replies: Vec<Result<HttpReply, TransportError>>) -> Arc<Self> {
            replies.reverse();
            Arc::new(Self {
                replies: Mutex::new(replies),
                attempts: AtomicU32::new(0),
                seen: Mutex::new(Vec::new()),
            })
        }
    }

    #[async_trait]
    impl HttpTransport for Scripted {
        async fn post_json(
            &self,
            _url: &str,
            bearer: Option<&str>,
            body: &serde_json::Value,
            _timeout: Duration,
        ) -> Result<HttpReply, TransportError> {
            self.attempts.fetch_add(1, Ordering::SeqCst);
            self.seen
                .lock()
                .unwrap()
                .push((bearer.map(String::from), body.clone()));
            let mut replies = self.replies.lock().unwrap();
            if replies.len() > 1 {
                replies.pop().unwrap()
            } else {
                replies[0].clone()
            }
        }
    }

    fn status(code: u16, body: &str) -> Result<HttpReply, TransportError> {
        Ok(HttpReply {
            status: code,
            body: body.to_string(),
        })
    }

    const OK_BODY: &str = r#"{"choices":[{"message":{"role":"assistant","content":"hello"}}],"usage":{"prompt_tokens":7,"completion_tokens":2}}"#;

    fn provider(transport: Arc<Scripted>, retries: u32) -> ChatCompletionProvider {
        let mut cfg = ProviderConfig::new("http://provider.test/v1/chat/completions", "test-model");
        cfg.max_retries = retries;
        cfg.backoff_ms = 1;
        ChatCompletionProvider::new(cfg, Some("secret".into()), transport)
    }

    fn request() -> LlmRequest {
        LlmRequest {
            system_prompt: "sys".into(),
            user_prompt: "hi".into(),
            max_output_tokens: 32,
            temperature: 0.0,
            call_site: CallSite::AnswerSynthesis,
        }
    }

    #[tokio::test]
    async fn success_sends_chat_messages() {
        let t = Scripted::new(vec![status(200, OK_BODY)]);
        let c = provider(t.clone(), 2).complete(&request()).await.unwrap();
        assert_eq!(c.text, "hello");
        assert_eq!(c.token_counts, Some(TokenCounts { prompt: 7, completion: 2 }));
        let seen = t.seen.lock().unwrap();
        assert_eq!(seen[0].0.as_deref(), Some("secret"));
        assert_eq!(seen[0].1["messages"][0]["role"], "system");
        assert_eq!(seen[0].1["messages"][1]["content"], "hi");
        assert_eq!(seen[0].1["model"], "test-model");
        assert_eq!(seen[0].1["temperature"], 0.0);
    }

    #[tokio::test]
    async fn transient_errors_retry_until_exhausted() {
        let t = Scripted::new(vec![status(503, "busy")]);
        let err = provider(t.clone(), 2).complete(&request()).await.unwrap_err();
        assert!(matches!(err, LlmError::RetryExhausted { attempts: 3, .. }), "{err:?}");
        assert_eq!(t.attempts.load(Ordering::SeqCst), 3);
    }

    #[tokio::test]
    async fn transient_then_success() {
        let t = Scripted::new(vec![
            status(429, "slow down"),
            Err(TransportError::Connect("reset".into())),
            status(200, OK_BODY),
        ]);
        let c = provider(t.clone(), 2).complete(&request()).await.unwrap();
        assert_eq!(c.text, "hello");
        assert_eq!(t.attempts.load(Ordering::SeqCst), 3);
    }

    #[tokio::test]
    async fn non_retryable_status_makes_one_attempt() {
        let t = Scripted::new(vec![status(401, r#"{"error":"bad token"}"#)]);
        let err = provider(t.clone(), 2).complete(&request()).await.unwrap_err();
        assert_eq!(err.status(), Some(401));
        assert!(matches!(&err, LlmError::Provider { body, .. } if body.contains("bad token")));
        assert_eq!(t.attempts.load(Ordering::SeqCst), 1);
    }

    #[tokio::test]
    async fn timeout_is_reported() {
        let t = Scripted::new(vec![Err(TransportError::Timeout)]);
        let err = provider(t.clone(), 2).complete(&request()).await.unwrap_err();
        assert!(matches!(err, LlmError::Timeout { after_ms: 60_000 }));
        assert_eq!(t.attempts.load(Ordering::SeqCst), 1);
    }

    #[tokio::test]
    async fn malformed_body_is_an_error() {
        let t = Scripted::new(vec![status(200, r#"{"choices":[]}"#)]);
        assert!(matches!(
            provider(t, 0).complete(&request()).await,
            Err(LlmError::Malformed(_))
        ));
    }

    #[test]
    fn long_bodies_are_excerpted() {
        let long = "x".repeat(2000);
        assert!(excerpt(&long).chars().count() <= 513);
    }
}
