//! One gateway over language-model providers, used at two call sites:
//! query generation and answer synthesis.

mod http;
mod mock;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

pub use http::{
    ChatCompletionProvider, HttpReply, HttpTransport, ProviderConfig, ReqwestTransport,
    TransportError, DEFAULT_TOKEN_ENV,
};
pub use mock::{MockConfig, MockProvider, DOCUMENT_HEADER, NO_EVIDENCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallSite {
    QueryGeneration,
    AnswerSynthesis,
}

impl CallSite {
    pub fn as_str(self) -> &'static str {
        match self {
            CallSite::QueryGeneration => "query_generation",
            CallSite::AnswerSynthesis => "answer_synthesis",
        }
    }
}

impl fmt::Display for CallSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub call_site: CallSite,
}

impl LlmRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.system_prompt.trim().is_empty() || self.user_prompt.trim().is_empty() {
            return Err(LlmError::InvalidRequest("prompts must be non-empty".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub prompt: u64,
    pub completion: u64,
}

/// What a provider returns before the gateway stamps latency on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub token_counts: Option<TokenCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub latency_ms: u64,
    pub provider: String,
    pub token_counts: Option<TokenCounts>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider returned HTTP {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    RetryExhausted { attempts: u32, last: String },
    #[error("provider did not answer within {after_ms} ms")]
    Timeout { after_ms: u64 },
    #[error("provider response malformed: {0}")]
    Malformed(String),
}

impl LlmError {
    /// HTTP status carried by the error, if any.
    pub fn status(&self) -> Option<u16> {
        match self {
            LlmError::Provider { status, .. } => Some(*status),
            _ => None,
        }
    }
}

#[async_trait]
pub trait LlmProvider: Send + Sync {
    fn name(&self) -> &str;

    async fn complete(&self, request: &LlmRequest) -> Result<Completion, LlmError>;
}

fn default_max_in_flight() -> usize {
    4
}

/// Provider selection as it appears in the service config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LlmConfig {
    Mock {
        #[serde(flatten)]
        mock: MockConfig,
        #[serde(default = "default_max_in_flight")]
        max_in_flight: usize,
    },
    Http(ProviderConfig),
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig::Mock {
            mock: MockConfig::default(),
            max_in_flight: default_max_in_flight(),
        }
    }
}

/// Limits in-flight calls, measures latency and counts calls.
#[derive(Clone)]
pub struct LlmGateway {
    provider: Arc<dyn LlmProvider>,
    limiter: Arc<Semaphore>,
    calls: Arc<AtomicU64>,
}

impl fmt::Debug for LlmGateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmGateway")
            .field("provider", &self.provider.name())
            .field("calls", &self.calls_made())
            .finish()
    }
}

impl LlmGateway {
    pub fn new(provider: Arc<dyn LlmProvider>, max_in_flight: usize) -> Self {
        Self {
            provider,
            limiter: Arc::new(Semaphore::new(max_in_flight.max(1))),
            calls: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn from_config(config: &LlmConfig) -> Self {
        match config {
            LlmConfig::Mock {
                mock,
                max_in_flight,
            } => Self::new(Arc::new(MockProvider::new(mock.clone())), *max_in_flight),
            LlmConfig::Http(provider) => Self::new(
                Arc::new(ChatCompletionProvider::from_env(
                    provider.clone(),
                    Arc::new(ReqwestTransport::new()),
                )),
                provider.max_in_flight,
            ),
        }
    }

    /// Same provider and in-flight limit, separate call counter.
    pub fn with_fresh_counter(&self) -> Self {
        Self {
            provider: self.provider.clone(),
            limiter: self.limiter.clone(),
            calls: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    /// Total calls issued through this gateway (and its clones).
    pub fn calls_made(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub async fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        request.validate()?;
        let _permit = self
            .limiter
            .acquire()
            .await
            .expect("gateway semaphore is never closed");
        self.calls.fetch_add(1, Ordering::SeqCst);
        let started = Instant::now();
        let result = self.provider.complete(request).await;
        let latency_ms = started.elapsed().as_millis() as u64;
        tracing::debug!(call_site = %request.call_site, latency_ms, ok = result.is_ok(), "llm call");
        let completion = result?;
        Ok(LlmResponse {
            text: completion.text,
            latency_ms,
            provider: self.provider.name().to_string(),
            token_counts: completion.token_counts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;
    use std::time::Duration;

    fn request(site: CallSite) -> LlmRequest {
        LlmRequest {
            system_prompt: "sys".into(),
            user_prompt: "user".into(),
            max_output_tokens: 16,
            temperature: 0.0,
            call_site: site,
        }
    }

    struct Slow {
        in_flight: AtomicUsize,
        peak: AtomicUsize,
    }

    #[async_trait]
    impl LlmProvider for Slow {
        fn name(&self) -> &str {
            "slow"
        }

        async fn complete(&self, _request: &LlmRequest) -> Result<Completion, LlmError> {
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            tokio::time::sleep(Duration::from_millis(20)).await;
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            Ok(Completion {
                text: "ok".into(),
                token_counts: None,
            })
        }
    }

    #[tokio::test]
    async fn in_flight_limit_is_enforced() {
        let slow = Arc::new(Slow {
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let gateway = LlmGateway::new(slow.clone(), 2);
        let calls = (0..6).map(|_| {
            let g = gateway.clone();
            tokio::spawn(async move { g.complete(&request(CallSite::AnswerSynthesis)).await })
        });
        for call in calls.collect::<Vec<_>>() {
            call.await.unwrap().unwrap();
        }
        assert_eq!(slow.peak.load(Ordering::SeqCst), 2);
        assert_eq!(gateway.calls_made(), 6);
    }

    #[tokio::test]
    async fn invalid_requests_are_rejected_before_the_provider() {
        let gateway = LlmGateway::from_config(&LlmConfig::default());
        let mut r = request(CallSite::QueryGeneration);
        r.user_prompt = "  ".into();
        assert!(matches!(gateway.complete(&r).await, Err(LlmError::InvalidRequest(_))));
        let mut r = request(CallSite::QueryGeneration);
        r.temperature = 2.5;
        assert!(matches!(gateway.complete(&r).await, Err(LlmError::InvalidRequest(_))));
        assert_eq!(gateway.calls_made(), 0);
    }

    #[test]
    fn config_shapes() {
        let mock: LlmConfig =
            serde_json::from_str(r#"{"kind":"mock","answer_synthesis_delay_ms":200}"#).unwrap();
        match mock {
            LlmConfig::Mock { mock, max_in_flight } => {
                assert_eq!(mock.answer_synthesis_delay_ms, 200);
                assert_eq!(mock.query_generation_delay_ms, 0);
                assert_eq!(max_in_flight, 4);
            }
            other => panic!("{other:?}"),
        }
        let http: LlmConfig = serde_json::from_str(
            r#"{"kind":"http","endpoint_url":"https://example.invalid/v1/chat/completions","model":"m"}"#,
        )
        .unwrap();
        match http {
            LlmConfig::Http(p) => {
                assert_eq!(p.timeout_s, 60);
                assert_eq!(p.max_retries, 2);
                assert_eq!(p.token_env, DEFAULT_TOKEN_ENV);
            }
            other => panic!("{other:?}"),
        }
    }
}
