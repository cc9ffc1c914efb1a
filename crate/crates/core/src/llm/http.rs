//! HTTP chat-completion provider (OpenAI-compatible wire format) with
//! exponential-backoff retries on transient failures.
//!
//! Credentials come from the environment only: `KT_API_KEY` for the bearer
//! token and `KT_API_BASE` for the endpoint base URL.

use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{GenerationOutput, GenerationRequest, Provider, ProviderError, TokenUsage};

pub const API_KEY_ENV: &str = "KT_API_KEY";
pub const API_BASE_ENV: &str = "KT_API_BASE";
const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";

/// Retry schedule for transient failures (HTTP 429/5xx and transport errors).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub base_delay: Duration,
    pub factor: u32,
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base_delay: Duration::from_secs(1),
            factor: 2,
            max_attempts: 5,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        self.base_delay * self.factor.saturating_pow(attempt)
    }
}

/// Minimal response surface the provider needs from a transport.
#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Pluggable POST transport, so retry behavior is testable without a server.
pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: &str,
        body: &serde_json::Value,
    ) -> Result<HttpResponse, String>;
}

/// Transport backed by a blocking reqwest client.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::ProviderUnavailable(e.to_string()))?;
        Ok(Self { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: &str,
        body: &serde_json::Value,
    ) -> Result<HttpResponse, String> {
        let resp = self
            .client
            .post(url)
            .bearer_auth(bearer)
            .json(body)
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Chat-completion provider over any [`HttpTransport`].
pub struct HttpProvider<T> {
    transport: T,
    api_key: String,
    endpoint: String,
    policy: RetryPolicy,
    id: String,
}

impl HttpProvider<ReqwestTransport> {
    /// Builds a provider from `KT_API_KEY` / `KT_API_BASE`.
    pub fn from_env() -> Result<Self, ProviderError> {
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| ProviderError::AuthError(format!("{API_KEY_ENV} is not set")))?;
        if api_key.trim().is_empty() {
            return Err(ProviderError::AuthError(format!("{API_KEY_ENV} is empty")));
        }
        let base = std::env::var(API_BASE_ENV).unwrap_or_else(|_| DEFAULT_API_BASE.to_string());
        let transport = ReqwestTransport::new(Duration::from_secs(120))?;
        Ok(Self::new(transport, api_key, &base, RetryPolicy::default()))
    }
}

impl<T: HttpTransport> HttpProvider<T> {
    pub fn new(transport: T, api_key: String, base_url: &str, policy: RetryPolicy) -> Self {
        Self {
            transport,
            api_key,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            policy,
            id: "http".to_string(),
        }
    }

    fn parse(&self, body: &str, latency_ms: u64) -> Result<GenerationOutput, ProviderError> {
        let parsed: ChatResponse = serde_json::from_str(body)
            .map_err(|e| ProviderError::MalformedResponse(format!("{e}: {body}")))?;
        let content = parsed
            .choices
            .first()
            .and_then(|c| c.message.content.clone());
        let soft_error = content.is_none() || content.as_deref() == Some("");
        Ok(GenerationOutput {
            text: content.unwrap_or_default(),
            provider_id: self.id.clone(),
            latency_ms,
            token_usage: parsed.usage.map(|u| TokenUsage {
                prompt: u.prompt_tokens,
                completion: u.completion_tokens,
            }),
            soft_error,
        })
    }
}

fn transient(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

impl<T: HttpTransport> Provider for HttpProvider<T> {
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationOutput, ProviderError> {
        let body = json!({
            "model": request.params.model_id,
            "messages": [{"role": "user", "content": request.prompt.text}],
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_tokens,
        });
        let start = Instant::now();
        let mut last_failure = String::new();
        for attempt in 0..self.policy.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.policy.delay(attempt - 1));
            }
            match self.transport.post_json(&self.endpoint, &self.api_key, &body) {
                Ok(resp) if resp.status == 200 => {
                    return self.parse(&resp.body, start.elapsed().as_millis() as u64);
                }
                Ok(resp) if resp.status == 401 || resp.status == 403 => {
                    return Err(ProviderError::AuthError(format!(
                        "HTTP {}: {}",
                        resp.status, resp.body
                    )));
                }
                Ok(resp) if transient(resp.status) => {
                    last_failure = format!("HTTP {}", resp.status);
                }
                Ok(resp) => {
                    return Err(ProviderError::MalformedResponse(format!(
                        "HTTP {}: {}",
                        resp.status, resp.body
                    )));
                }
                Err(e) => {
                    last_failure = e;
                }
            }
        }
        Err(ProviderError::ProviderUnavailable(format!(
            "{last_failure} after {} attempts",
            self.policy.max_attempts
        )))
    }

    fn id(&self) -> &str {
        &self.id
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::GenParams;
    use crate::prompt::{RenderedPrompt, TemplateId};
    use std::sync::Mutex;

    struct ScriptedTransport {
        responses: Mutex<Vec<Result<HttpResponse, String>>>,
        calls: Mutex<u32>,
    }

    impl ScriptedTransport {
        fn new(responses: Vec<Result<HttpResponse, String>>) -> Self {
            Self {
                responses: Mutex::new(responses),
                calls: Mutex::new(0),
            }
        }
    }

    impl HttpTransport for ScriptedTransport {
        fn post_json(
            &self,
            _url: &str,
            _bearer: &str,
            _body: &serde_json::Value,
        ) -> Result<HttpResponse, String> {
            *self.calls.lock().unwrap() += 1;
            let mut responses = self.responses.lock().unwrap();
            if responses.is_empty() {
                Err("script exhausted".into())
            } else {
                responses.remove(0)
            }
        }
    }

    fn ok_body(text: &str) -> String {
        json!({
            "choices": [{"message": {"role": "assistant", "content": text}}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 3}
        })
        .to_string()
    }

    fn fast_policy() -> RetryPolicy {
        RetryPolicy {
            base_delay: Duration::from_millis(1),
            factor: 2,
            max_attempts: 5,
        }
    }

    fn request() -> GenerationRequest {
        GenerationRequest::new(
            RenderedPrompt::new(TemplateId::Pp, "predict".into()),
            GenParams::default(),
        )
    }

    #[test]
    fn succeeds_after_three_rate_limits() {
        let transport = ScriptedTransport::new(vec![
            Ok(HttpResponse { status: 429, body: "slow down".into() }),
            Ok(HttpResponse { status: 429, body: "slow down".into() }),
            Ok(HttpResponse { status: 429, body: "slow down".into() }),
            Ok(HttpResponse { status: 200, body: ok_body("1") }),
        ]);
        let provider = HttpProvider::new(transport, "k".into(), "http://x", fast_policy());
        let out = provider.complete(&request()).unwrap();
        assert_eq!(out.text, "1");
        assert_eq!(out.token_usage, Some(TokenUsage { prompt: 12, completion: 3 }));
        assert_eq!(*provider.transport.calls.lock().unwrap(), 4);
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let responses = (0..5)
            .map(|_| Ok(HttpResponse { status: 503, body: "down".into() }))
            .collect();
        let provider =
            HttpProvider::new(ScriptedTransport::new(responses), "k".into(), "http://x", fast_policy());
        let err = provider.complete(&request()).unwrap_err();
        assert!(matches!(err, ProviderError::ProviderUnavailable(_)));
        assert_eq!(*provider.transport.calls.lock().unwrap(), 5);
    }

    #[test]
    fn auth_errors_do_not_retry() {
        let transport = ScriptedTransport::new(vec![Ok(HttpResponse {
            status: 401,
            body: "bad key".into(),
        })]);
        let provider = HttpProvider::new(transport, "k".into(), "http://x", fast_policy());
        let err = provider.complete(&request()).unwrap_err();
        assert!(matches!(err, ProviderError::AuthError(_)));
        assert_eq!(*provider.transport.calls.lock().unwrap(), 1);
    }

    #[test]
    fn missing_content_is_soft_error() {
        let body = json!({"choices": [{"message": {"role": "assistant"}}]}).to_string();
        let transport = ScriptedTransport::new(vec![Ok(HttpResponse { status: 200, body })]);
        let provider = HttpProvider::new(transport, "k".into(), "http://x", fast_policy());
        let out = provider.complete(&request()).unwrap();
        assert!(out.soft_error);
        assert!(out.text.is_empty());
    }

    #[test]
    fn backoff_schedule_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(0), Duration::from_secs(1));
        assert_eq!(p.delay(1), Duration::from_secs(2));
        assert_eq!(p.delay(2), Duration::from_secs(4));
        assert_eq!(p.delay(3), Duration::from_secs(8));
    }
}
