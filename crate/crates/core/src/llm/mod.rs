//! Provider abstraction over chat-completion endpoints, deterministic test
//! providers, and the persistent transcript cache.

mod cache;
mod http;
mod providers;

pub use cache::{CachedProvider, TranscriptCache, TranscriptEntry};
pub use http::{HttpProvider, HttpResponse, HttpTransport, ReqwestTransport, RetryPolicy};
pub use providers::{FormatMockProvider, MockProvider, OracleProvider};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::RenderedPrompt;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider unavailable after retries: {0}")]
    ProviderUnavailable(String),
    #[error("authentication failed: {0}")]
    AuthError(String),
    #[error("token budget exceeded: spent {spent} of {budget}")]
    BudgetExceeded { spent: u64, budget: u64 },
    #[error("replay cache has no entry for digest {digest}")]
    ReplayMiss { digest: String },
    #[error("provider returned a malformed response: {0}")]
    MalformedResponse(String),
    #[error("mock script exhausted after {served} responses")]
    ScriptExhausted { served: usize },
}

/// Decoding parameters sent along with a prompt. Part of the cache identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            model_id: "default".into(),
            temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

impl GenParams {
    /// Stable serialization used in cache keys.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("GenParams serializes")
    }
}

/// One completion request: a rendered prompt plus decoding parameters.
#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub prompt: RenderedPrompt,
    pub params: GenParams,
}

impl GenerationRequest {
    pub fn new(prompt: RenderedPrompt, params: GenParams) -> Self {
        Self { prompt, params }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u64,
    pub completion: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt + self.completion
    }
}

/// A provider's answer to one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutput {
    pub text: String,
    pub provider_id: String,
    pub latency_ms: u64,
    pub token_usage: Option<TokenUsage>,
    /// Set when the provider answered but without usable content (for
    /// example an empty completion). Empty text is only legal when flagged.
    pub soft_error: bool,
}

impl GenerationOutput {
    pub fn text(text: impl Into<String>, provider_id: &str) -> Self {
        let text = text.into();
        let soft_error = text.is_empty();
        Self {
            text,
            provider_id: provider_id.to_string(),
            latency_ms: 0,
            token_usage: None,
            soft_error,
        }
    }
}

/// A chat-completion backend. Implementations must be safe for concurrent
/// calls; the engine bounds in-flight requests by its worker-pool size.
pub trait Provider: Send + Sync {
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationOutput, ProviderError>;

    fn id(&self) -> &str;
}

impl<P: Provider + ?Sized> Provider for Arc<P> {
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationOutput, ProviderError> {
        (**self).complete(request)
    }

    fn id(&self) -> &str {
        (**self).id()
    }
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationOutput, ProviderError> {
        (**self).complete(request)
    }

    fn id(&self) -> &str {
        (**self).id()
    }
}

/// Wrapper counting every completion that reaches the inner provider.
pub struct CountingProvider<P> {
    inner: P,
    calls: Arc<AtomicU64>,
}

impl<P: Provider> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn counter(&self) -> Arc<AtomicU64> {
        Arc::clone(&self.calls)
    }
}

impl<P: Provider> Provider for CountingProvider<P> {
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationOutput, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }

    fn id(&self) -> &str {
        self.inner.id()
    }
}

/// Wrapper enforcing a cumulative token ceiling across all calls.
///
/// Usage is taken from the provider's reported counts when present, otherwise
/// estimated at four characters per token.
pub struct BudgetedProvider<P> {
    inner: P,
    budget: u64,
    spent: AtomicU64,
}

impl<P: Provider> BudgetedProvider<P> {
    pub fn new(inner: P, budget: u64) -> Self {
        Self {
            inner,
            budget,
            spent: AtomicU64::new(0),
        }
    }

    pub fn spent(&self) -> u64 {
        self.spent.load(Ordering::SeqCst)
    }

    fn estimate(request: &GenerationRequest, output: &GenerationOutput) -> u64 {
        match &output.token_usage {
            Some(u) => u.total(),
            None => ((request.prompt.text.len() + output.text.len()) as u64).div_ceil(4),
        }
    }
}

impl<P: Provider> Provider for BudgetedProvider<P> {
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationOutput, ProviderError> {
        let spent = self.spent.load(Ordering::SeqCst);
        if spent > self.budget {
            return Err(ProviderError::BudgetExceeded {
                spent,
                budget: self.budget,
            });
        }
        let output = self.inner.complete(request)?;
        self.spent
            .fetch_add(Self::estimate(request, &output), Ordering::SeqCst);
        Ok(output)
    }

    fn id(&self) -> &str {
        self.inner.id()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::TemplateId;

    fn request(text: &str) -> GenerationRequest {
        GenerationRequest::new(
            RenderedPrompt::new(TemplateId::Pp, text.to_string()),
            GenParams::default(),
        )
    }

    #[test]
    fn counting_provider_counts() {
        let p = CountingProvider::new(MockProvider::always("0"));
        for _ in 0..3 {
            p.complete(&request("q")).unwrap();
        }
        assert_eq!(p.calls(), 3);
    }

    #[test]
    fn budget_exceeded_after_ceiling() {
        // Estimated cost per call: (1 + 1 chars) / 4 rounded up = 1 token.
        let p = BudgetedProvider::new(MockProvider::always("0"), 2);
        assert!(p.complete(&request("q")).is_ok());
        assert!(p.complete(&request("q")).is_ok());
        assert!(p.complete(&request("q")).is_ok()); // spends the last token
        let err = p.complete(&request("q")).unwrap_err();
        assert!(matches!(err, ProviderError::BudgetExceeded { .. }));
    }

    #[test]
    fn empty_output_is_flagged_soft() {
        let out = GenerationOutput::text("", "mock");
        assert!(out.soft_error);
        let out = GenerationOutput::text("x", "mock");
        assert!(!out.soft_error);
    }
}
