//! Embedding and composition backends.
//!
//! The engine only talks to the [`Embedder`] and [`Composer`] traits. The mock pair is
//! deterministic and offline; the remote pair speaks a small JSON protocol over HTTP.

mod mock;
mod remote;

use thiserror::Error;

pub use mock::{MockComposer, MockEmbedder, MOCK_DIMENSION};
pub use remote::{RemoteComposer, RemoteConfig, RemoteEmbedder, DEFAULT_PROMPT_TEMPLATE};

use crate::query::Zoom;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("dimension mismatch d={got}, expected d={expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("malformed provider response: {0}")]
    BadResponse(String),
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    fn model_id(&self) -> &str;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, ProviderError>;

    fn embed(&self, text: &str) -> Result<Vec<f32>, ProviderError> {
        let mut out = self.embed_batch(&[text])?;
        out.pop()
            .ok_or_else(|| ProviderError::BadResponse("empty embedding batch".into()))
    }
}

/// A retrieved passage handed to the composer.
#[derive(Debug, Clone, PartialEq)]
pub struct Passage {
    pub chunk_id: String,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposeRequest<'a> {
    pub question: &'a str,
    pub zoom: Zoom,
    pub passages: &'a [Passage],
}

pub trait Composer: Send + Sync {
    fn model_id(&self) -> &str;

    /// Draft answer text in which every sentence should carry `[chunk_id]` markers.
    fn compose(&self, request: &ComposeRequest<'_>) -> Result<String, ProviderError>;

    /// Candidate claim lines (`subject | relation | object ...`) found in `text`.
    /// Backends without a language model return nothing.
    fn extract_claims(&self, _text: &str) -> Result<Vec<String>, ProviderError> {
        Ok(Vec::new())
    }
}
