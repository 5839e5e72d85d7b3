//! Image-text alignment scoring.
//!
//! An [`AlignmentScorer`] answers one question: how well does a piece of text
//! describe an image? Scores are raw cosine similarities between an image
//! embedding and a text embedding, so they live in `[-1, 1]`.
//!
//! Three scorers ship with the crate:
//!
//! - [`SyntheticScorer`]: bag-of-token embeddings over a seeded table. Fully
//!   deterministic, used by the drift testbed.
//! - [`ReplayScorer`]: answers from a JSONL file of recorded scores.
//! - [`RemoteScorer`]: HTTP client for an external scoring service.

mod remote;
mod replay;
mod synthetic;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use remote::{RemoteScorer, DEFAULT_MAX_INFLIGHT};
pub use replay::{RecordingScorer, ReplayRecord, ReplayScorer};
pub use synthetic::{EmbeddingTable, SyntheticScorer};

/// Vocabulary index of a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum AlignmentError {
    #[error("unknown image `{0}`")]
    UnknownImage(String),
    #[error("unknown concept token {0}")]
    UnknownConcept(TokenId),
    #[error("scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("no recorded score for image `{image_id}` and text {text:?}")]
    ReplayMiss { image_id: String, text: String },
    #[error("invalid score {0}: must be finite and within [-1, 1]")]
    InvalidScore(f64),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Cosine similarity between an image and a text, always within `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AlignmentScore(f64);

impl AlignmentScore {
    /// Validating constructor for scores that come from outside (wire, files).
    pub fn new(value: f64) -> Result<Self, AlignmentError> {
        if value.is_finite() && (-1.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(AlignmentError::InvalidScore(value))
        }
    }

    /// Wraps a computed cosine, absorbing floating-point overshoot past ±1.
    pub fn from_cosine(value: f64) -> Self {
        debug_assert!(value.is_finite());
        Self(value.clamp(-1.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for AlignmentScore {
    type Error = AlignmentError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<AlignmentScore> for f64 {
    fn from(score: AlignmentScore) -> f64 {
        score.0
    }
}

/// Fixed-length real vector produced by an image or text encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(components: Vec<f64>) -> Self {
        Self(components)
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Returns the unit vector in the same direction. A zero vector stays zero.
    pub fn normalized(&self) -> Embedding {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        Embedding(self.0.iter().map(|x| x / n).collect())
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            return 0.0;
        }
        self.dot(other) / denom
    }
}

/// Handle to an image known to a scorer.
///
/// Synthetic and replay scorers may carry the image embedding inline; the
/// remote scorer only ever sends the id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Embedding>,
}

impl ImageRef {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            embedding: None,
        }
    }

    pub fn with_embedding(id: impl Into<String>, embedding: Embedding) -> Self {
        Self {
            id: id.into(),
            embedding: Some(embedding),
        }
    }
}

/// Body of `POST /score`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub image_id: String,
    pub texts: Vec<String>,
}

/// Response body of `POST /score`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
}

impl ScoreResponse {
    /// Checks the response against the request it answers.
    pub fn validate(self, request: &ScoreRequest) -> Result<Vec<AlignmentScore>, AlignmentError> {
        if self.scores.len() != request.texts.len() {
            return Err(AlignmentError::Protocol(format!(
                "expected {} scores, got {}",
                request.texts.len(),
                self.scores.len()
            )));
        }
        self.scores.into_iter().map(AlignmentScore::new).collect()
    }
}

/// Visual-alignment scorer contract.
///
/// Implementations are immutable after construction and may be shared across
/// decode sessions.
pub trait AlignmentScorer: Send + Sync {
    fn score(&self, image: &ImageRef, text: &str) -> Result<AlignmentScore, AlignmentError>;

    /// Scores every text against one image. Output order matches `texts`.
    /// Any failure fails the whole batch.
    fn score_batch(
        &self,
        image: &ImageRef,
        texts: &[String],
    ) -> Result<Vec<AlignmentScore>, AlignmentError> {
        if texts.is_empty() {
            return Err(AlignmentError::InvalidInput("empty text batch".into()));
        }
        texts.iter().map(|t| self.score(image, t)).collect()
    }
}

impl<S: AlignmentScorer + ?Sized> AlignmentScorer for &S {
    fn score(&self, image: &ImageRef, text: &str) -> Result<AlignmentScore, AlignmentError> {
        (**self).score(image, text)
    }

    fn score_batch(
        &self,
        image: &ImageRef,
        texts: &[String],
    ) -> Result<Vec<AlignmentScore>, AlignmentError> {
        (**self).score_batch(image, texts)
    }
}

impl<S: AlignmentScorer + ?Sized> AlignmentScorer for Box<S> {
    fn score(&self, image: &ImageRef, text: &str) -> Result<AlignmentScore, AlignmentError> {
        (**self).score(image, text)
    }

    fn score_batch(
        &self,
        image: &ImageRef,
        texts: &[String],
    ) -> Result<Vec<AlignmentScore>, AlignmentError> {
        (**self).score_batch(image, texts)
    }
}

impl<S: AlignmentScorer + ?Sized> AlignmentScorer for std::sync::Arc<S> {
    fn score(&self, image: &ImageRef, text: &str) -> Result<AlignmentScore, AlignmentError> {
        (**self).score(image, text)
    }

    fn score_batch(
        &self,
        image: &ImageRef,
        texts: &[String],
    ) -> Result<Vec<AlignmentScore>, AlignmentError> {
        (**self).score_batch(image, texts)
    }
}
