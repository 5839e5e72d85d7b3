//! Autoregressive decoding with optional per-step logit calibration.

mod sampler;
mod trace;

use thiserror::Error;

use crate::alignment::{AlignmentError, AlignmentScorer, ImageRef, TokenId};
use crate::calibrator::{CalibrationConfig, Calibrator, Candidate, ConfigError};

pub use sampler::{argmax, ranked_indices, top_k_indices, Sampler, SamplerKind, SamplerSpec};
pub use trace::{
    AbortRecord, AuditError, DecodeTrace, SessionHeader, StepRecord, TraceError, AUDIT_TOLERANCE,
    SCHEMA_VERSION,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    pub id: TokenId,
    pub text: String,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown image `{0}`")]
    UnknownImage(String),
    #[error("{0}")]
    Other(String),
}

/// Next-token model contract. `vocabulary()[i].id` must equal `TokenId(i)`.
pub trait TokenModel {
    fn vocabulary(&self) -> &[VocabEntry];

    fn eos_token(&self) -> TokenId;

    /// Unnormalized next-token scores for the whole vocabulary, given the
    /// full prefix (prompt followed by generated tokens).
    fn next_logits(&self, prefix: &[TokenId], image: &ImageRef) -> Result<Vec<f64>, ModelError>;

    /// Tokens that are never scored for alignment.
    fn is_special(&self, token: TokenId) -> bool {
        token == self.eos_token()
    }
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("calibration config: {0}")]
    Config(#[from] ConfigError),
    #[error("sampler: {0}")]
    Sampler(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("scorer: {0}")]
    Scorer(#[from] AlignmentError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOptions {
    pub calibration: CalibrationConfig,
    /// Skip calibration entirely; the scorer is never queried.
    pub vanilla: bool,
    pub max_new_tokens: usize,
    /// Recorded in the trace header only.
    pub world_seed: Option<u64>,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            calibration: CalibrationConfig::default(),
            vanilla: false,
            max_new_tokens: 64,
            world_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    /// Generated tokens, prompt excluded. Ends with EOS if EOS was sampled.
    pub tokens: Vec<TokenId>,
    pub trace: DecodeTrace,
}

/// Space-joined text of the last `min(n, generated)` generated tokens.
pub fn context_text(
    prefix: &[TokenId],
    prompt_len: usize,
    n: usize,
    vocab: &[VocabEntry],
) -> String {
    let generated = &prefix[prompt_len.min(prefix.len())..];
    let start = generated.len().saturating_sub(n);
    generated[start..]
        .iter()
        .map(|t| vocab[t.index()].text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

fn check_logits(logits: &[f64], vocab_len: usize) -> Result<(), String> {
    if logits.len() != vocab_len {
        return Err(format!(
            "model returned {} logits for vocabulary of {vocab_len}",
            logits.len()
        ));
    }
    if let Some(i) = logits.iter().position(|l| !l.is_finite()) {
        return Err(format!("non-finite logit at token {i}"));
    }
    Ok(())
}

/// Runs one decode session.
///
/// Precondition failures (bad config, empty vocabulary, `max_new_tokens == 0`)
/// return `Err`. Failures during generation stop the session and are
/// reported through `trace.abort`, keeping the records written so far.
pub fn decode<M, S>(
    model: &M,
    scorer: &S,
    image: &ImageRef,
    prompt: &[TokenId],
    opts: &DecodeOptions,
    sampler: SamplerSpec,
) -> Result<DecodeOutput, DecodeError>
where
    M: TokenModel + ?Sized,
    S: AlignmentScorer + ?Sized,
{
    let cfg = &opts.calibration;
    cfg.validate()?;
    sampler.validate().map_err(DecodeError::Sampler)?;
    if opts.max_new_tokens == 0 {
        return Err(DecodeError::InvalidRequest(
            "max_new_tokens must be >= 1".into(),
        ));
    }
    let vocab = model.vocabulary();
    if vocab.is_empty() {
        return Err(DecodeError::InvalidRequest("empty vocabulary".into()));
    }
    if let Some((i, _)) = vocab.iter().enumerate().find(|(i, e)| e.id.index() != *i) {
        return Err(DecodeError::InvalidRequest(format!(
            "vocabulary entry {i} has mismatched id"
        )));
    }
    if let Some(t) = prompt.iter().find(|t| t.index() >= vocab.len()) {
        return Err(DecodeError::InvalidRequest(format!(
            "prompt token {t} outside vocabulary"
        )));
    }

    let eos = model.eos_token();
    let mut calibrator = if opts.vanilla {
        None
    } else {
        Some(Calibrator::new(cfg.clone())?)
    };
    let mut sampler_state = Sampler::new(sampler);
    let mut trace = DecodeTrace::new(SessionHeader {
        config: cfg.clone(),
        vanilla: opts.vanilla,
        sampler,
        image_id: image.id.clone(),
        world_seed: opts.world_seed,
        sampler_seed: sampler.seed,
        max_new_tokens: opts.max_new_tokens,
        schema_version: SCHEMA_VERSION,
    });
    let mut prefix = prompt.to_vec();
    let mut tokens = Vec::new();

    for step in 1..=opts.max_new_tokens {
        let mut logits = match model.next_logits(&prefix, image) {
            Ok(l) => l,
            Err(e) => {
                trace.abort = Some(DecodeError::Model(e).to_string());
                break;
            }
        };
        if let Err(msg) = check_logits(&logits, vocab.len()) {
            trace.abort = Some(format!("model: {msg}"));
            break;
        }

        let mut record = StepRecord {
            step,
            baseline: calibrator.as_ref().map_or(0.0, Calibrator::baseline),
            lambda: 0.0,
            hcta: None,
            sampled_token: TokenId(0),
            sampled_text: String::new(),
            calibrated: false,
            candidates: Vec::new(),
        };

        if let Some(cal) = calibrator.as_mut().filter(|_| step > cfg.warmup_steps) {
            let context = context_text(&prefix, prompt.len(), cfg.window_n, vocab);
            let pool: Vec<Candidate> = top_k_indices(&logits, cfg.top_k)
                .into_iter()
                .map(|i| {
                    let token = TokenId(i as u32);
                    Candidate {
                        token,
                        text: vocab[i].text.clone(),
                        logit: logits[i],
                        special: model.is_special(token),
                    }
                })
                .collect();
            match cal.step(scorer, image, &context, &pool) {
                Ok(sc) => {
                    for a in &sc.assessments {
                        logits[a.token.index()] = a.logit_after;
                    }
                    record.baseline = sc.baseline;
                    record.lambda = sc.lambda;
                    record.hcta = Some(sc.hcta);
                    record.calibrated = true;
                    record.candidates = sc.assessments;
                }
                Err(e) => {
                    trace.abort = Some(DecodeError::Scorer(e).to_string());
                    break;
                }
            }
        }

        let token = sampler_state.sample(&logits);
        record.sampled_token = token;
        record.sampled_text = vocab[token.index()].text.clone();
        trace.steps.push(record);
        tokens.push(token);
        prefix.push(token);
        if token == eos {
            break;
        }
    }

    Ok(DecodeOutput { tokens, trace })
}
