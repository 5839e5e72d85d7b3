use super::world::{DriftWorld, TokenKind};
use super::WorldError;
use crate::alignment::{ImageRef, TokenId};
use crate::decoder::{ModelError, TokenModel, VocabEntry};

/// Penalty applied to a token class in the slot that does not expect it.
const OFF_SLOT_PENALTY: f64 = 2.0;
/// Per-mention penalty on a present concept, capped at `REPEAT_CAP` mentions.
const REPEAT_PENALTY: f64 = 0.75;
const REPEAT_CAP: usize = 2;
/// Base offset of hallucination concepts relative to `concept_logit`.
const HALLUCINATION_OFFSET: f64 = -3.0;
/// Base offset of grounded concepts absent from the image.
const ABSENT_OFFSET: f64 = -7.0;
const EOS_OFFSET: f64 = -6.0;
/// Delimiter logit relative to `function_logit`: low right after a function
/// word, then rising with sentence length once a concept has been named.
const DELIMITER_LOW: f64 = -4.0;
const DELIMITER_BASE: f64 = -1.5;
const DELIMITER_PER_TOKEN: f64 = 0.5;

/// Toy next-token logits.
///
/// Sentences alternate concept and function-word slots and close with `.`
/// as they grow. Present concepts lead the concept slot; absent grounded
/// concepts sit far below. Hallucination concepts start 3 below and, from
/// `drift_onset` on, gain `weight * prior_strength * (step - drift_onset)`,
/// so late in a sequence they outrank the present concepts while those stay
/// near the top of the distribution.
///
/// `generated` is the generated prefix (no prompt); `step` is the 1-based
/// index of the token about to be produced.
pub fn toy_model_logits(
    world: &DriftWorld,
    generated: &[TokenId],
    image: &ImageRef,
    step: usize,
) -> Result<Vec<f64>, WorldError> {
    let im = world
        .image(&image.id)
        .ok_or_else(|| WorldError::UnknownImage(image.id.clone()))?;
    let d = world.drift();
    let delimiter = world.delimiter();

    let last_kind = generated.last().and_then(|&t| world.kind(t));
    let concept_slot = !matches!(last_kind, Some(k) if k.is_concept());
    let sentence_len = generated
        .iter()
        .rev()
        .take_while(|&&t| t != delimiter)
        .count() as f64;
    let mut mentions = vec![0usize; world.tokens().len()];
    for t in generated {
        if let Some(m) = mentions.get_mut(t.index()) {
            *m += 1;
        }
    }
    let ramp = d.prior_strength * step.saturating_sub(d.drift_onset) as f64;
    let concept_adj = if concept_slot { 0.0 } else { -OFF_SLOT_PENALTY };

    let logits = world
        .tokens()
        .iter()
        .map(|t| {
            let i = t.id.index();
            let jitter = world.jitter[i];
            match t.kind {
                TokenKind::Eos => d.function_logit + EOS_OFFSET,
                TokenKind::FunctionWord if t.id == delimiter => {
                    if concept_slot {
                        d.function_logit + DELIMITER_LOW
                    } else {
                        d.function_logit + DELIMITER_BASE + DELIMITER_PER_TOKEN * sentence_len
                    }
                }
                TokenKind::FunctionWord => {
                    let adj = if concept_slot { -OFF_SLOT_PENALTY } else { 0.0 };
                    d.function_logit + jitter + adj
                }
                TokenKind::GroundedConcept if im.present.contains(&t.id) => {
                    let repeats = mentions[i].min(REPEAT_CAP) as f64;
                    d.concept_logit + jitter - REPEAT_PENALTY * repeats + concept_adj
                }
                TokenKind::GroundedConcept => d.concept_logit + ABSENT_OFFSET + concept_adj,
                TokenKind::HallucinationConcept => {
                    d.concept_logit
                        + HALLUCINATION_OFFSET
                        + jitter
                        + world.drift_weight[i] * ramp
                        + concept_adj
                }
            }
        })
        .collect();
    Ok(logits)
}

/// [`TokenModel`] over a drift world. The first `prompt_len` prefix tokens
/// are treated as prompt and ignored by the toy dynamics.
#[derive(Debug, Clone, Copy)]
pub struct ToyModel<'w> {
    world: &'w DriftWorld,
    prompt_len: usize,
}

impl<'w> ToyModel<'w> {
    pub fn new(world: &'w DriftWorld) -> Self {
        Self {
            world,
            prompt_len: 0,
        }
    }

    pub fn with_prompt_len(world: &'w DriftWorld, prompt_len: usize) -> Self {
        Self { world, prompt_len }
    }
}

impl TokenModel for ToyModel<'_> {
    fn vocabulary(&self) -> &[VocabEntry] {
        self.world.vocab()
    }

    fn eos_token(&self) -> TokenId {
        self.world.eos()
    }

    fn next_logits(&self, prefix: &[TokenId], image: &ImageRef) -> Result<Vec<f64>, ModelError> {
        let generated = &prefix[self.prompt_len.min(prefix.len())..];
        toy_model_logits(self.world, generated, image, generated.len() + 1).map_err(|e| match e {
            WorldError::UnknownImage(id) => ModelError::UnknownImage(id),
            other => ModelError::Other(other.to_string()),
        })
    }
}
