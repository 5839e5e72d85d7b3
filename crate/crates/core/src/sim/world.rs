use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::WorldError;
use crate::alignment::{Embedding, EmbeddingTable, ImageRef, SyntheticScorer, TokenId};
use crate::decoder::VocabEntry;

const FUNCTION_WORDS: &[&str] = &[
    ".", "a", "with", "and", "near", "the", "on", "of", "in", "beside",
];

const GROUNDED_NAMES: &[&str] = &[
    "cat", "sofa", "dog", "table", "lamp", "window", "tree", "person", "ball", "book", "cup",
    "plate", "bench", "bicycle", "clock", "bed", "pillow", "door", "grass", "sky", "boat", "kite",
    "horse", "umbrella", "bottle", "laptop", "phone", "bag", "hat", "shoe", "fence", "bird",
];

const HALLUCINATION_NAMES: &[&str] = &[
    "car", "chair", "fork", "knife", "spoon", "bowl", "vase", "remote", "sink", "oven", "toaster",
    "train",
];

/// Parameters of the toy model's drift toward absent concepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftParams {
    /// Per-step growth of the hallucination-concept logit bonus.
    pub prior_strength: f64,
    /// Generated-token index at which the bonus starts ramping.
    pub drift_onset: usize,
    /// Base logit of a present concept.
    pub concept_logit: f64,
    /// Base logit of a function word.
    pub function_logit: f64,
}

impl Default for DriftParams {
    fn default() -> Self {
        Self {
            prior_strength: 0.06,
            drift_onset: 8,
            concept_logit: 6.0,
            function_logit: 5.0,
        }
    }
}

/// Sizes and seeds of a synthetic world. Loadable from TOML or JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub n_images: usize,
    pub n_grounded: usize,
    pub n_hallucination: usize,
    /// Includes the sentence delimiter `.`.
    pub n_function: usize,
    pub embedding_dim: usize,
    pub sigma_noise: f64,
    pub drift: DriftParams,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            n_images: 8,
            n_grounded: 24,
            n_hallucination: 3,
            n_function: 4,
            embedding_dim: 64,
            sigma_noise: 0.05,
            drift: DriftParams::default(),
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: &str| Err(WorldError::InvalidSpec(m.to_owned()));
        if self.n_images == 0 || self.n_grounded == 0 || self.n_hallucination == 0 {
            return bad("n_images, n_grounded and n_hallucination must be >= 1");
        }
        if self.n_function == 0 {
            return bad("n_function must be >= 1 (the sentence delimiter)");
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be >= 1");
        }
        if !(self.sigma_noise.is_finite() && self.sigma_noise >= 0.0) {
            return bad("sigma_noise must be finite and >= 0");
        }
        let d = &self.drift;
        if !(d.prior_strength.is_finite() && d.prior_strength >= 0.0) {
            return bad("drift.prior_strength must be finite and >= 0");
        }
        if d.drift_onset == 0 {
            return bad("drift.drift_onset must be >= 1");
        }
        if !(d.concept_logit.is_finite() && d.function_logit.is_finite()) {
            return bad("drift logits must be finite");
        }
        Ok(())
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self, WorldError> {
        let spec: WorldSpec = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| WorldError::InvalidSpec(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| WorldError::InvalidSpec(e.to_string()))?
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    GroundedConcept,
    HallucinationConcept,
    FunctionWord,
    Eos,
}

impl TokenKind {
    pub fn is_concept(self) -> bool {
        matches!(
            self,
            TokenKind::GroundedConcept | TokenKind::HallucinationConcept
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldToken {
    pub id: TokenId,
    pub text: String,
    pub kind: TokenKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldImage {
    pub image: ImageRef,
    pub present: BTreeSet<TokenId>,
    pub embedding: Embedding,
}

/// Seeded synthetic corpus: images with ground-truth concepts, an embedding
/// table for the synthetic scorer, and the parameters of a drift-prone toy
/// language model.
#[derive(Debug, Clone)]
pub struct DriftWorld {
    pub(super) spec: WorldSpec,
    pub(super) seed: u64,
    pub(super) tokens: Vec<WorldToken>,
    pub(super) vocab: Vec<VocabEntry>,
    pub(super) images: Vec<WorldImage>,
    pub(super) embedding_seed: u64,
    pub(super) model_seed: u64,
    pub(super) table: Arc<EmbeddingTable>,
    /// Per-token offset added to the base logit, drawn from the model seed.
    pub(super) jitter: Vec<f64>,
    /// Per-token drift weight; non-zero only for hallucination concepts.
    pub(super) drift_weight: Vec<f64>,
}

fn name(list: &[&str], i: usize, fallback: &str) -> String {
    list.get(i)
        .map_or_else(|| format!("{fallback}{i}"), |s| (*s).to_owned())
}

fn image_noise_seed(embedding_seed: u64, index: usize) -> u64 {
    embedding_seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Builds the world described by `spec`, using `seed` for every random
/// choice (the spec's own `seed` field is ignored).
pub fn generate_world(spec: &WorldSpec, seed: u64) -> Result<DriftWorld, WorldError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embedding_seed: u64 = rng.gen();
    let model_seed: u64 = rng.gen();

    let mut tokens = vec![WorldToken {
        id: TokenId(0),
        text: String::new(),
        kind: TokenKind::Eos,
    }];
    let mut push = |text: String, kind| {
        let id = TokenId(tokens.len() as u32);
        tokens.push(WorldToken { id, text, kind });
    };
    for i in 0..spec.n_function {
        push(name(FUNCTION_WORDS, i, "fw"), TokenKind::FunctionWord);
    }
    for i in 0..spec.n_grounded {
        push(
            name(GROUNDED_NAMES, i, "object"),
            TokenKind::GroundedConcept,
        );
    }
    for i in 0..spec.n_hallucination {
        push(
            name(HALLUCINATION_NAMES, i, "phantom"),
            TokenKind::HallucinationConcept,
        );
    }
    let vocab = tokens
        .iter()
        .map(|t| VocabEntry {
            id: t.id,
            text: t.text.clone(),
        })
        .collect();

    let table = Arc::new(EmbeddingTable::generate(
        tokens.iter().map(|t| t.text.clone()).collect(),
        spec.embedding_dim,
        embedding_seed,
    ));

    let grounded_start = 1 + spec.n_function;
    let g = spec.n_grounded;
    let mut images = Vec::with_capacity(spec.n_images);
    for i in 0..spec.n_images {
        let count = rng.gen_range(g.min(2)..=g.min(5));
        let present: BTreeSet<TokenId> = sample(&mut rng, g, count)
            .into_iter()
            .map(|j| TokenId((grounded_start + j) as u32))
            .collect();
        let concepts: Vec<TokenId> = present.iter().copied().collect();
        let embedding = table
            .image_embedding(
                &concepts,
                image_noise_seed(embedding_seed, i),
                spec.sigma_noise,
            )
            .map_err(|e| WorldError::InvalidSpec(e.to_string()))?;
        images.push(WorldImage {
            image: ImageRef::new(format!("img-{i:04}")),
            present,
            embedding,
        });
    }

    let mut mrng = ChaCha8Rng::seed_from_u64(model_seed);
    let mut jitter = Vec::with_capacity(tokens.len());
    let mut drift_weight = Vec::with_capacity(tokens.len());
    for t in &tokens {
        let j = match t.kind {
            TokenKind::Eos => 0.0,
            _ => mrng.gen_range(-0.25..=0.25),
        };
        let w = match t.kind {
            TokenKind::HallucinationConcept => mrng.gen_range(0.5..=1.0),
            _ => 0.0,
        };
        jitter.push(j);
        drift_weight.push(w);
    }

    Ok(DriftWorld {
        spec: spec.clone(),
        seed,
        tokens,
        vocab,
        images,
        embedding_seed,
        model_seed,
        table,
        jitter,
        drift_weight,
    })
}

impl DriftWorld {
    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn embedding_seed(&self) -> u64 {
        self.embedding_seed
    }

    pub fn model_seed(&self) -> u64 {
        self.model_seed
    }

    pub fn drift(&self) -> &DriftParams {
        &self.spec.drift
    }

    pub fn tokens(&self) -> &[WorldToken] {
        &self.tokens
    }

    pub fn vocab(&self) -> &[VocabEntry] {
        &self.vocab
    }

    pub fn kind(&self, token: TokenId) -> Option<TokenKind> {
        self.tokens.get(token.index()).map(|t| t.kind)
    }

    pub fn text(&self, token: TokenId) -> Option<&str> {
        self.tokens.get(token.index()).map(|t| t.text.as_str())
    }

    pub fn eos(&self) -> TokenId {
        TokenId(0)
    }

    /// The sentence delimiter `.`.
    pub fn delimiter(&self) -> TokenId {
        TokenId(1)
    }

    pub fn images(&self) -> &[WorldImage] {
        &self.images
    }

    pub fn image_index(&self, id: &str) -> Option<usize> {
        self.images.iter().position(|im| im.image.id == id)
    }

    pub fn image(&self, id: &str) -> Option<&WorldImage> {
        self.image_index(id).map(|i| &self.images[i])
    }

    pub fn table(&self) -> &Arc<EmbeddingTable> {
        &self.table
    }

    pub fn ids_of(&self, kind: TokenKind) -> impl Iterator<Item = TokenId> + '_ {
        self.tokens
            .iter()
            .filter(move |t| t.kind == kind)
            .map(|t| t.id)
    }

    /// A synthetic scorer with every image of this world registered.
    pub fn scorer(&self) -> SyntheticScorer {
        let mut s = SyntheticScorer::new(self.table.clone());
        for im in &self.images {
            s.register_image(im.image.id.clone(), im.embedding.clone());
        }
        s
    }

    /// Checks the structural invariants of the world.
    pub fn check_invariants(&self) -> Result<(), String> {
        let grounded: HashSet<TokenId> = self.ids_of(TokenKind::GroundedConcept).collect();
        let halluc: HashSet<TokenId> = self.ids_of(TokenKind::HallucinationConcept).collect();
        if !grounded.is_disjoint(&halluc) {
            return Err("grounded and hallucination concepts overlap".into());
        }
        let mut ids = HashSet::new();
        for im in &self.images {
            if im.image.id.is_empty() || !ids.insert(im.image.id.as_str()) {
                return Err(format!("image id `{}` empty or duplicated", im.image.id));
            }
            if im.present.is_empty() {
                return Err(format!("image {} has no concepts", im.image.id));
            }
            if !im.present.iter().all(|c| grounded.contains(c)) {
                return Err(format!("image {} has a non-grounded concept", im.image.id));
            }
        }
        let texts: HashSet<&str> = self.tokens.iter().map(|t| t.text.as_str()).collect();
        if texts.len() != self.tokens.len() {
            return Err("token texts are not unique".into());
        }
        Ok(())
    }
}
