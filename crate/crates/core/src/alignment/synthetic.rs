use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{AlignmentError, AlignmentScore, AlignmentScorer, Embedding, ImageRef, TokenId};

const NEUTRAL_SALT: u64 = 0x6e65_7574_7261_6c00;

/// Seeded per-token unit embeddings plus a neutral vector for unknown text.
///
/// The table is a pure function of `(texts, dim, seed)` and is never
/// serialized; worlds rebuild it from their seeds.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    seed: u64,
    texts: Vec<String>,
    index: HashMap<String, TokenId>,
    vectors: Vec<Embedding>,
    neutral: Embedding,
}

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    Embedding::new(raw).normalized()
}

impl EmbeddingTable {
    /// Token `i` of `texts` gets id `TokenId(i)`. Texts that are empty after
    /// trimming (EOS, padding) get a vector but are not reachable from text.
    pub fn generate(texts: Vec<String>, dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = texts.iter().map(|_| gaussian_unit(&mut rng, dim)).collect();
        let neutral = gaussian_unit(&mut ChaCha8Rng::seed_from_u64(seed ^ NEUTRAL_SALT), dim);
        let index = texts
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.trim().is_empty())
            .map(|(i, t)| (t.clone(), TokenId(i as u32)))
            .collect();
        Self {
            dim,
            seed,
            texts,
            index,
            vectors,
            neutral,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Option<&Embedding> {
        self.vectors.get(id.index())
    }

    pub fn token_text(&self, id: TokenId) -> Option<&str> {
        self.texts.get(id.index()).map(String::as_str)
    }

    pub fn lookup(&self, text: &str) -> Option<TokenId> {
        self.index.get(text).copied()
    }

    pub fn neutral(&self) -> &Embedding {
        &self.neutral
    }

    /// Synthetic text encoder: whitespace tokens, mean of token vectors,
    /// normalized. Unknown tokens contribute the neutral vector; empty text
    /// maps to the neutral vector.
    pub fn text_embedding(&self, text: &str) -> Embedding {
        let mut sum = vec![0.0; self.dim];
        let mut count = 0usize;
        for word in text.split_whitespace() {
            let v = match self.index.get(word) {
                Some(id) => &self.vectors[id.index()],
                None => &self.neutral,
            };
            for (s, x) in sum.iter_mut().zip(v.components()) {
                *s += x;
            }
            count += 1;
        }
        if count == 0 {
            return self.neutral.clone();
        }
        let n = count as f64;
        Embedding::new(sum.into_iter().map(|s| s / n).collect()).normalized()
    }

    /// Synthetic image encoder: normalized mean of the concept vectors plus
    /// i.i.d. Gaussian noise of standard deviation `sigma_noise`.
    pub fn image_embedding(
        &self,
        concepts: &[TokenId],
        seed: u64,
        sigma_noise: f64,
    ) -> Result<Embedding, AlignmentError> {
        if concepts.is_empty() {
            return Err(AlignmentError::InvalidInput(
                "image needs at least one concept".into(),
            ));
        }
        if !(sigma_noise.is_finite() && sigma_noise >= 0.0) {
            return Err(AlignmentError::InvalidInput(format!(
                "sigma_noise {sigma_noise}"
            )));
        }
        let mut sum = vec![0.0; self.dim];
        for &c in concepts {
            let v = self.token(c).ok_or(AlignmentError::UnknownConcept(c))?;
            for (s, x) in sum.iter_mut().zip(v.components()) {
                *s += x;
            }
        }
        let n = concepts.len() as f64;
        let mut mean: Vec<f64> = sum.into_iter().map(|s| s / n).collect();
        if sigma_noise > 0.0 {
            let normal = Normal::new(0.0, sigma_noise).expect("finite non-negative sigma");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for m in &mut mean {
                *m += normal.sample(&mut rng);
            }
        }
        Ok(Embedding::new(mean).normalized())
    }
}

/// Deterministic scorer over an [`EmbeddingTable`].
#[derive(Debug, Clone)]
pub struct SyntheticScorer {
    table: Arc<EmbeddingTable>,
    images: HashMap<String, Embedding>,
}

impl SyntheticScorer {
    pub fn new(table: Arc<EmbeddingTable>) -> Self {
        Self {
            table,
            images: HashMap::new(),
        }
    }

    pub fn register_image(&mut self, id: impl Into<String>, embedding: Embedding) {
        self.images.insert(id.into(), embedding);
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    fn image_embedding<'a>(&'a self, image: &'a ImageRef) -> Result<&'a Embedding, AlignmentError> {
        if let Some(e) = &image.embedding {
            return Ok(e);
        }
        self.images
            .get(&image.id)
            .ok_or_else(|| AlignmentError::UnknownImage(image.id.clone()))
    }
}

impl AlignmentScorer for SyntheticScorer {
    fn score(&self, image: &ImageRef, text: &str) -> Result<AlignmentScore, AlignmentError> {
        let img = self.image_embedding(image)?;
        let txt = self.table.text_embedding(text);
        Ok(AlignmentScore::from_cosine(img.cosine(&txt)))
    }

    fn score_batch(
        &self,
        image: &ImageRef,
        texts: &[String],
    ) -> Result<Vec<AlignmentScore>, AlignmentError> {
        if texts.is_empty() {
            return Err(AlignmentError::InvalidInput("empty text batch".into()));
        }
        let img = self.image_embedding(image)?;
        Ok(texts
            .iter()
            .map(|t| AlignmentScore::from_cosine(img.cosine(&self.table.text_embedding(t))))
            .collect())
    }
}
