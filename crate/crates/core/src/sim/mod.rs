//! Deterministic semantic-drift testbed.
//!
//! A [`DriftWorld`] holds images with known concepts, a seeded embedding table
//! for the synthetic scorer, and a toy language model whose logits drift
//! toward absent concepts as the sequence grows. [`evaluate`] measures how
//! often decoded captions name absent concepts.

mod metrics;
mod model;
mod world;

use thiserror::Error;

use crate::alignment::{AlignmentScorer, TokenId};
use crate::decoder::{decode, DecodeError, DecodeOptions, DecodeOutput, SamplerSpec};

pub use metrics::{
    candidate_snapshots, ccta_trajectory, count_caption, evaluate, write_snapshots_csv,
    write_trajectory_csv, HallucinationReport, ImageReport, MentionCounts, SnapshotRow,
    TrajectoryPoint,
};
pub use model::{toy_model_logits, ToyModel};
pub use world::{
    generate_world, DriftParams, DriftWorld, TokenKind, WorldImage, WorldSpec, WorldToken,
};

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world spec: {0}")]
    InvalidSpec(String),
    #[error("unknown image `{0}`")]
    UnknownImage(String),
    #[error("unknown token {0}")]
    UnknownToken(TokenId),
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
}

/// Decodes a caption for image `image_index` of `world` with an empty prompt.
pub fn decode_image<S: AlignmentScorer + ?Sized>(
    world: &DriftWorld,
    scorer: &S,
    image_index: usize,
    opts: &DecodeOptions,
    sampler: SamplerSpec,
) -> Result<DecodeOutput, DecodeError> {
    let image = &world.images()[image_index].image;
    let opts = DecodeOptions {
        world_seed: Some(world.seed()),
        ..opts.clone()
    };
    decode(&ToyModel::new(world), scorer, image, &[], &opts, sampler)
}
