//! Visually grounded decoding through dynamic logit calibration.
//!
//! At every decoding step past a short warm-up, the top-k candidate tokens
//! are scored for visual alignment, both in the context of the recent
//! generation and in isolation, against an adaptive baseline built from the
//! recent context's own alignment. Their logits are then rescaled so that
//! candidates improving alignment gain probability mass.
//!
//! - [`alignment`]: scorer contract and synthetic, replay and remote scorers.
//! - [`calibrator`]: the calibration math and per-session baseline state.
//! - [`decoder`]: the decode loop, samplers and JSONL traces.
//! - [`sim`]: the seeded semantic-drift testbed and hallucination metrics.
//! - [`cli`]: the `dlc` command-line front end.

pub mod alignment;
pub mod calibrator;
pub mod cli;
pub mod decoder;
pub mod sim;
