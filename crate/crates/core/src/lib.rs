//! Deterministic single-process simulator of two-phase federated training
//! for graph foundation models: federated graph-text contrastive
//! pre-training with history matching, followed by frozen-backbone prompt
//! fine-tuning with group-aware prompt aggregation.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`). The
//! training pipeline runs in `f32`, the precision of the wire and
//! checkpoint formats; gradient checks run the same code in `f64`.

pub mod alignment;
pub mod checksum;
pub mod config;
pub mod encoders;
pub mod error;
pub mod federation;
pub mod graph;
pub mod harness;
pub mod prompts;
pub mod prototypes;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod transport;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Pipeline-precision aliases.
pub type Params = encoders::EncoderParams<f32>;
pub type Text = encoders::TextEncoder<f32>;
pub type Pool = prompts::PromptPool<f32>;
pub type Pretrained = federation::PretrainedBundle<f32>;
pub type Finetuned = prompts::FinetunedBundle<f32>;

/// Double-precision aliases for verification.
pub type Params64 = encoders::EncoderParams<f64>;
pub type Text64 = encoders::TextEncoder<f64>;
