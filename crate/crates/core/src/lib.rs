//! Instance similarity learning.
//!
//! A GAN trained on (anchor, positive, negative) feature triplets produces
//! proxy features that walk along the feature manifold. Instances close to a
//! confident proxy are moved from an anchor's negative set into its positive
//! set, and the grown positive sets supervise a contrastive encoder backed by
//! a memory bank.

pub mod config;
pub mod data;
pub mod eval;
mod error;
pub mod gan;
pub mod loss;
pub mod mining;
pub mod nn;
pub mod pipeline;
pub mod similarity;

pub use config::RunConfig;
pub use data::{Dataset, GroundTruth};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use gan::GanPair;
pub use mining::MiningReport;
pub use nn::Net;
pub use pipeline::{run_eval, run_sweep, run_train, Checkpoint, SweepAxis, Trainer};
pub use similarity::{MemoryBank, SimilarityState, Triplet};
