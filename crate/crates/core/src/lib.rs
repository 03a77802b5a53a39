//! Hierarchical food-item classification on feature-vector datasets.
//!
//! The pipeline clusters fine-grained item labels by visual-feature
//! similarity (affinity propagation over per-item mean/variance profiles),
//! merges them under their coarse parent types, and trains a shared-backbone
//! classifier through a three-stage transfer schedule, repeating the
//! cluster/merge/train cycle until the item-level validation loss stops
//! improving. Evaluation covers accuracy at both hierarchy levels, nutrient
//! composition error, and clustering quality.

pub mod checkpoint;
pub mod clustering;
pub mod commands;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod pipeline;
pub mod rundir;
pub mod seeding;

pub use error::{Error, Result};
