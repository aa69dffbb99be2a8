//! Unified motion-and-affinity model for online multi-object tracking.
//!
//! One Siamese/triplet network provides both the single-object tracking
//! response (motion) and identity embeddings (affinity). The tracker uses the
//! former to follow targets frame by frame and the latter to detect occlusions
//! and re-associate occluded targets with new detections.

pub mod association;
pub mod bbox;
pub mod error;
pub mod kv;
pub mod losses;
pub mod metrics;
pub mod mot_io;
pub mod network;
pub mod patch;
pub mod tensor;
pub mod tracker;
pub mod training;

pub use error::{Error, Result};
