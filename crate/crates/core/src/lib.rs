//! Temporal contrastive representations for combinatorial puzzles.
//!
//! The crate trains a residual MLP encoder with an InfoNCE objective whose
//! batches repeat each sampled trajectory several times, so that some
//! negatives come from the same trajectory as their anchor. Distances in the
//! learned latent space then drive greedy rollouts, best-first search, or
//! weighted A* over the puzzle graph.
//!
//! Layout:
//! - [`nn`]: dense matrices, the encoder with hand-written backprop, Adam, checkpoints
//! - [`env`]: the five puzzles (dynamics, encodings, generators)
//! - [`dataset`]: trajectories, cycle removal and the repetition-factor sampler
//! - [`contrastive`]: critic, InfoNCE variants, training step
//! - [`supervised`]: the distance-bin classifier baseline
//! - [`search`]: greedy rollout, best-first search, weighted A*, BFS oracle
//! - [`metrics`]: Spearman correlation, success curves, length CDFs
//! - [`experiment`]: config-driven pipeline behind the `crtr` binary

pub mod contrastive;
pub mod dataset;
pub mod env;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod search;
pub mod supervised;

pub use error::{Error, Result};
