//! Reinforced item-space exploration for generative sequential recommendation.
//!
//! The crate trains a compact autoregressive token policy over a structured item
//! catalog in two stages: supervised warm-up followed by group-relative policy
//! optimization with oversampled/de-duplicated rollouts, a prefix-tree certainty
//! mask, selective covariance-based KL regularization and a SimPO loss on groups
//! whose rollouts all missed. Everything runs on a seeded synthetic world.
//!
//! Module map:
//!
//! - [`item_space`]: tokens, items, the prefix tree and the certainty mask
//! - [`world`]: synthetic catalog/interaction generator and prompt assembly
//! - [`tape`], [`policy`], [`decoding`]: the differentiable policy and decoders
//! - [`rollout`]: rollout groups, rewards, advantages and preference pairs
//! - [`losses`]: modified/vanilla GRPO, SimPO and SFT objectives
//! - [`optim`], [`train`]: AdamW and the two training stages
//! - [`metrics`]: ranking metrics, popularity split, utilization accounting
//! - [`config`], [`experiment`]: experiment configuration and the driver commands
//!
//! See `examples/` for one runnable program per capability.

pub mod checkpoint;
pub mod config;
pub mod decoding;
pub mod error;
pub mod experiment;
pub mod item_space;
mod kernels;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod policy;
pub mod rng;
pub mod rollout;
pub mod tape;
pub mod train;
pub mod world;

pub use error::{Error, Result};
