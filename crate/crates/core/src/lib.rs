//! Single-multi evolution loop for pools of tiny language models.
//!
//! A pool of small trainable LMs alternates between a *multi-step*, where the
//! pool collaborates (routing, debate, logit fusion, or dare-ties weight
//! merging) to answer instructions, and a *single-step*, where every pool
//! member is distilled on the collaboration outputs (supervised, multi-student
//! mixture, or on-policy KD). Iterating the two steps evolves both the
//! individual models and the collaboration system built from them.
//!
//! The crate is organised around that loop:
//!
//! - [`vocab`], [`tasks`], [`scoring`]: the shared token vocabulary, synthetic
//!   task families with gold answers, and exact/similarity scorers.
//! - [`model`], [`generate`], [`train`]: the tiny LM itself — flat f32
//!   parameters, forward distribution, nucleus sampling, and SGD training with
//!   analytic gradients.
//! - [`collab`]: the four collaboration strategies.
//! - [`distill`]: dataset construction and the three distillation methods.
//! - [`evolve`]: the iteration loop, best-checkpoint retention, and resume.
//! - [`eval`], [`report`]: single/multi metrics, the 2x2 skill matrix, and
//!   CSV/JSON/SVG report emission.
//! - [`config`], [`persist`]: run configuration and bit-exact checkpoints.
//!
//! Everything is deterministic given the run seed: RNG streams are keyed by
//! (seed, phase, iteration, instance), so repeated runs produce byte-identical
//! reports and checkpoints.

pub mod collab;
pub mod config;
pub mod distill;
pub mod error;
pub mod eval;
pub mod evolve;
pub mod generate;
pub mod model;
pub mod persist;
pub mod pool;
pub mod report;
pub mod rng;
pub mod scoring;
pub mod tasks;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
pub use model::{ModelConfig, ParamVector, TinyLM, TokenId};
pub use pool::Pool;
