//! The four collaboration strategies and their per-iteration state.
//!
//! A [`CollabStrategy`] is pure configuration. Once per iteration it is
//! turned into a [`CollabSystem`] — the router is trained on the current
//! pool, the debate summarizer is resolved to the dev-best member, or the
//! pool is merged into a single model — and the system then answers any
//! number of instructions.

pub mod debate;
pub mod fusion;
pub mod merge;
pub mod router;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generate::{sample, TrainConfig};
use crate::model::{TinyLM, TokenId};
use crate::pool::Pool;
use crate::tasks::Dataset;

pub use debate::{DebateConfig, DebateSettings, DebateTurn};
pub use fusion::{fuse_decode, fused_distribution};
pub use merge::{dare, merge_pool, ties_merge, MergeConfig, MergeSettings};
pub use router::{
    fit_router, route, route_label, train_router, RouterSettings, RouterState, RouterTrainReport,
};

/// Which collaboration mechanism a run uses, with its knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum CollabStrategy {
    /// A trained classifier routes each instruction to one member.
    #[serde(rename = "ROUTER")]
    Router(#[serde(default)] RouterSettings),
    /// Members exchange answers over rounds; the dev-best member's final
    /// answer is the system response.
    #[serde(rename = "DEBATE")]
    Debate(#[serde(default)] DebateSettings),
    /// Decode from the mean of member next-token distributions.
    #[serde(rename = "LOGIT_FUSION")]
    LogitFusion,
    /// Merge member weights into one model and sample it.
    #[serde(rename = "DARE_TIES")]
    DareTies(#[serde(default)] MergeSettings),
}

impl CollabStrategy {
    pub fn kind_name(&self) -> &'static str {
        match self {
            CollabStrategy::Router(_) => "ROUTER",
            CollabStrategy::Debate(_) => "DEBATE",
            CollabStrategy::LogitFusion => "LOGIT_FUSION",
            CollabStrategy::DareTies(_) => "DARE_TIES",
        }
    }

    /// Checks strategy/pool compatibility, naming the violated constraint.
    pub fn validate_for_pool(&self, pool: &Pool) -> Result<()> {
        match self {
            CollabStrategy::Router(s) => {
                s.validate()?;
            }
            CollabStrategy::Debate(s) => {
                s.validate()?;
            }
            CollabStrategy::LogitFusion => {
                if !pool.shared_vocab() {
                    return Err(Error::Incompatible(
                        "LOGIT_FUSION requires all pool members to share the vocabulary".into(),
                    ));
                }
            }
            CollabStrategy::DareTies(s) => {
                s.resolve(pool.len())?;
                if !pool.homogeneous() {
                    return Err(Error::Incompatible(
                        "DARE_TIES requires a homogeneous pool (identical member shapes)".into(),
                    ));
                }
                if pool.base.is_none() {
                    return Err(Error::Incompatible(
                        "DARE_TIES requires the pool's common base checkpoint".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Per-iteration strategy state, ready to answer instructions.
#[derive(Debug, Clone)]
pub enum Prepared {
    Router(RouterState),
    Debate(DebateConfig),
    Fusion,
    Merged(TinyLM),
}

/// A collaboration system bound to one pool snapshot.
#[derive(Debug, Clone)]
pub struct CollabSystem {
    pub prepared: Prepared,
}

/// One system response plus provenance for dumps and reports.
#[derive(Debug, Clone, PartialEq)]
pub struct CollabResponse {
    /// Raw response tokens (may end with EOS).
    pub tokens: Vec<TokenId>,
    /// Pool index that answered, for ROUTER.
    pub routed_to: Option<usize>,
    /// Full debate transcript, for DEBATE.
    pub transcript: Option<Vec<DebateTurn>>,
}

/// Builds the iteration's collaboration system: trains the router on
/// `instructions` (labels from the current pool's greedy answers), resolves
/// the debate summarizer on `dev`, or merges the pool.
pub fn build_system(
    strategy: &CollabStrategy,
    pool: &Pool,
    instructions: &Dataset,
    dev: &Dataset,
    gen: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<CollabSystem> {
    strategy.validate_for_pool(pool)?;
    let prepared = match strategy {
        CollabStrategy::Router(settings) => {
            Prepared::Router(train_router(pool, instructions, settings, gen, rng)?)
        }
        CollabStrategy::Debate(settings) => {
            settings.validate()?;
            let summarizer = pool.dev_best_index(&dev.instances, gen.max_new_tokens)?;
            Prepared::Debate(DebateConfig {
                rounds: settings.rounds,
                summarizer,
            })
        }
        CollabStrategy::LogitFusion => Prepared::Fusion,
        CollabStrategy::DareTies(settings) => {
            Prepared::Merged(merge_pool(pool, settings, rng, "merged")?)
        }
    };
    Ok(CollabSystem { prepared })
}

impl CollabSystem {
    /// Answers one instruction with the pool this system was built for.
    pub fn generate(
        &self,
        pool: &Pool,
        prompt: &[TokenId],
        gen: &TrainConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<CollabResponse> {
        match &self.prepared {
            Prepared::Router(state) => {
                let (tokens, idx) = route(state, pool, prompt, gen, rng)?;
                Ok(CollabResponse {
                    tokens,
                    routed_to: Some(idx),
                    transcript: None,
                })
            }
            Prepared::Debate(cfg) => {
                let (tokens, transcript) = debate::run_debate(pool, prompt, cfg, gen, rng)?;
                Ok(CollabResponse {
                    tokens,
                    routed_to: None,
                    transcript: Some(transcript),
                })
            }
            Prepared::Fusion => Ok(CollabResponse {
                tokens: fuse_decode(pool, prompt, gen, rng)?,
                routed_to: None,
                transcript: None,
            }),
            Prepared::Merged(model) => Ok(CollabResponse {
                tokens: sample(model, prompt, gen, rng)?,
                routed_to: None,
                transcript: None,
            }),
        }
    }

    /// The merged single-model teacher, when this system has one.
    pub fn merged_model(&self) -> Option<&TinyLM> {
        match &self.prepared {
            Prepared::Merged(m) => Some(m),
            _ => None,
        }
    }

    /// The trained router, when this system has one.
    pub fn router(&self) -> Option<&RouterState> {
        match &self.prepared {
            Prepared::Router(r) => Some(r),
            _ => None,
        }
    }

    /// The resolved debate settings, when this system debates.
    pub fn debate_config(&self) -> Option<&DebateConfig> {
        match &self.prepared {
            Prepared::Debate(c) => Some(c),
            _ => None,
        }
    }
}
