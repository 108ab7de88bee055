//! Run configuration: one JSON document pins an entire experiment.
//!
//! Every field has a default, so `{}` parses to the reference setup: three
//! family-specialized members, a trained router, multi-student distillation,
//! three evolution iterations. Unknown keys are rejected to catch typos, and
//! a SHA-256 hash of the canonicalized (defaults-applied) document is stored
//! with every artifact so a run directory can refuse mismatched resumes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::collab::{CollabStrategy, RouterSettings};
use crate::distill::{DistillConfig, DistillMethod};
use crate::error::{Error, Result};
use crate::generate::TrainConfig;
use crate::model::ModelConfig;
use crate::tasks::{generate_mixed, Dataset, Split, TaskFamily};
use crate::vocab;

/// Sampling settings used for collaboration and system evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSpec {
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            max_new_tokens: 64,
            temperature: 0.7,
            top_p: 0.9,
        }
    }
}

impl GenSpec {
    /// The equivalent knob bag for functions that take [`TrainConfig`];
    /// the training fields keep their defaults and are not read.
    pub fn to_train(&self) -> TrainConfig {
        TrainConfig {
            max_new_tokens: self.max_new_tokens,
            temperature: self.temperature,
            top_p: self.top_p,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.to_train().validate()
    }
}

/// Optimizer settings for one training phase (base pretraining or member
/// specialization).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseSpec {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for PhaseSpec {
    fn default() -> Self {
        PhaseSpec {
            epochs: 2,
            learning_rate: 0.2,
            batch_size: 16,
            momentum: 0.0,
        }
    }
}

impl PhaseSpec {
    /// Combines this phase's optimizer knobs with the run's sampling knobs.
    pub fn to_train(&self, gen: &GenSpec) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            momentum: self.momentum,
            ..gen.to_train()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.to_train(&GenSpec::default()).validate()
    }
}

/// One pool member: id, optional specialization family, and optional shape
/// overrides (a pool with differing shapes supports only prompt-level
/// strategies).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberSpec {
    pub id: String,
    /// Family whose training instances this member specializes on;
    /// `None` trains on the full mixed split.
    #[serde(default)]
    pub family: Option<TaskFamily>,
    #[serde(default)]
    pub embed_dim: Option<usize>,
    #[serde(default)]
    pub hidden_dim: Option<usize>,
    #[serde(default)]
    pub context_window: Option<usize>,
}

impl MemberSpec {
    fn shape(&self, pool: &PoolSpec) -> (usize, usize, usize) {
        (
            self.embed_dim.unwrap_or(pool.embed_dim),
            self.hidden_dim.unwrap_or(pool.hidden_dim),
            self.context_window.unwrap_or(pool.context_window),
        )
    }

    /// The resolved architecture for this member. `seed` feeds weight
    /// initialization when the member does not start from a shared base.
    pub fn model_config(&self, pool: &PoolSpec, seed: u64) -> ModelConfig {
        let (embed_dim, hidden_dim, context_window) = self.shape(pool);
        ModelConfig {
            vocab_size: vocab::SIZE,
            embed_dim,
            hidden_dim,
            context_window,
            seed,
        }
    }
}

/// The model pool: shared architecture, member list, and the two
/// initialization training phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolSpec {
    pub members: Vec<MemberSpec>,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub context_window: usize,
    /// Seed for base-model weight initialization.
    pub base_seed: u64,
    /// Shared pretraining on the mixed train split (epochs may be 0).
    pub pretrain: PhaseSpec,
    /// Per-member specialization on the member's family subset.
    pub specialize: PhaseSpec,
}

impl Default for PoolSpec {
    fn default() -> Self {
        let member = |id: &str, family| MemberSpec {
            id: id.into(),
            family: Some(family),
            embed_dim: None,
            hidden_dim: None,
            context_window: None,
        };
        PoolSpec {
            members: vec![
                member("m1", TaskFamily::Arith),
                member("m2", TaskFamily::StrTrans),
                member("m3", TaskFamily::KvRecall),
            ],
            embed_dim: 8,
            hidden_dim: 48,
            context_window: 40,
            base_seed: 0,
            pretrain: PhaseSpec::default(),
            specialize: PhaseSpec { epochs: 4, ..PhaseSpec::default() },
        }
    }
}

impl PoolSpec {
    /// True when every member resolves to the same architecture, which
    /// weight-level strategies require.
    pub fn homogeneous(&self) -> bool {
        self.members
            .windows(2)
            .all(|w| w[0].shape(self) == w[1].shape(self))
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::InvalidConfig("pool needs at least one member".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.members {
            if m.id.is_empty() {
                return Err(Error::InvalidConfig("member ids must be non-empty".into()));
            }
            if !seen.insert(m.id.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate member id '{}'", m.id)));
            }
            m.model_config(self, 0).validate()?;
        }
        self.pretrain.validate()?;
        self.specialize.validate()?;
        Ok(())
    }
}

/// Corpus sizes, all counts per family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSpec {
    pub train_per_family: usize,
    pub dev_per_family: usize,
    pub test_per_family: usize,
    /// Corpus seed, independent of the run seed so several runs can share
    /// one benchmark.
    pub data_seed: u64,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            train_per_family: 500,
            dev_per_family: 200,
            test_per_family: 200,
            data_seed: 0,
        }
    }
}

impl DataSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_per_family == 0 || self.dev_per_family == 0 || self.test_per_family == 0 {
            return Err(Error::InvalidConfig(
                "every split needs at least one instance per family".into(),
            ));
        }
        Ok(())
    }

    /// Generates the three splits over all task families.
    pub fn build(&self) -> Result<(Dataset, Dataset, Dataset)> {
        Ok((
            generate_mixed(&TaskFamily::ALL, self.train_per_family, self.data_seed, Split::Train)?,
            generate_mixed(&TaskFamily::ALL, self.dev_per_family, self.data_seed, Split::Dev)?,
            generate_mixed(&TaskFamily::ALL, self.test_per_family, self.data_seed, Split::Test)?,
        ))
    }
}

/// The complete run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub format_version: u32,
    /// Run directory name; restricted to `[A-Za-z0-9._-]`.
    pub name: String,
    pub run_seed: u64,
    /// Evolution iterations.
    pub k: usize,
    pub pool: PoolSpec,
    pub data: DataSpec,
    pub strategy: CollabStrategy,
    pub distill: DistillConfig,
    pub generation: GenSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            format_version: 1,
            name: "run".into(),
            run_seed: 0,
            k: 3,
            pool: PoolSpec::default(),
            data: DataSpec::default(),
            strategy: CollabStrategy::Router(RouterSettings::default()),
            distill: DistillConfig::default(),
            generation: GenSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != 1 {
            return Err(Error::InvalidConfig(format!(
                "unsupported format_version {} (this build reads version 1)",
                self.format_version
            )));
        }
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
        {
            return Err(Error::InvalidConfig(format!(
                "run name '{}' must be non-empty and use only [A-Za-z0-9._-]",
                self.name
            )));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        self.pool.validate()?;
        self.data.validate()?;
        self.distill.validate()?;
        self.generation.validate()?;

        match &self.strategy {
            CollabStrategy::Router(s) => s.validate()?,
            CollabStrategy::Debate(s) => s.validate()?,
            CollabStrategy::LogitFusion => {}
            CollabStrategy::DareTies(s) => {
                s.resolve(self.pool.members.len())?;
            }
        }
        let weight_level = matches!(
            self.strategy,
            CollabStrategy::LogitFusion | CollabStrategy::DareTies(_)
        );
        if weight_level && !self.pool.homogeneous() {
            return Err(Error::InvalidConfig(format!(
                "{} needs a homogeneous pool, but member shape overrides differ; \
                 use ROUTER or DEBATE for mixed-size pools",
                self.strategy.kind_name()
            )));
        }
        if self.distill.method == DistillMethod::OnPolicy
            && !matches!(self.strategy, CollabStrategy::DareTies(_))
        {
            return Err(Error::InvalidConfig(
                "ON_POLICY distillation needs a single-model teacher, so the \
                 strategy must be DARE_TIES"
                    .into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 over the canonical (defaults-applied) JSON serialization.
    pub fn hash(&self) -> String {
        content_hash(&serde_json::to_string(self).expect("config serializes"))
    }
}

/// Lowercase-hex SHA-256 of `text`; the hash stored in checkpoints and run
/// directories to tie artifacts to the settings that produced them.
pub fn content_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}
