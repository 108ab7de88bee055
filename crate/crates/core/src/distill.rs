//! Distilling collaborative outputs back into individual pool members.
//!
//! Each iteration produces a dataset of (instruction, collaborative answer)
//! pairs. Members then improve by one of three methods:
//!
//! * **supervised** — plain cross-entropy training on the collaborative
//!   answers;
//! * **multi-student** — per instruction, an integer-ratio mixture of the
//!   collaborative answer, a sample from the dev-best member, and a sample
//!   from the student itself, shuffled into one training set;
//! * **on-policy** — the student samples its own answer and receives a
//!   KL-matching gradient toward the merged teacher's next-token
//!   distribution at every prefix of that answer.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collab::{CollabSystem, DebateTurn};
use crate::error::{Error, Result};
use crate::generate::{sample, sample_from_logits, Decoder, TrainConfig};
use crate::model::{softmax, TinyLM, TokenId};
use crate::pool::Pool;
use crate::rng::Seeder;
use crate::scoring::answer_span;
use crate::tasks::Dataset;
use crate::train::{kd_gradient, train_sft, KdPosition, KlDirection, SftPair};
use crate::vocab;

/// Where a training example's target came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourceTag {
    #[serde(rename = "COLLAB")]
    Collab,
    #[serde(rename = "BEST_STUDENT")]
    BestStudent,
    #[serde(rename = "SELF")]
    SelfSample,
}

impl SourceTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::Collab => "COLLAB",
            SourceTag::BestStudent => "BEST_STUDENT",
            SourceTag::SelfSample => "SELF",
        }
    }
}

/// One distillation training example. The target is stored as an answer
/// span (everything before the first end-of-sequence token).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SFTExample {
    pub instruction_id: String,
    pub instruction: Vec<TokenId>,
    pub target: Vec<TokenId>,
    pub source: SourceTag,
}

impl SFTExample {
    pub fn as_pair(&self) -> SftPair {
        SftPair {
            prompt: self.instruction.clone(),
            target: self.target.clone(),
        }
    }
}

/// One collaborative answer with its provenance, for dumps and transcripts.
#[derive(Debug, Clone)]
pub struct CollabRecord {
    pub example: SFTExample,
    pub routed_to: Option<usize>,
    pub transcript: Option<Vec<DebateTurn>>,
}

/// Integer duplication counts for the multi-student mixture
/// (collaborative : best-student : self).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureSpec {
    pub collab: u32,
    pub best_student: u32,
    #[serde(rename = "self")]
    pub self_sample: u32,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        MixtureSpec {
            collab: 1,
            best_student: 1,
            self_sample: 1,
        }
    }
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.collab == 0 && self.best_student == 0 && self.self_sample == 0 {
            return Err(Error::InvalidConfig(
                "mixture must keep at least one source (all counts are zero)".into(),
            ));
        }
        Ok(())
    }

    /// Examples produced per instruction.
    pub fn per_instruction(&self) -> usize {
        (self.collab + self.best_student + self.self_sample) as usize
    }
}

/// How collaborative knowledge is written back into each member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistillMethod {
    #[serde(rename = "SUPERVISED")]
    Supervised,
    #[serde(rename = "MULTI_STUDENT")]
    MultiStudent,
    #[serde(rename = "ON_POLICY")]
    OnPolicy,
}

impl DistillMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            DistillMethod::Supervised => "SUPERVISED",
            DistillMethod::MultiStudent => "MULTI_STUDENT",
            DistillMethod::OnPolicy => "ON_POLICY",
        }
    }
}

/// Full distillation configuration. `train` also supplies the sampling
/// settings used when drawing best-student, self, or on-policy answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub method: DistillMethod,
    pub train: TrainConfig,
    pub mixture: MixtureSpec,
    /// On-policy answers drawn per instruction per epoch.
    pub on_policy_samples: usize,
    pub kl_direction: KlDirection,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            method: DistillMethod::MultiStudent,
            train: TrainConfig::default(),
            mixture: MixtureSpec::default(),
            on_policy_samples: 1,
            kl_direction: KlDirection::Forward,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.mixture.validate()?;
        if self.on_policy_samples == 0 {
            return Err(Error::InvalidConfig(
                "on_policy_samples must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-student summary of one distillation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub model_id: String,
    /// Mean loss over the final epoch (cross-entropy per position for the
    /// supervised methods, summed KL per sampled answer for on-policy).
    pub final_epoch_loss: f64,
    pub steps: usize,
    pub dataset_size: usize,
}

/// Runs the collaboration system over every instruction, producing the
/// iteration's distillation dataset. Each instruction gets its own
/// generation stream keyed by its id, so dataset contents are independent
/// of instruction order.
pub fn build_collab_dataset(
    system: &CollabSystem,
    pool: &Pool,
    instructions: &Dataset,
    gen: &TrainConfig,
    seeder: &Seeder,
    iteration: usize,
) -> Result<Vec<CollabRecord>> {
    if instructions.instances.is_empty() {
        return Err(Error::Empty("instruction set for collaboration"));
    }
    let mut records = Vec::with_capacity(instructions.instances.len());
    for inst in &instructions.instances {
        let mut rng = seeder.collab(iteration, &inst.id);
        let resp = system.generate(pool, &inst.prompt, gen, &mut rng)?;
        records.push(CollabRecord {
            example: SFTExample {
                instruction_id: inst.id.clone(),
                instruction: inst.prompt.clone(),
                target: answer_span(&resp.tokens).to_vec(),
                source: SourceTag::Collab,
            },
            routed_to: resp.routed_to,
            transcript: resp.transcript,
        });
    }
    Ok(records)
}

/// Builds one student's multi-student training set. Per instruction, each
/// source is sampled once and duplicated to its mixture count; the
/// combined set is then shuffled.
pub fn build_multistudent_mixture(
    collab: &[SFTExample],
    pool: &Pool,
    student_idx: usize,
    best_idx: usize,
    mixture: &MixtureSpec,
    gen: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SFTExample>> {
    mixture.validate()?;
    if collab.is_empty() {
        return Err(Error::Empty("collaborative dataset for mixture"));
    }
    if student_idx >= pool.len() || best_idx >= pool.len() {
        return Err(Error::Incompatible(format!(
            "mixture member indices {student_idx}/{best_idx} out of range for pool of {}",
            pool.len()
        )));
    }
    let mut examples = Vec::with_capacity(collab.len() * mixture.per_instruction());
    for e in collab {
        for _ in 0..mixture.collab {
            examples.push(e.clone());
        }
        if mixture.best_student > 0 {
            let y = sample(&pool.models[best_idx], &e.instruction, gen, rng)?;
            let target = answer_span(&y).to_vec();
            for _ in 0..mixture.best_student {
                examples.push(SFTExample {
                    instruction_id: e.instruction_id.clone(),
                    instruction: e.instruction.clone(),
                    target: target.clone(),
                    source: SourceTag::BestStudent,
                });
            }
        }
        if mixture.self_sample > 0 {
            let y = sample(&pool.models[student_idx], &e.instruction, gen, rng)?;
            let target = answer_span(&y).to_vec();
            for _ in 0..mixture.self_sample {
                examples.push(SFTExample {
                    instruction_id: e.instruction_id.clone(),
                    instruction: e.instruction.clone(),
                    target: target.clone(),
                    source: SourceTag::SelfSample,
                });
            }
        }
    }
    examples.shuffle(rng);
    Ok(examples)
}

/// One on-policy pass for a single student: per epoch and instruction,
/// sample an answer from the student, compute the prefix-wise KL toward
/// the teacher, and take one gradient step on the summed loss.
///
/// With zero epochs the student is returned unchanged and the report
/// carries the mean loss of a single evaluation pass.
pub fn on_policy_distill(
    student: &TinyLM,
    teacher: &TinyLM,
    prompts: &[(String, Vec<TokenId>)],
    cfg: &DistillConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(TinyLM, DistillReport)> {
    cfg.validate()?;
    if prompts.is_empty() {
        return Err(Error::Empty("on-policy instruction set"));
    }
    if teacher.config.vocab_size != student.config.vocab_size {
        return Err(Error::Incompatible(format!(
            "teacher vocabulary {} does not match student vocabulary {}",
            teacher.config.vocab_size, student.config.vocab_size
        )));
    }
    let mut params = student.params.to_f64();
    let teacher_dec = Decoder::new(teacher);
    let lr = cfg.train.learning_rate;

    let mut last_loss_sum = 0.0;
    let mut last_loss_count = 0usize;
    let mut steps = 0usize;
    let passes = cfg.train.epochs.max(1);
    let update = cfg.train.epochs > 0;
    for epoch in 0..passes {
        let final_epoch = epoch + 1 == passes;
        for (_, prompt) in prompts {
            for _ in 0..cfg.on_policy_samples {
                let dec = Decoder::from_params(params.clone(), student.config);
                let mut answer: Vec<TokenId> = Vec::new();
                for _ in 0..cfg.train.max_new_tokens {
                    let mut prefix = Vec::with_capacity(1 + prompt.len() + answer.len());
                    prefix.push(vocab::BOS);
                    prefix.extend_from_slice(prompt);
                    prefix.extend_from_slice(&answer);
                    let logits = dec.logits(&prefix);
                    let tok =
                        sample_from_logits(&logits, cfg.train.temperature, cfg.train.top_p, rng)?;
                    answer.push(tok);
                    if tok == vocab::EOS {
                        break;
                    }
                }
                let mut positions = Vec::with_capacity(answer.len());
                for t in 0..answer.len() {
                    let mut prefix = Vec::with_capacity(1 + prompt.len() + t);
                    prefix.push(vocab::BOS);
                    prefix.extend_from_slice(prompt);
                    prefix.extend_from_slice(&answer[..t]);
                    let teacher_probs = softmax(&teacher_dec.logits(&prefix));
                    positions.push(KdPosition {
                        prefix,
                        teacher_probs,
                    });
                }
                let kd = kd_gradient(&params, &student.config, &positions, cfg.kl_direction)?;
                if final_epoch {
                    last_loss_sum += kd.loss;
                    last_loss_count += 1;
                }
                if update {
                    for (p, g) in params.iter_mut().zip(&kd.grad) {
                        *p -= lr * g;
                    }
                    steps += 1;
                }
            }
        }
    }

    let distilled = TinyLM::from_f64(&student.id, student.config, &params)?;
    Ok((
        distilled,
        DistillReport {
            model_id: student.id.clone(),
            final_epoch_loss: last_loss_sum / last_loss_count.max(1) as f64,
            steps,
            dataset_size: prompts.len(),
        },
    ))
}

/// Distills every pool member independently from the iteration's
/// collaborative dataset, returning the updated pool (same ids, same base)
/// and one report per student.
pub fn distill_pool(
    pool: &Pool,
    system: &CollabSystem,
    collab: &[SFTExample],
    dev: &Dataset,
    cfg: &DistillConfig,
    seeder: &Seeder,
    iteration: usize,
) -> Result<(Pool, Vec<DistillReport>)> {
    cfg.validate()?;
    if collab.is_empty() {
        return Err(Error::Empty("collaborative dataset for distillation"));
    }
    let best_idx = match cfg.method {
        DistillMethod::MultiStudent => {
            pool.dev_best_index(&dev.instances, cfg.train.max_new_tokens)?
        }
        _ => 0,
    };
    let teacher = match cfg.method {
        DistillMethod::OnPolicy => Some(system.merged_model().ok_or_else(|| {
            Error::Incompatible(
                "ON_POLICY distillation needs a single-model teacher; \
                 it is only available with the DARE_TIES strategy"
                    .into(),
            )
        })?),
        _ => None,
    };
    let prompts: Vec<(String, Vec<TokenId>)> = collab
        .iter()
        .map(|e| (e.instruction_id.clone(), e.instruction.clone()))
        .collect();

    let mut models = Vec::with_capacity(pool.len());
    let mut reports = Vec::with_capacity(pool.len());
    for (idx, student) in pool.models.iter().enumerate() {
        let mut rng = seeder.distill(iteration, idx);
        let (model, report) = match cfg.method {
            DistillMethod::Supervised => {
                let pairs: Vec<SftPair> = collab.iter().map(SFTExample::as_pair).collect();
                let (model, tr) = train_sft(student, &pairs, &cfg.train, &mut rng)?;
                (
                    model,
                    DistillReport {
                        model_id: student.id.clone(),
                        final_epoch_loss: tr.final_epoch_loss,
                        steps: tr.steps,
                        dataset_size: pairs.len(),
                    },
                )
            }
            DistillMethod::MultiStudent => {
                let mixture = build_multistudent_mixture(
                    collab,
                    pool,
                    idx,
                    best_idx,
                    &cfg.mixture,
                    &cfg.train,
                    &mut rng,
                )?;
                let pairs: Vec<SftPair> = mixture.iter().map(SFTExample::as_pair).collect();
                let (model, tr) = train_sft(student, &pairs, &cfg.train, &mut rng)?;
                (
                    model,
                    DistillReport {
                        model_id: student.id.clone(),
                        final_epoch_loss: tr.final_epoch_loss,
                        steps: tr.steps,
                        dataset_size: pairs.len(),
                    },
                )
            }
            DistillMethod::OnPolicy => {
                on_policy_distill(student, teacher.unwrap(), &prompts, cfg, &mut rng)?
            }
        };
        models.push(model);
        reports.push(report);
    }
    let new_pool = Pool::new(models, pool.base.clone())?;
    Ok((new_pool, reports))
}

/// Serializes a distillation dataset as tab-separated
/// `instruction_id`, `source`, `instruction`, `target` lines.
pub fn examples_to_tsv(examples: &[SFTExample]) -> Result<String> {
    let mut out = String::new();
    for e in examples {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            e.instruction_id,
            e.source.as_str(),
            vocab::decode(&e.instruction)?,
            vocab::decode(&e.target)?,
        ));
    }
    Ok(out)
}
