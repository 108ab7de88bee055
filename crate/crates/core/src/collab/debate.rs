//! Text-level collaboration: round-based multi-agent debate.
//!
//! Round 0: every member answers the instruction independently. Each later
//! round, every member regenerates conditioned on the instruction, its own
//! previous answer, and the other members' previous answers, SEP-joined:
//!
//! ```text
//! x SEP own_prev SEP other_1 SEP ... SEP other_{n-1}
//! ```
//!
//! The context is truncated to the model's window from the left (most recent
//! tokens kept) by the ordinary forward pass. The system's final response is
//! the last-round answer of the summarizer (the dev-best member) — tiny
//! models cannot follow a "summarize these answers" prompt, so the strongest
//! member's refined answer stands in for a written summary.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generate::{sample, TrainConfig};
use crate::model::TokenId;
use crate::pool::Pool;
use crate::scoring::answer_span;
use crate::vocab::SEP;

/// Debate knobs as they appear in run configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DebateSettings {
    pub rounds: usize,
    /// Dump per-instruction transcripts next to the iteration dataset.
    pub dump_transcripts: bool,
}

impl Default for DebateSettings {
    fn default() -> Self {
        DebateSettings {
            rounds: 3,
            dump_transcripts: false,
        }
    }
}

impl DebateSettings {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("debate rounds must be at least 1".into()));
        }
        Ok(())
    }
}

/// Settings resolved against a concrete pool: the summarizer is pinned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DebateConfig {
    pub rounds: usize,
    /// Pool index whose last-round answer becomes the system response.
    pub summarizer: usize,
}

/// One answer in a debate transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebateTurn {
    pub round: usize,
    pub model_id: String,
    /// Answer span (EOS stripped).
    pub answer: Vec<TokenId>,
}

/// Runs a debate over one instruction. Returns the final response (the
/// summarizer's raw last-round output) and the full transcript of
/// `rounds x pool-size` turns.
pub fn run_debate(
    pool: &Pool,
    prompt: &[TokenId],
    cfg: &DebateConfig,
    gen: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<TokenId>, Vec<DebateTurn>)> {
    if cfg.rounds == 0 {
        return Err(Error::InvalidConfig("debate rounds must be at least 1".into()));
    }
    if cfg.summarizer >= pool.len() {
        return Err(Error::Incompatible(format!(
            "debate summarizer index {} outside the pool of {}",
            cfg.summarizer,
            pool.len()
        )));
    }
    let mut transcript = Vec::with_capacity(cfg.rounds * pool.len());
    // Answer spans of the previous round, one per member.
    let mut prev: Vec<Vec<TokenId>> = Vec::new();
    // Raw (unstripped) outputs of the current round; the summarizer's final
    // raw output is the system response.
    let mut raw: Vec<Vec<TokenId>> = vec![Vec::new(); pool.len()];

    for round in 0..cfg.rounds {
        let mut current: Vec<Vec<TokenId>> = Vec::with_capacity(pool.len());
        for (i, m) in pool.models.iter().enumerate() {
            let context = if round == 0 {
                prompt.to_vec()
            } else {
                let mut ctx = prompt.to_vec();
                ctx.push(SEP);
                ctx.extend_from_slice(&prev[i]);
                for (j, other) in prev.iter().enumerate() {
                    if j != i {
                        ctx.push(SEP);
                        ctx.extend_from_slice(other);
                    }
                }
                ctx
            };
            let out = sample(m, &context, gen, rng)?;
            let span = answer_span(&out).to_vec();
            transcript.push(DebateTurn {
                round,
                model_id: m.id.clone(),
                answer: span.clone(),
            });
            raw[i] = out;
            current.push(span);
        }
        prev = current;
    }
    Ok((raw[cfg.summarizer].clone(), transcript))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::sample;
    use crate::model::{init_model, ModelConfig, TinyLM};
    use crate::rng::stream;
    use crate::vocab;

    fn pool(n: usize) -> Pool {
        let models: Vec<TinyLM> = (0..n)
            .map(|i| {
                init_model(
                    ModelConfig {
                        hidden_dim: 10,
                        context_window: 24,
                        seed: 30 + i as u64,
                        ..ModelConfig::default()
                    },
                    format!("m{i}"),
                )
                .unwrap()
            })
            .collect();
        Pool::new(models, None).unwrap()
    }

    #[test]
    fn transcript_has_rounds_times_pool_turns() {
        let p = pool(3);
        let cfg = DebateConfig { rounds: 3, summarizer: 1 };
        let gen = TrainConfig { max_new_tokens: 8, ..TrainConfig::default() };
        let prompt = vocab::encode("2+3=").unwrap();
        let (_, transcript) = run_debate(&p, &prompt, &cfg, &gen, &mut stream(1, &[])).unwrap();
        assert_eq!(transcript.len(), 9);
        for round in 0..3 {
            let turns: Vec<_> = transcript.iter().filter(|t| t.round == round).collect();
            assert_eq!(turns.len(), 3);
            assert_eq!(turns[0].model_id, "m0");
        }
    }

    #[test]
    fn single_round_returns_the_summarizers_independent_answer() {
        let p = pool(2);
        let gen = TrainConfig { max_new_tokens: 6, ..TrainConfig::default() };
        let prompt = vocab::encode("rev:ab=").unwrap();
        let cfg = DebateConfig { rounds: 1, summarizer: 1 };
        let (resp, transcript) =
            run_debate(&p, &prompt, &cfg, &gen, &mut stream(2, &[])).unwrap();
        // With one round there is no exchange: the response must equal what
        // the summarizer samples independently after m0 consumed its draws.
        let mut rng = stream(2, &[]);
        let _ = sample(&p.models[0], &prompt, &gen, &mut rng).unwrap();
        let independent = sample(&p.models[1], &prompt, &gen, &mut rng).unwrap();
        assert_eq!(resp, independent);
        assert_eq!(transcript.len(), 2);
    }

    #[test]
    fn pool_of_one_is_iterated_self_refinement() {
        let p = pool(1);
        let gen = TrainConfig { max_new_tokens: 6, ..TrainConfig::default() };
        let prompt = vocab::encode("kv:abc=").unwrap();
        let cfg = DebateConfig { rounds: 3, summarizer: 0 };
        let (_, transcript) = run_debate(&p, &prompt, &cfg, &gen, &mut stream(3, &[])).unwrap();
        assert_eq!(transcript.len(), 3);
    }

    #[test]
    fn debate_is_stream_deterministic() {
        let p = pool(3);
        let gen = TrainConfig { max_new_tokens: 8, ..TrainConfig::default() };
        let prompt = vocab::encode("17+5=").unwrap();
        let cfg = DebateConfig { rounds: 2, summarizer: 0 };
        let a = run_debate(&p, &prompt, &cfg, &gen, &mut stream(4, &[])).unwrap();
        let b = run_debate(&p, &prompt, &cfg, &gen, &mut stream(4, &[])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_rounds_or_summarizer_are_rejected() {
        let p = pool(2);
        let gen = TrainConfig::default();
        let prompt = vocab::encode("1+1=").unwrap();
        assert!(run_debate(&p, &prompt, &DebateConfig { rounds: 0, summarizer: 0 }, &gen, &mut stream(0, &[])).is_err());
        assert!(run_debate(&p, &prompt, &DebateConfig { rounds: 1, summarizer: 5 }, &gen, &mut stream(0, &[])).is_err());
        assert!(DebateSettings { rounds: 0, dump_transcripts: false }.validate().is_err());
    }
}
