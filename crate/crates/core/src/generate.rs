//! Autoregressive generation: temperature + nucleus sampling, greedy decode.
//!
//! Generation always conditions on `BOS ++ prompt ++ tokens-so-far` and stops
//! at the first sampled EOS or after `max_new_tokens`. Sampling draws every
//! random number from a caller-supplied stream, so a (seed, key) pair pins
//! the exact output sequence.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, softmax, ModelConfig, TinyLM, TokenId};
use crate::vocab::{BOS, EOS};

/// Hyperparameters shared by training and sampling. One bag of knobs keeps
/// config files and function signatures small; training reads the first four
/// fields, generation the last three.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// SGD step size.
    pub learning_rate: f64,
    /// Passes over the training examples.
    pub epochs: usize,
    /// Examples per gradient step (last batch may be smaller).
    pub batch_size: usize,
    /// Classical momentum coefficient; 0 disables it.
    pub momentum: f64,
    /// Generation length cap.
    pub max_new_tokens: usize,
    /// Softmax temperature for sampling; must be positive.
    pub temperature: f64,
    /// Nucleus mass for sampling; in (0, 1].
    pub top_p: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 2,
            batch_size: 16,
            momentum: 0.0,
            max_new_tokens: 64,
            temperature: 0.7,
            top_p: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be finite and >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidConfig("max_new_tokens must be positive".into()));
        }
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidConfig("top_p must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Samples one token from logits: divide by temperature, softmax, nucleus.
pub fn sample_from_logits(
    logits: &[f64],
    temperature: f64,
    top_p: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TokenId> {
    let scaled: Vec<f64> = logits.iter().map(|&l| l / temperature).collect();
    nucleus(softmax(&scaled), top_p, rng)
}

/// Samples one token from an explicit distribution (already-fused
/// probabilities): temperature flattens via `p^(1/t)` — the probability-space
/// equivalent of logit scaling — then nucleus truncation applies.
pub fn sample_from_probs(
    probs: &[f64],
    temperature: f64,
    top_p: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TokenId> {
    // Stable route through log space: softmax(ln(p) / t).
    let log_scaled: Vec<f64> = probs.iter().map(|&p| p.ln() / temperature).collect();
    nucleus(softmax(&log_scaled), top_p, rng)
}

/// Nucleus (top-p) draw. Tokens are ranked by probability descending with
/// ascending-id tie-breaks; the smallest prefix whose mass reaches `top_p`
/// (always including the boundary token) is renormalized and sampled.
fn nucleus(probs: Vec<f64>, top_p: f64, rng: &mut ChaCha8Rng) -> Result<TokenId> {
    if probs.is_empty() {
        return Err(Error::Empty("probability vector"));
    }
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("sampling distribution"));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .expect("probs checked finite")
            .then(a.cmp(&b))
    });
    let mut kept = 0;
    let mut mass = 0.0;
    for &idx in &order {
        kept += 1;
        mass += probs[idx];
        if mass >= top_p {
            break;
        }
    }
    // mass can undershoot top_p=1.0 by float error; then every token is kept.
    let candidates = &order[..kept];
    let u: f64 = rng.gen::<f64>() * mass;
    let mut cum = 0.0;
    for &idx in candidates {
        cum += probs[idx];
        if u < cum {
            return Ok(idx as TokenId);
        }
    }
    Ok(*candidates.last().expect("kept >= 1") as TokenId)
}

/// Caches the widened parameter vector so a generation loop casts once, not
/// once per step.
pub(crate) struct Decoder {
    params: Vec<f64>,
    config: ModelConfig,
}

impl Decoder {
    pub fn new(model: &TinyLM) -> Decoder {
        Decoder {
            params: model.params.to_f64(),
            config: model.config,
        }
    }

    /// Wraps an already-widened parameter vector (a training loop's live
    /// copy), skipping the per-call cast.
    pub fn from_params(params: Vec<f64>, config: ModelConfig) -> Decoder {
        Decoder { params, config }
    }

    pub fn logits(&self, prefix: &[TokenId]) -> Vec<f64> {
        let window = model::window_of(prefix, self.config.context_window);
        model::forward(&self.params, &self.config, &window).logits
    }
}

/// Samples a completion for `prompt`. Returns only the generated tokens, EOS
/// included when one was produced before the length cap.
pub fn sample(
    m: &TinyLM,
    prompt: &[TokenId],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TokenId>> {
    cfg.validate()?;
    if prompt.is_empty() {
        return Err(Error::Empty("prompt"));
    }
    model::check_prefix(prompt, m.config.vocab_size)?;
    let decoder = Decoder::new(m);
    let mut seq = Vec::with_capacity(1 + prompt.len() + cfg.max_new_tokens);
    seq.push(BOS);
    seq.extend_from_slice(prompt);
    let mut out = Vec::new();
    for _ in 0..cfg.max_new_tokens {
        let logits = decoder.logits(&seq);
        let tok = sample_from_logits(&logits, cfg.temperature, cfg.top_p, rng)?;
        seq.push(tok);
        out.push(tok);
        if tok == EOS {
            break;
        }
    }
    Ok(out)
}

/// Deterministic argmax decode (ties break to the lowest token id). Used for
/// evaluation so scores never depend on sampling noise.
pub fn greedy_decode(m: &TinyLM, prompt: &[TokenId], max_new_tokens: usize) -> Result<Vec<TokenId>> {
    if prompt.is_empty() {
        return Err(Error::Empty("prompt"));
    }
    if max_new_tokens == 0 {
        return Err(Error::InvalidConfig("max_new_tokens must be positive".into()));
    }
    model::check_prefix(prompt, m.config.vocab_size)?;
    let decoder = Decoder::new(m);
    let mut seq = Vec::with_capacity(1 + prompt.len() + max_new_tokens);
    seq.push(BOS);
    seq.extend_from_slice(prompt);
    let mut out = Vec::new();
    for _ in 0..max_new_tokens {
        let logits = decoder.logits(&seq);
        let tok = argmax(&logits) as TokenId;
        seq.push(tok);
        out.push(tok);
        if tok == EOS {
            break;
        }
    }
    Ok(out)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
