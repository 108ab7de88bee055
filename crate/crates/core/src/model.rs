//! The tiny trainable language model.
//!
//! Architecture: the last `context_window` tokens of the prefix (left-padded
//! with PAD) are embedded and concatenated position-wise, pushed through one
//! tanh hidden layer, and projected to vocabulary logits:
//!
//! ```text
//! x      = concat(embed[w_0], ..., embed[w_{W-1}])          (W*d)
//! z      = tanh(input_w @ x + hidden_b)                     (h)
//! logits = output_w @ z + output_b                          (V)
//! ```
//!
//! Parameters live in one flat f32 vector with a frozen layout (embeddings,
//! input weights, hidden bias, output weights, output bias — all row-major),
//! which makes weight merging, checkpointing, and gradient checks simple
//! index arithmetic. Forward math runs in f64 for numerical headroom; f32 is
//! the storage and merge currency.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, phase};
use crate::vocab::PAD;

/// Token ids are u16: the vocabulary is small and checkpoints stay compact.
pub type TokenId = u16;

/// Model shape plus the init seed. Two models can share weights operations
/// (fusion, merging) only when everything except `seed` matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// How many trailing prefix tokens the model attends to (left-padded).
    pub context_window: usize,
    /// Seed for parameter init; the only field that may differ inside a
    /// homogeneous pool.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: crate::vocab::SIZE,
            embed_dim: 8,
            hidden_dim: 48,
            context_window: 40,
            seed: 0,
        }
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    /// `vocab_size x embed_dim`, row-major by token id.
    pub embed: Range<usize>,
    /// `hidden_dim x (context_window * embed_dim)`, row-major by hidden unit.
    pub input_w: Range<usize>,
    /// `hidden_dim`.
    pub hidden_b: Range<usize>,
    /// `vocab_size x hidden_dim`, row-major by vocabulary entry.
    pub output_w: Range<usize>,
    /// `vocab_size`.
    pub output_b: Range<usize>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 5 {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} too small: need the 4 specials plus at least one symbol",
                self.vocab_size
            )));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidConfig(
                "embed_dim and hidden_dim must be positive".into(),
            ));
        }
        if self.context_window < 2 {
            return Err(Error::InvalidConfig(
                "context_window must be at least 2".into(),
            ));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (v, d, h, w) = (self.vocab_size, self.embed_dim, self.hidden_dim, self.context_window);
        v * d + h * (w * d) + h + v * h + v
    }

    pub fn layout(&self) -> ParamLayout {
        let (v, d, h, w) = (self.vocab_size, self.embed_dim, self.hidden_dim, self.context_window);
        let embed = 0..v * d;
        let input_w = embed.end..embed.end + h * (w * d);
        let hidden_b = input_w.end..input_w.end + h;
        let output_w = hidden_b.end..hidden_b.end + v * h;
        let output_b = output_w.end..output_w.end + v;
        ParamLayout {
            embed,
            input_w,
            hidden_b,
            output_w,
            output_b,
        }
    }

    /// True when the two configs describe the same parameter shape (init
    /// seeds may differ).
    pub fn same_shape(&self, other: &ModelConfig) -> bool {
        self.vocab_size == other.vocab_size
            && self.embed_dim == other.embed_dim
            && self.hidden_dim == other.hidden_dim
            && self.context_window == other.context_window
    }
}

/// Flat f32 parameter vector. The canonical currency for checkpoints,
/// weight merging, and gradient checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f32>);

impl ParamVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    /// Widened copy for f64 math (training, merging, fusion).
    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&x| f64::from(x)).collect()
    }

    /// Errors if any entry is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        if self.0.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("parameter vector"))
        }
    }
}

/// One pool member: an id, a shape, and its flat parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyLM {
    pub id: String,
    pub config: ModelConfig,
    pub params: ParamVector,
}

/// Init scale: weights drawn uniformly from (-INIT_SCALE, INIT_SCALE).
const INIT_SCALE: f32 = 0.08;

/// Builds a model with parameters drawn from a stream keyed by
/// `config.seed`. Same config -> bit-identical model.
pub fn init_model(config: ModelConfig, id: impl Into<String>) -> Result<TinyLM> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, &[phase::INIT]);
    let params: Vec<f32> = (0..config.param_count())
        .map(|_| rng.gen_range(-INIT_SCALE..INIT_SCALE))
        .collect();
    Ok(TinyLM {
        id: id.into(),
        config,
        params: ParamVector(params),
    })
}

/// Rebuilds a model from a flat vector, checking length and finiteness.
pub fn unflatten(config: ModelConfig, params: ParamVector, id: impl Into<String>) -> Result<TinyLM> {
    config.validate()?;
    if params.len() != config.param_count() {
        return Err(Error::ParamLength {
            expected: config.param_count(),
            got: params.len(),
        });
    }
    params.check_finite()?;
    Ok(TinyLM {
        id: id.into(),
        config,
        params,
    })
}

impl TinyLM {
    /// The flat parameter view (clone of the storage vector).
    pub fn flatten(&self) -> ParamVector {
        self.params.clone()
    }

    /// Rebuilds a model from a widened f64 parameter vector, rounding each
    /// entry back to f32 storage exactly once.
    pub fn from_f64(id: impl Into<String>, config: ModelConfig, params: &[f64]) -> Result<TinyLM> {
        let cast: Vec<f32> = params.iter().map(|&p| p as f32).collect();
        unflatten(config, ParamVector(cast), id)
    }

    /// The exact `context_window` tokens the model sees for a prefix: the
    /// last W tokens, left-padded with PAD when the prefix is shorter.
    pub fn window(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        window_of(prefix, self.config.context_window)
    }

    /// Next-token logits for a prefix (f64 math over the f32 parameters).
    pub fn logits(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        if prefix.is_empty() {
            return Err(Error::Empty("prefix"));
        }
        check_prefix(prefix, self.config.vocab_size)?;
        let params = self.params.to_f64();
        Ok(forward(&params, &self.config, &window_of(prefix, self.config.context_window)).logits)
    }

    /// Next-token distribution: softmax of [`TinyLM::logits`]. Entries are
    /// strictly positive and sum to 1 within 1e-9.
    pub fn dist(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(prefix)?))
    }
}

pub(crate) fn check_prefix(prefix: &[TokenId], vocab_size: usize) -> Result<()> {
    for &t in prefix {
        if (t as usize) >= vocab_size {
            return Err(Error::TokenOutOfRange {
                id: u32::from(t),
                size: vocab_size,
            });
        }
    }
    Ok(())
}

/// Last `w` tokens of `prefix`, left-padded with PAD to exactly `w`.
pub(crate) fn window_of(prefix: &[TokenId], w: usize) -> Vec<TokenId> {
    if prefix.len() >= w {
        prefix[prefix.len() - w..].to_vec()
    } else {
        let mut out = vec![PAD; w - prefix.len()];
        out.extend_from_slice(prefix);
        out
    }
}

/// Intermediate activations of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub(crate) struct ForwardPass {
    /// Concatenated window embeddings, length W*d.
    pub x: Vec<f64>,
    /// tanh activations, length h.
    pub z: Vec<f64>,
    /// Vocabulary logits, length V.
    pub logits: Vec<f64>,
}

/// Forward pass over an f64 parameter vector. `window` must have exactly
/// `config.context_window` entries; this is the single source of truth for
/// the model math (generation, training, and gradient checks all route
/// through it).
pub(crate) fn forward(params: &[f64], config: &ModelConfig, window: &[TokenId]) -> ForwardPass {
    let (v, d, h, w) = (
        config.vocab_size,
        config.embed_dim,
        config.hidden_dim,
        config.context_window,
    );
    debug_assert_eq!(window.len(), w);
    debug_assert_eq!(params.len(), config.param_count());
    let layout = config.layout();
    let embed = &params[layout.embed];
    let input_w = &params[layout.input_w];
    let hidden_b = &params[layout.hidden_b];
    let output_w = &params[layout.output_w];
    let output_b = &params[layout.output_b];

    let mut x = vec![0.0; w * d];
    for (j, &tok) in window.iter().enumerate() {
        let row = &embed[tok as usize * d..(tok as usize + 1) * d];
        x[j * d..(j + 1) * d].copy_from_slice(row);
    }

    let mut z = vec![0.0; h];
    for i in 0..h {
        let row = &input_w[i * (w * d)..(i + 1) * (w * d)];
        let mut acc = hidden_b[i];
        for (wj, xj) in row.iter().zip(&x) {
            acc += wj * xj;
        }
        z[i] = acc.tanh();
    }

    let mut logits = vec![0.0; v];
    for (vi, logit) in logits.iter_mut().enumerate() {
        let row = &output_w[vi * h..(vi + 1) * h];
        let mut acc = output_b[vi];
        for (wi, zi) in row.iter().zip(&z) {
            acc += wi * zi;
        }
        *logit = acc;
    }

    ForwardPass { x, z, logits }
}

/// Numerically stable softmax; output entries are strictly positive.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab;
    use proptest::prelude::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 44,
            embed_dim: 8,
            hidden_dim: 16,
            context_window: 24,
            seed: 1,
        }
    }

    #[test]
    fn layout_offsets_match_hand_computed_table() {
        // V=44, d=8, h=16, W=24:
        //   embed     44*8        = 352   -> [0, 352)
        //   input_w   16*(24*8)   = 3072  -> [352, 3424)
        //   hidden_b  16                  -> [3424, 3440)
        //   output_w  44*16       = 704   -> [3440, 4144)
        //   output_b  44                  -> [4144, 4188)
        let layout = small_config().layout();
        assert_eq!(layout.embed, 0..352);
        assert_eq!(layout.input_w, 352..3424);
        assert_eq!(layout.hidden_b, 3424..3440);
        assert_eq!(layout.output_w, 3440..4144);
        assert_eq!(layout.output_b, 4144..4188);
        assert_eq!(small_config().param_count(), 4188);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = init_model(small_config(), "a").unwrap();
        let b = init_model(small_config(), "b").unwrap();
        assert_eq!(a.params, b.params);
        let c = init_model(ModelConfig { seed: 2, ..small_config() }, "c").unwrap();
        assert_ne!(a.params, c.params);
        assert!(a.params.as_slice().iter().all(|w| w.abs() < INIT_SCALE));
    }

    #[test]
    fn dist_is_a_strict_probability_vector() {
        let m = init_model(small_config(), "m").unwrap();
        let prefix = vocab::encode("12+34=").unwrap();
        let p = m.dist(&prefix).unwrap();
        assert_eq!(p.len(), 44);
        assert!(p.iter().all(|&x| x > 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn short_prefixes_are_left_padded() {
        let m = init_model(small_config(), "m").unwrap();
        let short = vocab::encode("1+2=").unwrap();
        let mut padded = vec![PAD; 24 - short.len()];
        padded.extend_from_slice(&short);
        assert_eq!(m.window(&short), padded);
        assert_eq!(m.dist(&short).unwrap(), m.dist(&padded).unwrap());
    }

    #[test]
    fn long_prefixes_keep_only_the_tail() {
        let m = init_model(small_config(), "m").unwrap();
        let long: Vec<TokenId> = (0..30).map(|i| 4 + (i % 10) as TokenId).collect();
        assert_eq!(m.window(&long), long[6..].to_vec());
        assert_eq!(m.dist(&long).unwrap(), m.dist(&long[6..]).unwrap());
    }

    #[test]
    fn empty_prefix_and_foreign_tokens_are_rejected() {
        let m = init_model(small_config(), "m").unwrap();
        assert!(m.dist(&[]).is_err());
        assert!(m.dist(&[44]).is_err());
    }

    #[test]
    fn unflatten_checks_length_and_finiteness() {
        let cfg = small_config();
        let err = unflatten(cfg, ParamVector(vec![0.0; 7]), "m").unwrap_err();
        assert!(matches!(err, Error::ParamLength { expected: 4188, got: 7 }));
        let mut params = vec![0.0f32; cfg.param_count()];
        params[100] = f32::NAN;
        assert!(unflatten(cfg, ParamVector(params), "m").is_err());
    }

    #[test]
    fn flatten_unflatten_roundtrip_is_exact() {
        let m = init_model(small_config(), "m").unwrap();
        let back = unflatten(m.config, m.flatten(), m.id.clone()).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        /// Softmax normalizes, stays positive, and is shift-invariant.
        #[test]
        fn softmax_properties(
            logits in proptest::collection::vec(-30.0f64..30.0, 2..20),
            shift in -50.0f64..50.0,
        ) {
            let p = softmax(&logits);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&x| x > 0.0));
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let q = softmax(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
