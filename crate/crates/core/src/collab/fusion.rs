//! Logit-level collaboration: decode from the mean of member distributions.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::generate::{sample_from_probs, Decoder, TrainConfig};
use crate::model::{self, softmax, TokenId};
use crate::pool::Pool;
use crate::vocab::{BOS, EOS};

/// Coordinate-wise arithmetic mean of next-token distributions. Computed as
/// `p1 + sum((pi - p1) / n)` so that identical inputs pass through
/// bit-exactly and the general case stays within 1e-12 of the plain mean.
pub fn fused_distribution(dists: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = dists.first().ok_or(Error::Empty("distribution list"))?;
    if dists.iter().any(|d| d.len() != first.len()) {
        return Err(Error::Incompatible(
            "member distributions differ in length; vocabularies must match".into(),
        ));
    }
    let n = dists.len() as f64;
    let mut out = first.clone();
    for (j, o) in out.iter_mut().enumerate() {
        let mut corr = 0.0;
        for d in &dists[1..] {
            corr += d[j] - first[j];
        }
        *o += corr / n;
    }
    Ok(out)
}

/// Fused decoding: at every step each member scores the shared prefix, the
/// distributions are averaged, and the next token is sampled from the mean
/// with the configured temperature and nucleus mass.
pub fn fuse_decode(
    pool: &Pool,
    prompt: &[TokenId],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TokenId>> {
    cfg.validate()?;
    if prompt.is_empty() {
        return Err(Error::Empty("prompt"));
    }
    if !pool.shared_vocab() {
        return Err(Error::Incompatible(
            "logit fusion requires every pool member to share the vocabulary".into(),
        ));
    }
    for m in &pool.models {
        model::check_prefix(prompt, m.config.vocab_size)?;
    }
    let decoders: Vec<Decoder> = pool.models.iter().map(Decoder::new).collect();
    let mut seq = Vec::with_capacity(1 + prompt.len() + cfg.max_new_tokens);
    seq.push(BOS);
    seq.extend_from_slice(prompt);
    let mut out = Vec::new();
    for _ in 0..cfg.max_new_tokens {
        let dists: Vec<Vec<f64>> = decoders
            .iter()
            .map(|d| softmax(&d.logits(&seq)))
            .collect();
        let fused = fused_distribution(&dists)?;
        let tok = sample_from_probs(&fused, cfg.temperature, cfg.top_p, rng)?;
        seq.push(tok);
        out.push(tok);
        if tok == EOS {
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::sample;
    use crate::model::{init_model, ModelConfig, TinyLM};
    use crate::rng::stream;
    use crate::vocab;
    use proptest::prelude::*;

    fn cfg(seed: u64) -> ModelConfig {
        ModelConfig {
            hidden_dim: 12,
            context_window: 12,
            seed,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn two_symmetric_distributions_fuse_to_the_midpoint() {
        let fused = fused_distribution(&[vec![0.8, 0.2], vec![0.2, 0.8]]).unwrap();
        assert_eq!(fused, vec![0.5, 0.5]);
    }

    #[test]
    fn fusing_identical_models_bit_matches_the_single_model() {
        let m = init_model(cfg(3), "m").unwrap();
        let pool = Pool::new(
            vec![
                TinyLM { id: "a".into(), ..m.clone() },
                TinyLM { id: "b".into(), ..m.clone() },
                TinyLM { id: "c".into(), ..m.clone() },
            ],
            None,
        )
        .unwrap();
        let prompt = vocab::encode("12+7=").unwrap();
        // Per-step distribution is bit-identical, so with the same stream
        // the whole fused sample equals the single model's sample.
        let single_dist = m.dist(&{
            let mut s = vec![vocab::BOS];
            s.extend_from_slice(&prompt);
            s
        })
        .unwrap();
        let fused = fused_distribution(&[single_dist.clone(), single_dist.clone(), single_dist.clone()])
            .unwrap();
        assert_eq!(fused, single_dist);

        let gen = TrainConfig::default();
        let fused_out = fuse_decode(&pool, &prompt, &gen, &mut stream(8, &[])).unwrap();
        let single_out = sample(&m, &prompt, &gen, &mut stream(8, &[])).unwrap();
        assert_eq!(fused_out, single_out);
    }

    #[test]
    fn fused_matches_hand_summed_mean_within_1e_12() {
        let models: Vec<TinyLM> = (0..3)
            .map(|i| init_model(cfg(10 + i), &format!("m{i}")).unwrap())
            .collect();
        let prefix = {
            let mut s = vec![vocab::BOS];
            s.extend_from_slice(&vocab::encode("rev:abc=").unwrap());
            s
        };
        let dists: Vec<Vec<f64>> = models.iter().map(|m| m.dist(&prefix).unwrap()).collect();
        let fused = fused_distribution(&dists).unwrap();
        // Independent oracle: plain sum / n, accumulated in a different order.
        for j in 0..fused.len() {
            let oracle = dists.iter().rev().map(|d| d[j]).sum::<f64>() / 3.0;
            assert!((fused[j] - oracle).abs() < 1e-12, "coordinate {j}");
        }
        assert!((fused.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        assert!(fused_distribution(&[vec![1.0], vec![0.5, 0.5]]).is_err());
        assert!(fused_distribution(&[]).is_err());
    }

    proptest! {
        /// The fused distribution of valid inputs is itself a distribution
        /// and equals the arithmetic mean within 1e-12.
        #[test]
        fn fusion_is_a_mean(
            raw in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 6), 1..5)
        ) {
            let dists: Vec<Vec<f64>> = raw
                .into_iter()
                .map(|v| {
                    let s: f64 = v.iter().sum();
                    v.into_iter().map(|x| x / s).collect()
                })
                .collect();
            let fused = fused_distribution(&dists).unwrap();
            prop_assert!((fused.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for j in 0..6 {
                let mean = dists.iter().map(|d| d[j]).sum::<f64>() / dists.len() as f64;
                prop_assert!((fused[j] - mean).abs() < 1e-12);
            }
        }
    }
}
