//! Query routing: a linear classifier picks the pool member to answer.
//!
//! Labels come from the pool itself: each member answers every training
//! instruction greedily, and the member with the best exact-match score
//! (Levenshtein similarity as tie-break, lowest index after that) becomes the
//! instruction's class. A multinomial logistic regression over
//! bag-of-token-count features of the prompt is then fit to those labels.
//! The feature map is deliberately shallow — the three task families differ
//! in surface tokens, which is exactly what a count vector exposes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generate::{argmax, greedy_decode, sample, TrainConfig};
use crate::model::TokenId;
use crate::pool::Pool;
use crate::scoring::score_combined;
use crate::tasks::Dataset;

/// Router training knobs as they appear in run configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RouterSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Weights start uniform in (-init_scale, init_scale).
    pub init_scale: f64,
}

impl Default for RouterSettings {
    fn default() -> Self {
        RouterSettings {
            epochs: 5,
            learning_rate: 0.05,
            batch_size: 32,
            init_scale: 0.01,
        }
    }
}

impl RouterSettings {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("router batch_size must be positive".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(
                "router learning_rate must be finite and >= 0".into(),
            ));
        }
        if !self.init_scale.is_finite() || self.init_scale < 0.0 {
            return Err(Error::InvalidConfig(
                "router init_scale must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// How router training went, for reports and degenerate-label warnings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterTrainReport {
    /// Instructions labeled per class, class order = pool order.
    pub label_counts: Vec<usize>,
    /// Fraction of training labels the trained router reproduces.
    pub train_accuracy: f64,
    /// True when every label landed on one class; the router still trains
    /// but routing is then constant.
    pub degenerate_labels: bool,
}

/// A trained router: `classes x (feature_dim + 1)` weights, bias last.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterState {
    pub classes: usize,
    pub feature_dim: usize,
    pub weights: Vec<f64>,
    pub report: RouterTrainReport,
}

/// Index of the best score; ties break to the lowest index.
pub fn route_label(candidate_scores: &[f64]) -> Result<usize> {
    if candidate_scores.is_empty() {
        return Err(Error::Empty("candidate scores"));
    }
    Ok(argmax(candidate_scores))
}

/// Bag-of-token-count features of a prompt.
pub fn features(prompt: &[TokenId], vocab_size: usize) -> Vec<f64> {
    let mut f = vec![0.0; vocab_size];
    for &t in prompt {
        if (t as usize) < vocab_size {
            f[t as usize] += 1.0;
        }
    }
    f
}

impl RouterState {
    fn scores(&self, feats: &[f64]) -> Vec<f64> {
        let cols = self.feature_dim + 1;
        (0..self.classes)
            .map(|c| {
                let row = &self.weights[c * cols..(c + 1) * cols];
                let mut acc = row[self.feature_dim]; // bias
                for (w, x) in row[..self.feature_dim].iter().zip(feats) {
                    acc += w * x;
                }
                acc
            })
            .collect()
    }

    /// Class (pool index) selected for a prompt; ties go to the lowest index.
    pub fn select(&self, prompt: &[TokenId]) -> usize {
        argmax(&self.scores(&features(prompt, self.feature_dim)))
    }
}

/// Fits a multinomial logistic regression to explicit labels. Batches run in
/// dataset order (no shuffling) with mean-reduced gradients, so a duplicated
/// dataset trains exactly like doubling the epochs.
pub fn fit_router(
    feature_rows: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    settings: &RouterSettings,
    rng: &mut ChaCha8Rng,
) -> Result<RouterState> {
    settings.validate()?;
    if feature_rows.is_empty() || feature_rows.len() != labels.len() {
        return Err(Error::Empty("router training data"));
    }
    if classes == 0 {
        return Err(Error::Empty("router classes"));
    }
    let feature_dim = feature_rows[0].len();
    if feature_rows.iter().any(|r| r.len() != feature_dim) {
        return Err(Error::Incompatible(
            "router feature rows differ in length".into(),
        ));
    }
    if labels.iter().any(|&y| y >= classes) {
        return Err(Error::InvalidConfig("router label out of class range".into()));
    }
    let cols = feature_dim + 1;
    let mut weights: Vec<f64> = (0..classes * cols)
        .map(|_| rng.gen_range(-settings.init_scale..=settings.init_scale))
        .collect();

    for _epoch in 0..settings.epochs {
        for chunk_start in (0..feature_rows.len()).step_by(settings.batch_size) {
            let chunk_end = (chunk_start + settings.batch_size).min(feature_rows.len());
            let mut grad = vec![0.0; weights.len()];
            let scale = 1.0 / (chunk_end - chunk_start) as f64;
            for i in chunk_start..chunk_end {
                let feats = &feature_rows[i];
                let logits: Vec<f64> = (0..classes)
                    .map(|c| {
                        let row = &weights[c * cols..(c + 1) * cols];
                        row[feature_dim]
                            + row[..feature_dim]
                                .iter()
                                .zip(feats)
                                .map(|(w, x)| w * x)
                                .sum::<f64>()
                    })
                    .collect();
                let probs = crate::model::softmax(&logits);
                for c in 0..classes {
                    let d = (probs[c] - f64::from(u8::from(c == labels[i]))) * scale;
                    let grow = &mut grad[c * cols..(c + 1) * cols];
                    for (g, x) in grow[..feature_dim].iter_mut().zip(feats) {
                        *g += d * x;
                    }
                    grow[feature_dim] += d;
                }
            }
            for (w, g) in weights.iter_mut().zip(&grad) {
                *w -= settings.learning_rate * g;
            }
        }
    }

    let mut label_counts = vec![0usize; classes];
    for &y in labels {
        label_counts[y] += 1;
    }
    let degenerate_labels = label_counts.iter().filter(|&&c| c > 0).count() <= 1;
    let mut state = RouterState {
        classes,
        feature_dim,
        weights,
        report: RouterTrainReport {
            label_counts,
            train_accuracy: 0.0,
            degenerate_labels,
        },
    };
    let correct = feature_rows
        .iter()
        .zip(labels)
        .filter(|(f, &y)| argmax(&state.scores(f)) == y)
        .count();
    state.report.train_accuracy = correct as f64 / labels.len() as f64;
    Ok(state)
}

/// Labels every instruction with the pool member whose greedy answer scores
/// best (exact match first, similarity as tie-break), then fits the router.
pub fn train_router(
    pool: &Pool,
    data: &Dataset,
    settings: &RouterSettings,
    gen: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RouterState> {
    if pool.is_empty() {
        return Err(Error::Empty("pool"));
    }
    if data.is_empty() {
        return Err(Error::Empty("router dataset"));
    }
    let vocab_size = pool.models[0].config.vocab_size;
    let mut rows = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for inst in &data.instances {
        let scores: Vec<f64> = pool
            .models
            .iter()
            .map(|m| {
                greedy_decode(m, &inst.prompt, gen.max_new_tokens)
                    .map(|out| score_combined(&out, &inst.gold))
            })
            .collect::<Result<_>>()?;
        labels.push(route_label(&scores)?);
        rows.push(features(&inst.prompt, vocab_size));
    }
    fit_router(&rows, &labels, pool.len(), settings, rng)
}

/// Routes a prompt: select the class, sample the selected member's response.
/// Returns the response and the chosen pool index.
pub fn route(
    router: &RouterState,
    pool: &Pool,
    prompt: &[TokenId],
    gen: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<TokenId>, usize)> {
    if router.classes != pool.len() {
        return Err(Error::Incompatible(format!(
            "router has {} classes but the pool has {} members",
            router.classes,
            pool.len()
        )));
    }
    let idx = router.select(prompt);
    let response = sample(&pool.models[idx], prompt, gen, rng)?;
    Ok((response, idx))
}
