//! Weight-level collaboration: dare-ties merging of parameter deltas.
//!
//! Every member is expressed as a delta against the shared base checkpoint.
//! Each delta is thinned by DARE (random drop + 1/(1-p_d) rescale, which
//! preserves the delta in expectation), then TIES resolves interference:
//! keep each delta's largest-magnitude coordinates, elect a per-coordinate
//! sign by weighted vote, and average only the deltas that agree with the
//! elected sign. The merged delta is added back onto the base.
//!
//! All arithmetic runs in f64 over the f32 parameters. The f64 difference of
//! two f32 values is exact, so merging n copies of the same model with
//! p_d = 0 reproduces that model bit-for-bit.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{unflatten, ParamVector, TinyLM};
use crate::pool::Pool;

/// Merge knobs as they appear in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MergeSettings {
    /// Per-member weights; `None` means equal weights.
    pub weights: Option<Vec<f64>>,
    /// TIES trim density: fraction of coordinates each delta keeps, by
    /// magnitude. In (0, 1].
    pub density: f64,
    /// DARE drop probability. In [0, 1).
    pub dare_drop: f64,
}

impl Default for MergeSettings {
    fn default() -> Self {
        MergeSettings {
            weights: None,
            density: 0.7,
            dare_drop: 0.3,
        }
    }
}

/// Settings resolved against a concrete pool size: weights normalized and
/// validated.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeConfig {
    pub weights: Vec<f64>,
    pub density: f64,
    pub dare_drop: f64,
}

impl MergeSettings {
    /// Validates and expands the settings for an `n`-member pool.
    pub fn resolve(&self, n: usize) -> Result<MergeConfig> {
        if n == 0 {
            return Err(Error::Empty("pool"));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "merge density must be in (0, 1], got {}",
                self.density
            )));
        }
        if !(0.0..1.0).contains(&self.dare_drop) {
            return Err(Error::InvalidConfig(format!(
                "dare_drop must be in [0, 1), got {}",
                self.dare_drop
            )));
        }
        let weights = match &self.weights {
            None => vec![1.0 / n as f64; n],
            Some(w) => {
                if w.len() != n {
                    return Err(Error::InvalidConfig(format!(
                        "merge weights: {} entries for a pool of {n}",
                        w.len()
                    )));
                }
                if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                    return Err(Error::InvalidConfig(
                        "merge weights must be finite and non-negative".into(),
                    ));
                }
                let sum: f64 = w.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidConfig(format!(
                        "merge weights sum to {sum}, expected 1"
                    )));
                }
                w.clone()
            }
        };
        Ok(MergeConfig {
            weights,
            density: self.density,
            dare_drop: self.dare_drop,
        })
    }
}

/// DARE drop-and-rescale: each coordinate is independently zeroed with
/// probability `p_d`; survivors are scaled by 1/(1-p_d) so the expectation
/// is the input delta. `p_d = 0` is the identity (every coordinate kept,
/// scale exactly 1).
pub fn dare(delta: &[f64], p_d: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p_d) {
        return Err(Error::InvalidConfig(format!(
            "dare_drop must be in [0, 1), got {p_d}"
        )));
    }
    let rescale = 1.0 / (1.0 - p_d);
    Ok(delta
        .iter()
        .map(|&v| {
            if rng.gen::<f64>() < p_d {
                0.0
            } else {
                v * rescale
            }
        })
        .collect())
}

/// Zeroes all but the top `ceil(density * len)` coordinates of `delta` by
/// absolute magnitude (ties keep the lower index).
fn trim(delta: &mut [f64], density: f64) {
    let keep = (density * delta.len() as f64).ceil() as usize;
    if keep >= delta.len() {
        return;
    }
    let mut order: Vec<usize> = (0..delta.len()).collect();
    order.sort_by(|&a, &b| {
        delta[b]
            .abs()
            .partial_cmp(&delta[a].abs())
            .expect("deltas are finite")
            .then(a.cmp(&b))
    });
    for &idx in &order[keep..] {
        delta[idx] = 0.0;
    }
}

/// TIES merge of equal-length deltas: DARE each, trim to the configured
/// density, elect a per-coordinate sign (weighted vote, ties positive), and
/// take the weighted mean over the sign-consistent deltas only (weights
/// renormalized over the participants). Returns the merged delta.
pub fn ties_merge(
    deltas: &[Vec<f64>],
    cfg: &MergeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if deltas.is_empty() {
        return Err(Error::Empty("delta list"));
    }
    let len = deltas[0].len();
    if deltas.iter().any(|d| d.len() != len) {
        return Err(Error::Incompatible(
            "deltas of unequal length cannot be merged".into(),
        ));
    }
    if cfg.weights.len() != deltas.len() {
        return Err(Error::InvalidConfig(format!(
            "{} merge weights for {} deltas",
            cfg.weights.len(),
            deltas.len()
        )));
    }

    let mut prepared = Vec::with_capacity(deltas.len());
    for d in deltas {
        let mut thinned = dare(d, cfg.dare_drop, rng)?;
        trim(&mut thinned, cfg.density);
        prepared.push(thinned);
    }

    let mut merged = vec![0.0; len];
    for j in 0..len {
        // ELECT: weighted sign vote; exact zero votes positive.
        let vote: f64 = prepared
            .iter()
            .zip(&cfg.weights)
            .map(|(d, &w)| w * d[j])
            .sum();
        let elected_positive = vote >= 0.0;

        // DISJOINT MEAN over sign-consistent nonzero deltas. Computed as
        // first + sum(w'*(d - first)) so that identical participant values
        // pass through exactly.
        let mut weight_sum = 0.0;
        let mut first: Option<f64> = None;
        for (d, &w) in prepared.iter().zip(&cfg.weights) {
            let v = d[j];
            if v != 0.0 && (v > 0.0) == elected_positive {
                weight_sum += w;
                if first.is_none() {
                    first = Some(v);
                }
            }
        }
        merged[j] = match first {
            None => 0.0,
            Some(f) if weight_sum > 0.0 => {
                let mut acc = 0.0;
                for (d, &w) in prepared.iter().zip(&cfg.weights) {
                    let v = d[j];
                    if v != 0.0 && (v > 0.0) == elected_positive {
                        acc += (w / weight_sum) * (v - f);
                    }
                }
                f + acc
            }
            // All participants carry zero weight: fall back to their plain
            // mean by treating them equally.
            Some(_) => {
                let participants: Vec<f64> = prepared
                    .iter()
                    .map(|d| d[j])
                    .filter(|&v| v != 0.0 && (v > 0.0) == elected_positive)
                    .collect();
                participants.iter().sum::<f64>() / participants.len() as f64
            }
        };
    }
    Ok(merged)
}

/// Merges a whole pool into one model: deltas against the pool's base, dare-
/// ties, base re-addition, cast back to f32. The merged model reuses the
/// base's shape.
pub fn merge_pool(
    pool: &Pool,
    settings: &MergeSettings,
    rng: &mut ChaCha8Rng,
    merged_id: &str,
) -> Result<TinyLM> {
    let base = pool.base.as_ref().ok_or_else(|| {
        Error::Incompatible(
            "weight merging needs the pool's common base checkpoint, which this pool lacks".into(),
        )
    })?;
    for m in &pool.models {
        if !m.config.same_shape(&base.config) {
            return Err(Error::Incompatible(format!(
                "model {:?} differs in shape from the base; dare-ties requires a homogeneous pool",
                m.id
            )));
        }
    }
    let cfg = settings.resolve(pool.len())?;
    let base_f64 = base.params.to_f64();
    let deltas: Vec<Vec<f64>> = pool
        .models
        .iter()
        .map(|m| {
            m.params
                .to_f64()
                .iter()
                .zip(&base_f64)
                .map(|(&p, &b)| p - b)
                .collect()
        })
        .collect();
    let merged_delta = ties_merge(&deltas, &cfg, rng)?;
    let params: Vec<f32> = base_f64
        .iter()
        .zip(&merged_delta)
        .map(|(&b, &d)| (b + d) as f32)
        .collect();
    unflatten(base.config, ParamVector(params), merged_id)
}
