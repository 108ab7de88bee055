//! A pool of tiny LMs plus their common ancestor.

use crate::error::{Error, Result};
use crate::generate::greedy_decode;
use crate::model::TinyLM;
use crate::scoring::score_exact;
use crate::tasks::TaskInstance;

/// The evolving population. `base` is the shared pre-specialization
/// checkpoint that weight merging measures deltas against; pools whose
/// members were never specialized from one ancestor (heterogeneous shapes)
/// carry no base and cannot merge.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    pub models: Vec<TinyLM>,
    pub base: Option<TinyLM>,
}

impl Pool {
    pub fn new(models: Vec<TinyLM>, base: Option<TinyLM>) -> Result<Pool> {
        if models.is_empty() {
            return Err(Error::Empty("pool"));
        }
        let mut ids = std::collections::BTreeSet::new();
        for m in &models {
            if !ids.insert(m.id.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate model id {:?} in pool",
                    m.id
                )));
            }
        }
        if let Some(b) = &base {
            for m in &models {
                if !m.config.same_shape(&b.config) {
                    return Err(Error::Incompatible(format!(
                        "model {:?} does not share the base model's shape",
                        m.id
                    )));
                }
            }
        }
        Ok(Pool { models, base })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.models.iter().map(|m| m.id.as_str()).collect()
    }

    /// True when every member has the same parameter shape.
    pub fn homogeneous(&self) -> bool {
        self.models
            .windows(2)
            .all(|w| w[0].config.same_shape(&w[1].config))
    }

    /// True when every member shares one vocabulary size.
    pub fn shared_vocab(&self) -> bool {
        self.models
            .windows(2)
            .all(|w| w[0].config.vocab_size == w[1].config.vocab_size)
    }

    /// Index of the member with the highest mean exact-match under greedy
    /// decoding on `instances`; ties go to the lowest index.
    pub fn dev_best_index(&self, instances: &[TaskInstance], max_new_tokens: usize) -> Result<usize> {
        if instances.is_empty() {
            return Err(Error::Empty("dev instances"));
        }
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (idx, m) in self.models.iter().enumerate() {
            let mut sum = 0.0;
            for inst in instances {
                let out = greedy_decode(m, &inst.prompt, max_new_tokens)?;
                sum += score_exact(&out, &inst.gold);
            }
            let mean = sum / instances.len() as f64;
            if mean > best_score {
                best_score = mean;
                best = idx;
            }
        }
        Ok(best)
    }
}
