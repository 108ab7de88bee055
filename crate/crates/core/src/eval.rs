//! Pool and system evaluation.
//!
//! Individual members are scored with deterministic greedy decoding, so
//! single-model metrics are rng-free and repeatable bit-for-bit. The
//! collaboration system is scored with its usual sampling settings under
//! per-instance evaluation streams. A 2x2 skill matrix counts instances by
//! whether any single member solves them and whether the system does.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::collab::CollabSystem;
use crate::error::{Error, Result};
use crate::generate::{greedy_decode, TrainConfig};
use crate::pool::Pool;
use crate::rng::Seeder;
use crate::scoring::score_exact;
use crate::tasks::{Dataset, Split, TaskFamily};

/// Instance counts bucketed by (any single member solves it, the
/// collaboration system solves it).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillCounts {
    pub yes_yes: usize,
    pub yes_no: usize,
    pub no_yes: usize,
    pub no_no: usize,
}

impl SkillCounts {
    pub fn total(&self) -> usize {
        self.yes_yes + self.yes_no + self.no_yes + self.no_no
    }

    fn add(&mut self, single: bool, multi: bool) {
        match (single, multi) {
            (true, true) => self.yes_yes += 1,
            (true, false) => self.yes_no += 1,
            (false, true) => self.no_yes += 1,
            (false, false) => self.no_no += 1,
        }
    }
}

/// Per-family skill counts for one evaluated split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillMatrix {
    pub families: BTreeMap<TaskFamily, SkillCounts>,
}

impl SkillMatrix {
    /// Counts summed over families.
    pub fn totals(&self) -> SkillCounts {
        let mut out = SkillCounts::default();
        for c in self.families.values() {
            out.yes_yes += c.yes_yes;
            out.yes_no += c.yes_no;
            out.no_yes += c.no_yes;
            out.no_no += c.no_no;
        }
        out
    }
}

/// Scores for one task family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyEval {
    /// Greedy exact-match rate per pool member, in pool order.
    pub single_scores: Vec<f64>,
    /// Mean of `single_scores`.
    pub single_avg: f64,
    /// Population standard deviation of `single_scores`.
    pub single_std: f64,
    /// Max of `single_scores`.
    pub best_single: f64,
    /// Sampled exact-match rate of the collaboration system.
    pub multi_score: f64,
}

/// Mean, population standard deviation, and max of a score vector.
pub fn aggregate(scores: &[f64]) -> (f64, f64, f64) {
    let n = scores.len() as f64;
    let avg = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - avg) * (s - avg)).sum::<f64>() / n;
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (avg, var.sqrt(), best)
}

/// One full evaluation of a pool + system over a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Pool member ids, the order of every `single_scores` vector.
    pub model_ids: Vec<String>,
    pub families: BTreeMap<TaskFamily, FamilyEval>,
}

impl EvalReport {
    /// Mean-over-families of the member average: the pool selection metric.
    pub fn macro_single_avg(&self) -> f64 {
        mean(self.families.values().map(|f| f.single_avg))
    }

    /// Mean-over-families of the system score: the system selection metric.
    pub fn macro_multi(&self) -> f64 {
        mean(self.families.values().map(|f| f.multi_score))
    }

    /// Mean-over-families of the best member score.
    pub fn macro_best_single(&self) -> f64 {
        mean(self.families.values().map(|f| f.best_single))
    }

    /// Per-member macro-over-families scores, in pool order.
    pub fn macro_models(&self) -> Vec<f64> {
        (0..self.model_ids.len())
            .map(|i| mean(self.families.values().map(|f| f.single_scores[i])))
            .collect()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    sum / n.max(1) as f64
}

/// Evaluates a pool and its collaboration system over one split in a single
/// pass. Member scores use greedy decoding (no randomness); the system
/// response for each instance is sampled from a stream keyed by
/// (iteration, split, instance id), so results are independent of instance
/// order and of any other phase's draws.
pub fn evaluate(
    pool: &Pool,
    system: &CollabSystem,
    data: &Dataset,
    split: Split,
    gen: &TrainConfig,
    seeder: &Seeder,
    iteration: usize,
) -> Result<(EvalReport, SkillMatrix)> {
    if data.instances.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    struct Acc {
        single_sums: Vec<f64>,
        multi_sum: f64,
        count: usize,
    }
    let mut accs: BTreeMap<TaskFamily, Acc> = BTreeMap::new();
    let mut matrix = SkillMatrix::default();

    for inst in &data.instances {
        let mut single_hits = Vec::with_capacity(pool.len());
        for m in &pool.models {
            let out = greedy_decode(m, &inst.prompt, gen.max_new_tokens)?;
            single_hits.push(score_exact(&out, &inst.gold));
        }
        let mut rng = seeder.eval(iteration, split.tag(), &inst.id);
        let resp = system.generate(pool, &inst.prompt, gen, &mut rng)?;
        let multi_hit = score_exact(&resp.tokens, &inst.gold);

        let acc = accs.entry(inst.family).or_insert_with(|| Acc {
            single_sums: vec![0.0; pool.len()],
            multi_sum: 0.0,
            count: 0,
        });
        for (s, hit) in acc.single_sums.iter_mut().zip(&single_hits) {
            *s += hit;
        }
        acc.multi_sum += multi_hit;
        acc.count += 1;
        matrix
            .families
            .entry(inst.family)
            .or_default()
            .add(single_hits.iter().any(|&h| h == 1.0), multi_hit == 1.0);
    }

    let mut families = BTreeMap::new();
    for (family, acc) in accs {
        let n = acc.count as f64;
        let single_scores: Vec<f64> = acc.single_sums.iter().map(|s| s / n).collect();
        let (single_avg, single_std, best_single) = aggregate(&single_scores);
        families.insert(
            family,
            FamilyEval {
                single_scores,
                single_avg,
                single_std,
                best_single,
                multi_score: acc.multi_sum / n,
            },
        );
    }
    Ok((
        EvalReport {
            model_ids: pool.models.iter().map(|m| m.id.clone()).collect(),
            families,
        },
        matrix,
    ))
}
