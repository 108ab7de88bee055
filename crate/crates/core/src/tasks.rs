//! Synthetic instruction families with programmatic gold answers.
//!
//! Three families keep the loop honest without any external data: two-digit
//! addition (`12+7=` -> `19`), string reversal (`rev:abc=` -> `cba`), and
//! key-value recall against a fixed table (`kv:qmf=` -> `tao`). Each family
//! uses a distinct prompt shape so a router can tell them apart and a pool
//! member can specialise on one of them.
//!
//! Datasets regenerate bit-identically from (family, count, seed, split);
//! instance ids are unique within a dataset and stable across regeneration.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TokenId;
use crate::rng::{self, phase};
use crate::vocab;

/// The three instruction families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskFamily {
    #[serde(rename = "ARITH")]
    Arith,
    #[serde(rename = "STRTRANS")]
    StrTrans,
    #[serde(rename = "KVRECALL")]
    KvRecall,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 3] = [TaskFamily::Arith, TaskFamily::StrTrans, TaskFamily::KvRecall];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskFamily::Arith => "ARITH",
            TaskFamily::StrTrans => "STRTRANS",
            TaskFamily::KvRecall => "KVRECALL",
        }
    }

    pub fn parse(s: &str) -> Result<TaskFamily> {
        match s {
            "ARITH" => Ok(TaskFamily::Arith),
            "STRTRANS" => Ok(TaskFamily::StrTrans),
            "KVRECALL" => Ok(TaskFamily::KvRecall),
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    }

    /// Stream-key tag; also the canonical ordering of the families.
    pub fn tag(&self) -> u64 {
        match self {
            TaskFamily::Arith => 0,
            TaskFamily::StrTrans => 1,
            TaskFamily::KvRecall => 2,
        }
    }

    fn id_prefix(&self) -> &'static str {
        match self {
            TaskFamily::Arith => "arith",
            TaskFamily::StrTrans => "strtrans",
            TaskFamily::KvRecall => "kvrecall",
        }
    }
}

impl std::fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which partition an instance belongs to. Splits generated from the same
/// seed use disjoint RNG streams, so train never leaks into dev or test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "dev")]
    Dev,
    #[serde(rename = "test")]
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Malformed {
                what: "split",
                detail: format!("unknown split {other:?}"),
            }),
        }
    }

    /// Stream-key tag.
    pub fn tag(&self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Dev => 1,
            Split::Test => 2,
        }
    }
}

/// One instruction: a tokenized prompt and its gold answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    /// Unique within its dataset, e.g. `arith-train-00042`.
    pub id: String,
    pub family: TaskFamily,
    /// Prompt tokens; non-empty, printable symbols only (no specials).
    pub prompt: Vec<TokenId>,
    /// Gold answer tokens; non-empty, printable symbols only.
    pub gold: Vec<TokenId>,
    pub split: Split,
}

impl TaskInstance {
    pub fn prompt_text(&self) -> String {
        vocab::decode(&self.prompt).expect("prompt holds only vocabulary symbols")
    }

    pub fn gold_text(&self) -> String {
        vocab::decode(&self.gold).expect("gold holds only vocabulary symbols")
    }
}

/// A batch of instances plus the recipe that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub instances: Vec<TaskInstance>,
    /// Seed the generator was keyed with.
    pub seed: u64,
    /// Fraction of instances per family; sums to 1 for non-empty datasets.
    pub family_mix: BTreeMap<TaskFamily, f64>,
}

/// Number of entries in the fixed key-value table.
pub const KV_TABLE_SIZE: usize = 200;

/// Seed of the fixed key-value table. Independent of all run seeds so the
/// table is a constant of the task definition, not of any particular run.
const KV_TABLE_SEED: u64 = 0x5EED_7AB1;

/// The fixed key -> value table behind KVRECALL: distinct lowercase keys of
/// length 3-5 mapped to lowercase values of length 3-5.
pub fn kv_table() -> Vec<(String, String)> {
    let mut rng = rng::stream(KV_TABLE_SEED, &[phase::TASKS]);
    let mut keys = std::collections::BTreeSet::new();
    let mut table = Vec::with_capacity(KV_TABLE_SIZE);
    while table.len() < KV_TABLE_SIZE {
        let key = random_word(&mut rng);
        if !keys.insert(key.clone()) {
            continue; // duplicate key; draw again
        }
        let value = random_word(&mut rng);
        table.push((key, value));
    }
    table
}

fn random_word(rng: &mut impl Rng) -> String {
    let len = rng.gen_range(3..=5);
    (0..len)
        .map(|_| char::from(b'a' + rng.gen_range(0..26u8)))
        .collect()
}

/// Generates `count` instances of one family. Regenerating with the same
/// arguments yields an identical dataset; different splits draw from
/// disjoint streams of the same seed.
pub fn generate_family(
    family: TaskFamily,
    count: usize,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Empty("dataset (count must be positive)"));
    }
    let mut rng = rng::stream(seed, &[phase::TASKS, family.tag(), split.tag()]);
    let table = match family {
        TaskFamily::KvRecall => kv_table(),
        _ => Vec::new(),
    };
    let mut instances = Vec::with_capacity(count);
    for i in 0..count {
        let (prompt, gold) = match family {
            TaskFamily::Arith => {
                let a = rng.gen_range(0..=99u32);
                let b = rng.gen_range(0..=99u32);
                (format!("{a}+{b}="), format!("{}", a + b))
            }
            TaskFamily::StrTrans => {
                let s = {
                    let len = rng.gen_range(3..=8);
                    (0..len)
                        .map(|_| char::from(b'a' + rng.gen_range(0..26u8)))
                        .collect::<String>()
                };
                let rev: String = s.chars().rev().collect();
                (format!("rev:{s}="), rev)
            }
            TaskFamily::KvRecall => {
                let (key, value) = &table[rng.gen_range(0..table.len())];
                (format!("kv:{key}="), value.clone())
            }
        };
        instances.push(TaskInstance {
            id: format!("{}-{}-{:05}", family.id_prefix(), split.as_str(), i),
            family,
            prompt: vocab::encode(&prompt)?,
            gold: vocab::encode(&gold)?,
            split,
        });
    }
    let mut family_mix = BTreeMap::new();
    family_mix.insert(family, 1.0);
    Ok(Dataset {
        instances,
        seed,
        family_mix,
    })
}

/// Generates a mixed dataset with `per_family` instances of every listed
/// family, in family order.
pub fn generate_mixed(
    families: &[TaskFamily],
    per_family: usize,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    if families.is_empty() {
        return Err(Error::Empty("family list"));
    }
    let mut instances = Vec::with_capacity(families.len() * per_family);
    for &family in families {
        instances.extend(generate_family(family, per_family, seed, split)?.instances);
    }
    Ok(Dataset::from_instances(instances, seed))
}

impl Dataset {
    /// Wraps instances, recomputing the family mix.
    pub fn from_instances(instances: Vec<TaskInstance>, seed: u64) -> Dataset {
        let mut counts: BTreeMap<TaskFamily, usize> = BTreeMap::new();
        for inst in &instances {
            *counts.entry(inst.family).or_default() += 1;
        }
        let total = instances.len().max(1) as f64;
        let family_mix = counts
            .into_iter()
            .map(|(f, c)| (f, c as f64 / total))
            .collect();
        Dataset {
            instances,
            seed,
            family_mix,
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// All instances of one family, in dataset order.
    pub fn family(&self, family: TaskFamily) -> Vec<&TaskInstance> {
        self.instances.iter().filter(|i| i.family == family).collect()
    }

    /// Families present, in canonical order.
    pub fn families(&self) -> Vec<TaskFamily> {
        self.family_mix.keys().copied().collect()
    }

    /// Checks the dataset invariants: unique ids, non-empty prompts and
    /// golds, all tokens printable vocabulary symbols, mix summing to 1.
    pub fn validate(&self) -> Result<()> {
        if self.instances.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let mut ids = std::collections::BTreeSet::new();
        for inst in &self.instances {
            if !ids.insert(inst.id.as_str()) {
                return Err(Error::Malformed {
                    what: "dataset",
                    detail: format!("duplicate instance id {:?}", inst.id),
                });
            }
            if inst.prompt.is_empty() || inst.gold.is_empty() {
                return Err(Error::Empty("instance prompt or gold"));
            }
            for &tok in inst.prompt.iter().chain(&inst.gold) {
                if vocab::id_to_char(tok).is_none() {
                    return Err(Error::Malformed {
                        what: "dataset",
                        detail: format!("instance {:?} holds non-printable token {tok}", inst.id),
                    });
                }
            }
        }
        let mix_sum: f64 = self.family_mix.values().sum();
        if (mix_sum - 1.0).abs() > 1e-9 {
            return Err(Error::Malformed {
                what: "dataset",
                detail: format!("family mix sums to {mix_sum}, expected 1"),
            });
        }
        Ok(())
    }

    /// Writes the dataset as TSV: `id  family  prompt  gold  split` (one
    /// instance per line; no field can contain a tab).
    pub fn write_tsv(&self, mut w: impl Write) -> Result<()> {
        for inst in &self.instances {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                inst.id,
                inst.family.as_str(),
                inst.prompt_text(),
                inst.gold_text(),
                inst.split.as_str()
            )?;
        }
        Ok(())
    }

    /// Parses a TSV written by [`Dataset::write_tsv`].
    pub fn read_tsv(r: impl BufRead, seed: u64) -> Result<Dataset> {
        let mut instances = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(Error::Malformed {
                    what: "dataset tsv",
                    detail: format!("line {}: expected 5 fields, got {}", lineno + 1, fields.len()),
                });
            }
            instances.push(TaskInstance {
                id: fields[0].to_string(),
                family: TaskFamily::parse(fields[1])?,
                prompt: vocab::encode(fields[2])?,
                gold: vocab::encode(fields[3])?,
                split: Split::parse(fields[4])?,
            });
        }
        Ok(Dataset::from_instances(instances, seed))
    }
}
