//! The evolution loop: collaborate, distill, re-collaborate.
//!
//! One run executes `k` iterations. At iteration `t` the current pool is
//! frozen, its collaboration system is built (router retrained, debate
//! summarizer re-picked, or weights re-merged — the pool changed since last
//! time), both splits are evaluated, artifacts are written, and — except
//! after the final iteration — the system answers every training
//! instruction to form the distillation set that produces the next pool.
//! The best pool and best system are selected by dev metrics afterwards and
//! may come from different iterations.
//!
//! Run directory layout:
//!
//! ```text
//! <root>/config.json             defaults-applied configuration
//! <root>/base.ckpt               shared pretrained base (homogeneous pools)
//! <root>/iter<t>/pool/<id>.ckpt  pool snapshot at iteration t
//! <root>/iter<t>/dataset.tsv     collaborative dataset D(t)   (t < k)
//! <root>/iter<t>/debate.tsv      debate transcripts, when enabled
//! <root>/iter<t>/metrics.json    IterationMetrics — written last, so its
//!                                presence marks the iteration complete
//! <root>/report.csv, curves.svg, summary.json
//! ```
//!
//! Every random draw comes from a stream keyed by (run seed, phase,
//! iteration, ...), so an interrupted run resumed from its last complete
//! iteration replays the remaining work bit-for-bit.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::collab::{build_system, CollabStrategy, CollabSystem};
use crate::config::RunConfig;
use crate::distill::{build_collab_dataset, distill_pool, examples_to_tsv, CollabRecord, SFTExample};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::generate::TrainConfig;
use crate::model::{init_model, TinyLM};
use crate::persist::{load_checkpoint, save_checkpoint, write_atomic, RunLock};
use crate::pool::Pool;
use crate::report::{emit_reports, IterationMetrics};
use crate::rng::Seeder;
use crate::tasks::{Dataset, Split, TaskInstance};
use crate::train::{train_sft, SftPair};
use crate::vocab;

/// Paths inside one run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> RunPaths {
        RunPaths { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn base_ckpt(&self) -> PathBuf {
        self.root.join("base.ckpt")
    }

    pub fn iter_dir(&self, t: usize) -> PathBuf {
        self.root.join(format!("iter{t}"))
    }

    pub fn member_ckpt(&self, t: usize, id: &str) -> PathBuf {
        self.iter_dir(t).join("pool").join(format!("{id}.ckpt"))
    }

    pub fn metrics(&self, t: usize) -> PathBuf {
        self.iter_dir(t).join("metrics.json")
    }

    pub fn dataset(&self, t: usize) -> PathBuf {
        self.iter_dir(t).join("dataset.tsv")
    }

    pub fn debate(&self, t: usize) -> PathBuf {
        self.iter_dir(t).join("debate.tsv")
    }
}

/// How the run fared against the dual goal: better individual models and a
/// better collaboration system, measured on the test split relative to t=0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveRecord {
    pub single_improved: bool,
    pub multi_improved: bool,
    /// Test macro single-avg of the retained pool minus its t=0 value.
    pub single_delta: f64,
    /// Test macro multi of the retained system minus its t=0 value.
    pub multi_delta: f64,
}

/// The retained selections plus the objective record; written as
/// `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format_version: u32,
    pub config_hash: String,
    pub k: usize,
    /// Iteration whose pool scored best on dev (single-avg metric).
    pub best_pool_iteration: usize,
    /// Iteration whose system scored best on dev (multi metric).
    pub best_system_iteration: usize,
    pub dev_best_pool_metric: f64,
    pub dev_best_system_metric: f64,
    pub objective: ObjectiveRecord,
}

/// Everything an `evolve` or `resume` call produces in memory.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// One record per iteration, t = 0..=k.
    pub states: Vec<IterationMetrics>,
    pub summary: RunSummary,
    /// Wall-clock seconds per executed iteration (resumed iterations that
    /// were only loaded back report 0).
    pub wall_secs: Vec<f64>,
}

fn pairs_of(instances: &[&TaskInstance]) -> Vec<SftPair> {
    instances
        .iter()
        .map(|i| SftPair {
            prompt: i.prompt.clone(),
            target: i.gold.clone(),
        })
        .collect()
}

/// Builds the t=0 pool. Equal-shape pools share one pretrained base (kept
/// as the merge ancestor) and then specialize per member on their family's
/// train instances. Mixed-shape pools initialize and train each member
/// independently (seed = base_seed + 1 + index) and carry no base.
pub fn init_pool(cfg: &RunConfig, train: &Dataset, seeder: &Seeder) -> Result<Pool> {
    let gen = cfg.generation;
    let all_pairs = pairs_of(&train.instances.iter().collect::<Vec<_>>());
    let specialize_cfg = cfg.pool.specialize.to_train(&gen);
    let pretrain_cfg = cfg.pool.pretrain.to_train(&gen);

    let member_pairs = |spec: &crate::config::MemberSpec| -> Vec<SftPair> {
        match spec.family {
            Some(f) => pairs_of(&train.family(f)),
            None => all_pairs.clone(),
        }
    };

    if cfg.pool.homogeneous() {
        let base_cfg = cfg.pool.members[0].model_config(&cfg.pool, cfg.pool.base_seed);
        let base = init_model(base_cfg, "base")?;
        let (base, _) = train_sft(&base, &all_pairs, &pretrain_cfg, &mut seeder.pretrain(0))?;
        let mut members = Vec::with_capacity(cfg.pool.members.len());
        for (i, spec) in cfg.pool.members.iter().enumerate() {
            let start = TinyLM {
                id: spec.id.clone(),
                config: base.config,
                params: base.params.clone(),
            };
            let (m, _) = train_sft(
                &start,
                &member_pairs(spec),
                &specialize_cfg,
                &mut seeder.pretrain(1 + i),
            )?;
            members.push(m);
        }
        Pool::new(members, Some(base))
    } else {
        let mut members = Vec::with_capacity(cfg.pool.members.len());
        for (i, spec) in cfg.pool.members.iter().enumerate() {
            let seed = cfg.pool.base_seed.wrapping_add(1 + i as u64);
            let m = init_model(spec.model_config(&cfg.pool, seed), spec.id.clone())?;
            let mut rng = seeder.pretrain(1 + i);
            let (m, _) = train_sft(&m, &all_pairs, &pretrain_cfg, &mut rng)?;
            let (m, _) = train_sft(&m, &member_pairs(spec), &specialize_cfg, &mut rng)?;
            members.push(m);
        }
        Pool::new(members, None)
    }
}

/// Iteration with the best dev pool metric and the one with the best dev
/// system metric (strict improvement wins; ties keep the earlier t).
pub fn select_best(states: &[IterationMetrics]) -> (usize, usize) {
    let argmax = |f: &dyn Fn(&IterationMetrics) -> f64| {
        let mut best = 0;
        for (i, st) in states.iter().enumerate().skip(1) {
            if f(st) > f(&states[best]) {
                best = i;
            }
        }
        best
    };
    (
        argmax(&|s| s.dev.macro_single_avg()),
        argmax(&|s| s.dev.macro_multi()),
    )
}

/// Compares the retained selections against t=0 on the test split.
pub fn objective_check(
    states: &[IterationMetrics],
    best_pool: usize,
    best_system: usize,
) -> ObjectiveRecord {
    let single_delta =
        states[best_pool].test.macro_single_avg() - states[0].test.macro_single_avg();
    let multi_delta = states[best_system].test.macro_multi() - states[0].test.macro_multi();
    ObjectiveRecord {
        single_improved: single_delta > 0.0,
        multi_improved: multi_delta > 0.0,
        single_delta,
        multi_delta,
    }
}

struct LoopCtx<'a> {
    cfg: &'a RunConfig,
    paths: RunPaths,
    seeder: Seeder,
    hash: String,
    gen: TrainConfig,
    train: Dataset,
    dev: Dataset,
    test: Dataset,
}

impl<'a> LoopCtx<'a> {
    fn new(cfg: &'a RunConfig, root: &Path) -> Result<LoopCtx<'a>> {
        cfg.validate()?;
        let (train, dev, test) = cfg.data.build()?;
        Ok(LoopCtx {
            cfg,
            paths: RunPaths::new(root),
            seeder: Seeder::new(cfg.run_seed),
            hash: cfg.hash(),
            gen: cfg.generation.to_train(),
            train,
            dev,
            test,
        })
    }

    fn build_system_at(&self, pool: &Pool, t: usize) -> Result<CollabSystem> {
        rebuild_system(self.cfg, pool, &self.train, &self.dev, t)
    }

    fn measure(&self, pool: &Pool, system: &CollabSystem, t: usize) -> Result<IterationMetrics> {
        let (dev, _) = evaluate(pool, system, &self.dev, Split::Dev, &self.gen, &self.seeder, t)?;
        let (test, test_skill) =
            evaluate(pool, system, &self.test, Split::Test, &self.gen, &self.seeder, t)?;
        Ok(IterationMetrics {
            iteration: t,
            dev,
            test,
            test_skill,
            dataset_size: 0,
            router_accuracy: system.router().map(|r| r.report.train_accuracy),
            debate_summarizer: system
                .debate_config()
                .map(|c| pool.models[c.summarizer].id.clone()),
        })
    }

    fn write_iteration(
        &self,
        t: usize,
        pool: &Pool,
        records: &[CollabRecord],
        metrics: &IterationMetrics,
    ) -> Result<()> {
        for m in &pool.models {
            save_checkpoint(m, &self.paths.member_ckpt(t, &m.id), Some(t), &self.hash)?;
        }
        if !records.is_empty() {
            let examples: Vec<SFTExample> = records.iter().map(|r| r.example.clone()).collect();
            write_atomic(&self.paths.dataset(t), examples_to_tsv(&examples)?.as_bytes())?;
            if self.dump_debates() {
                let mut out = String::new();
                for r in records {
                    for turn in r.transcript.iter().flatten() {
                        out.push_str(&format!(
                            "{t}\t{}\t{}\t{}\t{}\n",
                            r.example.instruction_id,
                            turn.round,
                            turn.model_id,
                            vocab::decode(&turn.answer)?,
                        ));
                    }
                }
                write_atomic(&self.paths.debate(t), out.as_bytes())?;
            }
        }
        // Written last: marks the iteration complete for resume.
        let json = serde_json::to_string_pretty(metrics)? + "\n";
        write_atomic(&self.paths.metrics(t), json.as_bytes())
    }

    fn dump_debates(&self) -> bool {
        matches!(&self.cfg.strategy, CollabStrategy::Debate(s) if s.dump_transcripts)
    }

    /// Runs iterations `start_t..=k` on `pool`, appending to `states`, then
    /// selects, checks the objective, and writes the run-level reports.
    fn run_from(
        &self,
        mut pool: Pool,
        start_t: usize,
        mut states: Vec<IterationMetrics>,
        progress: &mut dyn FnMut(String),
    ) -> Result<RunOutcome> {
        let k = self.cfg.k;
        let mut wall_secs = vec![0.0; states.len()];
        for t in start_t..=k {
            let started = Instant::now();
            let system = self.build_system_at(&pool, t)?;
            let mut metrics = self.measure(&pool, &system, t)?;
            let records = if t < k {
                build_collab_dataset(&system, &pool, &self.train, &self.gen, &self.seeder, t)?
            } else {
                Vec::new()
            };
            metrics.dataset_size = records.len();
            self.write_iteration(t, &pool, &records, &metrics)?;
            if t < k {
                let examples: Vec<SFTExample> =
                    records.iter().map(|r| r.example.clone()).collect();
                let (next, _) = distill_pool(
                    &pool,
                    &system,
                    &examples,
                    &self.dev,
                    &self.cfg.distill,
                    &self.seeder,
                    t,
                )?;
                pool = next;
            }
            let secs = started.elapsed().as_secs_f64();
            progress(format!(
                "iter {t}/{k}: dev single {:.4} multi {:.4} | test single {:.4} multi {:.4} ({secs:.1}s)",
                metrics.dev.macro_single_avg(),
                metrics.dev.macro_multi(),
                metrics.test.macro_single_avg(),
                metrics.test.macro_multi(),
            ));
            states.push(metrics);
            wall_secs.push(secs);
        }
        self.finish(states, wall_secs)
    }

    fn finish(&self, states: Vec<IterationMetrics>, wall_secs: Vec<f64>) -> Result<RunOutcome> {
        let (best_pool, best_system) = select_best(&states);
        let summary = RunSummary {
            format_version: 1,
            config_hash: self.hash.clone(),
            k: self.cfg.k,
            best_pool_iteration: best_pool,
            best_system_iteration: best_system,
            dev_best_pool_metric: states[best_pool].dev.macro_single_avg(),
            dev_best_system_metric: states[best_system].dev.macro_multi(),
            objective: objective_check(&states, best_pool, best_system),
        };
        emit_reports(&self.paths.root, &states)?;
        let json = serde_json::to_string_pretty(&summary)? + "\n";
        write_atomic(&self.paths.summary(), json.as_bytes())?;
        Ok(RunOutcome {
            states,
            summary,
            wall_secs,
        })
    }

    fn load_pool(&self, t: usize) -> Result<Pool> {
        load_pool(self.cfg, &self.paths.root, t)
    }

    fn load_states(&self) -> Result<Vec<IterationMetrics>> {
        let mut states = Vec::new();
        for t in 0..=self.cfg.k {
            let path = self.paths.metrics(t);
            if !path.exists() {
                break;
            }
            let text = fs::read_to_string(&path)?;
            let metrics: IterationMetrics =
                serde_json::from_str(&text).map_err(|e| Error::CannotResume {
                    dir: self.paths.root.clone(),
                    reason: format!("{}: {e}", path.display()),
                })?;
            if metrics.iteration != t {
                return Err(Error::CannotResume {
                    dir: self.paths.root.clone(),
                    reason: format!("{} records iteration {}", path.display(), metrics.iteration),
                });
            }
            states.push(metrics);
        }
        Ok(states)
    }
}

/// Rebuilds the collaboration system for iteration `t` of a run, drawing
/// from the same keyed stream the loop uses (so a rebuilt system behaves
/// bit-identically to the one the loop evaluated).
pub fn rebuild_system(
    cfg: &RunConfig,
    pool: &Pool,
    train: &Dataset,
    dev: &Dataset,
    t: usize,
) -> Result<CollabSystem> {
    let seeder = Seeder::new(cfg.run_seed);
    let mut rng = match cfg.strategy {
        CollabStrategy::DareTies(_) => seeder.merge(t),
        _ => seeder.router(t),
    };
    build_system(&cfg.strategy, pool, train, dev, &cfg.generation.to_train(), &mut rng)
}

/// Loads the pool snapshot written at iteration `t` of the run in `root`,
/// verifying every checkpoint against the config's hash.
pub fn load_pool(cfg: &RunConfig, root: &Path, t: usize) -> Result<Pool> {
    let paths = RunPaths::new(root);
    let hash = cfg.hash();
    let cannot = |reason: String| Error::CannotResume {
        dir: root.to_path_buf(),
        reason,
    };
    let mut members = Vec::with_capacity(cfg.pool.members.len());
    for spec in &cfg.pool.members {
        let path = paths.member_ckpt(t, &spec.id);
        let (model, meta) = load_checkpoint(&path)
            .map_err(|e| cannot(format!("checkpoint {}: {e}", path.display())))?;
        if meta.config_hash != hash {
            return Err(cannot(format!(
                "{} was written by a different config",
                path.display()
            )));
        }
        members.push(model);
    }
    let base = if cfg.pool.homogeneous() {
        let (base, _) = load_checkpoint(&paths.base_ckpt())
            .map_err(|e| cannot(format!("base checkpoint: {e}")))?;
        Some(base)
    } else {
        None
    };
    Pool::new(members, base)
}

/// Number of contiguous iterations (starting at 0) whose metrics are on
/// disk in `root`; the last complete iteration is this minus one.
pub fn completed_iterations(k: usize, root: &Path) -> usize {
    let paths = RunPaths::new(root);
    (0..=k).take_while(|&t| paths.metrics(t).exists()).count()
}

/// Starts a fresh run in `root`: writes `config.json`, initializes the
/// pool, and executes all iterations. Fails if `root` already holds a run.
pub fn run_fresh(
    cfg: &RunConfig,
    root: &Path,
    progress: &mut dyn FnMut(String),
) -> Result<RunOutcome> {
    let ctx = LoopCtx::new(cfg, root)?;
    if ctx.paths.config().exists() {
        return Err(Error::InvalidConfig(format!(
            "run directory {} is already initialized; resume it or pick a fresh directory",
            root.display()
        )));
    }
    let _lock = RunLock::acquire(root)?;
    let json = serde_json::to_string_pretty(cfg)? + "\n";
    write_atomic(&ctx.paths.config(), json.as_bytes())?;
    let pool = init_pool(cfg, &ctx.train, &ctx.seeder)?;
    if let Some(base) = &pool.base {
        save_checkpoint(base, &ctx.paths.base_ckpt(), None, &ctx.hash)?;
    }
    ctx.run_from(pool, 0, Vec::new(), progress)
}

/// Continues an interrupted run from its last complete iteration. The
/// bridge distillation from that iteration is replayed (its streams are
/// keyed, so the replay is bit-identical to the lost work), then the loop
/// proceeds as usual. A run that is already complete recomputes its summary
/// and returns without touching the pool checkpoints.
pub fn resume_run(
    cfg: &RunConfig,
    root: &Path,
    progress: &mut dyn FnMut(String),
) -> Result<RunOutcome> {
    let ctx = LoopCtx::new(cfg, root)?;
    let config_path = ctx.paths.config();
    if !config_path.exists() {
        return Err(Error::CannotResume {
            dir: root.to_path_buf(),
            reason: "no config.json (was the run ever started?)".into(),
        });
    }
    let stored = crate::config::parse_config(&fs::read_to_string(&config_path)?)?;
    if stored.hash() != ctx.hash {
        return Err(Error::CannotResume {
            dir: root.to_path_buf(),
            reason: "the supplied config does not match the one stored in the run".into(),
        });
    }
    let _lock = RunLock::acquire(root)?;
    let states = ctx.load_states()?;
    if states.is_empty() {
        // Nothing completed before the interruption: start over in place.
        progress("no complete iteration found; restarting from scratch".into());
        let pool = init_pool(cfg, &ctx.train, &ctx.seeder)?;
        if let Some(base) = &pool.base {
            save_checkpoint(base, &ctx.paths.base_ckpt(), None, &ctx.hash)?;
        }
        return ctx.run_from(pool, 0, Vec::new(), progress);
    }
    let t_star = states.len() - 1;
    if t_star == cfg.k {
        progress(format!("run already complete at iteration {t_star}; nothing to do"));
        let wall = vec![0.0; states.len()];
        return ctx.finish(states, wall);
    }
    progress(format!("resuming after complete iteration {t_star}"));
    let pool = ctx.load_pool(t_star)?;
    // Replay the lost tail of iteration t*: rebuild its system and dataset,
    // then distill to recover the t*+1 pool.
    let system = ctx.build_system_at(&pool, t_star)?;
    let records = build_collab_dataset(&system, &pool, &ctx.train, &ctx.gen, &ctx.seeder, t_star)?;
    let examples: Vec<SFTExample> = records.iter().map(|r| r.example.clone()).collect();
    let (pool, _) = distill_pool(
        &pool,
        &system,
        &examples,
        &ctx.dev,
        &cfg.distill,
        &ctx.seeder,
        t_star,
    )?;
    ctx.run_from(pool, t_star + 1, states, progress)
}
