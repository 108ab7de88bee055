//! `smel` — command-line driver for the single-multi evolution loop.
//!
//! The main entry point is `evolve`, which runs the full loop (initialize a
//! pool, collaborate, distill, repeat) inside a run directory; `resume`
//! continues an interrupted run from its last complete iteration. The
//! remaining subcommands are inspection and one-shot utilities over the
//! same artifacts: `init-pool` trains and saves just the starting pool,
//! `eval` re-scores a stored iteration, `route` trains and queries the
//! routing classifier, `merge` combines checkpoints into one model, and
//! `report` re-emits `report.csv`/`curves.svg` from stored metrics.
//!
//! All commands resolve their run directory the same way: `--run-dir` when
//! given, otherwise `run/<name>` with the name taken from the configuration
//! (`--config` file, or built-in defaults).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use smel_core::collab::{merge_pool, train_router, CollabStrategy, MergeSettings, RouterSettings};
use smel_core::config::{content_hash, parse_config, RunConfig};
use smel_core::eval::evaluate;
use smel_core::evolve::{
    completed_iterations, init_pool, load_pool, rebuild_system, resume_run, run_fresh, RunOutcome,
    RunPaths,
};
use smel_core::persist::{load_checkpoint, save_checkpoint};
use smel_core::report::{emit_reports, IterationMetrics};
use smel_core::rng::Seeder;
use smel_core::tasks::Split;
use smel_core::vocab;
use smel_core::Pool;

#[derive(Parser)]
#[command(
    name = "smel",
    version,
    about = "Evolve a pool of tiny language models by alternating collaboration and distillation"
)]
struct Cli {
    #[command(flatten)]
    globals: Globals,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Globals {
    /// Run configuration (JSON); built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the configuration's run seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Run directory; defaults to run/<name> from the configuration.
    #[arg(long, global = true, value_name = "PATH")]
    run_dir: Option<PathBuf>,
    /// Suppress progress and summary output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the shared base and specialize each member; save the
    /// checkpoints without starting a run.
    InitPool,
    /// Run the full evolution loop in a fresh run directory.
    Evolve,
    /// Re-score a stored pool snapshot on the dev and test splits.
    Eval {
        /// Iteration to load (default: last complete one).
        #[arg(long)]
        iter: Option<usize>,
    },
    /// Merge checkpoints into one model by delta dropping, magnitude
    /// trimming, sign election, and sign-consistent averaging.
    Merge {
        /// Checkpoint of the common ancestor the deltas are taken against.
        #[arg(long, value_name = "PATH")]
        base: PathBuf,
        /// Where to write the merged checkpoint.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Probability of dropping each delta coordinate.
        #[arg(long, default_value_t = 0.3)]
        drop_rate: f64,
        /// Fraction of largest-magnitude coordinates kept after dropping.
        #[arg(long, default_value_t = 0.7)]
        density: f64,
        /// Member checkpoints to merge (at least one).
        #[arg(required = true, value_name = "CKPT")]
        members: Vec<PathBuf>,
    },
    /// Train the routing classifier on a stored pool; optionally route a
    /// prompt to its member.
    Route {
        /// Iteration to load (default: last complete one).
        #[arg(long)]
        iter: Option<usize>,
        /// Prompt to route after training (printed with the chosen member).
        #[arg(long)]
        prompt: Option<String>,
    },
    /// Re-emit report.csv and curves.svg from stored iteration metrics.
    Report,
    /// Continue an interrupted run from its last complete iteration.
    Resume,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let g = &cli.globals;
    match &cli.command {
        Command::InitPool => cmd_init_pool(g),
        Command::Evolve => cmd_evolve(g),
        Command::Eval { iter } => cmd_eval(g, *iter),
        Command::Merge {
            base,
            out,
            drop_rate,
            density,
            members,
        } => cmd_merge(g, base, out, *drop_rate, *density, members),
        Command::Route { iter, prompt } => cmd_route(g, *iter, prompt.as_deref()),
        Command::Report => cmd_report(g),
        Command::Resume => cmd_resume(g),
    }
}

/// Configuration from `--config` (or defaults), with `--seed` applied.
fn config_from_args(g: &Globals) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            parse_config(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.run_seed = seed;
    }
    Ok(cfg)
}

/// The directory all artifacts of this invocation live in.
fn resolve_root(g: &Globals, cfg: &RunConfig) -> PathBuf {
    g.run_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("run").join(&cfg.name))
}

/// Configuration for commands that inspect an existing run: `--config`
/// wins, otherwise the run's stored `config.json`.
fn config_for_run(g: &Globals) -> Result<(RunConfig, PathBuf)> {
    let arg_cfg = config_from_args(g)?;
    let root = resolve_root(g, &arg_cfg);
    if g.config.is_some() {
        return Ok((arg_cfg, root));
    }
    let stored = root.join("config.json");
    let text = fs::read_to_string(&stored).with_context(|| {
        format!(
            "reading {} (pass --config or --run-dir to locate the run)",
            stored.display()
        )
    })?;
    let mut cfg = parse_config(&text).with_context(|| format!("parsing {}", stored.display()))?;
    if let Some(seed) = g.seed {
        cfg.run_seed = seed;
    }
    Ok((cfg, root))
}

/// The iteration to inspect: the requested one, or the last with metrics.
fn resolve_iteration(cfg: &RunConfig, root: &Path, requested: Option<usize>) -> Result<usize> {
    match requested {
        Some(t) => Ok(t),
        None => {
            let complete = completed_iterations(cfg.k, root);
            if complete == 0 {
                bail!("no complete iteration in {}", root.display());
            }
            Ok(complete - 1)
        }
    }
}

fn progress_printer(quiet: bool) -> impl FnMut(String) {
    move |line: String| {
        if !quiet {
            println!("{line}");
        }
    }
}

fn print_outcome(g: &Globals, root: &Path, out: &RunOutcome) {
    if g.quiet {
        return;
    }
    let s = &out.summary;
    println!(
        "best pool: iteration {} (dev single-avg {:.4}); best system: iteration {} (dev multi {:.4})",
        s.best_pool_iteration,
        s.dev_best_pool_metric,
        s.best_system_iteration,
        s.dev_best_system_metric,
    );
    println!(
        "test deltas vs iteration 0: single {:+.4}, multi {:+.4}",
        s.objective.single_delta, s.objective.multi_delta,
    );
    println!("artifacts in {}", root.display());
}

fn cmd_evolve(g: &Globals) -> Result<()> {
    let cfg = config_from_args(g)?;
    let root = resolve_root(g, &cfg);
    let out = run_fresh(&cfg, &root, &mut progress_printer(g.quiet))?;
    print_outcome(g, &root, &out);
    Ok(())
}

fn cmd_resume(g: &Globals) -> Result<()> {
    let (cfg, root) = config_for_run(g)?;
    let out = resume_run(&cfg, &root, &mut progress_printer(g.quiet))?;
    print_outcome(g, &root, &out);
    Ok(())
}

fn cmd_init_pool(g: &Globals) -> Result<()> {
    let cfg = config_from_args(g)?;
    let root = resolve_root(g, &cfg);
    let (train, _, _) = cfg.data.build()?;
    let pool = init_pool(&cfg, &train, &Seeder::new(cfg.run_seed))?;
    let hash = cfg.hash();
    if let Some(base) = &pool.base {
        save_checkpoint(base, &root.join("base.ckpt"), None, &hash)?;
    }
    for m in &pool.models {
        let path = root.join("pool").join(format!("{}.ckpt", m.id));
        save_checkpoint(m, &path, None, &hash)?;
        if !g.quiet {
            println!(
                "{}: {} parameters (embed {}, hidden {}, window {}) -> {}",
                m.id,
                m.params.len(),
                m.config.embed_dim,
                m.config.hidden_dim,
                m.config.context_window,
                path.display(),
            );
        }
    }
    Ok(())
}

fn cmd_eval(g: &Globals, iter: Option<usize>) -> Result<()> {
    let (cfg, root) = config_for_run(g)?;
    let t = resolve_iteration(&cfg, &root, iter)?;
    let (train, dev, test) = cfg.data.build()?;
    let pool = load_pool(&cfg, &root, t)?;
    let system = rebuild_system(&cfg, &pool, &train, &dev, t)?;
    let gen = cfg.generation.to_train();
    let seeder = Seeder::new(cfg.run_seed);
    let (dev_rep, _) = evaluate(&pool, &system, &dev, Split::Dev, &gen, &seeder, t)?;
    let (test_rep, test_skill) = evaluate(&pool, &system, &test, Split::Test, &gen, &seeder, t)?;
    if !g.quiet {
        println!(
            "iteration {t}: dev single-avg {:.4} multi {:.4} | test single-avg {:.4} multi {:.4}",
            dev_rep.macro_single_avg(),
            dev_rep.macro_multi(),
            test_rep.macro_single_avg(),
            test_rep.macro_multi(),
        );
    }
    let doc = serde_json::json!({
        "iteration": t,
        "dev": dev_rep,
        "test": test_rep,
        "test_skill": test_skill,
    });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(())
}

fn cmd_route(g: &Globals, iter: Option<usize>, prompt: Option<&str>) -> Result<()> {
    let (cfg, root) = config_for_run(g)?;
    let t = resolve_iteration(&cfg, &root, iter)?;
    let (train, _, _) = cfg.data.build()?;
    let pool = load_pool(&cfg, &root, t)?;
    let settings = match &cfg.strategy {
        CollabStrategy::Router(s) => *s,
        _ => RouterSettings::default(),
    };
    let gen = cfg.generation.to_train();
    let mut rng = Seeder::new(cfg.run_seed).router(t);
    let state = train_router(&pool, &train, &settings, &gen, &mut rng)?;
    if !g.quiet {
        let counts: Vec<String> = pool
            .ids()
            .iter()
            .zip(&state.report.label_counts)
            .map(|(id, n)| format!("{id}={n}"))
            .collect();
        println!(
            "router at iteration {t}: train accuracy {:.4}, labels {}",
            state.report.train_accuracy,
            counts.join(" "),
        );
    }
    if let Some(text) = prompt {
        let tokens = vocab::encode(text)?;
        let idx = state.select(&tokens);
        println!("{text} -> {}", pool.models[idx].id);
    }
    Ok(())
}

fn cmd_merge(
    g: &Globals,
    base: &Path,
    out: &Path,
    drop_rate: f64,
    density: f64,
    members: &[PathBuf],
) -> Result<()> {
    let (base_model, _) =
        load_checkpoint(base).with_context(|| format!("loading base {}", base.display()))?;
    let mut models = Vec::with_capacity(members.len());
    for path in members {
        let (m, _) =
            load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
        models.push(m);
    }
    let pool = Pool::new(models, Some(base_model))?;
    let settings = MergeSettings {
        weights: None,
        density,
        dare_drop: drop_rate,
    };
    let seed = g.seed.unwrap_or(0);
    let mut rng = Seeder::new(seed).merge(0);
    let merged = merge_pool(&pool, &settings, &mut rng, "merged")?;
    let hash = content_hash(&serde_json::to_string(&(&settings, seed))?);
    save_checkpoint(&merged, out, None, &hash)?;
    if !g.quiet {
        println!("merged {} checkpoints -> {}", members.len(), out.display());
    }
    Ok(())
}

fn cmd_report(g: &Globals) -> Result<()> {
    let (cfg, root) = config_for_run(g)?;
    let complete = completed_iterations(cfg.k, &root);
    if complete == 0 {
        bail!("no complete iteration in {}", root.display());
    }
    let paths = RunPaths::new(&root);
    let mut states = Vec::with_capacity(complete);
    for t in 0..complete {
        let path = paths.metrics(t);
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let metrics: IterationMetrics = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        states.push(metrics);
    }
    emit_reports(&root, &states)?;
    if !g.quiet {
        println!(
            "wrote {} and {} from {} iterations",
            root.join("report.csv").display(),
            root.join("curves.svg").display(),
            complete,
        );
    }
    Ok(())
}
