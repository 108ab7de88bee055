//! Release gate: nine end-to-end checks, one test per criterion, each
//! printing a single `criterion N (...): PASS`/`FAIL` line (run with
//! `cargo test --test acceptance -- --nocapture` to watch them live).
//!
//! Criteria 6-9 share one pair of full reference evolution runs executed
//! through the `smel` binary; the pair is built once and reused, so the
//! whole suite costs roughly two and a half reference runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use smel_core::collab::{dare, fused_distribution, fuse_decode, ties_merge, MergeSettings};
use smel_core::config::{parse_config, RunConfig};
use smel_core::distill::{
    build_multistudent_mixture, on_policy_distill, DistillConfig, DistillMethod, MixtureSpec,
    SFTExample, SourceTag,
};
use smel_core::error::Error;
use smel_core::evolve::RunSummary;
use smel_core::generate::{sample, TrainConfig};
use smel_core::model::{init_model, ModelConfig};
use smel_core::persist::{checkpoint_bytes, load_checkpoint, save_checkpoint};
use smel_core::report::IterationMetrics;
use smel_core::rng::stream;
use smel_core::tasks::TaskFamily;
use smel_core::train::{
    ce_batch_gradient, ce_batch_loss, finite_difference, kd_gradient, kd_loss, relative_error,
    KdPosition, KlDirection, SftPair,
};
use smel_core::{Pool, TinyLM, TokenId};

/// Prints the criterion's verdict line and fails the test on any violation.
fn verdict(num: usize, label: &str, problems: Vec<String>) {
    if problems.is_empty() {
        println!("criterion {num} ({label}): PASS");
    } else {
        println!("criterion {num} ({label}): FAIL");
        panic!(
            "criterion {num} ({label}) failed:\n  - {}",
            problems.join("\n  - ")
        );
    }
}

macro_rules! req {
    ($problems:expr, $cond:expr, $($msg:tt)+) => {
        if !$cond {
            $problems.push(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------------------------
// Shared reference runs
// ---------------------------------------------------------------------------

struct ReferenceRuns {
    run_a: PathBuf,
    run_b: PathBuf,
    /// Wall-clock seconds of the first (uncontended) full run.
    wall_a_secs: f64,
}

static REFERENCE: OnceLock<ReferenceRuns> = OnceLock::new();

fn reference_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.json")
}

fn smel(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_smel"))
        .args(args)
        .output()
        .expect("smel binary runs")
}

fn run_reference_into(dir: &Path) {
    let cfg = reference_config_path();
    let out = smel(&[
        "evolve",
        "--quiet",
        "--config",
        cfg.to_str().unwrap(),
        "--run-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "reference run failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn reference() -> &'static ReferenceRuns {
    REFERENCE.get_or_init(|| {
        let root = std::env::temp_dir().join(format!("smel-acceptance-{}", std::process::id()));
        fs::create_dir_all(&root).expect("scratch directory");
        let run_a = root.join("run_a");
        let run_b = root.join("run_b");
        let clock = Instant::now();
        run_reference_into(&run_a);
        let wall_a_secs = clock.elapsed().as_secs_f64();
        run_reference_into(&run_b);
        ReferenceRuns {
            run_a,
            run_b,
            wall_a_secs,
        }
    })
}

fn load_states(root: &Path, k: usize) -> Vec<IterationMetrics> {
    (0..=k)
        .map(|t| {
            let text = fs::read_to_string(root.join(format!("iter{t}/metrics.json")))
                .expect("iteration metrics exist");
            serde_json::from_str(&text).expect("iteration metrics parse")
        })
        .collect()
}

fn load_summary(root: &Path) -> RunSummary {
    let text = fs::read_to_string(root.join("summary.json")).expect("summary exists");
    serde_json::from_str(&text).expect("summary parses")
}

fn reference_run_config() -> RunConfig {
    let text = fs::read_to_string(reference_config_path()).expect("reference config exists");
    parse_config(&text).expect("reference config parses")
}

/// All files under `root`, as root-relative paths, sorted.
fn tree_files(root: &Path) -> Vec<PathBuf> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) {
        for entry in fs::read_dir(dir).expect("readable directory") {
            let path = entry.expect("directory entry").path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

fn copy_tree(from: &Path, to: &Path) {
    for rel in tree_files(from) {
        let dst = to.join(&rel);
        fs::create_dir_all(dst.parent().unwrap()).expect("create parents");
        fs::copy(from.join(&rel), dst).expect("copy file");
    }
}

// ---------------------------------------------------------------------------
// Criterion 1: analytic gradients vs central finite differences
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_gradient_correctness() {
    let mut problems = Vec::new();
    let clock = Instant::now();
    let mut rng = stream(0xACCE, &[1]);
    let h = 1e-5;
    let mut worst_ce = 0.0f64;
    let mut worst_kd = 0.0f64;

    for i in 0..50u64 {
        let config = ModelConfig {
            vocab_size: rng.gen_range(5..=20),
            embed_dim: rng.gen_range(1..=8),
            hidden_dim: rng.gen_range(1..=8),
            context_window: rng.gen_range(2..=10),
            seed: 1000 + i,
        };
        let model = init_model(config, format!("g{i}")).unwrap();
        let params = model.params.to_f64();
        let token = |rng: &mut rand_chacha::ChaCha8Rng| -> TokenId {
            rng.gen_range(4..config.vocab_size as TokenId)
        };
        let seq = |rng: &mut rand_chacha::ChaCha8Rng, lo: usize, hi: usize| -> Vec<TokenId> {
            let n = rng.gen_range(lo..=hi);
            (0..n).map(|_| token(rng)).collect()
        };

        let indices = {
            let count = params.len();
            rand::seq::index::sample(&mut rng, count, count.min(120)).into_vec()
        };

        // Cross-entropy on two random prompt/target pairs.
        let pairs: Vec<SftPair> = (0..2)
            .map(|_| SftPair {
                prompt: seq(&mut rng, 1, 2),
                target: seq(&mut rng, 1, 2),
            })
            .collect();
        let (_, grad) = ce_batch_gradient(&params, &config, &pairs).unwrap();
        let fd = finite_difference(&params, &indices, h, |p| {
            ce_batch_loss(p, &config, &pairs).unwrap()
        });
        for (&j, &f) in indices.iter().zip(&fd) {
            worst_ce = worst_ce.max(relative_error(grad[j], f));
        }

        // KL toward a random frozen teacher distribution, both directions.
        let positions: Vec<KdPosition> = (0..3)
            .map(|_| {
                let raw: Vec<f64> =
                    (0..config.vocab_size).map(|_| rng.gen_range(0.05..1.0)).collect();
                let total: f64 = raw.iter().sum();
                KdPosition {
                    prefix: seq(&mut rng, 1, 4),
                    teacher_probs: raw.into_iter().map(|x| x / total).collect(),
                }
            })
            .collect();
        let direction = if i % 2 == 0 { KlDirection::Forward } else { KlDirection::Reverse };
        let kd = kd_gradient(&params, &config, &positions, direction).unwrap();
        let fd = finite_difference(&params, &indices, h, |p| {
            kd_loss(p, &config, &positions, direction).unwrap()
        });
        for (&j, &f) in indices.iter().zip(&fd) {
            worst_kd = worst_kd.max(relative_error(kd.grad[j], f));
        }
    }

    let elapsed = clock.elapsed().as_secs_f64();
    req!(problems, worst_ce < 1e-4, "worst cross-entropy gradient error {worst_ce:.3e} >= 1e-4");
    req!(problems, worst_kd < 1e-4, "worst divergence gradient error {worst_kd:.3e} >= 1e-4");
    req!(problems, elapsed < 30.0, "gradient checks took {elapsed:.1}s (budget 30s)");
    verdict(1, "analytic gradients match finite differences", problems);
}

// ---------------------------------------------------------------------------
// Criterion 2: logit fusion is exactly the coordinate-wise mean
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_fusion_exactness() {
    let mut problems = Vec::new();
    let models: Vec<TinyLM> = (0..3)
        .map(|i| {
            init_model(
                ModelConfig { hidden_dim: 12, context_window: 12, seed: 20 + i, ..ModelConfig::default() },
                format!("f{i}"),
            )
            .unwrap()
        })
        .collect();
    let vocab = models[0].config.vocab_size;
    let mut rng = stream(0xACCE, &[2]);
    let mut worst_mean = 0.0f64;
    let mut worst_sum = 0.0f64;
    let mut bit_mismatches = 0usize;

    for _ in 0..1000 {
        let mut prefix = vec![smel_core::vocab::BOS];
        let len = rng.gen_range(1..=8);
        prefix.extend((0..len).map(|_| rng.gen_range(0..vocab as TokenId)));
        let dists: Vec<Vec<f64>> = models.iter().map(|m| m.dist(&prefix).unwrap()).collect();
        let fused = fused_distribution(&dists).unwrap();
        for j in 0..vocab {
            let mean = dists.iter().rev().map(|d| d[j]).sum::<f64>() / dists.len() as f64;
            worst_mean = worst_mean.max((fused[j] - mean).abs());
        }
        worst_sum = worst_sum.max((fused.iter().sum::<f64>() - 1.0).abs());
        // Fusing three copies of one distribution must reproduce it bit-wise.
        let same = fused_distribution(&[dists[0].clone(), dists[0].clone(), dists[0].clone()])
            .unwrap();
        if same != dists[0] {
            bit_mismatches += 1;
        }
    }

    // Whole-sequence check: fused decoding over identical members follows the
    // single model exactly under the same stream.
    let clones = Pool::new(
        vec![
            TinyLM { id: "a".into(), ..models[0].clone() },
            TinyLM { id: "b".into(), ..models[0].clone() },
            TinyLM { id: "c".into(), ..models[0].clone() },
        ],
        None,
    )
    .unwrap();
    let prompt = smel_core::vocab::encode("12+34=").unwrap();
    let gen = TrainConfig::default();
    let fused_out = fuse_decode(&clones, &prompt, &gen, &mut stream(0xACCE, &[3])).unwrap();
    let single_out = sample(&models[0], &prompt, &gen, &mut stream(0xACCE, &[3])).unwrap();

    req!(problems, worst_mean < 1e-12, "fused distribution off the mean by {worst_mean:.3e}");
    req!(problems, worst_sum < 1e-9, "fused distribution sum off one by {worst_sum:.3e}");
    req!(problems, bit_mismatches == 0, "{bit_mismatches} fused-identical steps not bit-equal");
    req!(problems, fused_out == single_out, "identical-member fused decode diverged from the single model");
    verdict(2, "logit fusion equals the distribution mean", problems);
}

// ---------------------------------------------------------------------------
// Criterion 3: merge identity, elected signs, drop-rescale unbiasedness
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_merge_identities() {
    let mut problems = Vec::new();
    let clock = Instant::now();
    let mut rng = stream(0xACCE, &[4]);

    // Identity: three copies of one delta, no dropping, full density.
    let base = init_model(
        ModelConfig { hidden_dim: 10, context_window: 10, seed: 40, ..ModelConfig::default() },
        "base",
    )
    .unwrap();
    let member = TinyLM {
        id: "m".into(),
        config: base.config,
        params: smel_core::ParamVector(
            base.params.as_slice().iter().map(|&v| v + 0.05).collect(),
        ),
    };
    let pool = Pool::new(
        vec![
            TinyLM { id: "m1".into(), ..member.clone() },
            TinyLM { id: "m2".into(), ..member.clone() },
            TinyLM { id: "m3".into(), ..member.clone() },
        ],
        Some(base.clone()),
    )
    .unwrap();
    let identity = MergeSettings { weights: None, density: 1.0, dare_drop: 0.0 };
    let merged =
        smel_core::collab::merge_pool(&pool, &identity, &mut stream(0xACCE, &[5]), "merged")
            .unwrap();
    req!(
        problems,
        merged.params.as_slice() == member.params.as_slice(),
        "merging three identical members did not reproduce the member bit-exactly"
    );

    // Elected signs: every nonzero merged coordinate matches the weighted
    // sign vote over the (trimmed) deltas.
    for &density in &[1.0, 0.7] {
        let deltas: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let cfg = MergeSettings { weights: None, density, dare_drop: 0.0 }
            .resolve(3)
            .unwrap();
        let merged = ties_merge(&deltas, &cfg, &mut stream(0xACCE, &[6])).unwrap();
        // Independent trim: keep the ceil(density * len) largest magnitudes.
        let trimmed: Vec<Vec<f64>> = deltas
            .iter()
            .map(|d| {
                let keep = (density * d.len() as f64).ceil() as usize;
                let mut order: Vec<usize> = (0..d.len()).collect();
                order.sort_by(|&a, &b| d[b].abs().total_cmp(&d[a].abs()));
                let mut out = vec![0.0; d.len()];
                for &j in &order[..keep] {
                    out[j] = d[j];
                }
                out
            })
            .collect();
        for j in 0..400 {
            if merged[j] == 0.0 {
                continue;
            }
            let vote: f64 = trimmed.iter().map(|d| d[j] / 3.0).sum();
            let elected_positive = vote >= 0.0;
            req!(
                problems,
                (merged[j] > 0.0) == elected_positive,
                "coordinate {j} (density {density}) has sign {} against elected vote {vote:.3e}",
                merged[j]
            );
        }
    }

    // Drop-rescale unbiasedness: the Monte-Carlo mean over 10^4 seeded draws
    // stays within 2% relative of each coordinate.
    let delta: Vec<f64> = (0..200)
        .map(|_| {
            let mag = rng.gen_range(0.05..2.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let draws = 10_000usize;
    let mut sums = vec![0.0f64; delta.len()];
    let mut mc = stream(0xACCE, &[7]);
    for _ in 0..draws {
        let thinned = dare(&delta, 0.3, &mut mc).unwrap();
        for (s, v) in sums.iter_mut().zip(&thinned) {
            *s += v;
        }
    }
    let mut worst_rel = 0.0f64;
    for (s, v) in sums.iter().zip(&delta) {
        worst_rel = worst_rel.max((s / draws as f64 - v).abs() / v.abs());
    }
    req!(problems, worst_rel < 0.02, "Monte-Carlo mean off by {worst_rel:.4} relative (budget 2%)");

    let elapsed = clock.elapsed().as_secs_f64();
    req!(problems, elapsed < 60.0, "merge checks took {elapsed:.1}s (budget 60s)");
    verdict(3, "weight merging identities hold", problems);
}

// ---------------------------------------------------------------------------
// Criterion 4: multi-student mixture counts
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_mixture_exactness() {
    let mut problems = Vec::new();
    let models: Vec<TinyLM> = (0..3)
        .map(|i| {
            init_model(
                ModelConfig { hidden_dim: 8, context_window: 12, seed: 60 + i, ..ModelConfig::default() },
                format!("m{i}"),
            )
            .unwrap()
        })
        .collect();
    let pool = Pool::new(models, None).unwrap();
    let collab: Vec<SFTExample> = (0..4)
        .map(|j| SFTExample {
            instruction_id: format!("i{j}"),
            instruction: smel_core::vocab::encode(&format!("{j}+{j}=")).unwrap(),
            target: smel_core::vocab::encode(&(2 * j).to_string()).unwrap(),
            source: SourceTag::Collab,
        })
        .collect();
    let gen = TrainConfig::default();

    let even = MixtureSpec { collab: 1, best_student: 1, self_sample: 1 };
    let mixed =
        build_multistudent_mixture(&collab, &pool, 0, 2, &even, &gen, &mut stream(0xACCE, &[8]))
            .unwrap();
    req!(problems, mixed.len() == 12, "1:1:1 mixture over 4 instructions has {} examples, not 12", mixed.len());
    let mut per_source: BTreeMap<&'static str, usize> = BTreeMap::new();
    for e in &mixed {
        *per_source.entry(e.source.as_str()).or_default() += 1;
    }
    for (source, count) in &per_source {
        req!(problems, *count == 4, "source {source} contributed {count} examples, not 4");
    }
    req!(problems, per_source.len() == 3, "expected 3 sources, saw {}", per_source.len());

    let collab_only = MixtureSpec { collab: 1, best_student: 0, self_sample: 0 };
    let supervised =
        build_multistudent_mixture(&collab, &pool, 0, 2, &collab_only, &gen, &mut stream(0xACCE, &[9]))
            .unwrap();
    let key = |e: &SFTExample| (e.instruction_id.clone(), e.instruction.clone(), e.target.clone());
    let mut got: Vec<_> = supervised.iter().map(key).collect();
    let mut want: Vec<_> = collab.iter().map(key).collect();
    got.sort();
    want.sort();
    req!(problems, got == want, "1:0:0 mixture differs from the supervised collaboration set");
    req!(
        problems,
        supervised.iter().all(|e| e.source == SourceTag::Collab),
        "1:0:0 mixture contains non-collaboration sources"
    );
    verdict(4, "distillation mixtures have exact composition", problems);
}

// ---------------------------------------------------------------------------
// Criterion 5: self-distillation is a fixed point
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_self_distillation_fixed_point() {
    let mut problems = Vec::new();
    let model = init_model(
        ModelConfig { hidden_dim: 10, context_window: 16, seed: 70, ..ModelConfig::default() },
        "s",
    )
    .unwrap();
    let teacher = TinyLM { id: "t".into(), ..model.clone() };
    let prompts: Vec<(String, Vec<TokenId>)> = (0..3)
        .map(|j| (format!("p{j}"), smel_core::vocab::encode(&format!("{j}+{j}=")).unwrap()))
        .collect();
    let cfg = DistillConfig {
        method: DistillMethod::OnPolicy,
        train: TrainConfig { epochs: 2, learning_rate: 0.5, max_new_tokens: 8, ..TrainConfig::default() },
        mixture: MixtureSpec::default(),
        on_policy_samples: 2,
        kl_direction: KlDirection::Forward,
    };
    let (after, report) =
        on_policy_distill(&model, &teacher, &prompts, &cfg, &mut stream(0xACCE, &[10])).unwrap();

    let max_update = after
        .params
        .as_slice()
        .iter()
        .zip(model.params.as_slice())
        .map(|(a, b)| (f64::from(*a) - f64::from(*b)).abs())
        .fold(0.0f64, f64::max);
    req!(problems, max_update <= 1e-10, "teacher==student produced a parameter update of {max_update:.3e}");
    req!(
        problems,
        report.final_epoch_loss.abs() <= 1e-10,
        "self-distillation loss {:.3e} is not zero",
        report.final_epoch_loss
    );

    // The analytic gradient itself vanishes when the teacher distribution is
    // the student's own.
    let params = model.params.to_f64();
    let positions: Vec<KdPosition> = prompts
        .iter()
        .map(|(_, prompt)| {
            let mut prefix = vec![smel_core::vocab::BOS];
            prefix.extend_from_slice(prompt);
            KdPosition { teacher_probs: model.dist(&prefix).unwrap(), prefix }
        })
        .collect();
    let kd = kd_gradient(&params, &model.config, &positions, KlDirection::Forward).unwrap();
    let norm = kd.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    req!(problems, norm <= 1e-10, "analytic self-distillation gradient norm {norm:.3e} exceeds 1e-10");
    verdict(5, "self-distillation is a fixed point", problems);
}

// ---------------------------------------------------------------------------
// Criterion 6: the reference evolution run improves both objectives
// ---------------------------------------------------------------------------

/// Regression floors measured on the pinned pilot run of
/// `configs/reference.json` (two wall-clock-independent executions agree
/// byte-for-byte, so these are stable): test single-avg rose by
/// 0.012778 at the retained pool and test multi rose by 0.016667 at the
/// retained system.
const PINNED_SINGLE_MARGIN: f64 = 0.0127;
const PINNED_MULTI_MARGIN: f64 = 0.0166;

#[test]
fn criterion_6_reference_run_improves_both_objectives() {
    let mut problems = Vec::new();
    let cfg = reference_run_config();

    // The run under test is the documented reference setting.
    req!(problems, cfg.k == 3, "reference k is {}, expected 3", cfg.k);
    req!(problems, cfg.run_seed == 0, "reference seed is {}, expected 0", cfg.run_seed);
    req!(
        problems,
        cfg.strategy.kind_name() == "ROUTER",
        "reference strategy is {}, expected ROUTER",
        cfg.strategy.kind_name()
    );
    req!(
        problems,
        cfg.distill.method == DistillMethod::MultiStudent,
        "reference distiller is {}, expected MULTI_STUDENT",
        cfg.distill.method.as_str()
    );
    let families: Vec<Option<TaskFamily>> = cfg.pool.members.iter().map(|m| m.family).collect();
    req!(
        problems,
        families
            == vec![
                Some(TaskFamily::Arith),
                Some(TaskFamily::StrTrans),
                Some(TaskFamily::KvRecall)
            ],
        "reference pool is not one specialist per family: {families:?}"
    );

    let runs = reference();
    let states = load_states(&runs.run_a, cfg.k);
    let summary = load_summary(&runs.run_a);

    // (a) Retention: the kept pool and system are at least as good on dev as
    // the starting pool and system.
    let dev0_single = states[0].dev.macro_single_avg();
    let dev0_multi = states[0].dev.macro_multi();
    req!(
        problems,
        summary.dev_best_pool_metric >= dev0_single,
        "retained pool dev metric {} fell below t=0 value {}",
        summary.dev_best_pool_metric,
        dev0_single
    );
    req!(
        problems,
        summary.dev_best_system_metric >= dev0_multi,
        "retained system dev metric {} fell below t=0 value {}",
        summary.dev_best_system_metric,
        dev0_multi
    );

    // (b) Test-set improvement of the retained artifacts, recomputed from the
    // per-iteration records and held to the pilot-pinned margins.
    let single_delta = states[summary.best_pool_iteration].test.macro_single_avg()
        - states[0].test.macro_single_avg();
    let multi_delta =
        states[summary.best_system_iteration].test.macro_multi() - states[0].test.macro_multi();
    req!(
        problems,
        (single_delta - summary.objective.single_delta).abs() < 1e-12,
        "summary single delta {} disagrees with recomputed {}",
        summary.objective.single_delta,
        single_delta
    );
    req!(
        problems,
        (multi_delta - summary.objective.multi_delta).abs() < 1e-12,
        "summary multi delta {} disagrees with recomputed {}",
        summary.objective.multi_delta,
        multi_delta
    );
    req!(
        problems,
        summary.objective.single_improved && single_delta >= PINNED_SINGLE_MARGIN,
        "test single-avg delta {single_delta:.6} under the pinned margin {PINNED_SINGLE_MARGIN}"
    );
    req!(
        problems,
        summary.objective.multi_improved && multi_delta >= PINNED_MULTI_MARGIN,
        "test multi delta {multi_delta:.6} under the pinned margin {PINNED_MULTI_MARGIN}"
    );

    // (c) The retained system leaves no more jointly-unsolved instances than
    // the starting system did.
    let nn0 = states[0].test_skill.totals().no_no;
    let nn_best = states[summary.best_system_iteration].test_skill.totals().no_no;
    req!(
        problems,
        nn_best <= nn0,
        "jointly-unsolved count rose from {nn0} to {nn_best} at the retained system"
    );

    // Full run fits the desk-scale budget.
    req!(
        problems,
        runs.wall_a_secs < 600.0,
        "reference run took {:.0}s (budget 600s)",
        runs.wall_a_secs
    );
    verdict(6, "reference run improves single and multi objectives", problems);
}

// ---------------------------------------------------------------------------
// Criterion 7: rerunning the reference config is byte-identical
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_determinism() {
    let mut problems = Vec::new();
    let runs = reference();
    let files_a = tree_files(&runs.run_a);
    let files_b = tree_files(&runs.run_b);
    req!(
        problems,
        files_a == files_b,
        "run layouts differ: {} vs {} files",
        files_a.len(),
        files_b.len()
    );
    let mut checked_ckpts = 0usize;
    let mut saw_report = false;
    for rel in &files_a {
        let a = fs::read(runs.run_a.join(rel)).expect("file from first run");
        let b = fs::read(runs.run_b.join(rel)).expect("file from second run");
        req!(problems, a == b, "{} differs between the two runs", rel.display());
        match rel.extension().and_then(|e| e.to_str()) {
            Some("ckpt") => checked_ckpts += 1,
            Some("csv") => saw_report = true,
            _ => {}
        }
    }
    req!(problems, checked_ckpts >= 13, "only {checked_ckpts} checkpoints compared");
    req!(problems, saw_report, "report.csv missing from the comparison");
    verdict(7, "identical config and seed reproduce every byte", problems);
}

// ---------------------------------------------------------------------------
// Criterion 8: skill-matrix counts partition every evaluated split
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_skill_matrix_partition() {
    let mut problems = Vec::new();
    let cfg = reference_run_config();
    let states = load_states(&reference().run_a, cfg.k);
    for st in &states {
        req!(
            problems,
            st.test_skill.families.len() == 3,
            "iteration {} covers {} families, expected 3",
            st.iteration,
            st.test_skill.families.len()
        );
        for (family, counts) in &st.test_skill.families {
            req!(
                problems,
                counts.total() == cfg.data.test_per_family,
                "iteration {} family {} counts sum to {}, split size is {}",
                st.iteration,
                family.as_str(),
                counts.total(),
                cfg.data.test_per_family
            );
        }
    }
    verdict(8, "skill matrices partition each split", problems);
}

// ---------------------------------------------------------------------------
// Criterion 9: persistence roundtrip, corruption kinds, resume
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_persistence_and_resume() {
    let mut problems = Vec::new();

    // Bit-exact roundtrip.
    let model = init_model(
        ModelConfig { hidden_dim: 9, context_window: 11, seed: 90, ..ModelConfig::default() },
        "rt",
    )
    .unwrap();
    let scratch = std::env::temp_dir().join(format!("smel-acceptance-{}", std::process::id()));
    fs::create_dir_all(&scratch).expect("scratch directory");
    let path = scratch.join("roundtrip.ckpt");
    save_checkpoint(&model, &path, Some(2), "cafef00d").unwrap();
    let (loaded, meta) = load_checkpoint(&path).unwrap();
    req!(
        problems,
        loaded.params.as_slice() == model.params.as_slice()
            && loaded.config == model.config
            && loaded.id == model.id,
        "checkpoint roundtrip altered the model"
    );
    req!(
        problems,
        meta.iteration == Some(2) && meta.config_hash == "cafef00d",
        "checkpoint metadata did not roundtrip: {meta:?}"
    );

    // Each corruption is rejected with its own error kind.
    let bytes = checkpoint_bytes(&model, Some(2), "cafef00d");
    let bad_magic = scratch.join("bad_magic.ckpt");
    let mut flipped = bytes.clone();
    flipped[0] ^= 0xFF;
    fs::write(&bad_magic, flipped).unwrap();
    req!(
        problems,
        matches!(load_checkpoint(&bad_magic), Err(Error::BadMagic { .. })),
        "flipped magic was not rejected as bad magic"
    );
    let truncated = scratch.join("truncated.ckpt");
    fs::write(&truncated, &bytes[..bytes.len() - 4]).unwrap();
    req!(
        problems,
        matches!(load_checkpoint(&truncated), Err(Error::PayloadLength { .. })),
        "truncated payload was not rejected as a length mismatch"
    );
    let poisoned = scratch.join("poisoned.ckpt");
    let mut nan = bytes.clone();
    let tail = nan.len() - 4;
    nan[tail..].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&poisoned, nan).unwrap();
    req!(
        problems,
        matches!(load_checkpoint(&poisoned), Err(Error::NonFinite(_))),
        "NaN payload was not rejected as non-finite"
    );

    // Interrupt the reference run after iteration 1 (drop everything later),
    // resume through the CLI, and require the exact uninterrupted artifacts.
    let runs = reference();
    let resumed = scratch.join("resumed");
    copy_tree(&runs.run_a, &resumed);
    for stale in ["iter2", "iter3"] {
        fs::remove_dir_all(resumed.join(stale)).expect("drop later iterations");
    }
    for stale in ["summary.json", "report.csv", "curves.svg"] {
        fs::remove_file(resumed.join(stale)).expect("drop final reports");
    }
    let out = smel(&["resume", "--quiet", "--run-dir", resumed.to_str().unwrap()]);
    req!(
        problems,
        out.status.success(),
        "resume failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let files_resumed = tree_files(&resumed);
    req!(
        problems,
        files_resumed == tree_files(&runs.run_a),
        "resumed run produced a different artifact layout"
    );
    for rel in &files_resumed {
        let a = fs::read(runs.run_a.join(rel)).expect("uninterrupted file");
        let r = fs::read(resumed.join(rel)).expect("resumed file");
        req!(problems, a == r, "{} differs after resume", rel.display());
    }
    verdict(9, "persistence is exact and resume matches uninterrupted runs", problems);
}
