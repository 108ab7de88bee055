//! SGD training: cross-entropy fine-tuning and KL-based distillation math.
//!
//! Gradients are computed analytically by hand-rolled backprop through the
//! embed -> tanh -> linear stack. Both losses share one backward pass that
//! starts from `dL/dlogits`:
//!
//! - cross-entropy on a label: `dlogits = q - onehot(label)`
//! - forward KL(p_teacher || q_student): `dlogits = q - p`
//! - reverse KL(q_student || p_teacher): `dlogits_j = q_j * (r_j - KL)`
//!   with `r = ln q - ln p`
//!
//! Training runs in f64 end to end and rounds back to the f32 storage
//! parameters once at the end, which keeps finite-difference gradient checks
//! clean and makes "zero update" fixed points bit-exact.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generate::TrainConfig;
use crate::model::{self, softmax, ModelConfig, ParamVector, TinyLM, TokenId};
use crate::scoring::answer_span;
use crate::vocab::{BOS, EOS};

/// One supervised example: produce `target` (and then stop) given `prompt`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftPair {
    pub prompt: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

/// What a training call did, for logs and reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-position cross-entropy over the final epoch (over the data
    /// as-is when `epochs = 0`).
    pub final_epoch_loss: f64,
    /// Teaching positions per epoch (target tokens incl. the closing EOS).
    pub positions: usize,
    /// Gradient steps taken in total.
    pub steps: usize,
}

/// The label positions of one example: the model is taught every token of
/// `span(target) ++ EOS` given `BOS ++ prompt ++ preceding-target`.
fn teaching_sequence(pair: &SftPair) -> Result<(Vec<TokenId>, usize)> {
    if pair.prompt.is_empty() {
        return Err(Error::Empty("training prompt"));
    }
    let mut steps: Vec<TokenId> = answer_span(&pair.target).to_vec();
    steps.push(EOS);
    let mut full = Vec::with_capacity(1 + pair.prompt.len() + steps.len());
    full.push(BOS);
    full.extend_from_slice(&pair.prompt);
    let prompt_end = full.len();
    full.extend_from_slice(&steps);
    Ok((full, prompt_end))
}

/// Accumulates the backward pass for one position into `grad`, starting from
/// `dlogits` and the cached activations. `scale` multiplies every
/// contribution (used for batch averaging).
fn backward_position(
    params: &[f64],
    config: &ModelConfig,
    window: &[TokenId],
    pass: &model::ForwardPass,
    dlogits: &[f64],
    scale: f64,
    grad: &mut [f64],
) {
    let (v, d, h, w) = (
        config.vocab_size,
        config.embed_dim,
        config.hidden_dim,
        config.context_window,
    );
    let layout = config.layout();
    let input_w = &params[layout.input_w.clone()];
    let output_w = &params[layout.output_w.clone()];

    // Output layer: logits = output_w @ z + output_b.
    let mut dz = vec![0.0; h];
    {
        let (g_out_w, g_out_b) = {
            let (head, tail) = grad.split_at_mut(layout.output_b.start);
            (&mut head[layout.output_w.clone()], tail)
        };
        for vi in 0..v {
            let dl = dlogits[vi] * scale;
            if dl == 0.0 {
                continue;
            }
            let row = &output_w[vi * h..(vi + 1) * h];
            let grow = &mut g_out_w[vi * h..(vi + 1) * h];
            for i in 0..h {
                grow[i] += dl * pass.z[i];
                dz[i] += row[i] * dlogits[vi];
            }
            g_out_b[vi] += dl;
        }
    }

    // Hidden layer: z = tanh(input_w @ x + hidden_b).
    let wd = w * d;
    let mut dx = vec![0.0; wd];
    for i in 0..h {
        let da = dz[i] * (1.0 - pass.z[i] * pass.z[i]);
        if da == 0.0 {
            continue;
        }
        grad[layout.hidden_b.start + i] += da * scale;
        let row = &input_w[i * wd..(i + 1) * wd];
        let grow = &mut grad[layout.input_w.start + i * wd..layout.input_w.start + (i + 1) * wd];
        for j in 0..wd {
            grow[j] += da * scale * pass.x[j];
            dx[j] += row[j] * da;
        }
    }

    // Embeddings: x is the concatenation of the window token embeddings.
    for (j, &tok) in window.iter().enumerate() {
        let base = layout.embed.start + tok as usize * d;
        for k in 0..d {
            grad[base + k] += dx[j * d + k] * scale;
        }
    }
}

/// A batch of cross-entropy positions: (window, label).
struct CePosition {
    window: Vec<TokenId>,
    label: TokenId,
}

fn ce_positions(config: &ModelConfig, pairs: &[SftPair]) -> Result<Vec<CePosition>> {
    let mut out = Vec::new();
    for pair in pairs {
        model::check_prefix(&pair.prompt, config.vocab_size)?;
        model::check_prefix(&pair.target, config.vocab_size)?;
        let (full, prompt_end) = teaching_sequence(pair)?;
        for cut in prompt_end..full.len() {
            out.push(CePosition {
                window: model::window_of(&full[..cut], config.context_window),
                label: full[cut],
            });
        }
    }
    Ok(out)
}

/// Teaching positions contributed by `pairs` (span length + closing EOS).
fn position_count(pairs: &[SftPair]) -> usize {
    pairs
        .iter()
        .map(|p| answer_span(&p.target).len() + 1)
        .sum()
}

/// Mean cross-entropy of the teaching positions of `pairs` under an f64
/// parameter vector. Probe point for finite-difference gradient checks.
pub fn ce_batch_loss(params: &[f64], config: &ModelConfig, pairs: &[SftPair]) -> Result<f64> {
    let positions = ce_positions(config, pairs)?;
    if positions.is_empty() {
        return Err(Error::Empty("training positions"));
    }
    let mut total = 0.0;
    for pos in &positions {
        let pass = model::forward(params, config, &pos.window);
        let probs = softmax(&pass.logits);
        total -= probs[pos.label as usize].ln();
    }
    let loss = total / positions.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss"));
    }
    Ok(loss)
}

/// Mean cross-entropy and its analytic gradient over all parameters.
pub fn ce_batch_gradient(
    params: &[f64],
    config: &ModelConfig,
    pairs: &[SftPair],
) -> Result<(f64, Vec<f64>)> {
    let positions = ce_positions(config, pairs)?;
    if positions.is_empty() {
        return Err(Error::Empty("training positions"));
    }
    let scale = 1.0 / positions.len() as f64;
    let mut grad = vec![0.0; config.param_count()];
    let mut total = 0.0;
    for pos in &positions {
        let pass = model::forward(params, config, &pos.window);
        let mut dlogits = softmax(&pass.logits);
        total -= dlogits[pos.label as usize].ln();
        dlogits[pos.label as usize] -= 1.0;
        backward_position(params, config, &pos.window, &pass, &dlogits, scale, &mut grad);
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss"));
    }
    Ok((loss, grad))
}

/// One momentum-SGD step: `v = momentum*v + g; params -= lr*v`.
fn apply_step(params: &mut [f64], grad: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) {
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

/// Mini-batch SGD on token-level cross-entropy. Examples are reshuffled each
/// epoch from the caller's stream; the batch gradient is the mean over the
/// batch's teaching positions. Returns the trained snapshot (the input model
/// is untouched) plus a report with the final-epoch loss.
pub fn train_sft(
    m: &TinyLM,
    data: &[SftPair],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(TinyLM, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let config = m.config;
    let mut params = m.params.to_f64();
    let mut velocity = vec![0.0; params.len()];
    let mut steps = 0;
    let mut final_epoch_loss = f64::NAN;
    let mut positions_per_epoch = 0;

    if cfg.epochs == 0 {
        // No training requested; still report the loss at the current point.
        final_epoch_loss = ce_batch_loss(&params, &config, data)?;
        positions_per_epoch = position_count(data);
    } else {
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _epoch in 0..cfg.epochs {
            order.shuffle(rng);
            let mut loss_sum = 0.0;
            let mut epoch_positions = 0;
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<SftPair> = chunk.iter().map(|&i| data[i].clone()).collect();
                let (loss, grad) = ce_batch_gradient(&params, &config, &batch)?;
                let batch_positions = position_count(&batch);
                loss_sum += loss * batch_positions as f64;
                epoch_positions += batch_positions;
                apply_step(&mut params, &grad, &mut velocity, cfg.learning_rate, cfg.momentum);
                steps += 1;
            }
            final_epoch_loss = loss_sum / epoch_positions as f64;
            positions_per_epoch = epoch_positions;
        }
    }

    let trained = ParamVector(params.iter().map(|&x| x as f32).collect());
    trained.check_finite()?;
    Ok((
        TinyLM {
            id: m.id.clone(),
            config,
            params: trained,
        },
        TrainReport {
            final_epoch_loss,
            positions: positions_per_epoch,
            steps,
        },
    ))
}

/// Which way the distillation divergence points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KlDirection {
    /// KL(teacher || student): mode-covering, gradient `q - p`. The default.
    #[serde(rename = "FORWARD")]
    Forward,
    /// KL(student || teacher): mode-seeking ablation.
    #[serde(rename = "REVERSE")]
    Reverse,
}

/// One distillation position: a student-side prefix and the frozen teacher
/// distribution at that prefix.
#[derive(Debug, Clone)]
pub struct KdPosition {
    pub prefix: Vec<TokenId>,
    pub teacher_probs: Vec<f64>,
}

/// Result of a KD gradient evaluation.
#[derive(Debug, Clone)]
pub struct KdGrad {
    /// Sum of per-position divergences.
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Divergence per position, for reporting; each is >= -1e-12.
    pub per_position: Vec<f64>,
}

fn kd_position_terms(
    params: &[f64],
    config: &ModelConfig,
    pos: &KdPosition,
    direction: KlDirection,
) -> Result<(f64, Vec<f64>, model::ForwardPass, Vec<TokenId>)> {
    if pos.prefix.is_empty() {
        return Err(Error::Empty("distillation prefix"));
    }
    if pos.teacher_probs.len() != config.vocab_size {
        return Err(Error::Incompatible(format!(
            "teacher distribution has {} entries, student vocabulary has {}",
            pos.teacher_probs.len(),
            config.vocab_size
        )));
    }
    let window = model::window_of(&pos.prefix, config.context_window);
    let pass = model::forward(params, config, &window);
    let q = softmax(&pass.logits);
    let p = &pos.teacher_probs;
    let (kl, dlogits) = match direction {
        KlDirection::Forward => {
            let kl: f64 = p
                .iter()
                .zip(&q)
                .map(|(&pi, &qi)| if pi > 0.0 { pi * (pi.ln() - qi.ln()) } else { 0.0 })
                .sum();
            let dlogits: Vec<f64> = q.iter().zip(p).map(|(&qi, &pi)| qi - pi).collect();
            (kl, dlogits)
        }
        KlDirection::Reverse => {
            let r: Vec<f64> = q
                .iter()
                .zip(p)
                .map(|(&qi, &pi)| qi.ln() - pi.ln())
                .collect();
            let kl: f64 = q.iter().zip(&r).map(|(&qi, &ri)| qi * ri).sum();
            let dlogits: Vec<f64> = q.iter().zip(&r).map(|(&qi, &ri)| qi * (ri - kl)).collect();
            (kl, dlogits)
        }
    };
    if !kl.is_finite() {
        return Err(Error::NonFinite("distillation divergence"));
    }
    Ok((kl, dlogits, pass, window))
}

/// Summed divergence over positions. Probe point for gradient checks.
pub fn kd_loss(
    params: &[f64],
    config: &ModelConfig,
    positions: &[KdPosition],
    direction: KlDirection,
) -> Result<f64> {
    let mut total = 0.0;
    for pos in positions {
        total += kd_position_terms(params, config, pos, direction)?.0;
    }
    Ok(total)
}

/// Summed divergence, its analytic gradient w.r.t. the student parameters,
/// and the per-position divergences.
pub fn kd_gradient(
    params: &[f64],
    config: &ModelConfig,
    positions: &[KdPosition],
    direction: KlDirection,
) -> Result<KdGrad> {
    if positions.is_empty() {
        return Err(Error::Empty("distillation positions"));
    }
    let mut grad = vec![0.0; config.param_count()];
    let mut per_position = Vec::with_capacity(positions.len());
    let mut loss = 0.0;
    for pos in positions {
        let (kl, dlogits, pass, window) = kd_position_terms(params, config, pos, direction)?;
        loss += kl;
        per_position.push(kl);
        backward_position(params, config, &window, &pass, &dlogits, 1.0, &mut grad);
    }
    Ok(KdGrad {
        loss,
        grad,
        per_position,
    })
}

/// Relative error used by the finite-difference checks: symmetric, floored
/// so near-zero pairs compare absolutely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central finite-difference gradient of `f` at `params` (step `h`),
/// restricted to `indices`.
pub fn finite_difference<F>(params: &[f64], indices: &[usize], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let orig = work[i];
        work[i] = orig + h;
        let up = f(&work);
        work[i] = orig - h;
        let down = f(&work);
        work[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;
    use crate::rng::stream;
    use crate::scoring::score_exact;
    use crate::vocab;

    fn tiny_config() -> ModelConfig {
        // Small enough that checking every parameter is instant.
        ModelConfig {
            vocab_size: 12,
            embed_dim: 3,
            hidden_dim: 4,
            context_window: 5,
            seed: 21,
        }
    }

    fn tiny_pairs() -> Vec<SftPair> {
        vec![
            SftPair {
                prompt: vec![4, 5, 6],
                target: vec![7, 8, 9, 10],
            },
            SftPair {
                prompt: vec![6, 4],
                target: vec![11],
            },
        ]
    }

    #[test]
    fn ce_gradient_matches_finite_differences_on_every_parameter() {
        let m = init_model(tiny_config(), "m").unwrap();
        let params = m.params.to_f64();
        let pairs = tiny_pairs();
        let (_, grad) = ce_batch_gradient(&params, &m.config, &pairs).unwrap();
        let indices: Vec<usize> = (0..params.len()).collect();
        let fd = finite_difference(&params, &indices, 1e-4, |p| {
            ce_batch_loss(p, &m.config, &pairs).unwrap()
        });
        let worst = indices
            .iter()
            .map(|&i| relative_error(grad[i], fd[i]))
            .fold(0.0, f64::max);
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn kd_gradient_matches_finite_differences_both_directions() {
        let student = init_model(tiny_config(), "s").unwrap();
        let teacher = init_model(ModelConfig { seed: 77, ..tiny_config() }, "t").unwrap();
        let prefixes = vec![vec![4, 5], vec![4, 5, 7, 9]];
        let positions: Vec<KdPosition> = prefixes
            .into_iter()
            .map(|prefix| KdPosition {
                teacher_probs: teacher.dist(&prefix).unwrap(),
                prefix,
            })
            .collect();
        let params = student.params.to_f64();
        let indices: Vec<usize> = (0..params.len()).collect();
        for dir in [KlDirection::Forward, KlDirection::Reverse] {
            let out = kd_gradient(&params, &student.config, &positions, dir).unwrap();
            let fd = finite_difference(&params, &indices, 1e-4, |p| {
                kd_loss(p, &student.config, &positions, dir).unwrap()
            });
            let worst = indices
                .iter()
                .map(|&i| relative_error(out.grad[i], fd[i]))
                .fold(0.0, f64::max);
            assert!(worst < 1e-4, "{dir:?}: max relative error {worst}");
            assert!(out.per_position.iter().all(|&kl| kl >= -1e-12));
        }
    }

    #[test]
    fn kd_at_identity_has_exactly_zero_gradient() {
        let m = init_model(tiny_config(), "m").unwrap();
        let prefix = vec![4, 5, 6, 7];
        let positions = vec![KdPosition {
            teacher_probs: m.dist(&prefix).unwrap(),
            prefix,
        }];
        let out = kd_gradient(&m.params.to_f64(), &m.config, &positions, KlDirection::Forward)
            .unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_learning_rate_leaves_params_bit_identical() {
        let m = init_model(tiny_config(), "m").unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let (trained, report) = train_sft(&m, &tiny_pairs(), &cfg, &mut stream(0, &[])).unwrap();
        assert_eq!(trained.params, m.params);
        assert!(report.final_epoch_loss.is_finite());
        assert_eq!(report.steps, 3);
    }

    #[test]
    fn single_example_is_memorized() {
        let m = init_model(
            ModelConfig { hidden_dim: 24, context_window: 12, seed: 3, ..ModelConfig::default() },
            "m",
        )
        .unwrap();
        let prompt = vocab::encode("12+34=").unwrap();
        let target = vocab::encode("46").unwrap();
        let pair = SftPair { prompt: prompt.clone(), target: target.clone() };
        let cfg = TrainConfig {
            learning_rate: 0.5,
            epochs: 200,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let (trained, report) = train_sft(&m, &[pair], &cfg, &mut stream(1, &[])).unwrap();
        let out = crate::generate::greedy_decode(&trained, &prompt, 8).unwrap();
        assert_eq!(score_exact(&out, &target), 1.0, "greedy output {out:?}");
        assert!(report.final_epoch_loss < 0.1);
    }

    #[test]
    fn training_reduces_loss_on_realizable_data() {
        let m = init_model(tiny_config(), "m").unwrap();
        let pairs = tiny_pairs();
        let initial = ce_batch_loss(&m.params.to_f64(), &m.config, &pairs).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.3,
            epochs: 30,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (_, report) = train_sft(&m, &pairs, &cfg, &mut stream(2, &[])).unwrap();
        assert!(
            report.final_epoch_loss < initial,
            "{} !< {initial}",
            report.final_epoch_loss
        );
    }

    #[test]
    fn training_is_stream_deterministic() {
        let m = init_model(tiny_config(), "m").unwrap();
        let cfg = TrainConfig { learning_rate: 0.2, epochs: 4, batch_size: 1, ..TrainConfig::default() };
        let (a, _) = train_sft(&m, &tiny_pairs(), &cfg, &mut stream(5, &[1])).unwrap();
        let (b, _) = train_sft(&m, &tiny_pairs(), &cfg, &mut stream(5, &[1])).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn momentum_changes_the_trajectory_but_stays_deterministic() {
        let m = init_model(tiny_config(), "m").unwrap();
        let base = TrainConfig { learning_rate: 0.2, epochs: 4, batch_size: 2, ..TrainConfig::default() };
        let with_momentum = TrainConfig { momentum: 0.9, ..base };
        let (a, _) = train_sft(&m, &tiny_pairs(), &base, &mut stream(6, &[])).unwrap();
        let (b, _) = train_sft(&m, &tiny_pairs(), &with_momentum, &mut stream(6, &[])).unwrap();
        let (b2, _) = train_sft(&m, &tiny_pairs(), &with_momentum, &mut stream(6, &[])).unwrap();
        assert_ne!(a.params, b.params);
        assert_eq!(b.params, b2.params);
    }

    #[test]
    fn non_finite_loss_is_reported_not_propagated_as_nan() {
        let mut m = init_model(tiny_config(), "m").unwrap();
        // Force the label's probability to underflow to exactly zero.
        let layout = m.config.layout();
        m.params.0[layout.output_b.start + 7] = -1e9f32;
        let pairs = vec![SftPair { prompt: vec![4], target: vec![7] }];
        let err = ce_batch_loss(&m.params.to_f64(), &m.config, &pairs);
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn empty_data_is_rejected() {
        let m = init_model(tiny_config(), "m").unwrap();
        assert!(train_sft(&m, &[], &TrainConfig::default(), &mut stream(0, &[])).is_err());
    }
}
