//! Masked-token training: AdamW with decoupled weight decay, prompt
//! dropout, joint video/image batches, and a finite-difference gradient
//! check.

use crate::error::{Error, Result};
use crate::linalg::Real;
use crate::masking::{self, FrameMask};
use crate::model::{Model, ModelParams};
use crate::params::{zip_mut, Params};
use crate::prompt::{ActionTrack, PromptInput};
use crate::stpt::{self, Mode};
use crate::tokenizer::TokenGrid;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub prompt_dropout: f64,
    pub image_fraction: f64,
    pub seed: u64,
    pub checkpoint_interval: usize,
    pub grad_clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-5,
            weight_decay: 0.01,
            batch_size: 8,
            iterations: 1000,
            prompt_dropout: 0.1,
            image_fraction: 0.5,
            seed: 0,
            checkpoint_interval: 500,
            grad_clip: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config("train.lr", format!("must be > 0, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("train.weight_decay", format!("must be >= 0, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.prompt_dropout) {
            return Err(Error::config("train.prompt_dropout", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.image_fraction) {
            return Err(Error::config("train.image_fraction", "must lie in [0, 1]"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::config("train.grad_clip", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("train.beta1", "betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("train.eps", "must be > 0"));
        }
        Ok(())
    }
}

/// Adam moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub step: u64,
}

impl<T: Real> AdamW<T> {
    pub fn new(model: &Model<T>) -> Self {
        AdamW { m: model.zero_grads(), v: model.zero_grads(), step: 0 }
    }

    /// One decoupled-weight-decay Adam update.
    pub fn apply(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let one = T::one();
        let bc1 = one - T::lit(cfg.beta1.powi(self.step as i32));
        let bc2 = one - T::lit(cfg.beta2.powi(self.step as i32));
        let (lr, wd, eps) = (T::lit(cfg.lr), T::lit(cfg.weight_decay), T::lit(cfg.eps));
        zip_mut(&mut self.m, grads, |m, g| {
            for (mi, &gi) in m.iter_mut().zip(g) {
                *mi = b1 * *mi + (one - b1) * gi;
            }
        });
        zip_mut(&mut self.v, grads, |v, g| {
            for (vi, &gi) in v.iter_mut().zip(g) {
                *vi = b2 * *vi + (one - b2) * gi * gi;
            }
        });
        let ms = self.m.named();
        let vs = self.v.named();
        let mut i = 0;
        params.visit_mut("", &mut |_, t| {
            let (m, v) = (&ms[i].1.data, &vs[i].1.data);
            for ((p, &mi), &vi) in t.data.iter_mut().zip(m).zip(v) {
                let update = (mi / bc1) / ((vi / bc2).sqrt() + eps) + wd * *p;
                *p = *p - lr * update;
            }
            i += 1;
        });
    }
}

/// One supervised example: target tokens, the shared mask, the raw prompt
/// and the attention mode.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub targets: TokenGrid,
    pub mask: FrameMask,
    pub prompt: PromptInput,
    pub mode: Mode,
}

impl TrainSample {
    pub fn input(&self) -> Result<TokenGrid> {
        self.mask.apply(&self.targets)
    }

    pub fn masked_positions(&self) -> Vec<bool> {
        self.mask.materialize(self.targets.frames)
    }
}

/// Mean masked cross-entropy over a batch and its gradient. Prompt
/// dropout must already be resolved in each sample's `prompt.drop`.
pub fn batch_loss_and_grads<T: Real>(model: &Model<T>, batch: &[TrainSample]) -> Result<(f64, ModelParams<T>, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut grads = model.zero_grads();
    let scale = T::one() / T::from_usize(batch.len()).unwrap();
    let mut total = 0.0;
    let mut per_sample = Vec::with_capacity(batch.len());
    for s in batch {
        let input = s.input()?;
        let (logits, cache) = model.forward(&input, &s.prompt, s.mode)?;
        let (loss, mut d) = stpt::masked_ce_loss(&logits, model.config.stpt.vocab, &s.targets, &s.masked_positions())?;
        for v in &mut d {
            *v *= scale;
        }
        model.backward(&d, &cache, &mut grads)?;
        let loss = loss.to_f64().unwrap();
        per_sample.push(loss);
        total += loss;
    }
    Ok((total / batch.len() as f64, grads, per_sample))
}

/// Mean masked cross-entropy over a batch, forward only.
pub fn batch_loss<T: Real>(model: &Model<T>, batch: &[TrainSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in batch {
        let (logits, _) = model.forward(&s.input()?, &s.prompt, s.mode)?;
        let (loss, _) = stpt::masked_ce_loss(&logits, model.config.stpt.vocab, &s.targets, &s.masked_positions())?;
        total += loss.to_f64().unwrap();
    }
    Ok(total / batch.len().max(1) as f64)
}

pub fn global_norm<T: Real>(grads: &ModelParams<T>) -> f64 {
    grads
        .named()
        .iter()
        .flat_map(|(_, t)| t.data.iter())
        .map(|v| {
            let x = v.to_f64().unwrap();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
    pub image_samples: usize,
}

/// Applies prompt dropout, computes the batch loss, clips the gradient to
/// the configured global norm and takes one AdamW step. On a non-finite
/// loss nothing is updated.
pub fn train_step<T: Real, R: Rng + ?Sized>(
    model: &mut Model<T>,
    opt: &mut AdamW<T>,
    batch: &[TrainSample],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<StepStats> {
    let batch: Vec<TrainSample> = batch
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.prompt.drop = rng.random::<f64>() < cfg.prompt_dropout;
            s
        })
        .collect();
    let (loss, mut grads, _) = batch_loss_and_grads(model, &batch)?;
    if !loss.is_finite() {
        return Err(Error::Divergence(loss));
    }
    let norm = global_norm(&grads);
    if !norm.is_finite() {
        return Err(Error::Divergence(norm));
    }
    if norm > cfg.grad_clip {
        let s = T::lit(cfg.grad_clip / norm);
        grads.visit_mut("", &mut |_, t| t.data.iter_mut().for_each(|v| *v *= s));
    }
    opt.apply(&mut model.params, &grads, cfg);
    Ok(StepStats { loss, grad_norm: norm, image_samples: batch.iter().filter(|s| s.mode == Mode::Image).count() })
}

/// One tokenized episode available for training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub tokens: TokenGrid,
    pub caption: Option<String>,
    pub actions: Option<ActionTrack>,
}

/// Draws seed-ordered batches mixing video samples and image samples
/// (`N` independent frames from the pooled episodes).
pub fn sample_batch<R: Rng + ?Sized>(
    items: &[TrainItem],
    model: &Model<impl Real>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<TrainSample>> {
    if items.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let pcfg = &model.config.prompt;
    (0..cfg.batch_size)
        .map(|_| {
            let image = rng.random::<f64>() < cfg.image_fraction;
            let item = items.choose(rng).unwrap();
            let (targets, prompt, mode) = if image {
                let (n, th, tw) = (item.tokens.frames, item.tokens.th, item.tokens.tw);
                let per = th * tw;
                let mut tokens = Vec::with_capacity(n * per);
                for _ in 0..n {
                    let src = items.choose(rng).unwrap();
                    let f = rng.random_range(0..src.tokens.frames);
                    tokens.extend_from_slice(&src.tokens.tokens[f * per..(f + 1) * per]);
                }
                (TokenGrid::new(n, th, tw, item.tokens.vocab, tokens)?, PromptInput::default(), Mode::Image)
            } else {
                let prompt = PromptInput::new(item.caption.as_deref(), item.actions.clone(), pcfg);
                (item.tokens.clone(), prompt, Mode::Video)
            };
            let mask = masking::sample_train_mask(targets.th, targets.tw, rng)?;
            Ok(TrainSample { targets, mask, prompt, mode })
        })
        .collect()
}

/// Masked top-1 accuracy of the conditional model on `samples`.
pub fn masked_accuracy<T: Real>(model: &Model<T>, samples: &[TrainSample]) -> Result<f64> {
    let (mut correct, mut total) = (0, 0);
    for s in samples {
        let (logits, _) = model.forward(&s.input()?, &s.prompt, s.mode)?;
        let (c, t) = stpt::masked_accuracy(&logits, model.config.stpt.vocab, &s.targets, &s.masked_positions());
        correct += c;
        total += t;
    }
    Ok(correct as f64 / total.max(1) as f64)
}

/// Fixed conditional evaluation samples: `per_item` cosine-rate masks for
/// every item, video mode.
pub fn eval_samples<R: Rng + ?Sized>(
    items: &[TrainItem],
    model: &Model<impl Real>,
    per_item: usize,
    rng: &mut R,
) -> Result<Vec<TrainSample>> {
    let pcfg = &model.config.prompt;
    let mut out = Vec::with_capacity(items.len() * per_item);
    for item in items {
        for _ in 0..per_item {
            let mask = masking::sample_train_mask(item.tokens.th, item.tokens.tw, rng)?;
            let prompt = PromptInput::new(item.caption.as_deref(), item.actions.clone(), pcfg);
            out.push(TrainSample { targets: item.tokens.clone(), mask, prompt, mode: Mode::Video });
        }
    }
    Ok(out)
}

/// Stopping and evaluation policy for [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Evaluate every this many steps; `0` disables evaluation.
    pub eval_every: usize,
    pub eval_masks_per_item: usize,
    /// Stop once evaluation accuracy reaches this value.
    pub target_accuracy: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { eval_every: 0, eval_masks_per_item: 4, target_accuracy: None }
    }
}

/// What the per-step callback of [`fit`] sees.
pub struct Progress<'a, T> {
    pub record: &'a LogRecord,
    pub model: &'a Model<T>,
    pub optimizer: &'a AdamW<T>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub steps: usize,
    pub final_loss: f64,
    pub accuracy: Option<f64>,
    pub reached_target: bool,
}

/// Runs up to `cfg.iterations` steps (continuing from `opt.step`), with
/// all randomness drawn from a generator seeded by `cfg.seed`.
pub fn fit<T: Real>(
    model: &mut Model<T>,
    opt: &mut AdamW<T>,
    items: &[TrainItem],
    cfg: &TrainConfig,
    opts: &FitOptions,
    mut on_step: impl FnMut(&Progress<T>) -> Result<()>,
) -> Result<FitReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_e7a1);
    let eval = if opts.eval_every > 0 { eval_samples(items, model, opts.eval_masks_per_item, &mut eval_rng)? } else { Vec::new() };
    let mut report = FitReport { steps: opt.step as usize, final_loss: f64::NAN, accuracy: None, reached_target: false };
    while (opt.step as usize) < cfg.iterations {
        let batch = sample_batch(items, model, cfg, &mut rng)?;
        let stats = train_step(model, opt, &batch, cfg, &mut rng)?;
        let step = opt.step as usize;
        let accuracy = if opts.eval_every > 0 && (step % opts.eval_every == 0 || step == cfg.iterations) {
            Some(masked_accuracy(model, &eval)?)
        } else {
            None
        };
        let mode_mix = stats.image_samples as f64 / batch.len() as f64;
        let record = LogRecord { step, loss: stats.loss, mode_mix, lr: cfg.lr, accuracy };
        on_step(&Progress { record: &record, model, optimizer: opt, accuracy })?;
        report.steps = step;
        report.final_loss = stats.loss;
        if accuracy.is_some() {
            report.accuracy = accuracy;
        }
        if let (Some(a), Some(target)) = (accuracy, opts.target_accuracy) {
            if a >= target {
                report.reached_target = true;
                break;
            }
        }
    }
    Ok(report)
}

/// One line of the JSONL training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub loss: f64,
    pub mode_mix: f64,
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub groups: usize,
    pub entries: Vec<GradEntry>,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    let denom = a.abs().max(n.abs()).max(1e-12);
    (a - n).abs() / denom
}

/// Compares analytic gradients with central differences at sampled
/// coordinates. At least `per_group` coordinates are drawn from every
/// parameter tensor, preferring coordinates the batch actually touches.
pub fn finite_diff_gradcheck<R: Rng + ?Sized>(
    model: &Model<f64>,
    batch: &[TrainSample],
    coords: usize,
    eps: f64,
    rng: &mut R,
) -> Result<GradcheckReport> {
    let (_, grads, _) = batch_loss_and_grads(model, batch)?;
    let named = grads.named();
    let groups = named.iter().filter(|(_, t)| !t.is_empty()).count();
    let per_group = coords.div_ceil(groups).max(1);
    let mut picks = Vec::new();
    for (ti, (_, g)) in named.iter().enumerate() {
        if g.is_empty() {
            continue;
        }
        let live: Vec<usize> = (0..g.len()).filter(|&i| g.data[i] != 0.0).collect();
        let pool = if live.is_empty() { (0..g.len()).collect() } else { live };
        for _ in 0..per_group {
            picks.push((ti, *pool.choose(rng).unwrap()));
        }
    }
    let mut probe = model.clone();
    let mut entries = Vec::with_capacity(picks.len());
    for (ti, idx) in picks {
        let orig = probe.params.named()[ti].1.data[idx];
        let set = |m: &mut Model<f64>, v: f64| {
            let mut k = 0;
            m.params.visit_mut("", &mut |_, t| {
                if k == ti {
                    t.data[idx] = v;
                }
                k += 1;
            });
        };
        set(&mut probe, orig + eps);
        let plus = batch_loss(&probe, batch)?;
        set(&mut probe, orig - eps);
        let minus = batch_loss(&probe, batch)?;
        set(&mut probe, orig);
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = named[ti].1.data[idx];
        entries.push(GradEntry {
            name: named[ti].0.clone(),
            index: idx,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport { max_rel_error, groups, entries })
}

#[cfg(test)]
mod tests;
