//! Decoding: classifier-free guidance, confidence-ordered parallel
//! unmasking, a one-token-per-pass autoregressive baseline, and the task
//! masks that seed generation.

use crate::error::{Error, Result};
use crate::linalg::{self, Real};
use crate::masking::inference_unmask_counts;
use crate::model::Model;
use crate::prompt::{ActionTrack, PromptEmbedding, PromptInput};
use crate::stpt::{argmax, Mode};
use crate::tokenizer::TokenGrid;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// How unmask counts are allotted across frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Every frame follows its own schedule, so frames progress together.
    #[default]
    PerFrame,
    /// One schedule over all masked positions of the grid.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub steps: usize,
    /// Guidance scale; `0` disables the unconditional pass.
    pub guidance: f64,
    /// Initial sampling temperature, annealed linearly to zero.
    pub temperature: f64,
    /// Adds Gumbel noise, scaled by the current temperature, to the
    /// confidence scores.
    pub anneal_noise: bool,
    pub seed: u64,
    pub selection: Selection,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { steps: 10, guidance: 0.0, temperature: 1.0, anneal_noise: true, seed: 0, selection: Selection::PerFrame }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("decode.steps", "must be at least 1"));
        }
        if !(self.guidance >= 0.0) || !self.guidance.is_finite() {
            return Err(Error::config("decode.guidance", format!("must be >= 0, got {}", self.guidance)));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::config("decode.temperature", format!("must be >= 0, got {}", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeReport {
    pub strategy: String,
    pub steps: usize,
    pub forward_passes: usize,
    /// Tokens committed at each step, summed over frames.
    pub unmasked_per_step: Vec<usize>,
    pub wall_clock_ms: f64,
}

/// `g = (1 + beta) c - beta u`, evaluated as `c + beta (c - u)` so that
/// `beta = 0` and `c = u` both return `c` exactly.
pub fn cfg_logits<T: Real>(c: &[T], u: &[T], beta: f64) -> Result<Vec<T>> {
    if c.len() != u.len() {
        return Err(Error::ShapeMismatch(format!("conditional {} vs unconditional {} logits", c.len(), u.len())));
    }
    let b = T::lit(beta);
    Ok(c.iter().zip(u).map(|(&ci, &ui)| ci + b * (ci - ui)).collect())
}

fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Uniform on the open interval (0, 1).
    let u = (rng.random::<u64>() >> 11) as f64 * (1.0 / (1u64 << 53) as f64) + 0.5 / (1u64 << 53) as f64;
    -(-u.ln()).ln()
}

/// Sample from `softmax(row / temperature)` (argmax when the temperature is
/// zero), returning the token and its log-probability under `softmax(row)`.
fn sample_token<T: Real, R: Rng + ?Sized>(row: &[T], temperature: f64, rng: &mut R) -> (usize, f64) {
    let token = if temperature > 0.0 {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (i, &z) in row.iter().enumerate() {
            let v = z.to_f64().unwrap() / temperature + gumbel(rng);
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        best
    } else {
        argmax(row)
    };
    let lse = linalg::log_sum_exp(row).to_f64().unwrap();
    (token, row[token].to_f64().unwrap() - lse)
}

/// Evaluates the guided logits for the current grid, counting passes.
struct Guided<'a, T> {
    model: &'a Model<T>,
    cond: PromptEmbedding<T>,
    uncond: Option<PromptEmbedding<T>>,
    beta: f64,
    mode: Mode,
    passes: usize,
}

impl<'a, T: Real> Guided<'a, T> {
    fn new(model: &'a Model<T>, prompt: &PromptInput, frames: usize, mode: Mode, beta: f64) -> Result<Self> {
        let cond = model.prompt(prompt, frames)?.0;
        let uncond = if beta > 0.0 { Some(model.null_prompt(frames)?) } else { None };
        Ok(Guided { model, cond, uncond, beta, mode, passes: 0 })
    }

    fn logits(&mut self, grid: &TokenGrid) -> Result<Vec<T>> {
        let c = self.model.logits(grid, &self.cond, self.mode)?;
        self.passes += 1;
        match &self.uncond {
            None => Ok(c),
            Some(null) => {
                let u = self.model.logits(grid, null, self.mode)?;
                self.passes += 1;
                cfg_logits(&c, &u, self.beta)
            }
        }
    }
}

/// Per-step commit counts for every selection group of the grid.
fn plan(init: &TokenGrid, cfg: &DecodeConfig) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let mask = init.mask_id();
    let per = init.th * init.tw;
    let groups: Vec<Vec<usize>> = match cfg.selection {
        Selection::PerFrame => (0..init.frames)
            .map(|n| (n * per..(n + 1) * per).filter(|&i| init.tokens[i] == mask).collect())
            .collect(),
        Selection::Global => vec![(0..init.len()).filter(|&i| init.tokens[i] == mask).collect()],
    };
    groups
        .into_iter()
        .filter(|g| !g.is_empty())
        .map(|g| Ok((inference_unmask_counts(g.len(), cfg.steps)?.counts, g)))
        .collect()
}

/// Iterative parallel decoding: each step predicts every masked position,
/// then commits the most confident candidates according to the cosine
/// schedule. Known tokens are never resampled.
pub fn parallel_decode<T: Real>(
    model: &Model<T>,
    init: &TokenGrid,
    prompt: &PromptInput,
    mode: Mode,
    cfg: &DecodeConfig,
) -> Result<(TokenGrid, DecodeReport)> {
    cfg.validate()?;
    let start = Instant::now();
    if init.masked_count() == 0 {
        return Err(Error::invalid("parallel decoding needs at least one masked position"));
    }
    let plan = plan(init, cfg)?;
    let vocab = model.config.stpt.vocab;
    let mask = init.mask_id();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut guided = Guided::new(model, prompt, init.frames, mode, cfg.guidance)?;
    let mut grid = init.clone();
    let mut unmasked_per_step = Vec::with_capacity(cfg.steps);
    for t in 1..=cfg.steps {
        let temperature = cfg.temperature * (1.0 - t as f64 / cfg.steps as f64);
        let noise = if cfg.anneal_noise { temperature } else { 0.0 };
        let logits = guided.logits(&grid)?;
        let mut candidates = vec![(0u32, f64::NEG_INFINITY); grid.len()];
        for i in 0..grid.len() {
            if grid.tokens[i] == mask {
                let (tok, logp) = sample_token(&logits[i * vocab..(i + 1) * vocab], temperature, &mut rng);
                let conf = if noise > 0.0 { logp + noise * gumbel(&mut rng) } else { logp };
                candidates[i] = (tok as u32, conf);
            }
        }
        let mut committed = 0;
        for (counts, positions) in &plan {
            let mut open: Vec<usize> = positions.iter().copied().filter(|&i| grid.tokens[i] == mask).collect();
            open.sort_by(|&a, &b| candidates[b].1.total_cmp(&candidates[a].1).then(a.cmp(&b)));
            for &i in open.iter().take(counts[t - 1]) {
                grid.tokens[i] = candidates[i].0;
            }
            committed += counts[t - 1];
        }
        unmasked_per_step.push(committed);
    }
    debug_assert_eq!(grid.masked_count(), 0);
    let report = DecodeReport {
        strategy: "parallel".into(),
        steps: cfg.steps,
        forward_passes: guided.passes,
        unmasked_per_step,
        wall_clock_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok((grid, report))
}

/// Baseline: one forward pass per masked position, visited in
/// (frame, row, col) order.
pub fn autoregressive_decode<T: Real>(
    model: &Model<T>,
    init: &TokenGrid,
    prompt: &PromptInput,
    mode: Mode,
    cfg: &DecodeConfig,
) -> Result<(TokenGrid, DecodeReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let vocab = model.config.stpt.vocab;
    let mask = init.mask_id();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut guided = Guided::new(model, prompt, init.frames, mode, cfg.guidance)?;
    let mut grid = init.clone();
    let order: Vec<usize> = (0..grid.len()).filter(|&i| grid.tokens[i] == mask).collect();
    for &i in &order {
        let logits = guided.logits(&grid)?;
        let (tok, _) = sample_token(&logits[i * vocab..(i + 1) * vocab], cfg.temperature, &mut rng);
        grid.tokens[i] = tok as u32;
    }
    let report = DecodeReport {
        strategy: "autoregressive".into(),
        steps: order.len(),
        forward_passes: guided.passes,
        unmasked_per_step: vec![1; order.len()],
        wall_clock_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok((grid, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    T2v,
    I2v,
    Inpaint,
    Stylize,
    A2v,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t2v" => Ok(Task::T2v),
            "i2v" => Ok(Task::I2v),
            "inpaint" => Ok(Task::Inpaint),
            "stylize" => Ok(Task::Stylize),
            "a2v" => Ok(Task::A2v),
            other => Err(Error::invalid(format!("unknown task `{other}`"))),
        }
    }
}

/// Pixel rectangle `(x, y, width, height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Shape of the grid to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub frames: usize,
    pub th: usize,
    pub tw: usize,
    pub patch_size: usize,
    pub vocab: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskInputs {
    /// Source tokens: an image (frame 0 is used) or a whole video.
    pub source: Option<TokenGrid>,
    pub region: Option<Rect>,
    pub ratio: Option<f64>,
    pub actions: Option<ActionTrack>,
    pub seed: u64,
}

/// Initial grid for a task, the positions that must be preserved, and the
/// actions to route into the prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMask {
    pub grid: TokenGrid,
    pub known: Vec<bool>,
    pub actions: Option<ActionTrack>,
}

fn source_video(inputs: &TaskInputs, geom: &Geometry) -> Result<TokenGrid> {
    let src = inputs.source.clone().ok_or(Error::MissingInput("source"))?;
    if (src.frames, src.th, src.tw, src.vocab) != (geom.frames, geom.th, geom.tw, geom.vocab) {
        return Err(Error::ShapeMismatch(format!(
            "source grid {}x{}x{} does not match {}x{}x{}",
            src.frames, src.th, src.tw, geom.frames, geom.th, geom.tw
        )));
    }
    if src.masked_count() > 0 {
        return Err(Error::invalid("source grid contains mask tokens"));
    }
    Ok(src)
}

fn first_frame_grid(inputs: &TaskInputs, geom: &Geometry) -> Result<TokenGrid> {
    let src = inputs.source.as_ref().ok_or(Error::MissingInput("source"))?;
    if (src.th, src.tw, src.vocab) != (geom.th, geom.tw, geom.vocab) {
        return Err(Error::ShapeMismatch(format!(
            "source image {}x{} does not match {}x{}",
            src.th, src.tw, geom.th, geom.tw
        )));
    }
    let per = geom.th * geom.tw;
    let mut grid = TokenGrid::masked(geom.frames, geom.th, geom.tw, geom.vocab);
    grid.tokens[..per].copy_from_slice(&src.tokens[..per]);
    if grid.tokens[..per].contains(&grid.mask_id()) {
        return Err(Error::invalid("source image contains mask tokens"));
    }
    Ok(grid)
}

/// Builds the initial token grid for one of the five generation tasks.
pub fn build_task_mask(task: Task, geom: Geometry, inputs: &TaskInputs) -> Result<TaskMask> {
    let per = geom.th * geom.tw;
    let (grid, actions) = match task {
        Task::T2v => (TokenGrid::masked(geom.frames, geom.th, geom.tw, geom.vocab), None),
        Task::I2v => (first_frame_grid(inputs, &geom)?, None),
        Task::A2v => {
            let actions = inputs.actions.clone().ok_or(Error::MissingInput("actions"))?;
            if actions.len() != geom.frames {
                return Err(Error::ShapeMismatch(format!(
                    "action track has {} steps for {} frames",
                    actions.len(),
                    geom.frames
                )));
            }
            (first_frame_grid(inputs, &geom)?, Some(actions))
        }
        Task::Inpaint => {
            let region = inputs.region.ok_or(Error::MissingInput("region"))?;
            let mut grid = source_video(inputs, &geom)?;
            let f = geom.patch_size;
            let mask = grid.mask_id();
            for r in 0..geom.th {
                for c in 0..geom.tw {
                    let hit_x = c * f < region.x + region.width && region.x < (c + 1) * f;
                    let hit_y = r * f < region.y + region.height && region.y < (r + 1) * f;
                    if hit_x && hit_y {
                        for n in 0..geom.frames {
                            grid.tokens[n * per + r * geom.tw + c] = mask;
                        }
                    }
                }
            }
            (grid, None)
        }
        Task::Stylize => {
            let ratio = inputs.ratio.ok_or(Error::MissingInput("ratio"))?;
            if !(0.0..=1.0).contains(&ratio) {
                return Err(Error::invalid(format!("stylize ratio {ratio} outside [0, 1]")));
            }
            let mut grid = source_video(inputs, &geom)?;
            let count = (ratio * per as f64 + 0.5).floor() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(inputs.seed);
            let mask = grid.mask_id();
            for p in index::sample(&mut rng, per, count.min(per)) {
                for n in 0..geom.frames {
                    grid.tokens[n * per + p] = mask;
                }
            }
            (grid, None)
        }
    };
    let known = grid.tokens.iter().map(|&t| t != grid.mask_id()).collect();
    Ok(TaskMask { grid, known, actions })
}

/// Step and pass counts of both decoders on one fully masked grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub grid: [usize; 3],
    pub masked_tokens: usize,
    pub parallel: DecodeReport,
    pub autoregressive: DecodeReport,
    /// Typical denoising step count of diffusion samplers, shown for
    /// reference only.
    pub diffusion_reference_steps: usize,
    pub pass_ratio: f64,
}

pub const DIFFUSION_REFERENCE_STEPS: usize = 30;

pub fn bench_decode<T: Real>(model: &Model<T>, frames: usize, cfg: &DecodeConfig) -> Result<BenchReport> {
    let s = &model.config.stpt;
    let init = TokenGrid::masked(frames, s.grid_h, s.grid_w, s.vocab);
    let prompt = PromptInput::default();
    let (_, parallel) = parallel_decode(model, &init, &prompt, Mode::Video, cfg)?;
    let (_, autoregressive) = autoregressive_decode(model, &init, &prompt, Mode::Video, cfg)?;
    Ok(BenchReport {
        grid: [frames, s.grid_h, s.grid_w],
        masked_tokens: init.len(),
        pass_ratio: autoregressive.forward_passes as f64 / parallel.forward_passes as f64,
        parallel,
        autoregressive,
        diffusion_reference_steps: DIFFUSION_REFERENCE_STEPS,
    })
}

#[cfg(test)]
mod tests;
