//! Command-line front end. Exit codes: 0 success, 1 usage or validation
//! error, 2 runtime error.

use crate::checkpoint;
use crate::data::{self, WorldConfig};
use crate::error::{Error, Result};
use crate::formats;
use crate::inference::{self, DecodeConfig, Geometry, Rect, Selection, Task, TaskInputs};
use crate::model::{Model, ModelConfig};
use crate::params::Params;
use crate::prompt::{ActionTrack, PromptConfig, PromptInput};
use crate::stpt::{Mode, StptConfig};
use crate::tokenizer::{self, TokenGrid};
use crate::training::{self, AdamW, FitOptions, TrainConfig, TrainItem, TrainSample};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const RAW_INDEX: &str = "episodes.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerConfig {
    pub vocab: usize,
    pub patch_size: usize,
    pub seed: u64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig { vocab: 512, patch_size: 8, seed: 0 }
    }
}

/// Every module config in one JSON document; flags override file values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub tokenizer: TokenizerConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let bytes = formats::read_file(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.decode.validate()
    }
}

#[derive(Debug, Parser)]
#[command(name = "maskworld", version, about = "Masked visual-token world model: data, training and generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic episodes (videos, captions, action tracks).
    GenData(GenDataArgs),
    /// Fit a k-means patch codebook to a raw episode directory.
    FitTokenizer(FitTokenizerArgs),
    /// Tokenize a raw episode directory into a training dataset.
    EncodeData(EncodeDataArgs),
    /// Train the model on an encoded dataset.
    Train(TrainArgs),
    /// Generate a video for one task from a checkpoint.
    Generate(GenerateArgs),
    /// Compare analytic and finite-difference gradients in 64-bit mode.
    Gradcheck(GradcheckArgs),
    /// Count decoding steps and forward passes, parallel vs autoregressive.
    BenchDecode(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub episodes: usize,
    /// First episode seed; episode `i` uses `seed + i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Add a controllable agent square.
    #[arg(long)]
    pub agent: bool,
}

#[derive(Debug, Args)]
pub struct FitTokenizerArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Raw episode directory written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EncodeDataArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub codebook: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Encoded dataset directory; it fixes vocabulary, frames and grid.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint, optimizer state included.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// JSONL log file [default: <out>.log.jsonl]
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Total optimizer steps; a resumed run continues up to this count.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluate masked accuracy every N steps (0 = never).
    #[arg(long, default_value_t = 0)]
    pub eval_every: usize,
    /// Stop early once evaluation accuracy reaches this value.
    #[arg(long)]
    pub target_accuracy: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, value_parser = parse_task)]
    pub task: Task,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub codebook: PathBuf,
    #[arg(long)]
    pub prompt: Option<String>,
    /// Source DVID: an image for i2v/a2v, a video for inpaint/stylize.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Inpainting rectangle in pixels, `x,y,width,height`.
    #[arg(long, value_parser = parse_rect)]
    pub region: Option<Rect>,
    /// Fraction of positions to regenerate for stylize.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// DACT action track.
    #[arg(long)]
    pub actions: Option<PathBuf>,
    /// Constant yaw rate, used with --speed instead of --actions.
    #[arg(long, allow_hyphen_values = true)]
    pub yaw: Option<f32>,
    #[arg(long)]
    pub speed: Option<f32>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub guidance: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Commit the most confident tokens over the whole grid instead of per frame.
    #[arg(long)]
    pub global_selection: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Decode report [default: <out> with a .json extension]
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also write the generated token grid (DTOK).
    #[arg(long)]
    pub tokens_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 128)]
    pub coords: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Grid as FRAMESxHEIGHTxWIDTH in tokens.
    #[arg(long, default_value = "8x8x8", value_parser = parse_grid)]
    pub grid: [usize; 3],
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.0)]
    pub guidance: f64,
    #[arg(long, default_value_t = 32)]
    pub channels: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 64)]
    pub vocab: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_rect(s: &str) -> std::result::Result<Rect, String> {
    let v: Vec<usize> = s.split(',').map(|p| p.trim().parse::<usize>()).collect::<std::result::Result<_, _>>().map_err(|e| e.to_string())?;
    match v.as_slice() {
        &[x, y, width, height] => Ok(Rect { x, y, width, height }),
        _ => Err("expected x,y,width,height".into()),
    }
}

fn parse_grid(s: &str) -> std::result::Result<[usize; 3], String> {
    let v: Vec<usize> = s.split('x').map(|p| p.parse::<usize>()).collect::<std::result::Result<_, _>>().map_err(|e| e.to_string())?;
    match v.as_slice() {
        &[n, h, w] if n > 0 && h > 0 && w > 0 => Ok([n, h, w]),
        _ => Err("expected FRAMESxHEIGHTxWIDTH with positive sizes".into()),
    }
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() { 1 } else { 2 }
        }
    }
}

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::FitTokenizer(a) => fit_tokenizer(a),
        Command::EncodeData(a) => encode_data(a),
        Command::Train(a) => train(a),
        Command::Generate(a) => generate(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::BenchDecode(a) => bench(a),
    }
}

fn emit(json: &impl Serialize, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(json)?;
    match out {
        Some(p) => formats::write_file(p, format!("{text}\n").as_bytes()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

/// Index of a raw (untokenized) episode directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawIndex {
    pub version: u32,
    pub world: WorldConfig,
    pub seeds: Vec<u64>,
}

fn raw_paths(dir: &Path, i: usize) -> (PathBuf, PathBuf, PathBuf) {
    (dir.join(format!("episode_{i:04}.dvid")), dir.join(format!("episode_{i:04}.txt")), dir.join(format!("episode_{i:04}.dact")))
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.config.as_deref())?;
    cfg.world.agent |= a.agent;
    cfg.world.validate()?;
    if a.episodes == 0 {
        return Err(Error::invalid("--episodes must be at least 1"));
    }
    let seeds: Vec<u64> = (0..a.episodes as u64).map(|i| a.seed + i).collect();
    for (i, &seed) in seeds.iter().enumerate() {
        let ep = data::generate_episode(&cfg.world, seed)?;
        let (v, c, act) = raw_paths(&a.out, i);
        formats::write_video(&v, &ep.video)?;
        formats::write_file(&c, ep.caption.as_bytes())?;
        formats::write_actions(&act, &ep.actions)?;
    }
    let index = RawIndex { version: 1, world: cfg.world, seeds };
    formats::write_file(&a.out.join(RAW_INDEX), &serde_json::to_vec_pretty(&index)?)?;
    eprintln!("wrote {} episodes to {}", a.episodes, a.out.display());
    Ok(())
}

fn read_raw(dir: &Path) -> Result<(RawIndex, Vec<data::Episode>)> {
    let index: RawIndex = serde_json::from_slice(&formats::read_file(&dir.join(RAW_INDEX))?)?;
    if index.version != 1 {
        return Err(Error::UnsupportedVersion { what: "episode index", found: index.version, expected: 1 });
    }
    let mut episodes = Vec::with_capacity(index.seeds.len());
    for (i, &seed) in index.seeds.iter().enumerate() {
        let (v, c, act) = raw_paths(dir, i);
        let mut ep = data::generate_episode(&index.world, seed)?;
        ep.video = formats::read_video(&v)?;
        ep.caption = String::from_utf8(formats::read_file(&c)?)
            .map_err(|_| Error::Format { what: "caption", reason: format!("{} is not UTF-8", c.display()) })?;
        ep.actions = formats::read_actions(&act)?;
        episodes.push(ep);
    }
    Ok((index, episodes))
}

fn fit_tokenizer(a: FitTokenizerArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.config.as_deref())?.tokenizer;
    cfg.vocab = a.vocab.unwrap_or(cfg.vocab);
    cfg.patch_size = a.patch_size.unwrap_or(cfg.patch_size);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    let (_, episodes) = read_raw(&a.data)?;
    let mut patches = Vec::new();
    for ep in &episodes {
        patches.extend(tokenizer::extract_patches(&ep.video, cfg.patch_size)?);
    }
    let cb = tokenizer::fit_codebook(&patches, cfg.patch_size, cfg.vocab, cfg.seed)?;
    formats::write_codebook(&a.out, &cb)?;
    eprintln!("fitted {} codes on {} patches", cb.vocab, patches.len() / cb.dim());
    Ok(())
}

fn encode_data(a: EncodeDataArgs) -> Result<()> {
    let (index, episodes) = read_raw(&a.data)?;
    let cb = formats::read_codebook(&a.codebook)?;
    let manifest = data::encode_dataset(&index.world, &episodes, &cb, &a.out)?;
    eprintln!("encoded {} episodes into {}", manifest.entries.len(), a.out.display());
    Ok(())
}

/// Fixes the dataset-determined model dimensions.
fn fit_model_to_data(model: &mut ModelConfig, m: &data::DatasetManifest) {
    model.stpt.vocab = m.vocab;
    model.stpt.frames = m.frames;
    model.stpt.grid_h = m.grid[0];
    model.stpt.grid_w = m.grid[1];
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.config.as_deref())?;
    if let Some(v) = a.iterations {
        cfg.train.iterations = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    cfg.train.validate()?;
    if let Some(t) = a.target_accuracy {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid("--target-accuracy must lie in [0, 1]"));
        }
    }
    let (manifest, _, items) = data::load_dataset(&a.data)?;
    fit_model_to_data(&mut cfg.model, &manifest);
    cfg.model.validate()?;

    let (mut model, mut opt) = match &a.resume {
        Some(path) => {
            let ck = checkpoint::load_for(path, &cfg.model)?;
            let opt = ck.optimizer.unwrap_or_else(|| AdamW::new(&ck.model));
            (ck.model, opt)
        }
        None => {
            let model = Model::<f32>::init(cfg.model.clone(), cfg.train.seed)?;
            let opt = AdamW::new(&model);
            (model, opt)
        }
    };
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.jsonl");
        p.into()
    });
    if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut log = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let opts = FitOptions { eval_every: a.eval_every, target_accuracy: a.target_accuracy, ..Default::default() };
    let interval = cfg.train.checkpoint_interval;
    let out = a.out.clone();
    let report = training::fit(&mut model, &mut opt, &items, &cfg.train, &opts, |p| {
        let line = serde_json::to_string(p.record)?;
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        if interval > 0 && p.record.step % interval == 0 {
            checkpoint::save(&out, p.model, p.record.step as u64, Some(p.optimizer))?;
        }
        Ok(())
    })?;
    checkpoint::save(&a.out, &model, opt.step, Some(&opt))?;
    emit(&report, None)
}

fn decode_config(cfg: &mut DecodeConfig, a: &GenerateArgs) {
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.guidance {
        cfg.guidance = v;
    }
    if let Some(v) = a.temperature {
        cfg.temperature = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if a.global_selection {
        cfg.selection = Selection::Global;
    }
}

/// Everything `generate` needs besides file paths.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerateRequest {
    pub task: Task,
    pub prompt: Option<String>,
    pub source: Option<TokenGrid>,
    pub region: Option<Rect>,
    pub ratio: Option<f64>,
    pub actions: Option<ActionTrack>,
    pub decode: DecodeConfig,
}

/// Builds the task grid, decodes it and returns the tokens and report.
pub fn generate_tokens(model: &Model<f32>, patch_size: usize, req: &GenerateRequest) -> Result<(TokenGrid, inference::DecodeReport)> {
    let s = &model.config.stpt;
    let geom = Geometry { frames: s.frames, th: s.grid_h, tw: s.grid_w, patch_size, vocab: s.vocab };
    let inputs = TaskInputs {
        source: req.source.clone(),
        region: req.region,
        ratio: req.ratio,
        actions: req.actions.clone(),
        seed: req.decode.seed,
    };
    let task = inference::build_task_mask(req.task, geom, &inputs)?;
    let actions = task.actions.clone().or_else(|| req.actions.clone());
    let prompt = PromptInput::new(req.prompt.as_deref(), actions, &model.config.prompt);
    let (grid, report) = inference::parallel_decode(model, &task.grid, &prompt, Mode::Video, &req.decode)?;
    debug_assert!(task.known.iter().zip(&grid.tokens).zip(&task.grid.tokens).all(|((&k, a), b)| !k || a == b));
    Ok((grid, report))
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.config.as_deref())?;
    decode_config(&mut cfg.decode, &a);
    cfg.decode.validate()?;
    let cb = formats::read_codebook(&a.codebook)?;
    let ck = checkpoint::load(&a.checkpoint)?;
    if ck.model.config.stpt.vocab != cb.vocab {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint vocabulary {} does not match codebook {}",
            ck.model.config.stpt.vocab, cb.vocab
        )));
    }
    let source = match &a.source {
        Some(p) => Some(tokenizer::encode_video(&formats::read_video(p)?, &cb)?),
        None => None,
    };
    let actions = match (&a.actions, a.yaw, a.speed) {
        (Some(p), _, _) => Some(formats::read_actions(p)?),
        (None, Some(yaw), speed) => Some(ActionTrack::constant(ck.model.config.stpt.frames, yaw, speed.unwrap_or(0.0))),
        (None, None, Some(speed)) => Some(ActionTrack::constant(ck.model.config.stpt.frames, 0.0, speed)),
        (None, None, None) => None,
    };
    let req = GenerateRequest {
        task: a.task,
        prompt: a.prompt.clone(),
        source,
        region: a.region,
        ratio: a.ratio,
        actions,
        decode: cfg.decode,
    };
    let (grid, report) = generate_tokens(&ck.model, cb.patch_size, &req)?;
    let video = tokenizer::decode_tokens(&grid, &cb)?;
    formats::write_video(&a.out, &video)?;
    if let Some(p) = &a.tokens_out {
        formats::write_tokens(p, &grid)?;
    }
    let report_path = a.report.clone().unwrap_or_else(|| a.out.with_extension("json"));
    emit(&report, Some(&report_path))
}

/// Small random model and batch used by `gradcheck`; every parameter
/// group receives gradient.
pub fn gradcheck_fixture(seed: u64) -> Result<(Model<f64>, Vec<TrainSample>)> {
    let config = ModelConfig {
        stpt: StptConfig { layers: 2, channels: 8, heads: 2, vocab: 7, frames: 2, grid_h: 4, grid_w: 4, ..Default::default() },
        prompt: PromptConfig { text_len: 3, text_vocab: 16, text_channels: 4 },
    };
    let mut model = Model::<f64>::init(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    // Move away from the init so every path carries a gradient well above
    // the finite-difference noise floor.
    model.params.visit_mut("", &mut |_, t| {
        t.data.iter_mut().for_each(|v| *v += 0.3 * rng.sample::<f64, _>(StandardNormal));
    });
    let mut batch = Vec::new();
    for (i, mode) in [Mode::Video, Mode::Image, Mode::Video].into_iter().enumerate() {
        let tokens: Vec<u32> = (0..32).map(|j| ((j * 5 + i * 3 + j / 7) % 7) as u32).collect();
        let targets = TokenGrid::new(2, 4, 4, 7, tokens)?;
        let mask = crate::masking::mask_with_rate(4, 4, 0.5, &mut rng)?;
        let prompt = match i {
            0 => PromptInput::new(Some("a red square moving east"), Some(ActionTrack::constant(2, 0.3, -0.5)), &model.config.prompt),
            1 => PromptInput::default(),
            _ => PromptInput::null(),
        };
        batch.push(TrainSample { targets, mask, prompt, mode });
    }
    Ok((model, batch))
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let (model, batch) = gradcheck_fixture(a.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let report = training::finite_diff_gradcheck(&model, &batch, a.coords, a.eps, &mut rng)?;
    emit(&report, a.out.as_deref())?;
    eprintln!("max relative error {:.3e} over {} coordinates in {} groups", report.max_rel_error, report.entries.len(), report.groups);
    if report.max_rel_error >= a.tolerance {
        return Err(Error::invalid(format!("gradient check failed: {:.3e} >= {:.1e}", report.max_rel_error, a.tolerance)));
    }
    Ok(())
}

pub fn bench_model(grid: [usize; 3], channels: usize, layers: usize, vocab: usize, seed: u64) -> Result<Model<f32>> {
    let heads = if channels % 4 == 0 { 4 } else { 1 };
    let stride = if grid[1] % 2 == 0 && grid[2] % 2 == 0 { 2 } else { 1 };
    let config = ModelConfig {
        stpt: StptConfig {
            layers,
            channels,
            heads,
            patch_stride: stride,
            vocab,
            frames: grid[0],
            grid_h: grid[1],
            grid_w: grid[2],
            ..Default::default()
        },
        prompt: PromptConfig::default(),
    };
    Model::init(config, seed)
}

fn bench(a: BenchArgs) -> Result<()> {
    let model = bench_model(a.grid, a.channels, a.layers, a.vocab, a.seed)?;
    let cfg = DecodeConfig { steps: a.steps, guidance: a.guidance, seed: a.seed, ..Default::default() };
    let report = inference::bench_decode(&model, a.grid[0], &cfg)?;
    emit(&report, a.out.as_deref())
}

/// Shorthand used by tests and bindings: tokenized training items straight
/// from episodes.
pub fn items_from_episodes(episodes: &[data::Episode], cb: &tokenizer::Codebook) -> Result<Vec<TrainItem>> {
    episodes
        .iter()
        .map(|e| {
            Ok(TrainItem {
                tokens: tokenizer::encode_video(&e.video, cb)?,
                caption: Some(e.caption.clone()),
                actions: Some(e.actions.clone()),
            })
        })
        .collect()
}
