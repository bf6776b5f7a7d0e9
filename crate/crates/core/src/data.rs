//! Synthetic moving-squares world: deterministic episodes with templated
//! captions and action tracks, plus on-disk dataset layout.
//!
//! Positions are fixed-point integers (`1/SCALE` pixel) so that wall
//! reflection preserves every speed exactly.

use crate::error::{Error, Result};
use crate::formats;
use crate::prompt::ActionTrack;
use crate::tokenizer::{encode_video, Codebook, TokenGrid, Video};
use crate::training::TrainItem;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const SCALE: i64 = 256;
pub const MANIFEST_VERSION: u32 = 1;

pub const PALETTE: [(&str, [u8; 3]); 8] = [
    ("red", [230, 40, 40]),
    ("green", [40, 200, 60]),
    ("blue", [40, 80, 230]),
    ("yellow", [235, 220, 40]),
    ("cyan", [40, 210, 220]),
    ("magenta", [220, 50, 210]),
    ("orange", [245, 140, 30]),
    ("purple", [130, 50, 190]),
];
pub const AGENT_COLOR: (&str, [u8; 3]) = ("white", [255, 255, 255]);
pub const BACKGROUND: [u8; 3] = [0, 0, 0];

pub const DIRECTIONS: [&str; 8] =
    ["east", "northeast", "north", "northwest", "west", "southwest", "south", "southeast"];
/// Unit steps for [`DIRECTIONS`] in image coordinates (y grows downward).
const DIRECTION_STEPS: [(i64, i64); 8] = [(1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1)];
pub const STILL: &str = "nowhere";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Tokenizer patch size the frame must tile.
    pub patch_size: usize,
    pub shape_size: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Per-axis pixel speed range of the passive squares.
    pub min_speed: i64,
    pub max_speed: i64,
    pub agent: bool,
    pub agent_size: usize,
    /// Range of the constant yaw rate (radians/frame) drawn for the agent.
    pub max_yaw: f32,
    /// Agent speed in token-grid cells per frame.
    pub agent_speed: f32,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            frames: 8,
            height: 64,
            width: 64,
            patch_size: 8,
            shape_size: 16,
            min_shapes: 1,
            max_shapes: 3,
            min_speed: 1,
            max_speed: 4,
            agent: false,
            agent_size: 16,
            max_yaw: 0.4,
            agent_speed: 0.5,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::config("world.frames", "must be at least 1"));
        }
        if self.patch_size == 0 || self.height % self.patch_size != 0 || self.width % self.patch_size != 0 {
            return Err(Error::config(
                "world.patch_size",
                format!("{}x{} frame is not divisible by {}", self.height, self.width, self.patch_size),
            ));
        }
        if self.shape_size == 0 || self.shape_size > self.height.min(self.width) {
            return Err(Error::config("world.shape_size", format!("{} does not fit the frame", self.shape_size)));
        }
        if self.agent && (self.agent_size == 0 || self.agent_size > self.height.min(self.width)) {
            return Err(Error::config("world.agent_size", format!("{} does not fit the frame", self.agent_size)));
        }
        if self.min_shapes > self.max_shapes || self.max_shapes > 3 || (self.max_shapes == 0 && !self.agent) {
            return Err(Error::config("world.max_shapes", "need between 1 and 3 shapes"));
        }
        let limit = (self.height.min(self.width) - self.shape_size) as i64;
        if self.min_speed < 0 || self.min_speed > self.max_speed || self.max_speed > limit.max(0) {
            return Err(Error::config(
                "world.max_speed",
                format!("speed range {}..={} invalid for travel span {}", self.min_speed, self.max_speed, limit),
            ));
        }
        if !self.max_yaw.is_finite() || self.max_yaw < 0.0 || !self.agent_speed.is_finite() || self.agent_speed < 0.0 {
            return Err(Error::config("world.max_yaw", "agent controls must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex::encode(&Sha256::digest(serde_json::to_vec(self).expect("config serializes"))[..8])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeMeta {
    pub color: String,
    pub rgb: [u8; 3],
    /// Top-left corner, fixed point.
    pub x0: i64,
    pub y0: i64,
    pub vx: i64,
    pub vy: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMeta {
    pub x0: i64,
    pub y0: i64,
    /// Initial heading in radians, counter-clockwise from east with y up.
    pub heading0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub seed: u64,
    pub shapes: Vec<ShapeMeta>,
    pub agent: Option<AgentMeta>,
    /// Fixed-point top-left corner of every shape (agent last) per frame.
    pub trajectories: Vec<Vec<(i64, i64)>>,
    /// Agent heading per frame, wrapped to `[0, 2pi)`.
    pub headings: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub video: Video,
    pub caption: String,
    pub actions: ActionTrack,
    pub meta: EpisodeMeta,
}

/// 8-way direction word for a velocity in image coordinates.
pub fn direction_word(vx: f64, vy: f64) -> &'static str {
    if vx == 0.0 && vy == 0.0 {
        return STILL;
    }
    let angle = (-vy).atan2(vx).rem_euclid(std::f64::consts::TAU);
    let sector = ((angle / std::f64::consts::FRAC_PI_4).round() as usize) % 8;
    DIRECTIONS[sector]
}

/// Sign pattern `(sx, sy)` of a direction word, image coordinates.
pub fn direction_signs(word: &str) -> Option<(i64, i64)> {
    if word == STILL {
        return Some((0, 0));
    }
    DIRECTIONS.iter().position(|&d| d == word).map(|i| DIRECTION_STEPS[i])
}

pub fn caption_for(clauses: &[(&str, &str)]) -> String {
    clauses.iter().map(|(c, d)| format!("a {c} square moving {d}")).collect::<Vec<_>>().join(" and ")
}

/// Inverse of [`caption_for`]: `(color, direction)` per clause.
pub fn parse_caption(caption: &str) -> Result<Vec<(String, String)>> {
    caption
        .split(" and ")
        .map(|clause| {
            let words: Vec<&str> = clause.split(' ').collect();
            match words.as_slice() {
                ["a", color, "square", "moving", dir] if direction_signs(dir).is_some() => {
                    Ok((color.to_string(), dir.to_string()))
                }
                _ => Err(Error::Format { what: "caption", reason: format!("unparseable clause `{clause}`") }),
            }
        })
        .collect()
}

fn reflect(pos: &mut i64, vel: &mut i64, limit: i64) {
    *pos += *vel;
    if *pos < 0 {
        *pos = -*pos;
        *vel = -*vel;
    } else if *pos > limit {
        *pos = 2 * limit - *pos;
        *vel = -*vel;
    }
}

/// Advances the agent by one action: heading first, then position, with the
/// corner clamped to the frame.
pub fn agent_step(pos: (i64, i64), heading: f64, action: (f32, f32), cfg: &WorldConfig) -> ((i64, i64), f64) {
    let heading = (heading + action.0 as f64).rem_euclid(std::f64::consts::TAU);
    let dist = action.1 as f64 * (cfg.patch_size as i64 * SCALE) as f64;
    let dx = (dist * heading.cos()).round() as i64;
    let dy = -(dist * heading.sin()).round() as i64;
    let xl = (cfg.width - cfg.agent_size) as i64 * SCALE;
    let yl = (cfg.height - cfg.agent_size) as i64 * SCALE;
    (((pos.0 + dx).clamp(0, xl), (pos.1 + dy).clamp(0, yl)), heading)
}

/// Replays an action track from an initial agent state; entry `n` is the
/// state in frame `n`, produced by `actions[n]` for `n >= 1`.
pub fn replay_agent(start: (i64, i64), heading0: f64, actions: &ActionTrack, cfg: &WorldConfig) -> Vec<((i64, i64), f64)> {
    let mut out = vec![(start, heading0)];
    for n in 1..actions.len() {
        let (p, h) = out[n - 1];
        out.push(agent_step(p, h, actions.steps[n], cfg));
    }
    out
}

fn draw(pixels: &mut [u8], cfg: &WorldConfig, frame: usize, corner: (i64, i64), size: usize, rgb: [u8; 3]) {
    let px = ((corner.0 + SCALE / 2).div_euclid(SCALE)) as usize;
    let py = ((corner.1 + SCALE / 2).div_euclid(SCALE)) as usize;
    let base = frame * cfg.height * cfg.width * 3;
    for y in py..(py + size).min(cfg.height) {
        for x in px..(px + size).min(cfg.width) {
            let o = base + (y * cfg.width + x) * 3;
            pixels[o..o + 3].copy_from_slice(&rgb);
        }
    }
}

pub fn generate_episode(cfg: &WorldConfig, seed: u64) -> Result<Episode> {
    generate_episode_with_actions(cfg, seed, None)
}

/// Like [`generate_episode`] but with an explicit agent action track.
pub fn generate_episode_with_actions(cfg: &WorldConfig, seed: u64, actions: Option<ActionTrack>) -> Result<Episode> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_shapes = rng.random_range(cfg.min_shapes..=cfg.max_shapes);
    let colors = index::sample(&mut rng, PALETTE.len(), n_shapes).into_vec();
    let xl = (cfg.width - cfg.shape_size) as i64 * SCALE;
    let yl = (cfg.height - cfg.shape_size) as i64 * SCALE;
    let shapes: Vec<ShapeMeta> = colors
        .into_iter()
        .map(|c| {
            let speed = rng.random_range(cfg.min_speed..=cfg.max_speed);
            let (sx, sy) = DIRECTION_STEPS[rng.random_range(0..8)];
            ShapeMeta {
                color: PALETTE[c].0.to_string(),
                rgb: PALETTE[c].1,
                x0: rng.random_range(0..=xl / SCALE) * SCALE,
                y0: rng.random_range(0..=yl / SCALE) * SCALE,
                vx: sx * speed * SCALE,
                vy: sy * speed * SCALE,
            }
        })
        .collect();

    let mut agent = None;
    let mut actions = actions;
    if cfg.agent {
        let axl = (cfg.width - cfg.agent_size) as i64;
        let ayl = (cfg.height - cfg.agent_size) as i64;
        let heading0 = rng.random_range(0..8) as f64 * std::f64::consts::FRAC_PI_4;
        let x0 = rng.random_range(axl / 4..=axl - axl / 4) * SCALE;
        let y0 = rng.random_range(ayl / 4..=ayl - ayl / 4) * SCALE;
        agent = Some(AgentMeta { x0, y0, heading0 });
        let yaw = if cfg.max_yaw > 0.0 { rng.random_range(-cfg.max_yaw..=cfg.max_yaw) } else { 0.0 };
        actions.get_or_insert_with(|| ActionTrack::constant(cfg.frames, yaw, cfg.agent_speed));
    }
    let actions = actions.unwrap_or_else(|| ActionTrack::constant(cfg.frames, 0.0, 0.0));
    if actions.len() != cfg.frames {
        return Err(Error::ShapeMismatch(format!("action track has {} steps for {} frames", actions.len(), cfg.frames)));
    }

    let mut state: Vec<(i64, i64, i64, i64)> = shapes.iter().map(|s| (s.x0, s.y0, s.vx, s.vy)).collect();
    let agent_path = agent.as_ref().map(|a| replay_agent((a.x0, a.y0), a.heading0, &actions, cfg));
    let mut pixels = Vec::with_capacity(cfg.frames * cfg.height * cfg.width * 3);
    for _ in 0..cfg.frames * cfg.height * cfg.width {
        pixels.extend_from_slice(&BACKGROUND);
    }
    let mut trajectories = vec![Vec::with_capacity(cfg.frames); shapes.len() + agent.is_some() as usize];
    let mut headings = Vec::new();
    for n in 0..cfg.frames {
        if n > 0 {
            for s in state.iter_mut() {
                reflect(&mut s.0, &mut s.2, xl);
                reflect(&mut s.1, &mut s.3, yl);
            }
        }
        for (i, (s, meta)) in state.iter().zip(&shapes).enumerate() {
            trajectories[i].push((s.0, s.1));
            draw(&mut pixels, cfg, n, (s.0, s.1), cfg.shape_size, meta.rgb);
        }
        if let Some(path) = &agent_path {
            let (p, h) = path[n];
            trajectories[shapes.len()].push(p);
            headings.push(h);
            draw(&mut pixels, cfg, n, p, cfg.agent_size, AGENT_COLOR.1);
        }
    }

    let mut clauses: Vec<(&str, &str)> =
        shapes.iter().map(|s| (s.color.as_str(), direction_word(s.vx as f64, s.vy as f64))).collect();
    if let Some(a) = &agent {
        clauses.push((AGENT_COLOR.0, direction_word(a.heading0.cos(), -a.heading0.sin())));
    }
    let caption = caption_for(&clauses);
    let video = Video::new(cfg.frames, cfg.height, cfg.width, pixels)?;
    let meta = EpisodeMeta { seed, shapes, agent, trajectories, headings };
    Ok(Episode { video, caption, actions, meta })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub video: PathBuf,
    pub tokens: PathBuf,
    pub caption: String,
    pub caption_file: PathBuf,
    pub actions: PathBuf,
}

/// Index of an encoded dataset; paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub codebook: PathBuf,
    pub config_hash: String,
    pub frames: usize,
    pub grid: [usize; 2],
    pub vocab: usize,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CODEBOOK_FILE: &str = "codebook.dcbk";

/// Tokenizes `episodes` and writes videos, tokens, captions, actions and
/// `manifest.json` into `out`.
pub fn encode_dataset(world: &WorldConfig, episodes: &[Episode], cb: &Codebook, out: &Path) -> Result<DatasetManifest> {
    let cb_bytes = formats::codebook_to_bytes(cb)?;
    formats::write_file(&out.join(CODEBOOK_FILE), &cb_bytes)?;
    let mut entries = Vec::with_capacity(episodes.len());
    let mut shape = None;
    for (id, ep) in episodes.iter().enumerate() {
        let tokens = encode_video(&ep.video, cb)?;
        let dims = (tokens.frames, tokens.th, tokens.tw);
        if *shape.get_or_insert(dims) != dims {
            return Err(Error::ShapeMismatch(format!("episode {id} token grid {dims:?} differs from {:?}", shape.unwrap())));
        }
        let entry = ManifestEntry {
            id,
            video: format!("episode_{id:04}.dvid").into(),
            tokens: format!("episode_{id:04}.dtok").into(),
            caption: ep.caption.clone(),
            caption_file: format!("episode_{id:04}.txt").into(),
            actions: format!("episode_{id:04}.dact").into(),
        };
        formats::write_video(&out.join(&entry.video), &ep.video)?;
        formats::write_tokens(&out.join(&entry.tokens), &tokens)?;
        formats::write_file(&out.join(&entry.caption_file), ep.caption.as_bytes())?;
        formats::write_actions(&out.join(&entry.actions), &ep.actions)?;
        entries.push(entry);
    }
    let (frames, th, tw) = shape.unwrap_or((world.frames, 0, 0));
    let mut h = Sha256::new();
    h.update(world.hash().as_bytes());
    h.update(&cb_bytes);
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        codebook: CODEBOOK_FILE.into(),
        config_hash: hex::encode(&h.finalize()[..8]),
        frames,
        grid: [th, tw],
        vocab: cb.vocab,
        entries,
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    formats::write_file(&out.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let m: DatasetManifest = serde_json::from_slice(&formats::read_file(path)?)?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::UnsupportedVersion { what: "manifest", found: m.version, expected: MANIFEST_VERSION });
    }
    Ok(m)
}

/// Loads a dataset directory (or manifest path) as training items,
/// checking every token grid against the codebook and manifest.
pub fn load_dataset(path: &Path) -> Result<(DatasetManifest, Codebook, Vec<TrainItem>)> {
    let (dir, file) = if path.is_dir() { (path.to_path_buf(), path.join(MANIFEST_FILE)) } else {
        (path.parent().map(Path::to_path_buf).unwrap_or_default(), path.to_path_buf())
    };
    let m = read_manifest(&file)?;
    let cb = formats::read_codebook(&dir.join(&m.codebook))?;
    if cb.vocab != m.vocab {
        return Err(Error::ShapeMismatch(format!("codebook vocab {} vs manifest {}", cb.vocab, m.vocab)));
    }
    let items = m
        .entries
        .iter()
        .map(|e| {
            let tokens: TokenGrid = formats::read_tokens(&dir.join(&e.tokens))?;
            if tokens.vocab != cb.vocab || (tokens.frames, tokens.th, tokens.tw) != (m.frames, m.grid[0], m.grid[1]) {
                return Err(Error::ShapeMismatch(format!("{} does not match the manifest", e.tokens.display())));
            }
            let actions = formats::read_actions(&dir.join(&e.actions))?;
            Ok(TrainItem { tokens, caption: Some(e.caption.clone()), actions: Some(actions) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((m, cb, items))
}
