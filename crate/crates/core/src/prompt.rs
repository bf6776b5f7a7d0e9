//! Multimodal prompt construction: hashed text embeddings, an action MLP
//! and learned null rows, concatenated into one `N x (K+1) x C` tensor
//! per sample.

use crate::error::{Error, Result};
use crate::linalg::{self, Real};
use crate::params::{impl_params, Linear, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Per-frame `(yaw_rate, speed)` controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionTrack {
    pub steps: Vec<(f32, f32)>,
}

impl ActionTrack {
    pub fn constant(frames: usize, yaw_rate: f32, speed: f32) -> Self {
        ActionTrack { steps: vec![(yaw_rate, speed); frames] }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptConfig {
    /// Fixed number of text rows `K`.
    pub text_len: usize,
    /// Hash buckets for text words; one extra pad row follows them.
    pub text_vocab: usize,
    /// Width of the raw text table before projection.
    pub text_channels: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig { text_len: 8, text_vocab: 4096, text_channels: 64 }
    }
}

impl PromptConfig {
    pub fn rows(&self) -> usize {
        self.text_len + 1
    }

    pub fn pad_id(&self) -> usize {
        self.text_vocab
    }

    pub fn validate(&self) -> Result<()> {
        if self.text_len == 0 {
            return Err(Error::config("prompt.text_len", "must be at least 1"));
        }
        if self.text_vocab == 0 {
            return Err(Error::config("prompt.text_vocab", "must be at least 1"));
        }
        if self.text_channels == 0 {
            return Err(Error::config("prompt.text_channels", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptParams<T> {
    /// `(text_vocab + 1) x C_T`; the last row is the pad row.
    pub text_table: Tensor<T>,
    /// One `C_T x C_V` projection per text row: `K x C_T x C_V`.
    pub text_proj_w: Tensor<T>,
    pub text_proj_b: Tensor<T>,
    pub action_in: Linear<T>,
    pub action_out: Linear<T>,
    pub null_text: Tensor<T>,
    pub null_action: Tensor<T>,
}

impl_params!(PromptParams { text_table, text_proj_w, text_proj_b, null_text, null_action } nested { action_in, action_out });

impl<T: Real> PromptParams<T> {
    pub fn init<R: Rng + ?Sized>(cfg: &PromptConfig, channels: usize, rng: &mut R) -> Self {
        // Unit-scale prompt rows; two stacked small-std layers start near zero.
        let proj_std = 1.0 / (cfg.text_channels as f64).sqrt();
        PromptParams {
            text_table: Tensor::trunc_normal(&[cfg.text_vocab + 1, cfg.text_channels], 1.0, rng),
            text_proj_w: Tensor::trunc_normal(&[cfg.text_len, cfg.text_channels, channels], proj_std, rng),
            text_proj_b: Tensor::zeros(&[cfg.text_len, channels]),
            action_in: Linear::init(2, channels, 1.0, rng),
            action_out: Linear::init(channels, channels, 1.0 / (channels as f64).sqrt(), rng),
            null_text: Tensor::trunc_normal(&[cfg.text_len, channels], 1.0, rng),
            null_action: Tensor::trunc_normal(&[channels], 1.0, rng),
        }
    }

    pub fn zeros(cfg: &PromptConfig, channels: usize) -> Self {
        PromptParams {
            text_table: Tensor::zeros(&[cfg.text_vocab + 1, cfg.text_channels]),
            text_proj_w: Tensor::zeros(&[cfg.text_len, cfg.text_channels, channels]),
            text_proj_b: Tensor::zeros(&[cfg.text_len, channels]),
            action_in: Linear::zeros(2, channels),
            action_out: Linear::zeros(channels, channels),
            null_text: Tensor::zeros(&[cfg.text_len, channels]),
            null_action: Tensor::zeros(&[channels]),
        }
    }

    fn text_len(&self) -> usize {
        self.text_proj_w.shape[0]
    }

    fn text_channels(&self) -> usize {
        self.text_proj_w.shape[1]
    }

    pub fn channels(&self) -> usize {
        self.text_proj_w.shape[2]
    }
}

/// FNV-1a, 64-bit.
pub fn hash_word(word: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in word.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lowercase alphanumeric words hashed into `[0, text_vocab)`, truncated
/// or padded (with `pad_id`) to exactly `text_len` ids.
pub fn text_token_ids(text: &str, cfg: &PromptConfig) -> Vec<usize> {
    let lower = text.to_lowercase();
    let mut ids: Vec<usize> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .take(cfg.text_len)
        .map(|w| (hash_word(w) % cfg.text_vocab as u64) as usize)
        .collect();
    ids.resize(cfg.text_len, cfg.pad_id());
    ids
}

pub struct TextCache<T> {
    ids: Vec<usize>,
    rows: Vec<T>,
}

/// Looks up the `K` text rows and projects each with its own projection.
/// Returns `K x C_V`.
pub fn embed_text<T: Real>(ids: &[usize], p: &PromptParams<T>) -> Result<(Vec<T>, TextCache<T>)> {
    let (k, ct, cv) = (p.text_len(), p.text_channels(), p.channels());
    if ids.len() != k {
        return Err(Error::ShapeMismatch(format!("expected {k} text ids, got {}", ids.len())));
    }
    let vocab_rows = p.text_table.shape[0];
    let mut rows = Vec::with_capacity(k * ct);
    for &id in ids {
        if id >= vocab_rows {
            return Err(Error::invalid(format!("text id {id} outside table of {vocab_rows} rows")));
        }
        rows.extend_from_slice(&p.text_table.data[id * ct..(id + 1) * ct]);
    }
    let mut out = p.text_proj_b.data.clone();
    for i in 0..k {
        linalg::gemm(
            T::one(),
            linalg::View::new(&rows[i * ct..(i + 1) * ct], 1, ct),
            linalg::View::new(&p.text_proj_w.data[i * ct * cv..(i + 1) * ct * cv], ct, cv),
            T::one(),
            &mut out[i * cv..(i + 1) * cv],
            cv,
        );
    }
    Ok((out, TextCache { ids: ids.to_vec(), rows }))
}

fn embed_text_backward<T: Real>(d_out: &[T], cache: &TextCache<T>, p: &PromptParams<T>, g: &mut PromptParams<T>) {
    let (k, ct, cv) = (p.text_len(), p.text_channels(), p.channels());
    linalg::add_in_place(&mut g.text_proj_b.data, d_out);
    for i in 0..k {
        let dy = &d_out[i * cv..(i + 1) * cv];
        let x = &cache.rows[i * ct..(i + 1) * ct];
        let w = &p.text_proj_w.data[i * ct * cv..(i + 1) * ct * cv];
        let gw = &mut g.text_proj_w.data[i * ct * cv..(i + 1) * ct * cv];
        let id = cache.ids[i];
        let grow = &mut g.text_table.data[id * ct..(id + 1) * ct];
        for a in 0..ct {
            let mut acc = T::zero();
            for (b, &d) in dy.iter().enumerate() {
                gw[a * cv + b] += x[a] * d;
                acc += w[a * cv + b] * d;
            }
            grow[a] += acc;
        }
    }
}

pub struct ActionCache<T> {
    input: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
}

/// `linear(2 -> C) -> GELU -> linear(C -> C)` per frame. Returns `N x C_V`.
pub fn embed_action<T: Real>(a: &ActionTrack, frames: usize, p: &PromptParams<T>) -> Result<(Vec<T>, ActionCache<T>)> {
    if a.len() != frames {
        return Err(Error::ShapeMismatch(format!("action track has {} steps for {frames} frames", a.len())));
    }
    let input: Vec<T> = a.steps.iter().flat_map(|&(y, s)| [T::lit(y as f64), T::lit(s as f64)]).collect();
    let pre = p.action_in.forward(&input, frames);
    let act: Vec<T> = pre.iter().map(|&v| linalg::gelu(v)).collect();
    let out = p.action_out.forward(&act, frames);
    Ok((out, ActionCache { input, pre, act }))
}

fn embed_action_backward<T: Real>(d_out: &[T], cache: &ActionCache<T>, p: &PromptParams<T>, g: &mut PromptParams<T>) {
    let frames = cache.input.len() / 2;
    let mut d_act = p.action_out.backward(d_out, &cache.act, frames, &mut g.action_out);
    for (d, &x) in d_act.iter_mut().zip(&cache.pre) {
        *d *= linalg::gelu_grad(x);
    }
    p.action_in.backward_params(&d_act, &cache.input, frames, &mut g.action_in);
}

/// The prompt tensor `E_M`: `frames x rows x channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding<T> {
    pub frames: usize,
    pub rows: usize,
    pub channels: usize,
    pub values: Vec<T>,
}

impl<T: Real> PromptEmbedding<T> {
    pub fn row(&self, frame: usize, row: usize) -> &[T] {
        let i = (frame * self.rows + row) * self.channels;
        &self.values[i..i + self.channels]
    }

    pub fn frame(&self, frame: usize) -> &[T] {
        let n = self.rows * self.channels;
        &self.values[frame * n..(frame + 1) * n]
    }
}

/// Concatenates `K` text rows (repeated per frame) and one action row per
/// frame. Absent branches use the learned null rows; `drop` replaces the
/// whole prompt by the null prompt.
pub fn build_prompt<T: Real>(
    text: Option<&[T]>,
    action: Option<&[T]>,
    drop: bool,
    frames: usize,
    p: &PromptParams<T>,
) -> Result<PromptEmbedding<T>> {
    let (k, c) = (p.text_len(), p.channels());
    let text = if drop { None } else { text };
    let action = if drop { None } else { action };
    if let Some(t) = text {
        if t.len() != k * c {
            return Err(Error::ShapeMismatch(format!("text embedding has {} values, expected {}", t.len(), k * c)));
        }
    }
    if let Some(a) = action {
        if a.len() != frames * c {
            return Err(Error::ShapeMismatch(format!(
                "action embedding has {} values, expected {}",
                a.len(),
                frames * c
            )));
        }
    }
    let mut values = Vec::with_capacity(frames * (k + 1) * c);
    for n in 0..frames {
        values.extend_from_slice(text.unwrap_or(&p.null_text.data));
        match action {
            Some(a) => values.extend_from_slice(&a[n * c..(n + 1) * c]),
            None => values.extend_from_slice(&p.null_action.data),
        }
    }
    Ok(PromptEmbedding { frames, rows: k + 1, channels: c, values })
}

/// Raw conditioning for one sample.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptInput {
    pub text_ids: Option<Vec<usize>>,
    pub actions: Option<ActionTrack>,
    pub drop: bool,
}

impl PromptInput {
    pub fn new(text: Option<&str>, actions: Option<ActionTrack>, cfg: &PromptConfig) -> Self {
        PromptInput { text_ids: text.map(|t| text_token_ids(t, cfg)), actions, drop: false }
    }

    /// The unconditional (null) prompt.
    pub fn null() -> Self {
        PromptInput { text_ids: None, actions: None, drop: true }
    }
}

pub struct PromptCache<T> {
    text: Option<TextCache<T>>,
    action: Option<ActionCache<T>>,
}

/// Embeds text and actions and assembles the prompt, keeping what the
/// adjoint needs.
pub fn encode_prompt<T: Real>(
    input: &PromptInput,
    frames: usize,
    p: &PromptParams<T>,
) -> Result<(PromptEmbedding<T>, PromptCache<T>)> {
    let text = match (&input.text_ids, input.drop) {
        (Some(ids), false) => Some(embed_text(ids, p)?),
        _ => None,
    };
    let action = match (&input.actions, input.drop) {
        (Some(a), false) => Some(embed_action(a, frames, p)?),
        _ => None,
    };
    let emb = build_prompt(
        text.as_ref().map(|(v, _)| v.as_slice()),
        action.as_ref().map(|(v, _)| v.as_slice()),
        input.drop,
        frames,
        p,
    )?;
    Ok((emb, PromptCache { text: text.map(|(_, c)| c), action: action.map(|(_, c)| c) }))
}

/// Adjoint of [`encode_prompt`] given `d E_M`.
pub fn encode_prompt_backward<T: Real>(
    d_emb: &PromptEmbedding<T>,
    cache: &PromptCache<T>,
    p: &PromptParams<T>,
    g: &mut PromptParams<T>,
) {
    let (k, c) = (p.text_len(), p.channels());
    let mut d_text = vec![T::zero(); k * c];
    let mut d_action = vec![T::zero(); d_emb.frames * c];
    for n in 0..d_emb.frames {
        let frame = d_emb.frame(n);
        linalg::add_in_place(&mut d_text, &frame[..k * c]);
        d_action[n * c..(n + 1) * c].copy_from_slice(&frame[k * c..]);
    }
    match &cache.text {
        Some(tc) => embed_text_backward(&d_text, tc, p, g),
        None => linalg::add_in_place(&mut g.null_text.data, &d_text),
    }
    match &cache.action {
        Some(ac) => embed_action_backward(&d_action, ac, p, g),
        None => {
            for row in d_action.chunks_exact(c) {
                linalg::add_in_place(&mut g.null_action.data, row);
            }
        }
    }
}
