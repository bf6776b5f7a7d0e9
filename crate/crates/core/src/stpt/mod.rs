//! Spatial-temporal patchwise transformer.
//!
//! Each layer runs a channel-wise 3D convolution, splits the token grid
//! into `s^2` interleaved patches that span every frame, applies
//! self-attention inside each patch, merges the patches back, attends to
//! the per-frame prompt rows, and finishes with a GELU feed-forward block.
//! A final layer norm and a linear head produce one logit per codebook
//! entry at every position.

pub mod attention;
pub mod ops;

use crate::error::{Error, Result};
use crate::linalg::{self, NormCache, Real};
use crate::params::{impl_params, Linear, Norm, Tensor};
use crate::prompt::PromptEmbedding;
use crate::tokenizer::TokenGrid;
use attention::{AttentionCache, Attention, Group};
pub use ops::{conv3d, conv3d_backward, partition_patches, patch_of, unpartition_patches, Grid, Mode};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StptConfig {
    pub layers: usize,
    pub channels: usize,
    pub heads: usize,
    pub patch_stride: usize,
    /// `(kt, kh, kw)`, all odd.
    pub conv_kernel: [usize; 3],
    /// Codebook size `Kv`; the embedding table has `Kv + 1` rows.
    pub vocab: usize,
    /// Maximum frame count `N` (size of the temporal position table).
    pub frames: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub mode: Mode,
}

impl Default for StptConfig {
    fn default() -> Self {
        StptConfig {
            layers: 4,
            channels: 128,
            heads: 4,
            patch_stride: 2,
            conv_kernel: [3, 3, 3],
            vocab: 512,
            frames: 8,
            grid_h: 8,
            grid_w: 8,
            mode: Mode::Video,
        }
    }
}

impl StptConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.channels", self.channels),
            ("model.heads", self.heads),
            ("model.patch_stride", self.patch_stride),
            ("model.frames", self.frames),
            ("model.grid_h", self.grid_h),
            ("model.grid_w", self.grid_w),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.vocab < 2 {
            return Err(Error::config("model.vocab", "must be at least 2"));
        }
        if self.channels % self.heads != 0 {
            return Err(Error::config("model.heads", format!("must divide channels {}", self.channels)));
        }
        if self.grid_h % self.patch_stride != 0 || self.grid_w % self.patch_stride != 0 {
            return Err(Error::config(
                "model.patch_stride",
                format!("must divide the {}x{} token grid", self.grid_h, self.grid_w),
            ));
        }
        if self.conv_kernel.iter().any(|&k| k % 2 == 0) {
            return Err(Error::config("model.conv_kernel", "every extent must be odd"));
        }
        Ok(())
    }

    pub fn taps(&self) -> usize {
        self.conv_kernel.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    /// Depthwise kernel, `taps x channels`.
    pub conv_w: Tensor<T>,
    pub conv_b: Tensor<T>,
    pub self_attn: Attention<T>,
    pub cross_attn: Attention<T>,
    pub ff_norm: Norm<T>,
    pub ff_in: Linear<T>,
    pub ff_out: Linear<T>,
}

impl_params!(LayerParams { conv_w, conv_b } nested { self_attn, cross_attn, ff_norm, ff_in, ff_out });

#[derive(Debug, Clone, PartialEq)]
pub struct StptParams<T> {
    pub tok_emb: Tensor<T>,
    pub pos_t: Tensor<T>,
    pub pos_s: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
    pub final_norm: Norm<T>,
    pub head: Linear<T>,
}

impl_params!(StptParams { tok_emb, pos_t, pos_s } nested { layers, final_norm, head });

const INIT_STD: f64 = 0.02;

impl<T: Real> StptParams<T> {
    /// Truncated-normal init; residual output projections are scaled by
    /// `1/sqrt(2L)` and conv kernels start near the identity.
    pub fn init<R: Rng + ?Sized>(cfg: &StptConfig, rng: &mut R) -> Self {
        let c = cfg.channels;
        let out_std = INIT_STD / ((2 * cfg.layers.max(1)) as f64).sqrt();
        let layers = (0..cfg.layers)
            .map(|_| {
                let mut conv_w = Tensor::trunc_normal(&[cfg.taps(), c], INIT_STD, rng);
                let center = cfg.taps() / 2;
                for v in &mut conv_w.data[center * c..(center + 1) * c] {
                    *v += T::one();
                }
                LayerParams {
                    conv_w,
                    conv_b: Tensor::zeros(&[c]),
                    self_attn: Attention::init(c, INIT_STD, out_std, rng),
                    cross_attn: Attention::init(c, INIT_STD, out_std, rng),
                    ff_norm: Norm::new(c),
                    ff_in: Linear::init(c, 4 * c, INIT_STD, rng),
                    ff_out: Linear::init(4 * c, c, out_std, rng),
                }
            })
            .collect();
        StptParams {
            tok_emb: Tensor::trunc_normal(&[cfg.vocab + 1, c], INIT_STD, rng),
            pos_t: Tensor::trunc_normal(&[cfg.frames, c], INIT_STD, rng),
            pos_s: Tensor::trunc_normal(&[cfg.grid_h * cfg.grid_w, c], INIT_STD, rng),
            layers,
            final_norm: Norm::new(c),
            head: Linear::init(c, cfg.vocab, INIT_STD, rng),
        }
    }

    pub fn zeros(cfg: &StptConfig) -> Self {
        let c = cfg.channels;
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                conv_w: Tensor::zeros(&[cfg.taps(), c]),
                conv_b: Tensor::zeros(&[c]),
                self_attn: Attention::zeros(c),
                cross_attn: Attention::zeros(c),
                ff_norm: Norm::zeros(c),
                ff_in: Linear::zeros(c, 4 * c),
                ff_out: Linear::zeros(4 * c, c),
            })
            .collect();
        StptParams {
            tok_emb: Tensor::zeros(&[cfg.vocab + 1, c]),
            pos_t: Tensor::zeros(&[cfg.frames, c]),
            pos_s: Tensor::zeros(&[cfg.grid_h * cfg.grid_w, c]),
            layers,
            final_norm: Norm::zeros(c),
            head: Linear::zeros(c, cfg.vocab),
        }
    }
}

fn check_grid(t: &TokenGrid, cfg: &StptConfig) -> Result<Grid> {
    if t.vocab != cfg.vocab {
        return Err(Error::ShapeMismatch(format!("grid vocabulary {} vs model {}", t.vocab, cfg.vocab)));
    }
    if t.frames == 0 || t.frames > cfg.frames || t.th != cfg.grid_h || t.tw != cfg.grid_w {
        return Err(Error::ShapeMismatch(format!(
            "grid {}x{}x{} does not fit model {}x{}x{}",
            t.frames, t.th, t.tw, cfg.frames, cfg.grid_h, cfg.grid_w
        )));
    }
    Ok(Grid { frames: t.frames, rows: t.th, cols: t.tw, channels: cfg.channels })
}

/// Token-table lookup plus temporal and spatial position rows.
/// Returns `N x h x w x C`.
pub fn embed_tokens<T: Real>(t: &TokenGrid, cfg: &StptConfig, p: &StptParams<T>) -> Result<Vec<T>> {
    let g = check_grid(t, cfg)?;
    let c = g.channels;
    let mut x = Vec::with_capacity(g.len());
    for (i, &tok) in t.tokens.iter().enumerate() {
        let tok = tok as usize;
        if tok > cfg.vocab {
            return Err(Error::invalid(format!("token {tok} exceeds mask id {}", cfg.vocab)));
        }
        let n = i / (g.rows * g.cols);
        let s = i % (g.rows * g.cols);
        let e = &p.tok_emb.data[tok * c..(tok + 1) * c];
        let pt = &p.pos_t.data[n * c..(n + 1) * c];
        let ps = &p.pos_s.data[s * c..(s + 1) * c];
        x.extend((0..c).map(|j| e[j] + pt[j] + ps[j]));
    }
    Ok(x)
}

fn patch_groups(frames: usize, per_frame: usize, mode: Mode) -> Vec<Group> {
    match mode {
        Mode::Video => attention::uniform_groups(1, frames * per_frame, frames * per_frame),
        Mode::Image => attention::uniform_groups(frames, per_frame, per_frame),
    }
}

/// Self-attention over one flattened patch (`N * h/s * w/s` rows). In image
/// mode attention is block-diagonal over frames.
pub fn patch_self_attention<T: Real>(
    patch: &[T],
    frames: usize,
    a: &Attention<T>,
    heads: usize,
    mode: Mode,
) -> (Vec<T>, AttentionCache<T>) {
    let c = a.q.d_in();
    let per_frame = patch.len() / c / frames;
    attention::self_attention(patch, a, heads, patch_groups(frames, per_frame, mode))
}

/// Per-frame cross-attention: the `h * w` rows of frame `n` attend to the
/// `K + 1` prompt rows of frame `n` only.
pub fn cross_attention<T: Real>(
    x: &[T],
    g: &Grid,
    m: &PromptEmbedding<T>,
    a: &Attention<T>,
    heads: usize,
) -> Result<(Vec<T>, AttentionCache<T>)> {
    if m.frames != g.frames {
        return Err(Error::ShapeMismatch(format!("prompt has {} frames, grid has {}", m.frames, g.frames)));
    }
    if m.channels != g.channels {
        return Err(Error::ShapeMismatch(format!("prompt has {} channels, model {}", m.channels, g.channels)));
    }
    let groups = attention::uniform_groups(g.frames, g.rows * g.cols, m.rows);
    Ok(attention::cross_attention_block(x, &m.values, a, heads, groups))
}

#[derive(Debug, Clone)]
pub struct FfnCache<T> {
    norm: NormCache<T>,
    normed: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
}

fn feed_forward<T: Real>(x: &[T], l: &LayerParams<T>) -> (Vec<T>, FfnCache<T>) {
    let rows = x.len() / l.ff_in.d_in();
    let (normed, norm) = l.ff_norm.forward(x);
    let pre = l.ff_in.forward(&normed, rows);
    let act: Vec<T> = pre.iter().map(|&v| linalg::gelu(v)).collect();
    let mut out = l.ff_out.forward(&act, rows);
    linalg::add_in_place(&mut out, x);
    (out, FfnCache { norm, normed, pre, act })
}

fn feed_forward_backward<T: Real>(d_out: &[T], cache: &FfnCache<T>, l: &LayerParams<T>, g: &mut LayerParams<T>) -> Vec<T> {
    let rows = d_out.len() / l.ff_in.d_in();
    let mut d_act = l.ff_out.backward(d_out, &cache.act, rows, &mut g.ff_out);
    for (d, &x) in d_act.iter_mut().zip(&cache.pre) {
        *d *= linalg::gelu_grad(x);
    }
    let d_normed = l.ff_in.backward(&d_act, &cache.normed, rows, &mut g.ff_in);
    let mut dx = l.ff_norm.backward(&d_normed, &cache.norm, &mut g.ff_norm);
    linalg::add_in_place(&mut dx, d_out);
    dx
}

#[derive(Debug, Clone)]
pub struct LayerCache<T> {
    input: Vec<T>,
    patches: Vec<AttentionCache<T>>,
    cross: AttentionCache<T>,
    ffn: FfnCache<T>,
}

/// Activations retained by [`stpt_forward`] for [`stpt_backward`].
#[derive(Debug, Clone)]
pub struct StptCache<T> {
    pub grid: Grid,
    pub mode: Mode,
    tokens: Vec<u32>,
    prompt: PromptEmbedding<T>,
    layers: Vec<LayerCache<T>>,
    final_norm: NormCache<T>,
    final_normed: Vec<T>,
}

impl<T: Real> StptCache<T> {
    /// Attention weights of every patch (per (group, head) blocks) and of
    /// the cross-attention, per layer.
    pub fn attention_weights(&self) -> Vec<(Vec<&[T]>, &[T])> {
        self.layers
            .iter()
            .map(|l| (l.patches.iter().map(|p| p.probs.as_slice()).collect(), l.cross.probs.as_slice()))
            .collect()
    }
}

/// Full forward pass. Returns logits `N x h x w x Kv`.
pub fn stpt_forward<T: Real>(
    t: &TokenGrid,
    m: &PromptEmbedding<T>,
    mode: Mode,
    cfg: &StptConfig,
    p: &StptParams<T>,
) -> Result<(Vec<T>, StptCache<T>)> {
    let g = check_grid(t, cfg)?;
    if p.layers.len() != cfg.layers {
        return Err(Error::ShapeMismatch(format!("{} layers in params, {} in config", p.layers.len(), cfg.layers)));
    }
    let s = cfg.patch_stride;
    let mut x = embed_tokens(t, cfg, p)?;
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in &p.layers {
        let conv = conv3d(&x, &g, &l.conv_w.data, &l.conv_b.data, cfg.conv_kernel, mode);
        let mut patch_caches = Vec::with_capacity(s * s);
        let mut patch_out = Vec::with_capacity(s * s);
        for patch in partition_patches(&conv, &g, s)? {
            let (out, cache) = patch_self_attention(&patch, g.frames, &l.self_attn, cfg.heads, mode);
            patch_out.push(out);
            patch_caches.push(cache);
        }
        let merged = unpartition_patches(&patch_out, &g, s)?;
        let (crossed, cross) = cross_attention(&merged, &g, m, &l.cross_attn, cfg.heads)?;
        let (out, ffn) = feed_forward(&crossed, l);
        layers.push(LayerCache { input: std::mem::replace(&mut x, out), patches: patch_caches, cross, ffn });
    }
    let (final_normed, final_norm) = p.final_norm.forward(&x);
    let logits = p.head.forward(&final_normed, g.positions());
    let cache = StptCache {
        grid: g,
        mode,
        tokens: t.tokens.clone(),
        prompt: m.clone(),
        layers,
        final_norm,
        final_normed,
    };
    Ok((logits, cache))
}

/// Backpropagates `d logits` through the network, accumulating parameter
/// gradients into `grad`. Returns the gradient with respect to the prompt.
pub fn stpt_backward<T: Real>(
    d_logits: &[T],
    cache: &StptCache<T>,
    cfg: &StptConfig,
    p: &StptParams<T>,
    grad: &mut StptParams<T>,
) -> Result<PromptEmbedding<T>> {
    let g = cache.grid;
    let s = cfg.patch_stride;
    let mut d_prompt = vec![T::zero(); cache.prompt.values.len()];
    let d_normed = p.head.backward(d_logits, &cache.final_normed, g.positions(), &mut grad.head);
    let mut dx = p.final_norm.backward(&d_normed, &cache.final_norm, &mut grad.final_norm);
    for (li, lc) in cache.layers.iter().enumerate().rev() {
        let l = &p.layers[li];
        let lg = &mut grad.layers[li];
        let d_crossed = feed_forward_backward(&dx, &lc.ffn, l, lg);
        let (d_merged, dm) = attention::cross_attention_block_backward(
            &d_crossed,
            &cache.prompt.values,
            &lc.cross,
            &l.cross_attn,
            cfg.heads,
            &mut lg.cross_attn,
        );
        linalg::add_in_place(&mut d_prompt, &dm);
        let d_patches = partition_patches(&d_merged, &g, s)?;
        let mut d_conv_patches = Vec::with_capacity(s * s);
        for (dp, pc) in d_patches.iter().zip(&lc.patches) {
            d_conv_patches.push(attention::self_attention_backward(dp, pc, &l.self_attn, cfg.heads, &mut lg.self_attn));
        }
        let d_conv = unpartition_patches(&d_conv_patches, &g, s)?;
        dx = conv3d_backward(
            &d_conv,
            &lc.input,
            &g,
            &l.conv_w.data,
            cfg.conv_kernel,
            cache.mode,
            &mut lg.conv_w.data,
            &mut lg.conv_b.data,
        );
    }
    let c = g.channels;
    let per_frame = g.rows * g.cols;
    for (i, &tok) in cache.tokens.iter().enumerate() {
        let d = &dx[i * c..(i + 1) * c];
        let tok = tok as usize;
        let (n, sp) = (i / per_frame, i % per_frame);
        linalg::add_in_place(&mut grad.tok_emb.data[tok * c..(tok + 1) * c], d);
        linalg::add_in_place(&mut grad.pos_t.data[n * c..(n + 1) * c], d);
        linalg::add_in_place(&mut grad.pos_s.data[sp * c..(sp + 1) * c], d);
    }
    Ok(PromptEmbedding { values: d_prompt, ..cache.prompt.clone() })
}

/// Mean negative log-likelihood of the targets over masked positions, and
/// its gradient with respect to the logits (zero at unmasked positions).
pub fn masked_ce_loss<T: Real>(logits: &[T], vocab: usize, targets: &TokenGrid, masked: &[bool]) -> Result<(T, Vec<T>)> {
    if logits.len() != targets.len() * vocab || masked.len() != targets.len() {
        return Err(Error::ShapeMismatch("logits, targets and mask disagree".into()));
    }
    let count = masked.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::invalid("loss needs at least one masked position"));
    }
    let inv = T::one() / T::from_usize(count).unwrap();
    let mut loss = T::zero();
    let mut d = vec![T::zero(); logits.len()];
    for (i, &is_masked) in masked.iter().enumerate() {
        if !is_masked {
            continue;
        }
        let target = targets.tokens[i] as usize;
        if target >= vocab {
            return Err(Error::invalid(format!("target {target} at {i} is not a codebook token")));
        }
        let row = &logits[i * vocab..(i + 1) * vocab];
        let lse = linalg::log_sum_exp(row);
        loss += lse - row[target];
        let drow = &mut d[i * vocab..(i + 1) * vocab];
        for (dv, &z) in drow.iter_mut().zip(row) {
            *dv = (z - lse).exp() * inv;
        }
        drow[target] -= inv;
    }
    Ok((loss * inv, d))
}

/// Fraction of masked positions whose argmax logit equals the target.
pub fn masked_accuracy<T: Real>(logits: &[T], vocab: usize, targets: &TokenGrid, masked: &[bool]) -> (usize, usize) {
    let mut correct = 0;
    let mut total = 0;
    for (i, &m) in masked.iter().enumerate() {
        if m {
            total += 1;
            if argmax(&logits[i * vocab..(i + 1) * vocab]) == targets.tokens[i] as usize {
                correct += 1;
            }
        }
    }
    (correct, total)
}

/// Index of the largest value, lowest index on ties.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
