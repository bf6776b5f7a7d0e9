//! Patch-codebook visual tokenizer.
//!
//! A video is cut into non-overlapping `f x f` RGB patches, each patch is
//! flattened to `3 f^2` values in `[0, 1]` (row, column, channel order) and
//! mapped to the nearest codebook vector. The codebook is fitted with
//! k-means (k-means++ seeding) and then snapped onto the 8-bit lattice, so
//! decoding a grid and encoding it again reproduces the grid exactly.

use crate::error::{Error, Result};
use crate::linalg::{gemm, View};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

/// `N` frames of `H x W` 8-bit RGB, row-major, channel-interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Video {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl Video {
    pub fn new(frames: usize, height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::invalid("video dimensions must be positive"));
        }
        if pixels.len() != frames * height * width * 3 {
            return Err(Error::ShapeMismatch(format!(
                "expected {} pixel bytes for {frames}x{height}x{width}x3, got {}",
                frames * height * width * 3,
                pixels.len()
            )));
        }
        Ok(Video { frames, height, width, pixels })
    }

    pub fn filled(frames: usize, height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let pixels = std::iter::repeat(rgb).take(frames * height * width).flatten().collect();
        Video { frames, height, width, pixels }
    }

    pub fn pixel(&self, frame: usize, y: usize, x: usize) -> [u8; 3] {
        let i = ((frame * self.height + y) * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn frame_bytes(&self, frame: usize) -> &[u8] {
        let n = self.height * self.width * 3;
        &self.pixels[frame * n..(frame + 1) * n]
    }
}

/// Integer token grid `frames x th x tw`; the value `vocab` is the mask id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrid {
    pub frames: usize,
    pub th: usize,
    pub tw: usize,
    pub vocab: usize,
    pub tokens: Vec<u32>,
}

impl TokenGrid {
    pub fn new(frames: usize, th: usize, tw: usize, vocab: usize, tokens: Vec<u32>) -> Result<Self> {
        if tokens.len() != frames * th * tw {
            return Err(Error::ShapeMismatch(format!(
                "token grid {frames}x{th}x{tw} needs {} tokens, got {}",
                frames * th * tw,
                tokens.len()
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize > vocab) {
            return Err(Error::invalid(format!("token {t} exceeds mask id {vocab}")));
        }
        Ok(TokenGrid { frames, th, tw, vocab, tokens })
    }

    /// A grid where every position holds the mask id.
    pub fn masked(frames: usize, th: usize, tw: usize, vocab: usize) -> Self {
        TokenGrid { frames, th, tw, vocab, tokens: vec![vocab as u32; frames * th * tw] }
    }

    pub fn mask_id(&self) -> u32 {
        self.vocab as u32
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index(&self, frame: usize, row: usize, col: usize) -> usize {
        (frame * self.th + row) * self.tw + col
    }

    pub fn get(&self, frame: usize, row: usize, col: usize) -> u32 {
        self.tokens[self.index(frame, row, col)]
    }

    pub fn masked_count(&self) -> usize {
        let id = self.mask_id();
        self.tokens.iter().filter(|&&t| t == id).count()
    }

    pub fn frame_masked_count(&self, frame: usize) -> usize {
        let id = self.mask_id();
        let per = self.th * self.tw;
        self.tokens[frame * per..(frame + 1) * per].iter().filter(|&&t| t == id).count()
    }
}

/// Fitted patch codebook: `vocab` vectors of `3 * patch_size^2` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub vocab: usize,
    pub patch_size: usize,
    pub vectors: Vec<f32>,
}

impl Codebook {
    pub fn new(vocab: usize, patch_size: usize, vectors: Vec<f32>) -> Result<Self> {
        if vocab < 2 {
            return Err(Error::invalid("codebook vocabulary must be at least 2"));
        }
        if vocab > u16::MAX as usize {
            return Err(Error::invalid("codebook vocabulary must leave room for a u16 mask id"));
        }
        if patch_size == 0 {
            return Err(Error::invalid("patch size must be positive"));
        }
        let dim = patch_dim(patch_size);
        if vectors.len() != vocab * dim {
            return Err(Error::ShapeMismatch(format!(
                "codebook needs {} values, got {}",
                vocab * dim,
                vectors.len()
            )));
        }
        if vectors.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("codebook values must lie in [0, 1]"));
        }
        Ok(Codebook { vocab, patch_size, vectors })
    }

    pub fn dim(&self) -> usize {
        patch_dim(self.patch_size)
    }

    pub fn vector(&self, token: usize) -> &[f32] {
        let d = self.dim();
        &self.vectors[token * d..(token + 1) * d]
    }

    /// Index of the nearest vector by squared Euclidean distance, lowest
    /// index on ties.
    pub fn nearest(&self, patch: &[f32]) -> usize {
        let mut best = 0;
        let mut best_d = f32::INFINITY;
        for (k, v) in self.vectors.chunks_exact(self.dim()).enumerate() {
            let d: f32 = v.iter().zip(patch).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }
}

pub fn patch_dim(patch_size: usize) -> usize {
    3 * patch_size * patch_size
}

fn check_alignment(v: &Video, f: usize) -> Result<()> {
    if f == 0 || v.height % f != 0 || v.width % f != 0 {
        return Err(Error::PatchMisalignment(format!(
            "{}x{} frame is not divisible by patch size {f}",
            v.height, v.width
        )));
    }
    Ok(())
}

/// All `f x f` patches of a video in (frame, row, col) order, flattened.
pub fn extract_patches(v: &Video, f: usize) -> Result<Vec<f32>> {
    check_alignment(v, f)?;
    let (th, tw) = (v.height / f, v.width / f);
    let mut out = Vec::with_capacity(v.frames * th * tw * patch_dim(f));
    for n in 0..v.frames {
        for r in 0..th {
            for c in 0..tw {
                for dy in 0..f {
                    let y = r * f + dy;
                    let start = ((n * v.height + y) * v.width + c * f) * 3;
                    out.extend(v.pixels[start..start + 3 * f].iter().map(|&b| b as f32 / 255.0));
                }
            }
        }
    }
    Ok(out)
}

const MAX_ITERS: usize = 50;
const TOLERANCE: f64 = 1e-6;

/// Fits a `vocab`-entry codebook to flattened patch vectors of dimension
/// `3 * patch_size^2` (k-means++ seeding, Lloyd iterations).
pub fn fit_codebook(patches: &[f32], patch_size: usize, vocab: usize, seed: u64) -> Result<Codebook> {
    if vocab < 2 {
        return Err(Error::invalid("codebook vocabulary must be at least 2"));
    }
    let dim = patch_dim(patch_size);
    if patch_size == 0 || patches.len() % dim != 0 {
        return Err(Error::ShapeMismatch(format!("patch buffer is not a multiple of {dim}")));
    }
    let points: Vec<f64> = patches.iter().map(|&v| v as f64).collect();
    let n = points.len() / dim;
    let distinct: HashSet<Vec<u32>> =
        patches.chunks_exact(dim).map(|p| p.iter().map(|v| v.to_bits()).collect()).collect();
    if distinct.len() < vocab {
        return Err(Error::InsufficientDistinctPatches { needed: vocab, found: distinct.len() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(&points, dim, vocab, &mut rng);
    let norms: Vec<f64> = points.chunks_exact(dim).map(|p| p.iter().map(|v| v * v).sum()).collect();
    let mut assign = vec![0usize; n];
    let mut dist = vec![0f64; n];
    for _ in 0..MAX_ITERS {
        assign_points(&points, &norms, &centroids, dim, &mut assign, &mut dist);
        let mut sums = vec![0f64; vocab * dim];
        let mut counts = vec![0usize; vocab];
        for (i, &k) in assign.iter().enumerate() {
            counts[k] += 1;
            for (s, &v) in sums[k * dim..(k + 1) * dim].iter_mut().zip(&points[i * dim..(i + 1) * dim]) {
                *s += v;
            }
        }
        let mut movement = 0f64;
        let mut taken = vec![false; n];
        for k in 0..vocab {
            let next: Vec<f64> = if counts[k] == 0 {
                // Reseed an empty cluster at the point farthest from its centroid.
                let far = farthest_unclaimed(&dist, &mut taken);
                dist[far] = 0.0;
                points[far * dim..(far + 1) * dim].to_vec()
            } else {
                let inv = 1.0 / counts[k] as f64;
                sums[k * dim..(k + 1) * dim].iter().map(|s| s * inv).collect()
            };
            let old = &mut centroids[k * dim..(k + 1) * dim];
            let shift: f64 = old.iter().zip(&next).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            movement = movement.max(shift);
            old.copy_from_slice(&next);
        }
        if movement < TOLERANCE {
            break;
        }
    }

    let vectors = snap_to_lattice(&centroids, &points, dim, vocab, &norms);
    Codebook::new(vocab, patch_size, vectors)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp(points: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut min_d: Vec<f64> = points.chunks_exact(dim).map(|p| sq_dist(p, &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = min_d.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &d) in min_d.iter().enumerate() {
                if d > 0.0 {
                    if target < d {
                        chosen = Some(i);
                        break;
                    }
                    target -= d;
                }
            }
            // Rounding can run off the end; fall back to the last positive weight.
            chosen.unwrap_or_else(|| min_d.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick * dim..(pick + 1) * dim].to_vec();
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let d = sq_dist(p, &c);
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

fn assign_points(
    points: &[f64],
    norms: &[f64],
    centroids: &[f64],
    dim: usize,
    assign: &mut [usize],
    dist: &mut [f64],
) {
    let n = points.len() / dim;
    let k = centroids.len() / dim;
    let c_norms: Vec<f64> = centroids.chunks_exact(dim).map(|c| c.iter().map(|v| v * v).sum()).collect();
    const CHUNK: usize = 1024;
    let mut dots = vec![0f64; CHUNK * k];
    for start in (0..n).step_by(CHUNK) {
        let rows = CHUNK.min(n - start);
        let block = &points[start * dim..(start + rows) * dim];
        gemm(1.0, View::new(block, rows, dim), View::new(centroids, k, dim).t(), 0.0, &mut dots, k);
        for r in 0..rows {
            let i = start + r;
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for j in 0..k {
                let d = norms[i] - 2.0 * dots[r * k + j] + c_norms[j];
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            assign[i] = best;
            dist[i] = sq_dist(&points[i * dim..(i + 1) * dim], &centroids[best * dim..(best + 1) * dim]);
        }
    }
}

fn farthest_unclaimed(dist: &[f64], taken: &mut [bool]) -> usize {
    let mut best = 0;
    let mut best_d = f64::NEG_INFINITY;
    for (i, &d) in dist.iter().enumerate() {
        if !taken[i] && d > best_d {
            best_d = d;
            best = i;
        }
    }
    taken[best] = true;
    best
}

/// Rounds every centroid onto the `k / 255` lattice so that decoded pixels
/// re-encode to the same token. Collisions are resolved by substituting the
/// data point farthest from the current codebook.
fn snap_to_lattice(centroids: &[f64], points: &[f64], dim: usize, vocab: usize, norms: &[f64]) -> Vec<f32> {
    let mut seen: HashSet<Vec<u8>> = HashSet::new();
    let mut snapped: Vec<Option<Vec<u8>>> = Vec::with_capacity(vocab);
    for c in centroids.chunks_exact(dim) {
        let q: Vec<u8> = c.iter().map(|&v| (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8).collect();
        if seen.insert(q.clone()) {
            snapped.push(Some(q));
        } else {
            snapped.push(None);
        }
    }
    if snapped.iter().any(Option::is_none) {
        let current: Vec<f64> = snapped
            .iter()
            .flat_map(|q| match q {
                Some(q) => q.iter().map(|&b| b as f64 / 255.0).collect::<Vec<_>>(),
                None => vec![f64::INFINITY; dim],
            })
            .collect();
        let mut assign = vec![0usize; points.len() / dim];
        let mut dist = vec![0f64; points.len() / dim];
        let finite: Vec<f64> = current.iter().map(|&v| if v.is_finite() { v } else { 1e6 }).collect();
        assign_points(points, norms, &finite, dim, &mut assign, &mut dist);
        let mut order: Vec<usize> = (0..dist.len()).collect();
        order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
        let mut candidates = order.into_iter();
        for slot in snapped.iter_mut().filter(|q| q.is_none()) {
            for i in candidates.by_ref() {
                let q: Vec<u8> = points[i * dim..(i + 1) * dim]
                    .iter()
                    .map(|&v| (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
                    .collect();
                if seen.insert(q.clone()) {
                    *slot = Some(q);
                    break;
                }
            }
        }
    }
    snapped
        .into_iter()
        .flat_map(|q| q.expect("enough distinct patches").into_iter().map(|b| b as f32 / 255.0))
        .collect()
}

/// Maps every `f x f` patch to the index of its nearest codebook vector.
pub fn encode_video(v: &Video, cb: &Codebook) -> Result<TokenGrid> {
    let f = cb.patch_size;
    let patches = extract_patches(v, f)?;
    let tokens = patches.chunks_exact(cb.dim()).map(|p| cb.nearest(p) as u32).collect();
    TokenGrid::new(v.frames, v.height / f, v.width / f, cb.vocab, tokens)
}

/// Replaces every token by its codebook patch, quantized back to 8 bits
/// with round-half-up.
pub fn decode_tokens(t: &TokenGrid, cb: &Codebook) -> Result<Video> {
    if t.vocab != cb.vocab {
        return Err(Error::ShapeMismatch(format!(
            "grid vocabulary {} does not match codebook {}",
            t.vocab, cb.vocab
        )));
    }
    if let Some(index) = t.tokens.iter().position(|&k| k as usize >= cb.vocab) {
        return Err(Error::UnresolvedMaskToken { index });
    }
    let f = cb.patch_size;
    let (h, w) = (t.th * f, t.tw * f);
    let mut pixels = vec![0u8; t.frames * h * w * 3];
    for n in 0..t.frames {
        for r in 0..t.th {
            for c in 0..t.tw {
                let vec = cb.vector(t.get(n, r, c) as usize);
                for dy in 0..f {
                    let start = ((n * h + r * f + dy) * w + c * f) * 3;
                    for (px, &v) in pixels[start..start + 3 * f].iter_mut().zip(&vec[dy * 3 * f..(dy + 1) * 3 * f]) {
                        *px = to_byte(v);
                    }
                }
            }
        }
    }
    Video::new(t.frames, h, w, pixels)
}

fn to_byte(v: f32) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_color_video() -> Video {
        let mut v = Video::filled(2, 8, 8, [200, 10, 30]);
        for y in 0..8 {
            for x in 4..8 {
                let i = ((y * 8) + x) * 3;
                v.pixels[i..i + 3].copy_from_slice(&[5, 250, 100]);
            }
        }
        v
    }

    /// Exhaustive k-means optimum for two clusters over the distinct points:
    /// every 2-partition is tried and the lowest inertia wins.
    fn brute_force_two_means(points: &[Vec<f32>]) -> Vec<Vec<f32>> {
        let mut distinct: Vec<Vec<f32>> = Vec::new();
        for p in points {
            if !distinct.contains(p) {
                distinct.push(p.clone());
            }
        }
        let mut best = (f64::INFINITY, Vec::new());
        for mask in 1..(1u32 << distinct.len()) - 1 {
            let mut groups = [Vec::new(), Vec::new()];
            for p in points {
                let idx = distinct.iter().position(|d| d == p).unwrap();
                groups[((mask >> idx) & 1) as usize].push(p.clone());
            }
            let means: Vec<Vec<f32>> = groups
                .iter()
                .map(|g| {
                    let dim = g[0].len();
                    (0..dim).map(|i| (g.iter().map(|p| p[i] as f64).sum::<f64>() / g.len() as f64) as f32).collect()
                })
                .collect();
            let inertia: f64 = groups
                .iter()
                .zip(&means)
                .flat_map(|(g, m)| g.iter().map(move |p| p.iter().zip(m).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>()))
                .sum();
            if inertia < best.0 {
                best = (inertia, means);
            }
        }
        best.1
    }

    #[test]
    fn two_colors_give_exact_centroids() {
        let v = two_color_video();
        let patches = extract_patches(&v, 4).unwrap();
        let cb = fit_codebook(&patches, 4, 2, 11).unwrap();
        let pts: Vec<Vec<f32>> = patches.chunks_exact(48).map(|c| c.to_vec()).collect();
        let mut oracle = brute_force_two_means(&pts);
        let mut got: Vec<Vec<f32>> = (0..2).map(|k| cb.vector(k).to_vec()).collect();
        oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, oracle);
        assert!(got.iter().any(|g| g.iter().all(|&x| x == 200.0 / 255.0 || x == 10.0 / 255.0 || x == 30.0 / 255.0)));
    }

    #[test]
    fn vocab_below_two_is_rejected() {
        let patches = extract_patches(&two_color_video(), 4).unwrap();
        assert!(fit_codebook(&patches, 4, 1, 0).is_err());
    }

    #[test]
    fn too_few_distinct_patches() {
        let patches = extract_patches(&two_color_video(), 4).unwrap();
        let err = fit_codebook(&patches, 4, 3, 0).unwrap_err();
        assert!(err.to_string().contains("insufficient distinct patches"), "{err}");
    }

    #[test]
    fn fitting_is_deterministic() {
        let v = crate::data::generate_episode(&crate::data::WorldConfig::default(), 5).unwrap().video;
        let patches = extract_patches(&v, 8).unwrap();
        let a = fit_codebook(&patches, 8, 16, 3).unwrap();
        let b = fit_codebook(&patches, 8, 16, 3).unwrap();
        let bits = |c: &Codebook| c.vectors.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn constant_video_encodes_to_matching_vector() {
        let mut vectors = Vec::new();
        for k in 0..5u8 {
            vectors.extend(std::iter::repeat((k * 40) as f32 / 255.0).take(48));
        }
        let cb = Codebook::new(5, 4, vectors).unwrap();
        let v = Video::filled(1, 8, 8, [120, 120, 120]);
        let t = encode_video(&v, &cb).unwrap();
        assert!(t.tokens.iter().all(|&k| k == 3));
    }

    #[test]
    fn grid_shape_from_patch_size() {
        let cb = Codebook::new(2, 4, vec![0.0; 96]).unwrap();
        let t = encode_video(&Video::filled(2, 8, 8, [0, 0, 0]), &cb).unwrap();
        assert_eq!((t.frames, t.th, t.tw), (2, 2, 2));
    }

    #[test]
    fn misaligned_frame_is_rejected() {
        let cb = Codebook::new(2, 4, vec![0.0; 96]).unwrap();
        let err = encode_video(&Video::filled(1, 6, 8, [0, 0, 0]), &cb).unwrap_err();
        assert!(err.to_string().contains("patch misalignment"));
    }

    #[test]
    fn decode_fills_with_codebook_color() {
        let mut vectors = vec![0.2f32; 48];
        vectors.extend(vec![0.9f32; 48]);
        let cb = Codebook::new(2, 4, vectors).unwrap();
        let t = TokenGrid::new(1, 2, 2, 2, vec![0; 4]).unwrap();
        let v = decode_tokens(&t, &cb).unwrap();
        assert!(v.pixels.iter().all(|&p| p == 51));
    }

    #[test]
    fn mask_id_cannot_be_decoded() {
        let cb = Codebook::new(2, 4, vec![0.5; 96]).unwrap();
        let t = TokenGrid::new(1, 2, 2, 2, vec![0, 2, 1, 0]).unwrap();
        let err = decode_tokens(&t, &cb).unwrap_err();
        assert!(err.to_string().contains("unresolved mask token"));
    }

    fn lattice_codebook(seed: u64, vocab: usize) -> Codebook {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = HashSet::new();
        let mut vectors = Vec::new();
        while seen.len() < vocab {
            let v: Vec<u8> = (0..12).map(|_| rng.random()).collect();
            if seen.insert(v.clone()) {
                vectors.extend(v.iter().map(|&b| b as f32 / 255.0));
            }
        }
        Codebook::new(vocab, 2, vectors).unwrap()
    }

    proptest! {
        #[test]
        fn encode_decode_encode_is_idempotent(pixels in proptest::collection::vec(any::<u8>(), 2 * 4 * 4 * 3), seed in 0u64..50) {
            let cb = lattice_codebook(seed, 7);
            let v = Video::new(2, 4, 4, pixels).unwrap();
            let t = encode_video(&v, &cb).unwrap();
            let again = encode_video(&decode_tokens(&t, &cb).unwrap(), &cb).unwrap();
            prop_assert_eq!(t, again);
        }

        #[test]
        fn assignments_are_nearest_by_brute_force(pixels in proptest::collection::vec(any::<u8>(), 4 * 4 * 3), seed in 0u64..50) {
            let cb = lattice_codebook(seed, 9);
            let v = Video::new(1, 4, 4, pixels).unwrap();
            let t = encode_video(&v, &cb).unwrap();
            let patches = extract_patches(&v, 2).unwrap();
            for (p, &tok) in patches.chunks_exact(12).zip(&t.tokens) {
                let d = |k: usize| -> f32 { cb.vector(k).iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum() };
                for k in 0..cb.vocab {
                    prop_assert!(d(tok as usize) <= d(k));
                }
            }
        }

        #[test]
        fn decode_then_encode_round_trips(tokens in proptest::collection::vec(0u32..7, 2 * 2 * 3), seed in 0u64..50) {
            let cb = lattice_codebook(seed, 7);
            let t = TokenGrid::new(2, 2, 3, 7, tokens).unwrap();
            let back = encode_video(&decode_tokens(&t, &cb).unwrap(), &cb).unwrap();
            prop_assert_eq!(t, back);
        }
    }
}
