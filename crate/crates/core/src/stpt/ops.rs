//! Channel-wise 3D convolution and strided patch partitioning over
//! `frames x rows x cols x channels` activations.

use crate::error::{Error, Result};
use crate::linalg::Real;
use serde::{Deserialize, Serialize};

/// Video mode mixes frames; image mode keeps every frame independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Video,
    Image,
}

/// Geometry of an activation tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

impl Grid {
    pub fn positions(&self) -> usize {
        self.frames * self.rows * self.cols
    }

    pub fn len(&self) -> usize {
        self.positions() * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Kernel taps in `(dt, dr, dc)` order, each with its flat index.
fn taps(kernel: [usize; 3], mode: Mode) -> impl Iterator<Item = (usize, isize, isize, isize)> {
    let [kt, kh, kw] = kernel;
    let (ct, ch, cw) = ((kt / 2) as isize, (kh / 2) as isize, (kw / 2) as isize);
    (0..kt).flat_map(move |t| {
        (0..kh).flat_map(move |r| {
            (0..kw).filter_map(move |c| {
                if mode == Mode::Image && t as isize != ct {
                    return None;
                }
                Some(((t * kh + r) * kw + c, t as isize - ct, r as isize - ch, c as isize - cw))
            })
        })
    })
}

fn shifted(g: &Grid, n: usize, r: usize, c: usize, dt: isize, dr: isize, dc: isize) -> Option<usize> {
    let (n2, r2, c2) = (n as isize + dt, r as isize + dr, c as isize + dc);
    if n2 < 0 || r2 < 0 || c2 < 0 || n2 >= g.frames as isize || r2 >= g.rows as isize || c2 >= g.cols as isize {
        return None;
    }
    Some(((n2 as usize * g.rows) + r2 as usize) * g.cols + c2 as usize)
}

/// Depthwise (per-channel) 3D convolution with zero padding. `weight` is
/// `taps x channels`; in image mode only the temporal centre taps apply.
pub fn conv3d<T: Real>(x: &[T], g: &Grid, weight: &[T], bias: &[T], kernel: [usize; 3], mode: Mode) -> Vec<T> {
    let ch = g.channels;
    let mut y = Vec::with_capacity(x.len());
    for _ in 0..g.positions() {
        y.extend_from_slice(bias);
    }
    let taps: Vec<_> = taps(kernel, mode).collect();
    for n in 0..g.frames {
        for r in 0..g.rows {
            for c in 0..g.cols {
                let p = ((n * g.rows) + r) * g.cols + c;
                let out = &mut y[p * ch..(p + 1) * ch];
                for &(ti, dt, dr, dc) in &taps {
                    if let Some(q) = shifted(g, n, r, c, dt, dr, dc) {
                        let w = &weight[ti * ch..(ti + 1) * ch];
                        let xi = &x[q * ch..(q + 1) * ch];
                        for i in 0..ch {
                            out[i] += w[i] * xi[i];
                        }
                    }
                }
            }
        }
    }
    y
}

/// Adjoint of [`conv3d`]; accumulates weight and bias gradients.
#[allow(clippy::too_many_arguments)]
pub fn conv3d_backward<T: Real>(
    dy: &[T],
    x: &[T],
    g: &Grid,
    weight: &[T],
    kernel: [usize; 3],
    mode: Mode,
    d_weight: &mut [T],
    d_bias: &mut [T],
) -> Vec<T> {
    let ch = g.channels;
    let mut dx = vec![T::zero(); x.len()];
    let taps: Vec<_> = taps(kernel, mode).collect();
    for n in 0..g.frames {
        for r in 0..g.rows {
            for c in 0..g.cols {
                let p = ((n * g.rows) + r) * g.cols + c;
                let d = &dy[p * ch..(p + 1) * ch];
                for i in 0..ch {
                    d_bias[i] += d[i];
                }
                for &(ti, dt, dr, dc) in &taps {
                    if let Some(q) = shifted(g, n, r, c, dt, dr, dc) {
                        let w = &weight[ti * ch..(ti + 1) * ch];
                        let dw = &mut d_weight[ti * ch..(ti + 1) * ch];
                        for i in 0..ch {
                            dw[i] += d[i] * x[q * ch + i];
                            dx[q * ch + i] += d[i] * w[i];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Strided partition into `s^2` patches: position `(row, col)` goes to
/// patch `(row mod s) * s + (col mod s)`, at patch-local position
/// `(row / s, col / s)`. Each patch keeps all frames, in
/// `(frame, row, col)` order.
pub fn partition_patches<T: Real>(x: &[T], g: &Grid, s: usize) -> Result<Vec<Vec<T>>> {
    if s == 0 || g.rows % s != 0 || g.cols % s != 0 {
        return Err(Error::invalid(format!("patch stride {s} does not divide {}x{}", g.rows, g.cols)));
    }
    let ch = g.channels;
    let (ph, pw) = (g.rows / s, g.cols / s);
    let mut patches = vec![Vec::with_capacity(g.frames * ph * pw * ch); s * s];
    for (pi, patch) in patches.iter_mut().enumerate() {
        let (pr, pc) = (pi / s, pi % s);
        for n in 0..g.frames {
            for i in 0..ph {
                for j in 0..pw {
                    let p = ((n * g.rows) + i * s + pr) * g.cols + j * s + pc;
                    patch.extend_from_slice(&x[p * ch..(p + 1) * ch]);
                }
            }
        }
    }
    Ok(patches)
}

/// Exact inverse of [`partition_patches`].
pub fn unpartition_patches<T: Real>(patches: &[Vec<T>], g: &Grid, s: usize) -> Result<Vec<T>> {
    if s == 0 || g.rows % s != 0 || g.cols % s != 0 || patches.len() != s * s {
        return Err(Error::invalid(format!("cannot unpartition {} patches with stride {s}", patches.len())));
    }
    let ch = g.channels;
    let (ph, pw) = (g.rows / s, g.cols / s);
    let mut x = vec![T::zero(); g.len()];
    for (pi, patch) in patches.iter().enumerate() {
        if patch.len() != g.frames * ph * pw * ch {
            return Err(Error::ShapeMismatch(format!("patch {pi} has {} values", patch.len())));
        }
        let (pr, pc) = (pi / s, pi % s);
        let mut k = 0;
        for n in 0..g.frames {
            for i in 0..ph {
                for j in 0..pw {
                    let p = ((n * g.rows) + i * s + pr) * g.cols + j * s + pc;
                    x[p * ch..(p + 1) * ch].copy_from_slice(&patch[k * ch..(k + 1) * ch]);
                    k += 1;
                }
            }
        }
    }
    Ok(x)
}

/// Patch index and patch-local `(row, col)` for a grid position.
pub fn patch_of(row: usize, col: usize, s: usize) -> ((usize, usize), (usize, usize)) {
    ((row % s, col % s), (row / s, col / s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(g: &Grid) -> Vec<f64> {
        (0..g.len()).map(|i| i as f64 * 0.25 - 3.0).collect()
    }

    fn identity_kernel(kernel: [usize; 3], ch: usize) -> Vec<f64> {
        let taps = kernel.iter().product::<usize>();
        let mut w = vec![0.0; taps * ch];
        let center = taps / 2;
        w[center * ch..(center + 1) * ch].fill(1.0);
        w
    }

    #[test]
    fn identity_kernel_is_identity() {
        let g = Grid { frames: 3, rows: 4, cols: 4, channels: 2 };
        let x = ramp(&g);
        let w = identity_kernel([3, 3, 3], 2);
        assert_eq!(conv3d(&x, &g, &w, &[0.0, 0.0], [3, 3, 3], Mode::Video), x);
        assert_eq!(conv3d(&x, &g, &w, &[0.0, 0.0], [3, 3, 3], Mode::Image), x);
    }

    #[test]
    fn image_mode_frames_are_independent() {
        let g = Grid { frames: 3, rows: 4, cols: 4, channels: 2 };
        let w: Vec<f64> = (0..27 * 2).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = ramp(&g);
        let mut x2 = x.clone();
        for v in &mut x2[32..64] {
            *v += 5.0; // frame 1
        }
        let a = conv3d(&x, &g, &w, &[0.1, 0.2], [3, 3, 3], Mode::Image);
        let b = conv3d(&x2, &g, &w, &[0.1, 0.2], [3, 3, 3], Mode::Image);
        assert_eq!(&a[..32], &b[..32]);
        assert_eq!(&a[64..], &b[64..]);
        let c = conv3d(&x2, &g, &w, &[0.1, 0.2], [3, 3, 3], Mode::Video);
        let d = conv3d(&x, &g, &w, &[0.1, 0.2], [3, 3, 3], Mode::Video);
        assert_ne!(&c[..32], &d[..32]);
    }

    #[test]
    fn averaging_kernel_keeps_constant_interior() {
        let g = Grid { frames: 3, rows: 5, cols: 5, channels: 1 };
        let x = vec![2.5f64; g.len()];
        let w = vec![1.0 / 27.0; 27];
        let y = conv3d(&x, &g, &w, &[0.0], [3, 3, 3], Mode::Video);
        for r in 1..4 {
            for c in 1..4 {
                // Direct sum: 27 taps of 2.5/27 each.
                let expect: f64 = (0..27).map(|_| 2.5 / 27.0).sum();
                assert!((y[(5 + r) * 5 + c] - expect).abs() < 1e-12);
                assert!((y[(5 + r) * 5 + c] - 2.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let g = Grid { frames: 2, rows: 3, cols: 3, channels: 2 };
        let x: Vec<f64> = (0..g.len()).map(|i| (i as f64 * 0.7).cos()).collect();
        let w: Vec<f64> = (0..27 * 2).map(|i| (i as f64 * 0.31).sin()).collect();
        let coef: Vec<f64> = (0..g.len()).map(|i| (i as f64 * 1.3).sin()).collect();
        for mode in [Mode::Video, Mode::Image] {
            let loss = |x: &[f64], w: &[f64]| -> f64 {
                conv3d(x, &g, w, &[0.3, -0.1], [3, 3, 3], mode).iter().zip(&coef).map(|(a, b)| a * b).sum()
            };
            let mut dw = vec![0.0; w.len()];
            let mut db = vec![0.0; 2];
            let dx = conv3d_backward(&coef, &x, &g, &w, [3, 3, 3], mode, &mut dw, &mut db);
            let eps = 1e-6;
            for i in 0..x.len() {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[i] += eps;
                xm[i] -= eps;
                assert!(((loss(&xp, &w) - loss(&xm, &w)) / (2.0 * eps) - dx[i]).abs() < 1e-7);
            }
            for i in 0..w.len() {
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp[i] += eps;
                wm[i] -= eps;
                assert!(((loss(&x, &wp) - loss(&x, &wm)) / (2.0 * eps) - dw[i]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn stride_one_is_single_patch() {
        let g = Grid { frames: 2, rows: 3, cols: 2, channels: 3 };
        let x = ramp(&g);
        let p = partition_patches(&x, &g, 1).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0], x);
    }

    #[test]
    fn stride_two_index_enumeration() {
        let g = Grid { frames: 1, rows: 4, cols: 4, channels: 1 };
        let x: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let p = partition_patches(&x, &g, 2).unwrap();
        assert_eq!(p.len(), 4);
        assert!(p.iter().all(|q| q.len() == 4));
        // (1, 3) -> patch (1, 1) = index 3, local (0, 1)
        assert_eq!(patch_of(1, 3, 2), ((1, 1), (0, 1)));
        assert_eq!(p[3][1], (1 * 4 + 3) as f64);
        assert_eq!(p[0], vec![0.0, 2.0, 8.0, 10.0]);
        assert!(partition_patches(&x, &Grid { rows: 3, cols: 4, frames: 1, channels: 1 }, 2).is_err());
    }

    proptest! {
        #[test]
        fn unpartition_inverts_partition(frames in 1usize..4, hs in 1usize..4, ws in 1usize..4, s in 1usize..4, seed in 0u32..1000) {
            let g = Grid { frames, rows: hs * s, cols: ws * s, channels: 3 };
            let x: Vec<f32> = (0..g.len()).map(|i| ((i as u32).wrapping_mul(2654435761) ^ seed) as f32 * 1e-6).collect();
            let p = partition_patches(&x, &g, s).unwrap();
            let back = unpartition_patches(&p, &g, s).unwrap();
            prop_assert_eq!(
                back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                x.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
