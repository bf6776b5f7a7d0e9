//! Grouped multi-head softmax attention.
//!
//! Each [`Group`] pairs a contiguous block of query rows with a contiguous
//! block of key rows; queries never see keys outside their group. Patch
//! self-attention uses one group per patch (or one per frame in image
//! mode), cross-attention uses one group per frame.

use crate::linalg::{self, gemm, NormCache, Real, View};
use crate::params::{impl_params, Linear, Norm};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Group {
    pub q0: usize,
    pub qn: usize,
    pub k0: usize,
    pub kn: usize,
}

/// Contiguous equal-sized query/key groups.
pub fn uniform_groups(count: usize, q_len: usize, k_len: usize) -> Vec<Group> {
    (0..count).map(|g| Group { q0: g * q_len, qn: q_len, k0: g * k_len, kn: k_len }).collect()
}

/// Softmax attention over `q: Nq x C`, `k, v: Nk x C` split into `heads`.
/// Returns the context (`Nq x C`) and the attention weights, stored as one
/// `qn x kn` block per (group, head).
pub fn attend<T: Real>(q: &[T], k: &[T], v: &[T], c: usize, heads: usize, groups: &[Group]) -> (Vec<T>, Vec<T>) {
    let dh = c / heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let nq = q.len() / c;
    let mut ctx = vec![T::zero(); nq * c];
    let total: usize = groups.iter().map(|g| g.qn * g.kn * heads).sum();
    let mut probs = vec![T::zero(); total];
    let mut off = 0;
    for g in groups {
        for h in 0..heads {
            let p = &mut probs[off..off + g.qn * g.kn];
            let qh = View::new(&q[g.q0 * c + h * dh..], g.qn, dh);
            let qh = View { rs: c, ..qh };
            let kh_t = View::strided(&k[g.k0 * c + h * dh..], dh, g.kn, 1, c);
            gemm(scale, qh, kh_t, T::zero(), p, g.kn);
            for row in p.chunks_exact_mut(g.kn) {
                linalg::softmax_in_place(row);
            }
            let vh = View::strided(&v[g.k0 * c + h * dh..], g.kn, dh, c, 1);
            gemm(T::one(), View::new(p, g.qn, g.kn), vh, T::zero(), &mut ctx[g.q0 * c + h * dh..], c);
            off += g.qn * g.kn;
        }
    }
    (ctx, probs)
}

/// Adjoint of [`attend`]: returns `(dq, dk, dv)`.
#[allow(clippy::too_many_arguments)]
pub fn attend_backward<T: Real>(
    d_ctx: &[T],
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    c: usize,
    heads: usize,
    groups: &[Group],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dh = c / heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let mut dq = vec![T::zero(); q.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    let mut off = 0;
    let mut ds = Vec::new();
    for g in groups {
        for h in 0..heads {
            let p = &probs[off..off + g.qn * g.kn];
            let dctx_h = View::strided(&d_ctx[g.q0 * c + h * dh..], g.qn, dh, c, 1);
            // dV_h += P^T dctx_h
            gemm(T::one(), View::new(p, g.qn, g.kn).t(), dctx_h, T::one(), &mut dv[g.k0 * c + h * dh..], c);
            // dP = dctx_h V_h^T
            ds.clear();
            ds.resize(g.qn * g.kn, T::zero());
            let vh_t = View::strided(&v[g.k0 * c + h * dh..], dh, g.kn, 1, c);
            gemm(T::one(), dctx_h, vh_t, T::zero(), &mut ds, g.kn);
            for (srow, prow) in ds.chunks_exact_mut(g.kn).zip(p.chunks_exact(g.kn)) {
                let dot: T = srow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                for (s, &pv) in srow.iter_mut().zip(prow) {
                    *s = pv * (*s - dot) * scale;
                }
            }
            let kh = View::strided(&k[g.k0 * c + h * dh..], g.kn, dh, c, 1);
            gemm(T::one(), View::new(&ds, g.qn, g.kn), kh, T::one(), &mut dq[g.q0 * c + h * dh..], c);
            let qh = View::strided(&q[g.q0 * c + h * dh..], g.qn, dh, c, 1);
            gemm(T::one(), View::new(&ds, g.qn, g.kn).t(), qh, T::one(), &mut dk[g.k0 * c + h * dh..], c);
            off += g.qn * g.kn;
        }
    }
    (dq, dk, dv)
}

/// Pre-norm multi-head attention block with a residual connection.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    pub norm: Norm<T>,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
}

impl_params!(Attention {} nested { norm, q, k, v, o });

impl<T: Real> Attention<T> {
    pub fn init<R: Rng + ?Sized>(c: usize, std: f64, out_std: f64, rng: &mut R) -> Self {
        Attention {
            norm: Norm::new(c),
            q: Linear::init(c, c, std, rng),
            // A key bias only shifts each query's scores uniformly.
            k: Linear::init_unbiased(c, c, std, rng),
            v: Linear::init(c, c, std, rng),
            o: Linear::init(c, c, out_std, rng),
        }
    }

    pub fn zeros(c: usize) -> Self {
        Attention {
            norm: Norm::zeros(c),
            q: Linear::zeros(c, c),
            k: Linear::zeros_unbiased(c, c),
            v: Linear::zeros(c, c),
            o: Linear::zeros(c, c),
        }
    }
}

/// Everything the attention adjoint needs.
#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    pub norm: NormCache<T>,
    pub normed: Vec<T>,
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
    pub probs: Vec<T>,
    pub ctx: Vec<T>,
    pub groups: Vec<Group>,
}

/// `x + O(attn(LN(x) Wq, LN(x) Wk, LN(x) Wv))`.
pub fn self_attention<T: Real>(x: &[T], a: &Attention<T>, heads: usize, groups: Vec<Group>) -> (Vec<T>, AttentionCache<T>) {
    let c = a.q.d_in();
    let rows = x.len() / c;
    let (normed, norm) = a.norm.forward(x);
    let q = a.q.forward(&normed, rows);
    let k = a.k.forward(&normed, rows);
    let v = a.v.forward(&normed, rows);
    let (ctx, probs) = attend(&q, &k, &v, c, heads, &groups);
    let mut out = a.o.forward(&ctx, rows);
    linalg::add_in_place(&mut out, x);
    (out, AttentionCache { norm, normed, q, k, v, probs, ctx, groups })
}

pub fn self_attention_backward<T: Real>(
    d_out: &[T],
    cache: &AttentionCache<T>,
    a: &Attention<T>,
    heads: usize,
    g: &mut Attention<T>,
) -> Vec<T> {
    let c = a.q.d_in();
    let rows = d_out.len() / c;
    let d_ctx = a.o.backward(d_out, &cache.ctx, rows, &mut g.o);
    let (dq, dk, dv) = attend_backward(&d_ctx, &cache.q, &cache.k, &cache.v, &cache.probs, c, heads, &cache.groups);
    let mut d_normed = a.q.backward(&dq, &cache.normed, rows, &mut g.q);
    linalg::add_in_place(&mut d_normed, &a.k.backward(&dk, &cache.normed, rows, &mut g.k));
    linalg::add_in_place(&mut d_normed, &a.v.backward(&dv, &cache.normed, rows, &mut g.v));
    let mut dx = a.norm.backward(&d_normed, &cache.norm, &mut g.norm);
    linalg::add_in_place(&mut dx, d_out);
    dx
}

/// `x + O(attn(LN(x) Wq, m Wk, m Wv))` with keys and values taken from
/// the context rows `m`.
pub fn cross_attention_block<T: Real>(
    x: &[T],
    m: &[T],
    a: &Attention<T>,
    heads: usize,
    groups: Vec<Group>,
) -> (Vec<T>, AttentionCache<T>) {
    let c = a.q.d_in();
    let rows = x.len() / c;
    let m_rows = m.len() / c;
    let (normed, norm) = a.norm.forward(x);
    let q = a.q.forward(&normed, rows);
    let k = a.k.forward(m, m_rows);
    let v = a.v.forward(m, m_rows);
    let (ctx, probs) = attend(&q, &k, &v, c, heads, &groups);
    let mut out = a.o.forward(&ctx, rows);
    linalg::add_in_place(&mut out, x);
    (out, AttentionCache { norm, normed, q, k, v, probs, ctx, groups })
}

/// Returns `(dx, dm)`.
pub fn cross_attention_block_backward<T: Real>(
    d_out: &[T],
    m: &[T],
    cache: &AttentionCache<T>,
    a: &Attention<T>,
    heads: usize,
    g: &mut Attention<T>,
) -> (Vec<T>, Vec<T>) {
    let c = a.q.d_in();
    let rows = d_out.len() / c;
    let m_rows = m.len() / c;
    let d_ctx = a.o.backward(d_out, &cache.ctx, rows, &mut g.o);
    let (dq, dk, dv) = attend_backward(&d_ctx, &cache.q, &cache.k, &cache.v, &cache.probs, c, heads, &cache.groups);
    let d_normed = a.q.backward(&dq, &cache.normed, rows, &mut g.q);
    let mut dm = a.k.backward(&dk, m, m_rows, &mut g.k);
    linalg::add_in_place(&mut dm, &a.v.backward(&dv, m, m_rows, &mut g.v));
    let mut dx = a.norm.backward(&d_normed, &cache.norm, &mut g.norm);
    linalg::add_in_place(&mut dx, d_out);
    (dx, dm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive(q: &[f64], k: &[f64], v: &[f64], c: usize, heads: usize) -> Vec<f64> {
        let dh = c / heads;
        let (nq, nk) = (q.len() / c, k.len() / c);
        let mut out = vec![0.0; nq * c];
        for h in 0..heads {
            for i in 0..nq {
                let s: Vec<f64> = (0..nk)
                    .map(|j| (0..dh).map(|d| q[i * c + h * dh + d] * k[j * c + h * dh + d]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for d in 0..dh {
                    out[i * c + h * dh + d] = (0..nk).map(|j| e[j] / z * v[j * c + h * dh + d]).sum();
                }
            }
        }
        out
    }

    #[test]
    fn attend_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.random::<f64>() - 0.5).collect() };
        let (q, k, v) = (r(5 * 8, &mut rng), r(3 * 8, &mut rng), r(3 * 8, &mut rng));
        let (ctx, probs) = attend(&q, &k, &v, 8, 2, &[Group { q0: 0, qn: 5, k0: 0, kn: 3 }]);
        let want = naive(&q, &k, &v, 8, 2);
        for (a, b) in ctx.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        for row in probs.chunks_exact(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attend_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.random::<f64>() - 0.5).collect() };
        let c = 4;
        let groups = vec![Group { q0: 0, qn: 2, k0: 0, kn: 3 }, Group { q0: 2, qn: 3, k0: 3, kn: 2 }];
        let (q, k, v) = (r(5 * c, &mut rng), r(5 * c, &mut rng), r(5 * c, &mut rng));
        let w = r(5 * c, &mut rng);
        let loss = |q: &[f64], k: &[f64], v: &[f64]| -> f64 {
            attend(q, k, v, c, 2, &groups).0.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (_, probs) = attend(&q, &k, &v, c, 2, &groups);
        let (dq, dk, dv) = attend_backward(&w, &q, &k, &v, &probs, c, 2, &groups);
        let eps = 1e-6;
        for i in 0..q.len() {
            let mut qp = q.clone();
            qp[i] += eps;
            let mut qm = q.clone();
            qm[i] -= eps;
            assert!(((loss(&qp, &k, &v) - loss(&qm, &k, &v)) / (2.0 * eps) - dq[i]).abs() < 1e-8);
            let mut kp = k.clone();
            kp[i] += eps;
            let mut km = k.clone();
            km[i] -= eps;
            assert!(((loss(&q, &kp, &v) - loss(&q, &km, &v)) / (2.0 * eps) - dk[i]).abs() < 1e-8);
            let mut vp = v.clone();
            vp[i] += eps;
            let mut vm = v.clone();
            vm[i] -= eps;
            assert!(((loss(&q, &k, &vp) - loss(&q, &k, &vm)) / (2.0 * eps) - dv[i]).abs() < 1e-8);
        }
    }
}
