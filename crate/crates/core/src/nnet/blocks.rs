use super::layers::{
    add_into, silu_backward, silu_vec, AdaCache, AdaGroupNorm, Conv1d, ConvCache, GroupNorm,
    Linear, NormCache,
};
use super::params::{ParamLayout, ParamStore};
use super::real::{gemm, MatMut, MatRef, Real};

/// conv3 -> SiLU -> AdaGN -> conv3, plus identity or 1x1 skip.
#[derive(Debug, Clone)]
pub(crate) struct ResBlock {
    conv1: Conv1d,
    norm: AdaGroupNorm,
    conv2: Conv1d,
    skip: Option<Conv1d>,
}

pub(crate) struct ResCache<T> {
    c1: ConvCache<T>,
    h1: Vec<T>,
    ada: AdaCache<T>,
    c2: ConvCache<T>,
    skip: Option<ConvCache<T>>,
}

impl ResBlock {
    pub fn register(
        layout: &mut ParamLayout,
        name: &str,
        cin: usize,
        cout: usize,
        groups: usize,
        emb: usize,
    ) -> Self {
        let conv1 = Conv1d::register(layout, &format!("{name}.conv1"), cin, cout, 3, 1, 1, false);
        let norm = AdaGroupNorm::register(layout, &format!("{name}.ada"), cout, groups, emb);
        let conv2 = Conv1d::register(layout, &format!("{name}.conv2"), cout, cout, 3, 1, 1, false);
        let skip = (cin != cout)
            .then(|| Conv1d::register(layout, &format!("{name}.skip"), cin, cout, 1, 1, 0, false));
        Self {
            conv1,
            norm,
            conv2,
            skip,
        }
    }

    pub fn cout(&self) -> usize {
        self.conv2.cout
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: &[T],
        len: usize,
        emb: &[T],
    ) -> (Vec<T>, ResCache<T>) {
        let (h1, c1) = self.conv1.forward(p, x, len);
        let a = silu_vec(&h1);
        let (g, ada) = self.norm.forward(p, &a, len, emb);
        let (mut y, c2) = self.conv2.forward(p, &g, len);
        let skip = match &self.skip {
            Some(conv) => {
                let (s, cache) = conv.forward(p, x, len);
                add_into(&mut y, &s);
                Some(cache)
            }
            None => {
                add_into(&mut y, x);
                None
            }
        };
        (
            y,
            ResCache {
                c1,
                h1,
                ada,
                c2,
                skip,
            },
        )
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        cache: &ResCache<T>,
        dy: &[T],
        emb: &[T],
        grads: &mut [T],
        demb: &mut [T],
    ) -> Vec<T> {
        let dg = self
            .conv2
            .backward(p, &cache.c2, dy, grads, true)
            .expect("dx requested");
        let da = self.norm.backward(p, &cache.ada, &dg, emb, grads, demb);
        let dh1 = silu_backward(&cache.h1, &da);
        let mut dx = self
            .conv1
            .backward(p, &cache.c1, &dh1, grads, true)
            .expect("dx requested");
        match (&self.skip, &cache.skip) {
            (Some(conv), Some(sc)) => {
                let ds = conv.backward(p, sc, dy, grads, true).expect("dx requested");
                add_into(&mut dx, &ds);
            }
            _ => add_into(&mut dx, dy),
        }
        dx
    }
}

/// Multi-head self-attention over the length axis with a residual connection.
#[derive(Debug, Clone)]
pub(crate) struct AttnBlock {
    norm: GroupNorm,
    qkv: Conv1d,
    proj: Conv1d,
    c: usize,
    heads: usize,
}

pub(crate) struct AttnCache<T> {
    norm: NormCache<T>,
    qkv_cache: ConvCache<T>,
    qkv: Vec<T>,
    proj: ConvCache<T>,
    len: usize,
}

/// Query rows processed per tile. Attention weights are never stored whole;
/// the backward pass recomputes them tile by tile.
const TILE: usize = 64;

impl AttnBlock {
    pub fn register(
        layout: &mut ParamLayout,
        name: &str,
        c: usize,
        groups: usize,
        heads: usize,
    ) -> Self {
        assert!(
            heads > 0 && c % heads == 0,
            "channels must divide into heads"
        );
        Self {
            norm: GroupNorm::register(layout, &format!("{name}.norm"), c, groups),
            qkv: Conv1d::register(layout, &format!("{name}.qkv"), c, 3 * c, 1, 1, 0, false),
            proj: Conv1d::register(layout, &format!("{name}.proj"), c, c, 1, 1, 0, true),
            c,
            heads,
        }
    }

    fn head_dim(&self) -> usize {
        self.c / self.heads
    }

    /// Query, key and value slices (`d x len` each) of head `h`.
    fn head<'a, T>(&self, qkv: &'a [T], h: usize, len: usize) -> [&'a [T]; 3] {
        let d = self.head_dim();
        [0, self.c, 2 * self.c].map(|base| &qkv[(base + h * d) * len..(base + (h + 1) * d) * len])
    }

    /// Softmax-normalised scores for query rows `r0..r0 + rows` into `tile`.
    fn scores<T: Real>(
        &self,
        q: &[T],
        k: &[T],
        len: usize,
        r0: usize,
        rows: usize,
        tile: &mut [T],
    ) {
        let d = self.head_dim();
        let scale = T::lit(1.0 / (d as f64).sqrt());
        gemm(
            scale,
            MatRef::strided(&q[r0..], d, rows, len, 1).t(),
            MatRef::new(k, d, len),
            T::zero(),
            MatMut::new(&mut tile[..rows * len], rows, len),
        );
        for row in tile[..rows * len].chunks_exact_mut(len) {
            softmax_in_place(row);
        }
    }

    /// Attention weights of head `h` as a dense `len x len` matrix.
    #[cfg(test)]
    pub fn weights<T: Real>(&self, cache: &AttnCache<T>, h: usize) -> Vec<T> {
        let len = cache.len;
        let [q, k, _] = self.head(&cache.qkv, h, len);
        let mut out = vec![T::zero(); len * len];
        self.scores(q, k, len, 0, len, &mut out);
        out
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: &[T],
        len: usize,
    ) -> (Vec<T>, AttnCache<T>) {
        let (n, norm) = self.norm.forward(p, x, len);
        let (qkv, qkv_cache) = self.qkv.forward(p, &n, len);
        let d = self.head_dim();
        let mut tile = vec![T::zero(); TILE.min(len) * len];
        let mut o = vec![T::zero(); self.c * len];
        for h in 0..self.heads {
            let [q, k, v] = self.head(&qkv, h, len);
            let oh = &mut o[h * d * len..(h + 1) * d * len];
            for r0 in (0..len).step_by(TILE) {
                let rows = TILE.min(len - r0);
                self.scores(q, k, len, r0, rows, &mut tile);
                gemm(
                    T::one(),
                    MatRef::new(v, d, len),
                    MatRef::new(&tile[..rows * len], rows, len).t(),
                    T::zero(),
                    MatMut::strided(&mut oh[r0..], d, rows, len),
                );
            }
        }
        let (out, proj) = self.proj.forward(p, &o, len);
        let mut y = x.to_vec();
        add_into(&mut y, &out);
        (
            y,
            AttnCache {
                norm,
                qkv_cache,
                qkv,
                proj,
                len,
            },
        )
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        cache: &AttnCache<T>,
        dy: &[T],
        grads: &mut [T],
    ) -> Vec<T> {
        let len = cache.len;
        let d = self.head_dim();
        let scale = T::lit(1.0 / (d as f64).sqrt());
        let dout = self
            .proj
            .backward(p, &cache.proj, dy, grads, true)
            .expect("dx requested");
        let mut dqkv = vec![T::zero(); 3 * self.c * len];
        let mut tile = vec![T::zero(); TILE.min(len) * len];
        let mut dtile = vec![T::zero(); TILE.min(len) * len];
        for h in 0..self.heads {
            let [q, k, v] = self.head(&cache.qkv, h, len);
            let doh = &dout[h * d * len..(h + 1) * d * len];
            let (dq_all, rest) = dqkv.split_at_mut(self.c * len);
            let (dk_all, dv_all) = rest.split_at_mut(self.c * len);
            let dq = &mut dq_all[h * d * len..(h + 1) * d * len];
            let dk = &mut dk_all[h * d * len..(h + 1) * d * len];
            let dv = &mut dv_all[h * d * len..(h + 1) * d * len];
            for r0 in (0..len).step_by(TILE) {
                let rows = TILE.min(len - r0);
                self.scores(q, k, len, r0, rows, &mut tile);
                let pt = &tile[..rows * len];
                let do_t = MatRef::strided(&doh[r0..], d, rows, len, 1);
                gemm(
                    T::one(),
                    do_t,
                    MatRef::new(pt, rows, len),
                    T::one(),
                    MatMut::new(dv, d, len),
                );
                let dp = &mut dtile[..rows * len];
                gemm(
                    T::one(),
                    do_t.t(),
                    MatRef::new(v, d, len),
                    T::zero(),
                    MatMut::new(dp, rows, len),
                );
                for (drow, prow) in dp.chunks_exact_mut(len).zip(pt.chunks_exact(len)) {
                    let dot = dot_lanes(drow, prow);
                    for (g, &pv) in drow.iter_mut().zip(prow) {
                        *g = pv * (*g - dot);
                    }
                }
                let ds = MatRef::new(&dtile[..rows * len], rows, len);
                gemm(
                    scale,
                    MatRef::new(k, d, len),
                    ds.t(),
                    T::zero(),
                    MatMut::strided(&mut dq[r0..], d, rows, len),
                );
                gemm(
                    scale,
                    MatRef::strided(&q[r0..], d, rows, len, 1),
                    ds,
                    T::one(),
                    MatMut::new(dk, d, len),
                );
            }
        }
        let dn = self
            .qkv
            .backward(p, &cache.qkv_cache, &dqkv, grads, true)
            .expect("dx requested");
        let mut dx = self.norm.backward(p, &cache.norm, &dn, grads);
        add_into(&mut dx, dy);
        dx
    }
}

/// Sum with eight interleaved accumulators, in a fixed order.
fn sum_lanes<T: Real>(x: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = x.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for (a, &v) in acc.iter_mut().zip(c) {
            *a += v;
        }
    }
    let mut s = acc.iter().copied().sum::<T>();
    for &v in tail {
        s += v;
    }
    s
}

fn dot_lanes<T: Real>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let mut s = xc
        .remainder()
        .iter()
        .zip(yc.remainder())
        .map(|(&a, &b)| a * b)
        .sum::<T>();
    for (a8, b8) in xc.zip(yc) {
        for ((acc, &a), &b) in acc.iter_mut().zip(a8).zip(b8) {
            *acc += a * b;
        }
    }
    s += acc.iter().copied().sum::<T>();
    s
}

fn max_lanes<T: Real>(x: &[T]) -> T {
    let mut acc = [T::neg_infinity(); 8];
    let chunks = x.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for (a, &v) in acc.iter_mut().zip(c) {
            *a = if v > *a { v } else { *a };
        }
    }
    tail.iter()
        .chain(acc.iter())
        .copied()
        .fold(T::neg_infinity(), |m, v| if v > m { v } else { m })
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = max_lanes(row);
    for v in row.iter_mut() {
        *v = (*v - m).exp_shifted();
    }
    let inv = T::one() / sum_lanes(row);
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Nearest-neighbour x2 upsampling followed by a 3-tap convolution.
#[derive(Debug, Clone)]
pub(crate) struct Upsample {
    conv: Conv1d,
}

impl Upsample {
    pub fn register(layout: &mut ParamLayout, name: &str, c: usize) -> Self {
        Self {
            conv: Conv1d::register(layout, &format!("{name}.conv"), c, c, 3, 1, 1, false),
        }
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: &[T],
        len: usize,
    ) -> (Vec<T>, ConvCache<T>) {
        let mut up = Vec::with_capacity(2 * x.len());
        for &v in x {
            up.push(v);
            up.push(v);
        }
        self.conv.forward(p, &up, 2 * len)
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        cache: &ConvCache<T>,
        dy: &[T],
        grads: &mut [T],
    ) -> Vec<T> {
        let dup = self
            .conv
            .backward(p, cache, dy, grads, true)
            .expect("dx requested");
        dup.chunks_exact(2).map(|w| w[0] + w[1]).collect()
    }
}

/// Sinusoidal step features followed by a two-layer MLP.
#[derive(Debug, Clone)]
pub(crate) struct TimeEmbed {
    lin1: Linear,
    lin2: Linear,
    dim: usize,
    t_max: usize,
}

pub(crate) struct TimeCache<T> {
    feats: Vec<T>,
    h1: Vec<T>,
    a1: Vec<T>,
}

impl TimeEmbed {
    pub fn register(
        layout: &mut ParamLayout,
        name: &str,
        dim: usize,
        emb: usize,
        t_max: usize,
    ) -> Self {
        Self {
            lin1: Linear::register(layout, &format!("{name}.lin1"), dim, emb),
            lin2: Linear::register(layout, &format!("{name}.lin2"), emb, emb),
            dim,
            t_max,
        }
    }

    /// `[sin(2 pi t / P_k), cos(2 pi t / P_k)]` with periods spaced
    /// geometrically from `10 * t_max` down to 1.
    pub fn features(&self, t: usize) -> Vec<f64> {
        sinusoid(t, self.dim, self.t_max)
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, t: usize) -> (Vec<T>, TimeCache<T>) {
        let feats: Vec<T> = self.features(t).into_iter().map(T::lit).collect();
        let h1 = self.lin1.forward(p, &feats);
        let a1 = silu_vec(&h1);
        let out = self.lin2.forward(p, &a1);
        (out, TimeCache { feats, h1, a1 })
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        cache: &TimeCache<T>,
        dy: &[T],
        grads: &mut [T],
    ) {
        let mut da1 = vec![T::zero(); cache.a1.len()];
        self.lin2.backward(p, &cache.a1, dy, grads, Some(&mut da1));
        let dh1 = silu_backward(&cache.h1, &da1);
        self.lin1.backward(p, &cache.feats, &dh1, grads, None);
    }
}

pub fn sinusoid(t: usize, dim: usize, t_max: usize) -> Vec<f64> {
    let half = dim / 2;
    let longest = 10.0 * t_max.max(1) as f64;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let frac = if half > 1 {
            k as f64 / (half - 1) as f64
        } else {
            0.0
        };
        let period = longest.powf(1.0 - frac);
        let angle = std::f64::consts::TAU * t as f64 / period;
        out[k] = angle.sin();
        out[half + k] = angle.cos();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::params::ParamStore;
    use crate::nnet::NetConfig;
    use std::sync::Arc;

    fn store(layout: ParamLayout, seed: u64) -> ParamStore<f64> {
        ParamStore::initialise(NetConfig::tiny(), Arc::new(layout), seed)
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut layout = ParamLayout::default();
        let blk = AttnBlock::register(&mut layout, "a", 4, 2, 2);
        let p = store(layout, 3);
        let x: Vec<f64> = (0..4 * 16)
            .map(|i| ((i * 7919) % 23) as f64 / 7.0 - 1.5)
            .collect();
        let (_, cache) = blk.forward(&p, &x, 16);
        let probs: Vec<f64> = (0..2).flat_map(|h| blk.weights(&cache, h)).collect();
        for row in probs.chunks_exact(16) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let mut layout = ParamLayout::default();
        let blk = AttnBlock::register(&mut layout, "a", 4, 2, 2);
        let mut p = store(layout, 5);
        let id = p.layout().find("a.proj.weight").unwrap();
        for (i, v) in p.get_mut(id).iter_mut().enumerate() {
            *v = ((i as f64) * 0.37).sin();
        }
        let len = 12;
        let x: Vec<f64> = (0..4 * len).map(|i| ((i as f64) * 1.3).cos()).collect();
        let perm: Vec<usize> = (0..len).map(|i| (i * 5 + 3) % len).collect();
        let xp: Vec<f64> = (0..4)
            .flat_map(|c| perm.iter().map(move |&j| (c, j)))
            .map(|(c, j)| x[c * len + j])
            .collect();
        let (y, _) = blk.forward(&p, &x, len);
        let (yp, _) = blk.forward(&p, &xp, len);
        for c in 0..4 {
            for (i, &j) in perm.iter().enumerate() {
                let a = y[c * len + j] - x[c * len + j];
                let b = yp[c * len + i] - xp[c * len + i];
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sinusoid_is_bounded_and_distinct() {
        let a = sinusoid(0, 8, 1000);
        assert_eq!(&a[..4], &[0.0; 4]);
        assert_eq!(&a[4..], &[1.0; 4]);
        let b = sinusoid(1, 8, 1000);
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6));
    }
}
