//! Primitive layers with explicit backward passes. Activations are stored
//! channel-major: element `(c, l)` lives at `c * len + l`.

use super::params::{Init, ParamId, ParamLayout, ParamStore};
use super::real::{gemm, MatMut, MatRef, Real};

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub(crate) fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub(crate) fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

pub(crate) fn silu_vec<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| silu(v)).collect()
}

/// `dx = dy * silu'(x)`.
pub(crate) fn silu_backward<T: Real>(x: &[T], dy: &[T]) -> Vec<T> {
    x.iter().zip(dy).map(|(&v, &g)| g * silu_grad(v)).collect()
}

pub(crate) fn add_into<T: Real>(acc: &mut [T], x: &[T]) {
    debug_assert_eq!(acc.len(), x.len());
    for (a, &b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

pub(crate) fn max_abs<T: Real>(x: &[T]) -> f64 {
    x.iter().fold(0.0f64, |m, v| {
        let a = v.as_f64().abs();
        if a.is_nan() || m.is_nan() {
            f64::NAN
        } else {
            m.max(a)
        }
    })
}

fn grad_slice<'a, T>(layout: &ParamLayout, grads: &'a mut [T], id: ParamId) -> &'a mut [T] {
    let r = layout.range(id);
    &mut grads[r]
}

/// Dense layer on a single vector, `y = W x + b` with `W` of shape `(out, in)`.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
    din: usize,
    dout: usize,
}

impl Linear {
    pub fn register(layout: &mut ParamLayout, name: &str, din: usize, dout: usize) -> Self {
        Self::register_with(layout, name, din, dout, Init::FanIn(din))
    }

    pub fn register_with(
        layout: &mut ParamLayout,
        name: &str,
        din: usize,
        dout: usize,
        init: Init,
    ) -> Self {
        let w = layout.add(format!("{name}.weight"), &[dout, din], init);
        let b = layout.add(format!("{name}.bias"), &[dout], Init::Zeros);
        Self { w, b, din, dout }
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.din);
        let w = p.get(self.w);
        p.get(self.b)
            .iter()
            .enumerate()
            .map(|(o, &b)| {
                let row = &w[o * self.din..(o + 1) * self.din];
                b + row.iter().zip(x).map(|(&a, &v)| a * v).sum::<T>()
            })
            .collect()
    }

    /// Accumulates parameter gradients; adds `W^T dy` into `dx` when given.
    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: &[T],
        dy: &[T],
        grads: &mut [T],
        dx: Option<&mut [T]>,
    ) {
        let layout = p.layout();
        {
            let gw = grad_slice(layout, grads, self.w);
            for o in 0..self.dout {
                let g = dy[o];
                for (gi, &v) in gw[o * self.din..(o + 1) * self.din].iter_mut().zip(x) {
                    *gi += g * v;
                }
            }
        }
        add_into(grad_slice(layout, grads, self.b), dy);
        if let Some(dx) = dx {
            let w = p.get(self.w);
            for o in 0..self.dout {
                let g = dy[o];
                for (d, &a) in dx.iter_mut().zip(&w[o * self.din..(o + 1) * self.din]) {
                    *d += g * a;
                }
            }
        }
    }
}

/// 1-D convolution with zero padding, computed as im2col followed by GEMM.
#[derive(Debug, Clone)]
pub(crate) struct Conv1d {
    w: ParamId,
    b: ParamId,
    pub cin: usize,
    pub cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

pub(crate) struct ConvCache<T> {
    col: Vec<T>,
    lin: usize,
    lout: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        layout: &mut ParamLayout,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        zero: bool,
    ) -> Self {
        let init = if zero {
            Init::Zeros
        } else {
            Init::FanIn(cin * k)
        };
        let w = layout.add(format!("{name}.weight"), &[cout, cin, k], init);
        let b = layout.add(format!("{name}.bias"), &[cout], Init::Zeros);
        Self {
            w,
            b,
            cin,
            cout,
            k,
            stride,
            pad,
        }
    }

    pub fn out_len(&self, lin: usize) -> usize {
        (lin + 2 * self.pad - self.k) / self.stride + 1
    }

    fn im2col<T: Real>(&self, x: &[T], lin: usize, lout: usize) -> Vec<T> {
        if self.k == 1 && self.stride == 1 && self.pad == 0 {
            return x.to_vec();
        }
        let mut col = vec![T::zero(); self.cin * self.k * lout];
        for ci in 0..self.cin {
            let xr = &x[ci * lin..(ci + 1) * lin];
            for kk in 0..self.k {
                let row = &mut col[(ci * self.k + kk) * lout..(ci * self.k + kk + 1) * lout];
                for (lo, r) in row.iter_mut().enumerate() {
                    let src = (lo * self.stride + kk) as isize - self.pad as isize;
                    if src >= 0 && (src as usize) < lin {
                        *r = xr[src as usize];
                    }
                }
            }
        }
        col
    }

    fn col2im<T: Real>(&self, dcol: &[T], lin: usize, lout: usize) -> Vec<T> {
        if self.k == 1 && self.stride == 1 && self.pad == 0 {
            return dcol.to_vec();
        }
        let mut dx = vec![T::zero(); self.cin * lin];
        for ci in 0..self.cin {
            let dr = &mut dx[ci * lin..(ci + 1) * lin];
            for kk in 0..self.k {
                let row = &dcol[(ci * self.k + kk) * lout..(ci * self.k + kk + 1) * lout];
                for (lo, &g) in row.iter().enumerate() {
                    let src = (lo * self.stride + kk) as isize - self.pad as isize;
                    if src >= 0 && (src as usize) < lin {
                        dr[src as usize] += g;
                    }
                }
            }
        }
        dx
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: &[T],
        lin: usize,
    ) -> (Vec<T>, ConvCache<T>) {
        debug_assert_eq!(x.len(), self.cin * lin);
        let lout = self.out_len(lin);
        let col = self.im2col(x, lin, lout);
        let mut out = Vec::with_capacity(self.cout * lout);
        for &b in p.get(self.b) {
            out.extend(std::iter::repeat(b).take(lout));
        }
        let ck = self.cin * self.k;
        gemm(
            T::one(),
            MatRef::new(p.get(self.w), self.cout, ck),
            MatRef::new(&col, ck, lout),
            T::one(),
            MatMut::new(&mut out, self.cout, lout),
        );
        (out, ConvCache { col, lin, lout })
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        cache: &ConvCache<T>,
        dy: &[T],
        grads: &mut [T],
        need_dx: bool,
    ) -> Option<Vec<T>> {
        let layout = p.layout();
        let lout = cache.lout;
        let ck = self.cin * self.k;
        gemm(
            T::one(),
            MatRef::new(dy, self.cout, lout),
            MatRef::new(&cache.col, ck, lout).t(),
            T::one(),
            MatMut::new(grad_slice(layout, grads, self.w), self.cout, ck),
        );
        {
            let gb = grad_slice(layout, grads, self.b);
            for (o, g) in gb.iter_mut().enumerate() {
                *g += dy[o * lout..(o + 1) * lout].iter().copied().sum::<T>();
            }
        }
        if !need_dx {
            return None;
        }
        let mut dcol = vec![T::zero(); ck * lout];
        gemm(
            T::one(),
            MatRef::new(p.get(self.w), self.cout, ck).t(),
            MatRef::new(dy, self.cout, lout),
            T::zero(),
            MatMut::new(&mut dcol, ck, lout),
        );
        Some(self.col2im(&dcol, cache.lin, lout))
    }
}

/// Group normalisation with a per-channel affine transform.
#[derive(Debug, Clone)]
pub(crate) struct GroupNorm {
    gamma: ParamId,
    beta: ParamId,
    c: usize,
    groups: usize,
}

pub(crate) struct NormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    len: usize,
}

pub(crate) const NORM_EPS: f64 = 1e-5;

impl GroupNorm {
    pub fn register(layout: &mut ParamLayout, name: &str, c: usize, groups: usize) -> Self {
        assert!(
            groups > 0 && c % groups == 0,
            "channels must divide into groups"
        );
        let gamma = layout.add(format!("{name}.weight"), &[c], Init::Ones);
        let beta = layout.add(format!("{name}.bias"), &[c], Init::Zeros);
        Self {
            gamma,
            beta,
            c,
            groups,
        }
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: &[T],
        len: usize,
    ) -> (Vec<T>, NormCache<T>) {
        debug_assert_eq!(x.len(), self.c * len);
        let gsize = (self.c / self.groups) * len;
        let n = T::lit(gsize as f64);
        let eps = T::lit(NORM_EPS);
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let xs = &x[g * gsize..(g + 1) * gsize];
            let mean = xs.iter().copied().sum::<T>() / n;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (h, &v) in xhat[g * gsize..(g + 1) * gsize].iter_mut().zip(xs) {
                *h = (v - mean) * is;
            }
        }
        let gamma = p.get(self.gamma);
        let beta = p.get(self.beta);
        let mut y = xhat.clone();
        for c in 0..self.c {
            for v in &mut y[c * len..(c + 1) * len] {
                *v = *v * gamma[c] + beta[c];
            }
        }
        (y, NormCache { xhat, inv_std, len })
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        cache: &NormCache<T>,
        dy: &[T],
        grads: &mut [T],
    ) -> Vec<T> {
        let layout = p.layout();
        let len = cache.len;
        let gamma = p.get(self.gamma);
        let mut dxhat = vec![T::zero(); dy.len()];
        {
            let mut dg = vec![T::zero(); self.c];
            let mut db = vec![T::zero(); self.c];
            for c in 0..self.c {
                for l in c * len..(c + 1) * len {
                    dg[c] += dy[l] * cache.xhat[l];
                    db[c] += dy[l];
                    dxhat[l] = dy[l] * gamma[c];
                }
            }
            add_into(grad_slice(layout, grads, self.gamma), &dg);
            add_into(grad_slice(layout, grads, self.beta), &db);
        }
        let gsize = (self.c / self.groups) * len;
        let n = T::lit(gsize as f64);
        let mut dx = vec![T::zero(); dy.len()];
        for g in 0..self.groups {
            let r = g * gsize..(g + 1) * gsize;
            let dh = &dxhat[r.clone()];
            let xh = &cache.xhat[r.clone()];
            let mean_dh = dh.iter().copied().sum::<T>() / n;
            let mean_dhx = dh.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / n;
            let is = cache.inv_std[g];
            for ((d, &a), &b) in dx[r].iter_mut().zip(dh).zip(xh) {
                *d = is * (a - mean_dh - b * mean_dhx);
            }
        }
        dx
    }
}

/// Group norm modulated by the time embedding:
/// `y = norm(x) * (1 + s) + b` with `[s; b] = Linear(emb)`.
#[derive(Debug, Clone)]
pub(crate) struct AdaGroupNorm {
    norm: GroupNorm,
    emb: Linear,
    c: usize,
}

pub(crate) struct AdaCache<T> {
    norm: NormCache<T>,
    n: Vec<T>,
    scale: Vec<T>,
}

impl AdaGroupNorm {
    pub fn register(
        layout: &mut ParamLayout,
        name: &str,
        c: usize,
        groups: usize,
        emb_dim: usize,
    ) -> Self {
        Self {
            norm: GroupNorm::register(layout, &format!("{name}.norm"), c, groups),
            emb: Linear::register(layout, &format!("{name}.emb"), emb_dim, 2 * c),
            c,
        }
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: &[T],
        len: usize,
        emb: &[T],
    ) -> (Vec<T>, AdaCache<T>) {
        let (n, norm) = self.norm.forward(p, x, len);
        let ss = self.emb.forward(p, emb);
        let (scale, shift) = ss.split_at(self.c);
        let mut y = n.clone();
        for c in 0..self.c {
            let a = T::one() + scale[c];
            for v in &mut y[c * len..(c + 1) * len] {
                *v = *v * a + shift[c];
            }
        }
        (
            y,
            AdaCache {
                norm,
                n,
                scale: scale.to_vec(),
            },
        )
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        cache: &AdaCache<T>,
        dy: &[T],
        emb: &[T],
        grads: &mut [T],
        demb: &mut [T],
    ) -> Vec<T> {
        let len = cache.norm.len;
        let mut dss = vec![T::zero(); 2 * self.c];
        let mut dn = vec![T::zero(); dy.len()];
        for c in 0..self.c {
            let a = T::one() + cache.scale[c];
            for l in c * len..(c + 1) * len {
                dss[c] += dy[l] * cache.n[l];
                dss[self.c + c] += dy[l];
                dn[l] = dy[l] * a;
            }
        }
        self.emb.backward(p, emb, &dss, grads, Some(demb));
        self.norm.backward(p, &cache.norm, &dn, grads)
    }
}
