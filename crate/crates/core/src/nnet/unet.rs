use std::sync::Arc;

use super::blocks::{AttnBlock, AttnCache, ResBlock, ResCache, TimeCache, TimeEmbed, Upsample};
use super::layers::{max_abs, silu_backward, silu_vec, Conv1d, ConvCache};
use super::params::{ParamLayout, ParamStore};
use super::real::Real;
use super::NetConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct EncLevel {
    res: ResBlock,
    attn: AttnBlock,
    down: Conv1d,
}

#[derive(Debug, Clone)]
struct DecLevel {
    up: Upsample,
    res: ResBlock,
    attn: AttnBlock,
}

/// The 1-D U-Net noise predictor. Holds the architecture only; parameters
/// live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct UNet {
    cfg: NetConfig,
    layout: Arc<ParamLayout>,
    time: TimeEmbed,
    stem: Conv1d,
    enc: Vec<EncLevel>,
    mid_res: ResBlock,
    mid_attn: AttnBlock,
    dec: Vec<DecLevel>,
    head: Conv1d,
    attention: bool,
}

struct EncTape<T> {
    res: ResCache<T>,
    attn: Option<AttnCache<T>>,
    down: ConvCache<T>,
}

struct DecTape<T> {
    up: ConvCache<T>,
    res: ResCache<T>,
    attn: Option<AttnCache<T>>,
}

/// Everything the backward pass needs from a forward pass.
pub struct Tape<T> {
    time: TimeCache<T>,
    temb: Vec<T>,
    emb_act: Vec<T>,
    stem: ConvCache<T>,
    enc: Vec<EncTape<T>>,
    mid_res: ResCache<T>,
    mid_attn: Option<AttnCache<T>>,
    dec: Vec<DecTape<T>>,
    head: ConvCache<T>,
    pad_left: usize,
    peaks: Vec<(String, f64)>,
}

impl<T> Tape<T> {
    /// Largest absolute activation after each block, in execution order.
    pub fn activation_peaks(&self) -> &[(String, f64)] {
        &self.peaks
    }
}

fn guard<T: Real>(peaks: &mut Vec<(String, f64)>, name: String, x: &[T]) -> Result<()> {
    let m = max_abs(x);
    if !m.is_finite() {
        return Err(Error::NonFinite(format!("activation in layer {name}")));
    }
    peaks.push((name, m));
    Ok(())
}

pub(crate) fn reflect_pad<T: Copy>(x: &[T], left: usize, right: usize) -> Vec<T> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + left + right);
    out.extend((0..left).map(|i| x[left - i]));
    out.extend_from_slice(x);
    out.extend((0..right).map(|j| x[n - 2 - j]));
    out
}

impl UNet {
    pub fn new(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut layout = ParamLayout::default();
        let base = cfg.base_channels;
        let groups = cfg.norm_groups;
        let heads = cfg.heads;
        let emb = cfg.time_embed_dim;
        let time = TimeEmbed::register(&mut layout, "time", base, emb, cfg.diffusion_steps);
        let stem = Conv1d::register(&mut layout, "stem", 1, base, 3, 1, 1, false);
        let chans: Vec<usize> = cfg.channel_mults.iter().map(|m| base * m).collect();
        let mut enc = Vec::with_capacity(chans.len());
        let mut prev = base;
        for (i, &c) in chans.iter().enumerate() {
            enc.push(EncLevel {
                res: ResBlock::register(&mut layout, &format!("enc{i}.res"), prev, c, groups, emb),
                attn: AttnBlock::register(&mut layout, &format!("enc{i}.attn"), c, groups, heads),
                down: Conv1d::register(&mut layout, &format!("enc{i}.down"), c, c, 3, 2, 1, false),
            });
            prev = c;
        }
        let last = prev;
        let mid_res = ResBlock::register(&mut layout, "mid.res", last, last, groups, emb);
        let mid_attn = AttnBlock::register(&mut layout, "mid.attn", last, groups, heads);
        let mut dec = Vec::with_capacity(chans.len());
        for (i, &c) in chans.iter().enumerate() {
            let below = chans.get(i + 1).copied().unwrap_or(last);
            dec.push(DecLevel {
                up: Upsample::register(&mut layout, &format!("dec{i}.up"), below),
                res: ResBlock::register(
                    &mut layout,
                    &format!("dec{i}.res"),
                    below + c,
                    c,
                    groups,
                    emb,
                ),
                attn: AttnBlock::register(&mut layout, &format!("dec{i}.attn"), c, groups, heads),
            });
        }
        let head = Conv1d::register(&mut layout, "head", base, 1, 3, 1, 1, false);
        Ok(Self {
            cfg,
            layout: Arc::new(layout),
            time,
            stem,
            enc,
            mid_res,
            mid_attn,
            dec,
            head,
            attention: true,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// The same network with every attention block replaced by the identity.
    pub fn without_attention(&self) -> Self {
        Self {
            attention: false,
            ..self.clone()
        }
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> ParamStore<T> {
        ParamStore::initialise(self.cfg.clone(), Arc::clone(&self.layout), seed)
    }

    /// Wrap raw values (layout order) into a store for this network.
    pub fn params_from_values<T: Real>(&self, values: Vec<T>) -> Result<ParamStore<T>> {
        ParamStore::from_parts(self.cfg.clone(), Arc::clone(&self.layout), values)
    }

    fn check_params<T: Real>(&self, p: &ParamStore<T>) -> Result<()> {
        if p.config() != &self.cfg || p.layout() != self.layout.as_ref() {
            return Err(Error::invalid("parameter store does not match the network"));
        }
        Ok(())
    }

    /// Learned time embedding for step `t`.
    pub fn time_embed<T: Real>(&self, p: &ParamStore<T>, t: usize) -> Result<Vec<T>> {
        self.check_params(p)?;
        if t > self.cfg.diffusion_steps {
            return Err(Error::StepOutOfRange {
                t,
                t_max: self.cfg.diffusion_steps,
            });
        }
        Ok(self.time.forward(p, t).0)
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, x: &[T], t: usize) -> Result<Vec<T>> {
        self.forward_tape(p, x, t).map(|(y, _)| y)
    }

    pub fn forward_tape<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: &[T],
        t: usize,
    ) -> Result<(Vec<T>, Tape<T>)> {
        self.check_params(p)?;
        let cfg = &self.cfg;
        if x.len() != cfg.input_len {
            return Err(Error::LengthMismatch {
                expected: cfg.input_len,
                got: x.len(),
            });
        }
        if t > cfg.diffusion_steps {
            return Err(Error::StepOutOfRange {
                t,
                t_max: cfg.diffusion_steps,
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        let mut peaks = Vec::new();
        let (temb, time) = self.time.forward(p, t);
        guard(&mut peaks, "time".into(), &temb)?;
        let emb_act = silu_vec(&temb);

        let total = cfg.padded_len - cfg.input_len;
        let pad_left = total / 2;
        let xp = reflect_pad(x, pad_left, total - pad_left);
        let mut len = cfg.padded_len;
        let (mut h, stem) = self.stem.forward(p, &xp, len);
        guard(&mut peaks, "stem".into(), &h)?;

        let mut skips = Vec::with_capacity(self.enc.len());
        let mut enc = Vec::with_capacity(self.enc.len());
        for (i, lvl) in self.enc.iter().enumerate() {
            let (r, res) = lvl.res.forward(p, &h, len, &emb_act);
            guard(&mut peaks, format!("enc{i}.res"), &r)?;
            h = r;
            let attn = if self.attention {
                let (a, cache) = lvl.attn.forward(p, &h, len);
                guard(&mut peaks, format!("enc{i}.attn"), &a)?;
                h = a;
                Some(cache)
            } else {
                None
            };
            let (d, down) = lvl.down.forward(p, &h, len);
            skips.push(std::mem::replace(&mut h, d));
            len /= 2;
            guard(&mut peaks, format!("enc{i}.down"), &h)?;
            enc.push(EncTape { res, attn, down });
        }

        let (r, mid_res) = self.mid_res.forward(p, &h, len, &emb_act);
        guard(&mut peaks, "mid.res".into(), &r)?;
        h = r;
        let mid_attn = if self.attention {
            let (a, cache) = self.mid_attn.forward(p, &h, len);
            guard(&mut peaks, "mid.attn".into(), &a)?;
            h = a;
            Some(cache)
        } else {
            None
        };

        let mut dec: Vec<Option<DecTape<T>>> = (0..self.dec.len()).map(|_| None).collect();
        for i in (0..self.dec.len()).rev() {
            let lvl = &self.dec[i];
            let (u, up) = lvl.up.forward(p, &h, len);
            len *= 2;
            guard(&mut peaks, format!("dec{i}.up"), &u)?;
            let mut cat = u;
            cat.extend_from_slice(&skips[i]);
            let (r, res) = lvl.res.forward(p, &cat, len, &emb_act);
            guard(&mut peaks, format!("dec{i}.res"), &r)?;
            h = r;
            let attn = if self.attention {
                let (a, cache) = lvl.attn.forward(p, &h, len);
                guard(&mut peaks, format!("dec{i}.attn"), &a)?;
                h = a;
                Some(cache)
            } else {
                None
            };
            dec[i] = Some(DecTape { up, res, attn });
        }

        let (out, head) = self.head.forward(p, &h, len);
        guard(&mut peaks, "head".into(), &out)?;
        let y = out[pad_left..pad_left + cfg.input_len].to_vec();
        let tape = Tape {
            time,
            temb,
            emb_act,
            stem,
            enc,
            mid_res,
            mid_attn,
            dec: dec
                .into_iter()
                .map(|d| d.expect("every level ran"))
                .collect(),
            head,
            pad_left,
            peaks,
        };
        Ok((y, tape))
    }

    /// Accumulate `d loss / d params` into `grads` given `dy = d loss / d output`.
    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        tape: &Tape<T>,
        dy: &[T],
        grads: &mut [T],
    ) -> Result<()> {
        self.check_params(p)?;
        let cfg = &self.cfg;
        if dy.len() != cfg.input_len {
            return Err(Error::LengthMismatch {
                expected: cfg.input_len,
                got: dy.len(),
            });
        }
        if grads.len() != p.num_params() {
            return Err(Error::LengthMismatch {
                expected: p.num_params(),
                got: grads.len(),
            });
        }
        let mut dout = vec![T::zero(); cfg.padded_len];
        dout[tape.pad_left..tape.pad_left + cfg.input_len].copy_from_slice(dy);
        let mut demb = vec![T::zero(); tape.emb_act.len()];
        let mut dh = self
            .head
            .backward(p, &tape.head, &dout, grads, true)
            .expect("dx requested");

        let mut len = cfg.padded_len;
        let mut dskips = Vec::with_capacity(self.dec.len());
        for (lvl, tp) in self.dec.iter().zip(&tape.dec) {
            if let Some(cache) = &tp.attn {
                dh = lvl.attn.backward(p, cache, &dh, grads);
            }
            let dcat = lvl
                .res
                .backward(p, &tp.res, &dh, &tape.emb_act, grads, &mut demb);
            let split = dcat.len() - lvl.res.cout() * len;
            dskips.push(dcat[split..].to_vec());
            dh = lvl.up.backward(p, &tp.up, &dcat[..split], grads);
            len /= 2;
        }

        if let Some(cache) = &tape.mid_attn {
            dh = self.mid_attn.backward(p, cache, &dh, grads);
        }
        dh = self
            .mid_res
            .backward(p, &tape.mid_res, &dh, &tape.emb_act, grads, &mut demb);

        for (i, (lvl, tp)) in self.enc.iter().zip(&tape.enc).enumerate().rev() {
            dh = lvl
                .down
                .backward(p, &tp.down, &dh, grads, true)
                .expect("dx requested");
            for (a, &b) in dh.iter_mut().zip(&dskips[i]) {
                *a += b;
            }
            if let Some(cache) = &tp.attn {
                dh = lvl.attn.backward(p, cache, &dh, grads);
            }
            dh = lvl
                .res
                .backward(p, &tp.res, &dh, &tape.emb_act, grads, &mut demb);
        }
        self.stem.backward(p, &tape.stem, &dh, grads, false);

        let dtemb = silu_backward(&tape.temb, &demb);
        self.time.backward(p, &tape.time, &dtemb, grads);
        Ok(())
    }
}
