//! Binary checkpoint container.
//!
//! Layout: `b"SSDM"`, format version (u32 LE), header length (u32 LE), UTF-8
//! JSON header, then tensor records of name length (u32 LE), name bytes, rank
//! (u32 LE), dims (u32 LE each) and an `f32` LE payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::AdamW;
use crate::diffusion::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::nnet::{NetConfig, ParamStore, UNet};

pub const MAGIC: &[u8; 4] = b"SSDM";
pub const FORMAT_VERSION: u32 = 1;
const MOMENT_M: &str = "adam.m/";
const MOMENT_V: &str = "adam.v/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    net: NetConfig,
    steps: usize,
    offset: f64,
    epoch: usize,
    loss_history: Vec<f64>,
    adam_step: u64,
    weight_decay: f64,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Parameters plus the optimizer and schedule state needed to resume.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore<f32>,
    pub steps: usize,
    pub offset: f64,
    /// Number of completed epochs.
    pub epoch: usize,
    pub loss_history: Vec<f64>,
    pub optimizer: Option<AdamW>,
    /// Free-form provenance (training and loss configuration, seeds).
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn fresh(params: ParamStore<f32>, sched: &DiffusionSchedule) -> Self {
        Self {
            params,
            steps: sched.steps,
            offset: sched.offset,
            epoch: 0,
            loss_history: Vec::new(),
            optimizer: None,
            meta: serde_json::Value::Null,
        }
    }

    pub fn net_config(&self) -> &NetConfig {
        self.params.config()
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        crate::diffusion::cosine_schedule(self.steps, self.offset)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            net: self.params.config().clone(),
            steps: self.steps,
            offset: self.offset,
            epoch: self.epoch,
            loss_history: self.loss_history.clone(),
            adam_step: self.optimizer.as_ref().map_or(0, |o| o.step),
            weight_decay: self.optimizer.as_ref().map_or(0.0, |o| o.weight_decay),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(16 + json.len() + 4 * self.params.num_params() * 3);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&u32_len(json.len())?.to_le_bytes());
        buf.extend_from_slice(&json);
        for (name, shape, values) in self.params.tensors() {
            push_record(&mut buf, name, shape, values)?;
        }
        if let Some(opt) = &self.optimizer {
            for spec in self.params.layout().specs() {
                let r = spec.offset..spec.offset + spec.len;
                push_record(
                    &mut buf,
                    &format!("{MOMENT_M}{}", spec.name),
                    &spec.shape,
                    &opt.m[r.clone()],
                )?;
                push_record(
                    &mut buf,
                    &format!("{MOMENT_V}{}", spec.name),
                    &spec.shape,
                    &opt.v[r],
                )?;
            }
        }
        w.write_all(&buf)
            .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let hlen = cur.u32()? as usize;
        let header: Header = serde_json::from_slice(cur.take(hlen)?)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let net = UNet::new(header.net.clone())?;
        let layout = net.layout();
        let total = layout.num_values();
        let mut values = vec![f32::NAN; total];
        let mut m = vec![0.0f32; total];
        let mut v = vec![0.0f32; total];
        let mut seen = vec![[false; 3]; layout.specs().len()];
        while cur.pos < bytes.len() {
            let nlen = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(nlen)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = cur.u32()? as usize;
            let dims = (0..rank)
                .map(|_| cur.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let (slot, base, dest) = if let Some(n) = name.strip_prefix(MOMENT_M) {
                (1, n, &mut m)
            } else if let Some(n) = name.strip_prefix(MOMENT_V) {
                (2, n, &mut v)
            } else {
                (0, name.as_str(), &mut values)
            };
            let id = layout
                .find(base)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name}")))?;
            let spec = layout.spec(id);
            if spec.shape != dims {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {dims:?}, expected {:?}",
                    spec.shape
                )));
            }
            let payload = cur.take(4 * spec.len)?;
            for (d, c) in dest[spec.offset..spec.offset + spec.len]
                .iter_mut()
                .zip(payload.chunks_exact(4))
            {
                *d = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            }
            if std::mem::replace(&mut seen[id.0][slot], true) {
                return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
            }
        }
        if let Some(i) = seen.iter().position(|s| !s[0]) {
            return Err(Error::Checkpoint(format!(
                "missing tensor {}",
                layout.specs()[i].name
            )));
        }
        let has_m = seen.iter().all(|s| s[1] && s[2]);
        if !has_m && seen.iter().any(|s| s[1] || s[2]) {
            return Err(Error::Checkpoint("incomplete optimizer state".into()));
        }
        let params = net.params_from_values(values)?;
        let optimizer = has_m.then(|| AdamW {
            weight_decay: header.weight_decay,
            step: header.adam_step,
            m,
            v,
        });
        Ok(Self {
            params,
            steps: header.steps,
            offset: header.offset,
            epoch: header.epoch,
            loss_history: header.loss_history,
            optimizer,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("partial");
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        self.write_to(std::io::BufWriter::new(file))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} exceeds u32")))
}

fn push_record(buf: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f32]) -> Result<()> {
    buf.extend_from_slice(&u32_len(name.len())?.to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&u32_len(shape.len())?.to_le_bytes());
    for &d in shape {
        buf.extend_from_slice(&u32_len(d)?.to_le_bytes());
    }
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
