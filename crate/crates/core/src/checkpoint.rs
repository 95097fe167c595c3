//! Binary checkpoints: model configuration, normalisation, every parameter
//! with its Adam moments, and the training progress needed to resume.
//!
//! Layout (little endian): magic `IPNCKPT\0`, `u32` format version, a
//! length-prefixed JSON model configuration, then raw `f64` payloads, so
//! floats round-trip bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::{ParamGroup, ParamStore};
use crate::train::TrainState;

pub const MAGIC: &[u8; 8] = b"IPNCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub state: TrainState,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.f64(x);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("implausible length {n}")))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
}

impl Checkpoint {
    pub fn new(model: Model, state: TrainState) -> Self {
        Self { model, state }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.bytes(serde_json::to_string(&self.model.config)?.as_bytes());
        w.f64s(&self.model.norm.mean);
        w.f64s(&self.model.norm.std);
        let store = &self.model.store;
        w.u64(store.step);
        w.u32(store.len() as u32);
        for p in store.params() {
            w.bytes(p.name.as_bytes());
            w.u8(p.group.code());
            w.u32(p.shape.len() as u32);
            for &s in &p.shape {
                w.u64(s as u64);
            }
            w.f64s(&p.value);
            w.f64s(&p.m);
            w.f64s(&p.v);
        }
        let s = &self.state;
        w.u64(s.epoch as u64);
        w.f64(s.best_val);
        w.u64(s.best_epoch as u64);
        w.u64(s.bad_epochs as u64);
        w.u8(u8::from(s.stopped));
        w.u32(s.best_params.len() as u32);
        for b in &s.best_params {
            w.f64s(b);
        }
        Ok(w.0)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let config: ModelConfig = serde_json::from_slice(r.bytes()?)?;
        let norm = NormStats {
            mean: r.f64s()?,
            std: r.f64s()?,
        };
        let mut store = ParamStore::new();
        store.step = r.u64()?;
        let n_params = r.u32()?;
        for _ in 0..n_params {
            let name = String::from_utf8(r.bytes()?.to_vec())
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
            let code = r.u8()?;
            let group = ParamGroup::from_code(code)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter group {code}")))?;
            let ndim = r.u32()?;
            let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let value = r.f64s()?;
            let m = r.f64s()?;
            let v = r.f64s()?;
            let n: usize = shape.iter().product();
            if value.len() != n || m.len() != n || v.len() != n {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} does not match its shape {shape:?}"
                )));
            }
            let id = store.add(name, &shape, value, group);
            let p = &mut store.params_mut()[id.0];
            p.m = m;
            p.v = v;
        }
        let epoch = r.u64()? as usize;
        let best_val = r.f64()?;
        let best_epoch = r.u64()? as usize;
        let bad_epochs = r.u64()? as usize;
        let stopped = r.u8()? != 0;
        let n_best = r.u32()?;
        let best_params = (0..n_best).map(|_| r.f64s()).collect::<Result<Vec<_>>>()?;
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        if best_params.len() != store.len()
            || best_params
                .iter()
                .zip(store.params())
                .any(|(b, p)| b.len() != p.value.len())
        {
            return Err(Error::Checkpoint("best parameters do not match the model".into()));
        }
        let model = Model::from_parts(config, norm, store).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Self {
            model,
            state: TrainState {
                epoch,
                best_val,
                best_epoch,
                bad_epochs,
                stopped,
                best_params,
            },
        })
    }

    /// Writes to a temporary sibling first, so an interrupted save never
    /// clobbers the previous checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&self.to_bytes()?)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path)?;
        Self::from_bytes(&buf).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
