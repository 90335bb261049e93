//! Binary checkpoint: little-endian, magic `MCSPEX01`.
//!
//! Layout: magic, `u32` version, model config and training config as
//! length-prefixed key=value text, parameters (name, rank, dims, `f32` data),
//! Adam step count and moments in parameter order, then the training state.

use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::kvconfig::{render, KvDoc};
use crate::model::Model;
use crate::numcore::Tensor;
use crate::trainer::adam::Adam;
use crate::trainer::scheduler::Plateau;
use crate::trainer::{TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"MCSPEX01";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub params: Vec<(String, Tensor<f32>)>,
    pub adam: Adam<f32>,
    pub state: TrainState,
}

struct Writer(Vec<u8>);

impl Writer {
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
    fn f32s(&mut self, xs: &[f32]) {
        self.u64(xs.len() as u64);
        for x in xs {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn len(&mut self, what: &str, elem: usize) -> Result<usize> {
        let n = self.u64(what)? as usize;
        if n.saturating_mul(elem) > self.buf.len() - self.pos {
            return Err(Error::Checkpoint(format!("implausible length {n} for {what}")));
        }
        Ok(n)
    }
    fn bytes(&mut self, what: &str) -> Result<&'a [u8]> {
        let n = self.len(what, 1)?;
        self.take(n, what)
    }
    fn text(&mut self, what: &str) -> Result<String> {
        String::from_utf8(self.bytes(what)?.to_vec()).map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }
    fn f32s(&mut self, what: &str) -> Result<Vec<f32>> {
        let n = self.len(what, 4)?;
        Ok(self
            .take(n * 4, what)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(MAGIC.to_vec());
        w.u32(VERSION);
        w.bytes(render(&self.model_config.to_kv_pairs()).as_bytes());
        w.bytes(render(&self.train_config.to_kv_pairs()).as_bytes());
        w.u64(self.params.len() as u64);
        for (name, t) in &self.params {
            w.bytes(name.as_bytes());
            w.u32(t.ndim() as u32);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            w.f32s(t.data());
        }
        let a = &self.adam;
        w.f64(a.beta1);
        w.f64(a.beta2);
        w.f64(a.eps);
        w.u64(a.t);
        for (m, v) in a.m.iter().zip(&a.v) {
            w.f32s(m);
            w.f32s(v);
        }
        let s = &self.state;
        w.u64(s.step);
        w.u64(s.epoch);
        w.f64(s.lr);
        let p = &s.plateau;
        w.f64(p.best);
        w.u64(p.since_improvement as u64);
        w.u64(p.since_decay as u64);
        w.u64(p.decay_patience as u64);
        w.u64(p.stop_patience as u64);
        w.f64(p.factor);
        w.f64(p.threshold);
        w.u32(u32::from(s.stopped));
        w.0.extend_from_slice(&s.rng_seed);
        w.u64(s.rng_stream);
        w.0.extend_from_slice(&s.rng_word_pos.to_le_bytes());
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let model_config = ModelConfig::from_kv(&KvDoc::parse("checkpoint model config", &r.text("model config")?)?)?;
        let train_config = TrainConfig::from_kv(&KvDoc::parse("checkpoint train config", &r.text("train config")?)?)?;
        let n = r.len("parameter count", 1)?;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.text("parameter name")?;
            let ndim = r.u32("rank")? as usize;
            let shape = (0..ndim).map(|_| r.u64("dim").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let data = r.f32s("parameter data")?;
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("parameter `{name}`: {e}")))?;
            params.push((name, t));
        }
        let (beta1, beta2, eps) = (r.f64("beta1")?, r.f64("beta2")?, r.f64("eps")?);
        let t = r.u64("adam step")?;
        let (mut m, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for (name, p) in &params {
            let (mi, vi) = (r.f32s("first moment")?, r.f32s("second moment")?);
            if mi.len() != p.len() || vi.len() != p.len() {
                return Err(Error::Checkpoint(format!("moment size mismatch for `{name}`")));
            }
            m.push(mi);
            v.push(vi);
        }
        let adam = Adam {
            beta1,
            beta2,
            eps,
            t,
            m,
            v,
        };
        let step = r.u64("step")?;
        let epoch = r.u64("epoch")?;
        let lr = r.f64("lr")?;
        let plateau = Plateau {
            best: r.f64("best")?,
            since_improvement: r.u64("since_improvement")? as usize,
            since_decay: r.u64("since_decay")? as usize,
            decay_patience: r.u64("decay_patience")? as usize,
            stop_patience: r.u64("stop_patience")? as usize,
            factor: r.f64("factor")?,
            threshold: r.f64("threshold")?,
        };
        let stopped = r.u32("stopped")? != 0;
        let rng_seed: [u8; 32] = r.take(32, "rng seed")?.try_into().unwrap();
        let rng_stream = r.u64("rng stream")?;
        let rng_word_pos = u128::from_le_bytes(r.take(16, "rng position")?.try_into().unwrap());
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint {
            model_config,
            train_config,
            params,
            adam,
            state: TrainState {
                step,
                epoch,
                lr,
                plateau,
                stopped,
                rng_seed,
                rng_stream,
                rng_word_pos,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the model, requiring the stored names and shapes to match
    /// the registry of its configuration exactly.
    pub fn to_model(&self) -> Result<Model<f32>> {
        let mut model = Model::<f32>::new(self.model_config.clone(), 0)?;
        if model.store.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, configuration has {}",
                self.params.len(),
                model.store.len()
            )));
        }
        let ids: Vec<_> = model.store.ids().collect();
        for (id, (name, t)) in ids.into_iter().zip(&self.params) {
            let live = model.store.get(id);
            if &live.name != name || live.value.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` {:?} does not match registry entry `{}` {:?}",
                    t.shape(),
                    live.name,
                    live.value.shape()
                )));
            }
            *model.store.value_mut(id) = t.clone();
        }
        Ok(model)
    }
}
