//! Head checkpoint file, little-endian:
//!
//! ```text
//! magic        8 bytes "FCHEAD\0\0"
//! version      u32     1
//! layers       u32     L
//! per layer:   inputs u32, outputs u32, weights f64 x (outputs*inputs), bias f64 x outputs
//! config echo: epochs u32, learning_rate f64, batch_size u32, seed u64,
//!              weight_decay f64, hidden count u32, hidden widths u32 each
//! backbone     u32 length + UTF-8 bytes
//! ```

use std::io::Read;
use std::path::Path;

use super::head::{ClassifierHead, Dense};
use super::train::TrainConfig;
use crate::error::{Error, Result};

pub const HEAD_MAGIC: [u8; 8] = *b"FCHEAD\0\0";
pub const HEAD_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub head: ClassifierHead,
    pub config: TrainConfig,
    pub backbone: String,
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
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.0
            .read_exact(&mut buf)
            .map_err(|_| Error::Format("truncated head checkpoint".into()))?;
        Ok(buf)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if self.0.len() < n * 8 {
            return Err(Error::Format("truncated head checkpoint".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(&HEAD_MAGIC);
        w.u32(HEAD_VERSION);
        w.u32(self.head.layers.len() as u32);
        for l in &self.head.layers {
            w.u32(l.inputs as u32);
            w.u32(l.outputs as u32);
            l.weights.iter().for_each(|&v| w.f64(v));
            l.bias.iter().for_each(|&v| w.f64(v));
        }
        let c = &self.config;
        w.u32(c.epochs);
        w.f64(c.learning_rate);
        w.u32(c.batch_size as u32);
        w.u64(c.seed);
        w.f64(c.weight_decay);
        w.u32(c.hidden.len() as u32);
        c.hidden.iter().for_each(|&h| w.u32(h as u32));
        w.u32(self.backbone.len() as u32);
        w.0.extend_from_slice(self.backbone.as_bytes());
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader(bytes);
        if r.take::<8>()? != HEAD_MAGIC {
            return Err(Error::Format("not a head checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != HEAD_VERSION {
            return Err(Error::Format(format!("unsupported head checkpoint version {version}")));
        }
        let n_layers = r.u32()? as usize;
        if n_layers == 0 || n_layers > 64 {
            return Err(Error::Format(format!("implausible layer count {n_layers}")));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let inputs = r.u32()? as usize;
            let outputs = r.u32()? as usize;
            let weights = r.f64s(inputs * outputs)?;
            let bias = r.f64s(outputs)?;
            layers.push(Dense { inputs, outputs, weights, bias });
        }
        let head = ClassifierHead { layers };
        head.validate()?;
        let epochs = r.u32()?;
        let learning_rate = r.f64()?;
        let batch_size = r.u32()? as usize;
        let seed = r.u64()?;
        let weight_decay = r.f64()?;
        let n_hidden = r.u32()? as usize;
        if n_hidden > 64 {
            return Err(Error::Format(format!("implausible hidden count {n_hidden}")));
        }
        let hidden = (0..n_hidden).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let name_len = r.u32()? as usize;
        if r.0.len() != name_len {
            return Err(Error::Format("backbone id length does not match remaining bytes".into()));
        }
        let backbone = String::from_utf8(r.0.to_vec())
            .map_err(|_| Error::Format("backbone id is not UTF-8".into()))?;
        Ok(Checkpoint {
            head,
            config: TrainConfig {
                epochs,
                learning_rate,
                batch_size,
                seed,
                weight_decay,
                hidden,
            },
            backbone,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    crate::jsonl::write_bytes_atomic(path, &checkpoint.to_bytes())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
