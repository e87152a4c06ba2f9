//! Binary checkpoint format.
//!
//! ```text
//! "CMU1"                      magic
//! u32                         format version
//! u32 + UTF-8                 header: training config, grid, step, param_count
//! repeated:
//!   u32 + UTF-8               tensor name
//!   u32                       rank
//!   u64 * rank                dims
//!   f32 * prod(dims)          values
//! ```
//!
//! All integers and floats are little-endian. Tensors are the network
//! parameters in order, then `adam_m/<name>` and `adam_v/<name>` for each.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::{Fields, TrainConfig};
use crate::error::{CheckpointError, Error, Result};
use crate::gridmap::GridSpec;
use crate::nn::{build_unet, Tensor, UNet};

pub const MAGIC: &[u8; 4] = b"CMU1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub grid: GridSpec,
    /// Completed optimizer steps.
    pub step: u64,
    pub params: Vec<(String, Tensor<f32>)>,
    pub adam_m: Vec<Tensor<f32>>,
    pub adam_v: Vec<Tensor<f32>>,
}

impl Checkpoint {
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    /// Rebuilds the network described by the config and loads the weights.
    pub fn model(&self) -> Result<UNet<f32>> {
        let mut net = build_unet::<f32>(&self.config.net, self.config.seed)?;
        net.load_params(self.params.clone())?;
        Ok(net)
    }

    fn header(&self) -> String {
        let mut h = String::new();
        self.config.write_keys(&mut h);
        let _ = writeln!(h, "grid.side = {}", self.grid.side());
        let _ = writeln!(h, "step = {}", self.step);
        let _ = writeln!(h, "param_count = {}", self.param_count());
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.header());
        for (name, t) in &self.params {
            put_tensor(&mut out, name, t);
        }
        for ((name, _), t) in self.params.iter().zip(&self.adam_m) {
            put_tensor(&mut out, &format!("adam_m/{name}"), t);
        }
        for ((name, _), t) in self.params.iter().zip(&self.adam_v) {
            put_tensor(&mut out, &format!("adam_v/{name}"), t);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic").map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::VersionMismatch { found: version, expected: VERSION }.into());
        }
        let header = r.string("header")?;
        let malformed = |e: crate::error::ConfigError| CheckpointError::Malformed(format!("header: {e}"));
        let mut f = Fields::parse(&header).map_err(malformed)?;
        let config = TrainConfig::from_fields(&mut f).map_err(malformed)?;
        let side: usize = f.require("grid.side").map_err(malformed)?;
        let step: u64 = f.require("step").map_err(malformed)?;
        let param_count: usize = f.require("param_count").map_err(malformed)?;
        f.finish().map_err(malformed)?;
        let grid = config.grid()?;
        if grid.side() != side {
            return Err(Error::GridMismatch(format!(
                "header side {side} but the config implies {}",
                grid.side()
            )));
        }

        let expected = build_unet::<f32>(&config.net, 0)?;
        let n = expected.params().len();
        let mut read_group = |prefix: &str| -> Result<Vec<(String, Tensor<f32>)>> {
            let mut group = Vec::with_capacity(n);
            for p in expected.params() {
                let (name, t) = r.tensor()?;
                let want = format!("{prefix}{}", p.name);
                if name != want || t.shape() != p.value.shape() {
                    return Err(CheckpointError::Malformed(format!(
                        "tensor {name} {:?} where {want} {:?} was expected",
                        t.shape(),
                        p.value.shape()
                    ))
                    .into());
                }
                group.push((p.name.clone(), t));
            }
            Ok(group)
        };
        let params = read_group("")?;
        let adam_m = read_group("adam_m/")?.into_iter().map(|(_, t)| t).collect();
        let adam_v = read_group("adam_v/")?.into_iter().map(|(_, t)| t).collect();
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)).into());
        }
        let ckpt = Self { config, grid, step, params, adam_m, adam_v };
        if ckpt.param_count() != param_count {
            return Err(CheckpointError::Malformed(format!(
                "header says {param_count} parameters, tensors hold {}",
                ckpt.param_count()
            ))
            .into());
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_str(out, name);
    let shape = t.shape();
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            CheckpointError::Truncated(format!("{what} needs {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| CheckpointError::Malformed(format!("{what} is not UTF-8")).into())
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>)> {
        let name = self.string("tensor name")?;
        let rank = self.u32("rank")? as usize;
        if rank != 4 {
            return Err(CheckpointError::Malformed(format!("tensor {name} has rank {rank}, expected 4")).into());
        }
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = usize::try_from(self.u64("dims")?)
                .map_err(|_| CheckpointError::Malformed(format!("tensor {name} dimension overflows")))?;
        }
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).unwrap_or(usize::MAX);
        let raw = self.take(n.saturating_mul(4), &format!("tensor {name}"))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let t = Tensor::from_vec(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        Ok((name, t))
    }
}
