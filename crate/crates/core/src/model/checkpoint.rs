//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic     8 bytes  "SEGETCKP"
//! version   u32      currently 1
//! config    u32 length + UTF-8 `key = value` lines (NetworkConfig echo)
//! epoch     u32      epoch the checkpoint was taken at (1-based, 0 = untrained)
//! metric    f64      monitored validation mIOU at that epoch
//! count     u32      number of blobs
//! blob*     u32 name length + UTF-8 name
//!           u8 kind (0 parameter, 1 running mean, 2 running variance, 3 bn update count)
//!           4 × u32 extents (n, c, h, w)
//!           n·c·h·w × f64 values
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use crate::tensor::{Shape, Tensor};

use super::{ModelError, NetworkConfig, SegEtNetwork};

pub const MAGIC: &[u8; 8] = b"SEGETCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated at byte {offset}: need {need} more bytes")]
    Truncated { offset: usize, need: usize },
    #[error("checkpoint text is not valid UTF-8 at byte {0}")]
    Utf8(usize),
    #[error("unknown blob kind {kind} at byte {offset}")]
    Kind { kind: u8, offset: usize },
    #[error("checkpoint config does not match the network: {0}")]
    Config(String),
    #[error("blob names differ: missing {missing:?}, unexpected {unexpected:?}")]
    NameMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("blob {name} has shape {found}, network expects {expected}")]
    Shape {
        name: String,
        found: Shape,
        expected: Shape,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: u32,
    pub metric: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Param = 0,
    RunningMean = 1,
    RunningVar = 2,
    Updates = 3,
}

struct Blob {
    name: String,
    kind: Kind,
    tensor: Tensor,
}

fn collect_blobs(net: &SegEtNetwork) -> Vec<Blob> {
    let mut blobs = Vec::new();
    for b in net.blocks() {
        for p in b.params() {
            blobs.push(Blob {
                name: p.name.clone(),
                kind: Kind::Param,
                tensor: p.value.clone(),
            });
        }
        if let Some(st) = b.bn_state() {
            let s = Shape::new(1, st.channels(), 1, 1);
            let stat = |suffix: &str, kind, data: Vec<f64>| Blob {
                name: format!("{}.bn.{suffix}", b.name),
                kind,
                tensor: Tensor::from_vec(if kind == Kind::Updates { Shape::new(1, 1, 1, 1) } else { s }, data)
                    .expect("stat length"),
            };
            blobs.push(stat("running_mean", Kind::RunningMean, st.running_mean.clone()));
            blobs.push(stat("running_var", Kind::RunningVar, st.running_var.clone()));
            blobs.push(stat("updates", Kind::Updates, vec![st.updates as f64]));
        }
    }
    blobs
}

pub fn encode(net: &SegEtNetwork, meta: CheckpointMeta) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = net.config().to_text();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    out.extend_from_slice(&meta.epoch.to_le_bytes());
    out.extend_from_slice(&meta.metric.to_le_bytes());
    let blobs = collect_blobs(net);
    out.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
    for b in &blobs {
        out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
        out.extend_from_slice(b.name.as_bytes());
        out.push(b.kind as u8);
        let s = b.tensor.shape();
        for d in [s.n, s.c, s.h, s.w] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in b.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                need: n - (self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let len = self.u32()? as usize;
        let at = self.pos;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| CheckpointError::Utf8(at))
    }
}

struct Decoded {
    config: NetworkConfig,
    meta: CheckpointMeta,
    blobs: Vec<Blob>,
}

fn decode(bytes: &[u8]) -> Result<Decoded, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let config = NetworkConfig::from_text(&r.string()?)?;
    let meta = CheckpointMeta {
        epoch: r.u32()?,
        metric: r.f64()?,
    };
    let count = r.u32()? as usize;
    let mut blobs = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = r.string()?;
        let at = r.pos;
        let kind = match r.take(1)?[0] {
            0 => Kind::Param,
            1 => Kind::RunningMean,
            2 => Kind::RunningVar,
            3 => Kind::Updates,
            k => return Err(CheckpointError::Kind { kind: k, offset: at }),
        };
        let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|d| d as usize);
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        let numel = shape.numel();
        if numel == 0 {
            return Err(CheckpointError::Truncated { offset: r.pos, need: 0 });
        }
        let raw = r.take(numel.checked_mul(8).ok_or(CheckpointError::Truncated { offset: r.pos, need: usize::MAX })?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        blobs.push(Blob {
            name,
            kind,
            tensor: Tensor::from_vec(shape, data).map_err(ModelError::from)?,
        });
    }
    Ok(Decoded { config, meta, blobs })
}

fn apply(net: &mut SegEtNetwork, blobs: Vec<Blob>) -> Result<(), CheckpointError> {
    let expected = collect_blobs(net);
    let want: BTreeSet<&str> = expected.iter().map(|b| b.name.as_str()).collect();
    let have: BTreeSet<&str> = blobs.iter().map(|b| b.name.as_str()).collect();
    if want != have || blobs.len() != expected.len() {
        return Err(CheckpointError::NameMismatch {
            missing: want.difference(&have).map(|s| s.to_string()).collect(),
            unexpected: have.difference(&want).map(|s| s.to_string()).collect(),
        });
    }
    for e in &expected {
        let b = blobs.iter().find(|b| b.name == e.name).expect("name sets equal");
        if b.kind != e.kind || b.tensor.shape() != e.tensor.shape() {
            return Err(CheckpointError::Shape {
                name: b.name.clone(),
                found: b.tensor.shape(),
                expected: e.tensor.shape(),
            });
        }
    }
    let find = |name: &str| blobs.iter().find(|b| b.name == name).expect("validated");
    for block in net.blocks_mut() {
        let bname = block.name.clone();
        for p in block.params_mut() {
            p.value = find(&p.name).tensor.clone();
        }
        if let Some(st) = block.bn_state_mut() {
            st.running_mean = find(&format!("{bname}.bn.running_mean")).tensor.data().to_vec();
            st.running_var = find(&format!("{bname}.bn.running_var")).tensor.data().to_vec();
            st.updates = find(&format!("{bname}.bn.updates")).tensor.data()[0] as u64;
        }
    }
    Ok(())
}

/// Restores parameters and batch-norm statistics into an existing network.
/// The echoed config and the blob name set must both match.
pub fn load_into(net: &mut SegEtNetwork, bytes: &[u8]) -> Result<CheckpointMeta, CheckpointError> {
    let d = decode(bytes)?;
    if &d.config != net.config() {
        return Err(CheckpointError::Config(format!(
            "checkpoint has\n{}network has\n{}",
            d.config.to_text(),
            net.config().to_text()
        )));
    }
    apply(net, d.blobs)?;
    Ok(d.meta)
}

/// Rebuilds a network from the echoed config, then restores its state.
pub fn decode_network(bytes: &[u8]) -> Result<(SegEtNetwork, CheckpointMeta), CheckpointError> {
    let d = decode(bytes)?;
    let mut net = SegEtNetwork::build(&d.config, 0)?;
    apply(&mut net, d.blobs)?;
    Ok((net, d.meta))
}

pub fn save(path: &Path, net: &SegEtNetwork, meta: CheckpointMeta) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(net, meta))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(SegEtNetwork, CheckpointMeta), CheckpointError> {
    decode_network(&std::fs::read(path)?)
}
