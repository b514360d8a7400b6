//! `MNN1` checkpoint: magic, `u32` header length, JSON header (spec,
//! history, optimizer settings, caller metadata), then length-prefixed
//! little-endian `f32` arrays for the network state and the Nadam moments.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Network, NetworkSpec};
use super::optim::{Nadam, NadamConfig};
use super::train::History;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MNN1";

#[derive(Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    history: History,
    optimizer: Option<(NadamConfig, u64)>,
    meta: serde_json::Value,
}

pub struct Checkpoint {
    pub network: Network<f32>,
    pub optimizer: Option<Nadam<f32>>,
    pub history: History,
    /// Free-form run context (representation, normalization statistics).
    pub meta: serde_json::Value,
}

fn put_arrays(buf: &mut Vec<u8>, arrays: &[Vec<f32>]) {
    buf.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for a in arrays {
        buf.extend_from_slice(&(a.len() as u64).to_le_bytes());
        for v in a {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn bad(msg: &str) -> Error {
    Error::UnreadableCheckpoint(msg.to_string())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn arrays(&mut self) -> Result<Vec<Vec<f32>>> {
        let n = self.u32()?;
        let mut out = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let len = u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize;
            let bytes = self.take(len.checked_mul(4).ok_or_else(|| bad("array too large"))?)?;
            out.push(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect());
        }
        Ok(out)
    }
}

impl Checkpoint {
    pub fn encode(&mut self) -> Result<Vec<u8>> {
        let header = Header {
            spec: self.network.spec().clone(),
            history: self.history.clone(),
            optimizer: self.optimizer.as_ref().map(|o| (o.config, o.step)),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::BadFormat(e.to_string()))?;
        let mut buf = MAGIC.to_vec();
        buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&json);
        put_arrays(&mut buf, &self.network.state());
        let (m, v) = self.optimizer.as_ref().map_or((&[][..], &[][..]), |o| (&o.m[..], &o.v[..]));
        put_arrays(&mut buf, m);
        put_arrays(&mut buf, v);
        Ok(buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("missing MNN1 magic"));
        }
        let mut c = Cursor { buf: bytes, pos: 4 };
        let len = c.u32()?;
        let header: Header = serde_json::from_slice(c.take(len)?).map_err(|e| bad(&format!("header: {e}")))?;
        let state = c.arrays()?;
        let m = c.arrays()?;
        let v = c.arrays()?;
        if c.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let mut network = Network::new(header.spec, 0).map_err(|e| bad(&e.to_string()))?;
        network.load_state(&state).map_err(|_| bad("parameter payload does not match the spec"))?;
        let optimizer = header.optimizer.map(|(config, step)| Nadam { config, step, m, v });
        Ok(Self { network, optimizer, history: header.history, meta: header.meta })
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::UnreadableCheckpoint(format!("{}: {e}", path.display())))?;
        Self::decode(&bytes)
    }
}
