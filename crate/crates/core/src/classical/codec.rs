//! `MCM1` model container: magic, `u8` kind tag, little-endian payload.

use std::fs;
use std::path::Path;

use super::{ClassicalModel, Node, Tree};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MCM1";

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }
    fn tree(&mut self, t: &Tree) {
        self.u32(t.nodes.len());
        for n in &t.nodes {
            match *n {
                Node::Leaf(v) => {
                    self.u8(0);
                    self.f64(v);
                }
                Node::Split { feature, threshold, left, right } => {
                    self.u8(1);
                    self.u32(feature);
                    self.f64(threshold);
                    self.u32(left);
                    self.u32(right);
                }
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::BadFormat("MCM1: truncated payload".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn tree(&mut self) -> Result<Tree> {
        let n = self.u32()?;
        let mut nodes = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            nodes.push(match self.u8()? {
                0 => Node::Leaf(self.f64()?),
                1 => Node::Split { feature: self.u32()?, threshold: self.f64()?, left: self.u32()?, right: self.u32()? },
                t => return Err(Error::BadFormat(format!("MCM1: unknown node tag {t}"))),
            });
        }
        let len = nodes.len();
        let bad = nodes.iter().any(|n| matches!(*n, Node::Split { left, right, .. } if left >= len || right >= len));
        if nodes.is_empty() || bad {
            return Err(Error::BadFormat("MCM1: malformed tree".into()));
        }
        Ok(Tree { nodes })
    }
}

pub fn encode_model(model: &ClassicalModel) -> Vec<u8> {
    let mut w = Writer(MAGIC.to_vec());
    match model {
        ClassicalModel::ZeroR { mean } => {
            w.u8(0);
            w.f64(*mean);
        }
        ClassicalModel::SimpleLinear { attribute, slope, intercept } => {
            w.u8(1);
            w.u32(*attribute);
            w.f64(*slope);
            w.f64(*intercept);
        }
        ClassicalModel::ElasticNet { mean, scale, coef, intercept } => {
            w.u8(2);
            w.u32(coef.len());
            w.f64s(mean);
            w.f64s(scale);
            w.f64s(coef);
            w.f64(*intercept);
        }
        ClassicalModel::Tree(t) => {
            w.u8(3);
            w.tree(t);
        }
        ClassicalModel::Forest(trees) => {
            w.u8(4);
            w.u32(trees.len());
            trees.iter().for_each(|t| w.tree(t));
        }
    }
    w.0
}

pub fn decode_model(bytes: &[u8]) -> Result<ClassicalModel> {
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(Error::BadFormat("MCM1: bad magic".into()));
    }
    let mut r = Reader { buf: bytes, pos: 5 };
    let model = match bytes[4] {
        0 => ClassicalModel::ZeroR { mean: r.f64()? },
        1 => ClassicalModel::SimpleLinear { attribute: r.u32()?, slope: r.f64()?, intercept: r.f64()? },
        2 => {
            let d = r.u32()?;
            ClassicalModel::ElasticNet { mean: r.f64s(d)?, scale: r.f64s(d)?, coef: r.f64s(d)?, intercept: r.f64()? }
        }
        3 => ClassicalModel::Tree(r.tree()?),
        4 => {
            let n = r.u32()?;
            ClassicalModel::Forest((0..n).map(|_| r.tree()).collect::<Result<_>>()?)
        }
        t => return Err(Error::BadFormat(format!("MCM1: unknown model kind {t}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::BadFormat("MCM1: trailing bytes".into()));
    }
    Ok(model)
}

pub fn save_model(path: &Path, models: &[ClassicalModel]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&(models.len() as u32).to_le_bytes());
    for m in models {
        let enc = encode_model(m);
        buf.extend_from_slice(&(enc.len() as u32).to_le_bytes());
        buf.extend_from_slice(&enc);
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a file of length-prefixed models (one per target).
pub fn load_model(path: &Path) -> Result<Vec<ClassicalModel>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    let n = r.u32()?;
    let mut out = Vec::with_capacity(n.min(16));
    for _ in 0..n {
        let len = r.u32()?;
        out.push(decode_model(r.take(len)?)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::{fit_random_forest, Dataset2D, ForestParams};

    #[test]
    fn every_kind_round_trips() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i * i % 7) as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] * 2.0 + r[1]).collect();
        let d = Dataset2D::anonymous(&rows, y).unwrap();
        let models = vec![
            ClassicalModel::ZeroR { mean: 3.5 },
            ClassicalModel::SimpleLinear { attribute: 1, slope: -2.0, intercept: 0.25 },
            ClassicalModel::ElasticNet { mean: vec![1.0, 2.0], scale: vec![0.5, 0.0], coef: vec![3.0, 0.0], intercept: 9.0 },
            fit_random_forest(&d, &ForestParams { n_trees: 3, ..Default::default() }).unwrap(),
        ];
        for m in &models {
            assert_eq!(&decode_model(&encode_model(m)).unwrap(), m);
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mcm");
        save_model(&p, &models).unwrap();
        assert_eq!(load_model(&p).unwrap(), models);
    }

    #[test]
    fn header_and_corruption() {
        let enc = encode_model(&ClassicalModel::ZeroR { mean: 1.0 });
        assert_eq!(&enc[..5], b"MCM1\0");
        assert!(decode_model(&enc[..8]).is_err());
        assert!(decode_model(b"XXXX\0").is_err());
    }
}
