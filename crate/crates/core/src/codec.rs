//! Little-endian binary framing shared by model checkpoints and buffer snapshots.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numcore::{Layout, ParamVector};

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Writer::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    /// Segment table: count, then `(name, ndims, dims.., values)` per segment.
    pub fn params(&mut self, p: &ParamVector) {
        let segs = p.layout().segments();
        self.u32(segs.len() as u32);
        for s in segs {
            self.str(&s.name);
            self.u32(s.shape.len() as u32);
            for &d in &s.shape {
                self.u64(d as u64);
            }
            self.f64s(&p.values()[s.offset()..s.offset() + s.len()]);
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn truncated(what: &str) -> Error {
    Error::Checkpoint(format!("truncated while reading {what}"))
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(|| truncated(what))?;
        let s = self.buf.get(self.pos..end).ok_or_else(|| truncated(what))?;
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn str(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }

    pub fn f64s(&mut self, what: &str) -> Result<Vec<f64>> {
        let n = self.u64(what)? as usize;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| truncated(what))?, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn params(&mut self) -> Result<ParamVector> {
        let n = self.u32("segment count")? as usize;
        let mut shapes = Vec::with_capacity(n.min(1024));
        let mut values = Vec::new();
        for _ in 0..n {
            let name = self.str("segment name")?;
            let nd = self.u32("segment rank")? as usize;
            let mut shape = Vec::with_capacity(nd.min(8));
            for _ in 0..nd {
                shape.push(self.u64("segment dim")? as usize);
            }
            let vals = self.f64s("segment values")?;
            if vals.len() != shape.iter().product::<usize>() {
                return Err(Error::Checkpoint(format!("segment {name:?} has {} values for shape {shape:?}", vals.len())));
            }
            values.extend(vals);
            shapes.push((name, shape));
        }
        let layout = Layout::new(shapes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ParamVector::from_values(Arc::new(layout), values)
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }
}
