//! `BRN1` checkpoints: sizes, then named little-endian `f32` tensors.

use std::path::Path;

use super::params::{ModelConfig, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BRN1";
const VERSION: u16 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("checkpoint is truncated"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn done(&self) -> bool {
        self.at == self.bytes.len()
    }
}

impl ModelParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let c = &self.config;
        for v in [c.hidden, c.bands, c.looks, c.taps, c.df_bins] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for (name, dims, range) in &self.layout.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(dims.len() as u8);
            for d in dims {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in &self.data[range.clone()] {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4).ok() != Some(&MAGIC[..]) {
            return Err(Error::format("not a BRN1 checkpoint"));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported checkpoint version {version}")));
        }
        let mut sizes = [0usize; 5];
        for s in sizes.iter_mut() {
            *s = r.u32()? as usize;
        }
        let config = ModelConfig {
            hidden: sizes[0],
            bands: sizes[1],
            looks: sizes[2],
            taps: sizes[3],
            df_bins: sizes[4],
        };
        let mut params = ModelParams::zeros(config).map_err(|e| Error::format(e.to_string()))?;
        let mut seen = vec![false; params.layout.tensors.len()];
        while !r.done() {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format("tensor name is not utf-8"))?
                .to_string();
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let (i, (_, want, range)) = params
                .layout
                .tensors
                .iter()
                .enumerate()
                .find(|(_, t)| t.0 == name)
                .ok_or_else(|| Error::format(format!("unexpected tensor {name:?}")))?;
            if *want != dims {
                return Err(Error::format(format!(
                    "tensor {name:?} has dims {dims:?}, expected {want:?}"
                )));
            }
            let range = range.clone();
            let raw = r.take(4 * range.len())?;
            for (v, c) in params.data[range].iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64;
            }
            seen[i] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::format(format!(
                "checkpoint is missing tensor {:?}",
                params.layout.tensors[i].0
            )));
        }
        if params.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("checkpoint holds non-finite values"));
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
            _ => Error::io(path, e),
        })?;
        Self::from_bytes(&bytes)
    }
}
