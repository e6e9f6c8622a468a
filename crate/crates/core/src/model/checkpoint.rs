//! Binary checkpoint: magic `DNRV1`, a length-prefixed JSON config, then one
//! record per tensor until end of file:
//!
//! ```text
//! u32 name_len | name | u8 dtype | u32 rank | u64 dims[rank] | little-endian payload
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ParamStore, Result};
use crate::tensor::{Dtype, Scalar, Tensor};

const MAGIC: &[u8; 5] = b"DNRV1";

/// Config plus free-form training metadata stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ModelConfig,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn write_checkpoint<T: Scalar, W: Write>(out: &mut W, header: &Checkpoint, params: &ParamStore<T>) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let json = serde_json::to_vec(header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (name, t) in params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(T::DTYPE.tag());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut buf);
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(ModelError::Checkpoint(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<T: Scalar, R: Read>(input: &mut R) -> Result<(Checkpoint, ParamStore<T>)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let jlen = c.u64("config length")? as usize;
    let header: Checkpoint =
        serde_json::from_slice(c.take(jlen, "config")?).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut params = ParamStore::new();
    while c.pos < bytes.len() {
        let nlen = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(nlen, "name")?)
            .map_err(|_| ModelError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let tag = c.take(1, "dtype")?[0];
        let dtype = Dtype::from_tag(tag).ok_or_else(|| ModelError::Checkpoint(format!("unknown dtype tag {tag}")))?;
        if dtype != T::DTYPE {
            return Err(ModelError::Checkpoint(format!(
                "`{name}` is stored as {dtype:?}, requested {:?}",
                T::DTYPE
            )));
        }
        let rank = c.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u64("dims")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = c.take(n * dtype.size(), "payload")?;
        let data = raw.chunks(dtype.size()).map(T::read_le).collect();
        let t = Tensor::from_vec(&shape, data)?;
        params.insert(name, t);
    }
    header.model.validate()?;
    Ok((header, params))
}
