use std::path::Path;

use crate::error::{Error, Result};
use crate::io;
use crate::tensor::Tensor;

use super::config::ArchitectureConfig;
use super::model::{build_model, DeepModel};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_tensor(out: &mut Vec<u8>, shape: &[usize], data: &[f64]) {
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes the configuration and every tensor: parameters in declaration
/// order, then the running mean and variance of each batch-norm layer.
pub fn checkpoint_bytes(model: &DeepModel) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(model.config()).map_err(|e| Error::Format(format!("cannot encode architecture: {}", e)))?;
    let mut out = Vec::with_capacity(16 + config.len() + 8 * model.count_parameters());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(&config);
    let n = model.params().len() + 2 * model.running().len();
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for p in model.params() {
        put_tensor(&mut out, p.shape(), p.data());
    }
    for r in model.running() {
        put_tensor(&mut out, &[r.mean.len()], &r.mean);
        put_tensor(&mut out, &[r.var.len()], &r.var);
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let ndim = self.u32()? as usize;
        if ndim > 8 {
            return Err(Error::Format(format!("tensor with {} dimensions", ndim)));
        }
        let shape = (0..ndim).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Format(format!("tensor shape {:?} overflows", shape)))?;
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Tensor::new(shape, data)
    }
}

pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<DeepModel> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("checkpoint version {} is not supported (expected {})", version, CHECKPOINT_VERSION)));
    }
    let len = r.u64()? as usize;
    let config: ArchitectureConfig = serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format(format!("bad architecture record: {}", e)))?;
    let mut model = build_model(&config, 0)?;
    let n = r.u32()? as usize;
    let expected = model.params().len() + 2 * model.running().len();
    if n != expected {
        return Err(Error::Format(format!("checkpoint holds {} tensors, {} architecture needs {}", n, config.kind, expected)));
    }
    for (i, p) in model.params_mut().iter_mut().enumerate() {
        let t = r.tensor()?;
        if t.shape() != p.shape() {
            return Err(Error::Format(format!("tensor {} has shape {:?}, expected {:?}", i, t.shape(), p.shape())));
        }
        p.data_mut().copy_from_slice(t.data());
    }
    for (i, rs) in model.running_mut().iter_mut().enumerate() {
        for buf in [&mut rs.mean, &mut rs.var] {
            let t = r.tensor()?;
            if t.shape() != [buf.len()] {
                return Err(Error::Format(format!("running statistics {} have shape {:?}, expected [{}]", i, t.shape(), buf.len())));
            }
            buf.copy_from_slice(t.data());
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", buf.len() - r.pos)));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &DeepModel, path: &Path) -> Result<()> {
    io::write_bytes(path, &checkpoint_bytes(model)?)
}

pub fn load_checkpoint(path: &Path) -> Result<DeepModel> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&buf)
}
