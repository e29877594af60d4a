use std::path::Path;

use super::{Day, WindowSample, HORIZON_WEEKS};
use crate::error::{Error, Result};
use crate::io;

pub const DATASET_MAGIC: &[u8; 4] = b"CHRN";
pub const DATASET_VERSION: u32 = 1;

/// A window dataset as stored on disk. Features are kept as `f32` in the file
/// and widened on load.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowDataset {
    pub tau: usize,
    pub n_features: usize,
    pub samples: Vec<WindowSample>,
}

impl WindowDataset {
    pub fn new(tau: usize, n_features: usize, samples: Vec<WindowSample>) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.x.len() != tau * n_features) {
            return Err(Error::Shape(format!("sample of user {} at {} has {} values, expected {}x{}", s.user_id, s.anchor_date, s.x.len(), tau, n_features)));
        }
        Ok(WindowDataset { tau, n_features, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let per = 8 + 4 + 4 * self.tau * self.n_features + HORIZON_WEEKS;
        let mut b = Vec::with_capacity(24 + per * self.samples.len());
        b.extend_from_slice(DATASET_MAGIC);
        b.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.samples.len() as u64).to_le_bytes());
        b.extend_from_slice(&(self.tau as u32).to_le_bytes());
        b.extend_from_slice(&(self.n_features as u32).to_le_bytes());
        for s in &self.samples {
            b.extend_from_slice(&s.user_id.to_le_bytes());
            b.extend_from_slice(&s.anchor_date.0.to_le_bytes());
            for v in &s.x {
                b.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            b.extend_from_slice(&s.y);
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4)? != DATASET_MAGIC {
            return Err(Error::Format("not a window dataset (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {}", version)));
        }
        let n = r.u64()? as usize;
        let tau = r.u32()? as usize;
        let nf = r.u32()? as usize;
        let per = 12 + 4 * tau * nf + HORIZON_WEEKS;
        if bytes.len() - r.pos != n.saturating_mul(per) {
            return Err(Error::Format(format!("dataset declares {} samples but holds {} payload bytes", n, bytes.len() - r.pos)));
        }
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let user_id = r.u64()?;
            let anchor_date = Day(r.u32()? as i32);
            let x = r.take(4 * tau * nf)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
            let yb = r.take(HORIZON_WEEKS)?;
            if yb.iter().any(|v| *v > 1) {
                return Err(Error::Format(format!("label byte outside {{0,1}} for user {}", user_id)));
            }
            let mut y = [0u8; HORIZON_WEEKS];
            y.copy_from_slice(yb);
            samples.push(WindowSample { user_id, anchor_date, x, y });
        }
        Ok(WindowDataset { tau, n_features: nf, samples })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {}", path.display(), m)),
            other => other,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| Error::Format("truncated dataset".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
