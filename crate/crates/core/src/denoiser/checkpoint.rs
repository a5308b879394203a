//! Flat binary parameter files.
//!
//! ```text
//! magic     8 bytes  "MAGICDNZ"
//! version   u32      1
//! arch      5 × u32  channels, hidden, depth, embed_dim, time_dim
//! count     u64      number of parameters
//! params    count × f32, declaration order
//! embed_len u32      0 when no prompt embedding is stored
//! embedding embed_len × f32
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::conv::{ArchConfig, TrainableDenoiser};
use crate::error::{Error, Result};
use crate::prompt::PromptEmbedding;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MAGICDNZ";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TrainableDenoiser,
    pub embedding: Option<PromptEmbedding>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let arch = self.model.arch();
        let params = self.model.params();
        let embed = self.embedding.as_ref().map(|e| e.base()).unwrap_or(&[]);
        let mut out = Vec::with_capacity(8 + 4 * 6 + 8 + 4 * (params.len() + embed.len() + 1));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [arch.channels, arch.hidden, arch.depth, arch.embed_dim, arch.time_dim] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for &p in params {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        out.extend_from_slice(&(embed.len() as u32).to_le_bytes());
        for &e in embed {
            out.extend_from_slice(&(e as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err("bad magic".into());
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let arch = ArchConfig {
            channels: r.u32()? as usize,
            hidden: r.u32()? as usize,
            depth: r.u32()? as usize,
            embed_dim: r.u32()? as usize,
            time_dim: r.u32()? as usize,
        };
        arch.validate().map_err(|e| e.to_string())?;
        let count = r.u64()? as usize;
        if count != arch.param_count() {
            return Err(format!(
                "header declares {count} parameters, architecture needs {}",
                arch.param_count()
            ));
        }
        let params = (0..count).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>, _>>()?;
        let embed_len = r.u32()? as usize;
        let embedding = if embed_len == 0 {
            None
        } else {
            let v = (0..embed_len)
                .map(|_| r.f32().map(f64::from))
                .collect::<Result<Vec<_>, _>>()?;
            Some(PromptEmbedding::from_vec(v).map_err(|e| e.to_string())?)
        };
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        let model = TrainableDenoiser::from_params(arch, params).map_err(|e| e.to_string())?;
        Ok(Checkpoint { model, embedding })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err("truncated file".into());
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> std::result::Result<f32, String> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Checkpoint::from_bytes(&bytes).map_err(|reason| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    })
}
