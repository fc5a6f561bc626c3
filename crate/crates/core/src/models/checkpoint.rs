use std::path::Path;

use super::encoder::EncoderKind;
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::numcore::ParamVector;

const MAGIC: &[u8; 4] = b"FVMC";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Frozen encoder plus current classifier, serialised as
///
/// ```text
/// "FVMC" | u32 version | u8 encoder kind | u64 d | u64 K
/// | encoder segment table | classifier segment table
/// ```
///
/// Segment tables are `u32 count` followed by `(u32 len, name, u32 rank,
/// u64 dims.., u64 n, n × f64)` entries, all little-endian.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub encoder_kind: EncoderKind,
    pub embed_dim: usize,
    pub classes: usize,
    pub encoder: ParamVector,
    pub classifier: ParamVector,
}

impl ModelCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(MODEL_FORMAT_VERSION);
        w.u8(self.encoder_kind.code());
        w.u64(self.embed_dim as u64);
        w.u64(self.classes as u64);
        w.params(&self.encoder);
        w.params(&self.classifier);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint("not a model checkpoint (bad magic)".into()));
        }
        let version = r.u32("format version")?;
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported model format version {version}")));
        }
        let kind = r.u8("encoder kind")?;
        let encoder_kind =
            EncoderKind::from_code(kind).ok_or_else(|| Error::Checkpoint(format!("unknown encoder kind {kind}")))?;
        let embed_dim = r.u64("embedding dim")? as usize;
        let classes = r.u64("class count")? as usize;
        let encoder = r.params()?;
        let classifier = r.params()?;
        if !r.is_done() {
            return Err(Error::Checkpoint("trailing bytes after model checkpoint".into()));
        }
        Ok(ModelCheckpoint {
            encoder_kind,
            embed_dim,
            classes,
            encoder,
            classifier,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
