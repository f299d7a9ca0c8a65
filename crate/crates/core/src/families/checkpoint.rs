//! Parameter checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "BBVI"
//! 4       4     kind (u32): 0 gaussian_diag, 1 gaussian_full, 2 real_nvp
//! 8       4     D (u32)
//! 12      4     T (u32, 0 for Gaussians)
//! 16      4     H (u32, 0 for Gaussians)
//! 20      8     parameter count (u64)
//! 28      8n    parameters (f64)
//! ```

use std::io::{Read, Write};

use super::{FamilyKind, FamilyParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BBVI";
const HEADER_LEN: usize = 28;

impl FamilyParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let (code, layers, hidden) = match self.kind {
            FamilyKind::GaussianDiag => (0u32, 0u32, 0u32),
            FamilyKind::GaussianFull => (1, 0, 0),
            FamilyKind::RealNvp { layers, hidden } => (2, layers as u32, hidden as u32),
        };
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.values.len());
        out.extend_from_slice(MAGIC);
        for v in [code, self.dim as u32, layers, hidden] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("missing BBVI header".into()));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
        let (code, dim, layers, hidden) = (u32_at(4), u32_at(8), u32_at(12), u32_at(16));
        let count = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes")) as usize;
        let kind = match code {
            0 => FamilyKind::GaussianDiag,
            1 => FamilyKind::GaussianFull,
            2 => FamilyKind::RealNvp { layers, hidden },
            other => return Err(Error::Checkpoint(format!("unknown family code {other}"))),
        };
        let body = &bytes[HEADER_LEN..];
        if body.len() != 8 * count {
            return Err(Error::Checkpoint(format!(
                "expected {count} parameters, found {} bytes",
                body.len()
            )));
        }
        let values =
            body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Self::from_values(kind, dim, values).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

pub fn write_checkpoint(params: &FamilyParams, mut writer: impl Write) -> Result<()> {
    writer.write_all(&params.to_bytes())?;
    Ok(())
}

pub fn read_checkpoint(mut reader: impl Read) -> Result<FamilyParams> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    FamilyParams::from_bytes(&bytes)
}
