//! Epitome model files.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! offset  size   field
//! 0       4      magic "EPI1"
//! 4       4      u32 epitome count N
//! 8       4      u32 epitome height
//! 12      4      u32 epitome width
//! 16      4      u32 patch height
//! 20      4      u32 patch width
//! 24      8*M    f64 pixels, M = N * height * width, epitomes concatenated,
//!                each row-major
//! ```
//!
//! Training metadata (lambda, scales, seed, ...) goes to a `key=value`
//! text sidecar next to the model, at `<model path>.meta`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::epitome::{EpitomeGeometry, EpitomeSet, PatchShape};
use crate::error::{EpitomeError, Result};

pub const MAGIC: &[u8; 4] = b"EPI1";
const HEADER_LEN: usize = 24;

/// A learned epitome set with the patch shape it was trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct EpitomeModel {
    pub epitome: EpitomeSet,
    pub patch: PatchShape,
    pub metadata: BTreeMap<String, String>,
}

impl EpitomeModel {
    pub fn new(epitome: EpitomeSet, patch: PatchShape) -> Result<Self> {
        epitome.geometry().check_patch(patch)?;
        Ok(Self {
            epitome,
            patch,
            metadata: BTreeMap::new(),
        })
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let g = self.epitome.geometry();
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * g.total_pixels());
        out.extend_from_slice(MAGIC);
        for v in [
            g.count(),
            g.height(),
            g.width(),
            self.patch.height(),
            self.patch.width(),
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &p in self.epitome.pixels() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    /// Parses the binary part; metadata is left empty.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(EpitomeError::Format(
                "not an epitome model (missing EPI1 header)".into(),
            ));
        }
        let field = |i: usize| {
            let start = 4 + 4 * i;
            u32::from_le_bytes(bytes[start..start + 4].try_into().unwrap()) as usize
        };
        let geometry = EpitomeGeometry::new(field(0), field(1), field(2))?;
        let patch = PatchShape::new(field(3), field(4))?;
        let m = geometry.total_pixels();
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != 8 * m {
            return Err(EpitomeError::Format(format!(
                "model payload has {} bytes, expected {}",
                payload.len(),
                8 * m
            )));
        }
        let pixels = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(EpitomeSet::from_vec(geometry, pixels)?, patch)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes())?;
        fs::write(sidecar_path(path), format_metadata(&self.metadata))?;
        Ok(())
    }

    /// Loads a model and, when present, its metadata sidecar.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut model = Self::from_bytes(&fs::read(path)?)?;
        let meta = sidecar_path(path);
        if meta.exists() {
            model.metadata = parse_metadata(&fs::read_to_string(meta)?)?;
        }
        Ok(model)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn format_metadata(meta: &BTreeMap<String, String>) -> String {
    meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn parse_metadata(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            EpitomeError::Format(format!("metadata line {} has no '='", n + 1))
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
