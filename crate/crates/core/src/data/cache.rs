//! On-disk tensor cache, one file per video:
//!
//! ```text
//! bytes 0..8    magic "VBTENSOR"
//! bytes 8..12   format version (u32 LE)
//! bytes 12..16  source container frame count (u32 LE)
//! bytes 16..32  shape 15,100,100,3 (4 × u32 LE)
//! bytes 32..    15·100·100·3 f32 LE
//! ```
//!
//! File names are `sha256(video id ‖ pipeline version)` so a pipeline change
//! never reads stale tensors.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{FrameSequence, Label, PIPELINE_VERSION, SEQUENCE_LEN, SEQUENCE_SHAPE};
use crate::error::{Error, IoContext, Result};

pub const CACHE_MAGIC: &[u8; 8] = b"VBTENSOR";
pub const CACHE_VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

#[derive(Clone, Debug)]
pub struct TensorCache {
    dir: PathBuf,
}

impl TensorCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(video_id: &str) -> String {
        let mut h = Sha256::new();
        h.update(video_id.as_bytes());
        h.update([0u8]);
        h.update(PIPELINE_VERSION.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn path_for(&self, video_id: &str) -> PathBuf {
        self.dir.join(format!("{}.vbt", Self::key(video_id)))
    }

    pub fn encode(seq: &FrameSequence, frame_count: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * SEQUENCE_LEN);
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&(frame_count as u32).to_le_bytes());
        for d in SEQUENCE_SHAPE {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &seq.frames {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parse a cache file; returns the frames and the source frame count.
    pub fn decode(bytes: &[u8]) -> Result<(Vec<f32>, usize)> {
        let bad = |m: &str| Error::InvalidInput(format!("tensor cache entry: {m}"));
        if bytes.len() < HEADER_LEN || &bytes[..8] != CACHE_MAGIC {
            return Err(bad("bad magic"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
        if word(8) != CACHE_VERSION as usize {
            return Err(bad("unsupported version"));
        }
        let shape: Vec<usize> = (0..4).map(|k| word(16 + 4 * k)).collect();
        if shape != SEQUENCE_SHAPE {
            return Err(Error::shape("tensor cache entry", &SEQUENCE_SHAPE, &shape));
        }
        if bytes.len() != HEADER_LEN + 4 * SEQUENCE_LEN {
            return Err(bad("truncated data"));
        }
        let frames = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok((frames, word(12)))
    }

    /// Cached sequence for `video_id`, if present and readable. Unreadable
    /// entries are reported and treated as misses.
    pub fn load(&self, video_id: &str, label: Label) -> Option<(FrameSequence, usize)> {
        let path = self.path_for(video_id);
        let bytes = std::fs::read(&path).ok()?;
        match Self::decode(&bytes).and_then(|(frames, n)| Ok((FrameSequence::new(video_id, frames, label)?, n))) {
            Ok(hit) => Some(hit),
            Err(e) => {
                log::warn!("ignoring cache entry {}: {e}", path.display());
                None
            }
        }
    }

    pub fn store(&self, seq: &FrameSequence, frame_count: usize) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dir).at(&self.dir)?;
        let path = self.path_for(&seq.video_id);
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        std::fs::write(&tmp, Self::encode(seq, frame_count)).at(&tmp)?;
        std::fs::rename(&tmp, &path).at(&path)?;
        Ok(path)
    }
}
