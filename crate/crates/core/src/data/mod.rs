//! Dataset discovery, video decoding, frame sampling, caching and splits.

mod cache;
mod decode;
mod frames;
mod loader;
mod manifest;
mod resize;
mod split;

pub use cache::{TensorCache, CACHE_MAGIC, CACHE_VERSION};
pub use decode::{decode_and_resize, decode_frames, DecodedFrames};
pub use frames::sample_frame_indices;
pub use loader::{load_sequences, MemorySource, SequenceSource, SequenceStore};
pub use manifest::{load_manifest, write_manifest, LabelRule, MANIFEST_FILE};
pub use resize::{resize_bilinear, resize_rgb8};
pub use split::{split_dataset, DatasetSplit, SplitName, SplitOptions, SplitSizes};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frames per sequence.
pub const FRAMES: usize = 15;
pub const HEIGHT: usize = 100;
pub const WIDTH: usize = 100;
pub const CHANNELS: usize = 3;
pub const FRAME_LEN: usize = HEIGHT * WIDTH * CHANNELS;
pub const SEQUENCE_LEN: usize = FRAMES * FRAME_LEN;
pub const SEQUENCE_SHAPE: [usize; 4] = [FRAMES, HEIGHT, WIDTH, CHANNELS];

/// Identifies every choice that changes the bytes of a decoded sequence.
/// Cache entries are keyed on it.
pub const PIPELINE_VERSION: &str = "v1:15x100x100x3:bilinear-halfpixel:u8/255";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    NonViolent,
    Violent,
}

impl Label {
    /// Class index: 1 = Violent, 0 = NonViolent.
    pub fn index(self) -> usize {
        match self {
            Label::NonViolent => 0,
            Label::Violent => 1,
        }
    }

    pub fn from_index(index: usize) -> Result<Self> {
        match index {
            0 => Ok(Label::NonViolent),
            1 => Ok(Label::Violent),
            _ => Err(Error::InvalidInput(format!("class index {index} is not 0 or 1"))),
        }
    }

    pub fn onehot(self) -> [f32; 2] {
        let mut v = [0.0; 2];
        v[self.index()] = 1.0;
        v
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::NonViolent => "NonViolent",
            Label::Violent => "Violent",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Violent" => Ok(Label::Violent),
            "NonViolent" => Ok(Label::NonViolent),
            other => Err(Error::InvalidInput(format!(
                "unknown label {other:?} (expected Violent or NonViolent)"
            ))),
        }
    }
}

/// One labeled video.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoSample {
    pub id: String,
    pub path: std::path::PathBuf,
    pub label: Label,
    /// Filled in once the container has been decoded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_count: Option<usize>,
}

/// Fifteen resized frames of one video, values in `[0, 1]`, laid out
/// `15 × 100 × 100 × 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub video_id: String,
    pub frames: Vec<f32>,
    pub label: Label,
}

impl FrameSequence {
    pub fn new(video_id: impl Into<String>, frames: Vec<f32>, label: Label) -> Result<Self> {
        let seq = Self {
            video_id: video_id.into(),
            frames,
            label,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn label_onehot(&self) -> [f32; 2] {
        self.label.onehot()
    }

    pub fn frame(&self, index: usize) -> &[f32] {
        &self.frames[index * FRAME_LEN..(index + 1) * FRAME_LEN]
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != SEQUENCE_LEN {
            return Err(Error::Shape {
                context: format!("frame sequence {}", self.video_id),
                expected: SEQUENCE_SHAPE.to_vec(),
                received: vec![self.frames.len()],
            });
        }
        if let Some(v) = self.frames.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!(
                "frame sequence {} has value {v} outside [0, 1]",
                self.video_id
            )));
        }
        Ok(())
    }
}
