use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use super::cache::TensorCache;
use super::decode::decode_frames;
use super::{FrameSequence, VideoSample, FRAMES, FRAME_LEN};
use crate::error::{Error, Result};

/// Anything that can produce the frame sequence of a sample.
pub trait SequenceSource: Sync {
    fn sequence(&self, sample: &VideoSample) -> Result<Arc<FrameSequence>>;
}

/// Decodes videos on demand, optionally through the tensor cache and an
/// in-memory map of already decoded sequences.
pub struct SequenceStore {
    cache: Option<TensorCache>,
    memory: Option<Mutex<HashMap<String, Arc<FrameSequence>>>>,
}

impl SequenceStore {
    pub fn new(cache: Option<TensorCache>, keep_in_memory: bool) -> Self {
        Self {
            cache,
            memory: keep_in_memory.then(|| Mutex::new(HashMap::new())),
        }
    }

    /// Decode (or read from cache) one sample; also reports the container's
    /// frame count.
    pub fn fetch(&self, sample: &VideoSample) -> Result<(Arc<FrameSequence>, usize)> {
        if let Some(cache) = &self.cache {
            if let Some((seq, n)) = cache.load(&sample.id, sample.label) {
                return Ok((Arc::new(seq), n));
            }
        }
        let decoded = decode_frames(&sample.path, &sample.id, sample.frame_count, FRAMES)?;
        let mut data = Vec::with_capacity(FRAMES * FRAME_LEN);
        decoded.frames.iter().for_each(|f| data.extend_from_slice(f));
        let seq = FrameSequence::new(sample.id.clone(), data, sample.label)?;
        if let Some(cache) = &self.cache {
            cache.store(&seq, decoded.frame_count)?;
        }
        Ok((Arc::new(seq), decoded.frame_count))
    }
}

impl SequenceSource for SequenceStore {
    fn sequence(&self, sample: &VideoSample) -> Result<Arc<FrameSequence>> {
        if let Some(memory) = &self.memory {
            if let Some(seq) = memory.lock().expect("sequence map poisoned").get(&sample.id) {
                return Ok(seq.clone());
            }
        }
        let (seq, _) = self.fetch(sample)?;
        if let Some(memory) = &self.memory {
            memory
                .lock()
                .expect("sequence map poisoned")
                .insert(sample.id.clone(), seq.clone());
        }
        Ok(seq)
    }
}

/// Decode many samples on the rayon pool; results come back in input order.
/// Successful decodes fill in `frame_count`.
pub fn load_sequences(samples: &mut [VideoSample], store: &SequenceStore) -> Vec<Result<Arc<FrameSequence>>> {
    let results: Vec<Result<(Arc<FrameSequence>, usize)>> = samples.par_iter().map(|s| store.fetch(s)).collect();
    samples
        .iter_mut()
        .zip(results)
        .map(|(sample, r)| {
            r.map(|(seq, n)| {
                sample.frame_count = Some(n);
                seq
            })
        })
        .collect()
}

/// Sequences already in memory, keyed by video id.
#[derive(Clone, Debug, Default)]
pub struct MemorySource {
    sequences: HashMap<String, Arc<FrameSequence>>,
}

impl MemorySource {
    pub fn new(sequences: impl IntoIterator<Item = FrameSequence>) -> Self {
        Self {
            sequences: sequences.into_iter().map(|s| (s.video_id.clone(), Arc::new(s))).collect(),
        }
    }

    pub fn insert(&mut self, seq: FrameSequence) {
        self.sequences.insert(seq.video_id.clone(), Arc::new(seq));
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

impl SequenceSource for MemorySource {
    fn sequence(&self, sample: &VideoSample) -> Result<Arc<FrameSequence>> {
        self.sequences
            .get(&sample.id)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("no sequence for video {}", sample.id)))
    }
}
