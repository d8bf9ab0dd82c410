//! Synthetic videos for tests, demos and smoke runs: a bright square moving
//! across a dark background (labelled Violent) versus static frames
//! (NonViolent).

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::data::{DatasetSplit, FrameSequence, Label, MemorySource, SplitName, SplitSizes, VideoSample, FRAMES, HEIGHT, WIDTH};
use crate::error::{Error, IoContext, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VideoFormat {
    Y4m,
    Gif,
}

#[derive(Clone, Copy, Debug)]
pub struct SyntheticOptions {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub format: VideoFormat,
    pub seed: u64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            frames: 30,
            width: 64,
            height: 48,
            format: VideoFormat::Y4m,
            seed: 0,
        }
    }
}

/// Write packed RGB8 frames as 4:4:4 full-range YUV4MPEG2.
pub fn write_y4m(path: &Path, width: usize, height: usize, frames: &[Vec<u8>]) -> Result<()> {
    let file = File::create(path).at(path)?;
    let ext = y4m::VendorExtensionString::new(b"XCOLORRANGE=FULL".to_vec())
        .map_err(|e| Error::InvalidInput(format!("y4m extension: {e}")))?;
    let mut enc = y4m::encode(width, height, y4m::Ratio::new(30, 1))
        .with_colorspace(y4m::Colorspace::C444)
        .append_vendor_extension(ext)
        .write_header(BufWriter::new(file))
        .map_err(|e| Error::InvalidInput(format!("y4m header: {e}")))?;
    let n = width * height;
    let (mut yp, mut up, mut vp) = (vec![0u8; n], vec![0u8; n], vec![0u8; n]);
    for rgb in frames {
        for i in 0..n {
            let (r, g, b) = (rgb[3 * i] as f32, rgb[3 * i + 1] as f32, rgb[3 * i + 2] as f32);
            yp[i] = (0.299 * r + 0.587 * g + 0.114 * b).round().clamp(0.0, 255.0) as u8;
            up[i] = (128.0 - 0.168_736 * r - 0.331_264 * g + 0.5 * b).round().clamp(0.0, 255.0) as u8;
            vp[i] = (128.0 + 0.5 * r - 0.418_688 * g - 0.081_312 * b).round().clamp(0.0, 255.0) as u8;
        }
        enc.write_frame(&y4m::Frame::new([&yp, &up, &vp], None))
            .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    }
    Ok(())
}

/// Write packed RGB8 frames as an animated GIF.
pub fn write_gif(path: &Path, width: usize, height: usize, frames: &[Vec<u8>]) -> Result<()> {
    let file = File::create(path).at(path)?;
    let mut enc = image::codecs::gif::GifEncoder::new(BufWriter::new(file));
    for rgb in frames {
        let rgba: Vec<u8> = rgb.chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect();
        let buf = image::RgbaImage::from_raw(width as u32, height as u32, rgba)
            .ok_or_else(|| Error::InvalidInput("frame buffer size".into()))?;
        enc.encode_frame(image::Frame::new(buf))
            .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    }
    Ok(())
}

/// Frames of one synthetic clip. Violent clips show a bright square moving
/// with constant velocity; non-violent clips are a static textured background.
pub fn synthetic_frames(label: Label, opts: &SyntheticOptions, video_seed: u64) -> Vec<Vec<u8>> {
    let mut rng = seed::rng(video_seed);
    let (w, h) = (opts.width, opts.height);
    let base: u8 = rng.gen_range(10..50);
    let background: Vec<u8> = (0..w * h * 3).map(|_| base + rng.gen_range(0..20)).collect();
    let side = (w.min(h) / 4).max(2);
    let (x0, y0) = (rng.gen_range(0..w - side) as f32, rng.gen_range(0..h - side) as f32);
    let direction = if rng.gen::<bool>() { 1.0 } else { -1.0 };
    let (vx, vy): (f32, f32) = (direction * rng.gen_range(1.0..3.0), rng.gen_range(-1.0..1.0));
    (0..opts.frames)
        .map(|t| {
            let mut frame = background.clone();
            if label == Label::Violent {
                let span_x = (w - side) as f32;
                let span_y = (h - side) as f32;
                let x = bounce(x0 + vx * t as f32, span_x);
                let y = bounce(y0 + vy * t as f32, span_y);
                for yy in y..y + side {
                    for xx in x..x + side {
                        frame[(yy * w + xx) * 3..(yy * w + xx) * 3 + 3].copy_from_slice(&[250, 250, 240]);
                    }
                }
            }
            frame
        })
        .collect()
}

/// Reflect a coordinate into `[0, span]`.
fn bounce(v: f32, span: f32) -> usize {
    if span <= 0.0 {
        return 0;
    }
    let period = 2.0 * span;
    let m = v.rem_euclid(period);
    (if m > span { period - m } else { m }).round() as usize
}

/// Create `<root>/Violence` and `<root>/NonViolence` with `per_class` clips
/// each; returns the written paths.
pub fn generate_dataset(root: &Path, per_class: usize, opts: &SyntheticOptions) -> Result<Vec<PathBuf>> {
    let ext = match opts.format {
        VideoFormat::Y4m => "y4m",
        VideoFormat::Gif => "gif",
    };
    let mut written = Vec::new();
    for (dir, label) in [("Violence", Label::Violent), ("NonViolence", Label::NonViolent)] {
        let class_dir = root.join(dir);
        std::fs::create_dir_all(&class_dir).at(&class_dir)?;
        for i in 0..per_class {
            let path = class_dir.join(format!("{}_{i:04}.{ext}", &dir[..1]));
            let video_seed = seed::derive_keyed(opts.seed, &format!("{dir}/{i}"));
            let frames = synthetic_frames(label, opts, video_seed);
            match opts.format {
                VideoFormat::Y4m => write_y4m(&path, opts.width, opts.height, &frames)?,
                VideoFormat::Gif => write_gif(&path, opts.width, opts.height, &frames)?,
            }
            written.push(path);
        }
    }
    Ok(written)
}

/// A synthetic clip rendered directly at model resolution, skipping the
/// container round trip.
pub fn synthetic_sequence(id: &str, label: Label, video_seed: u64) -> Result<FrameSequence> {
    let opts = SyntheticOptions {
        frames: FRAMES,
        width: WIDTH,
        height: HEIGHT,
        ..SyntheticOptions::default()
    };
    let data = synthetic_frames(label, &opts, video_seed)
        .iter()
        .flatten()
        .map(|&v| v as f32 / 255.0)
        .collect();
    FrameSequence::new(id, data, label)
}

/// `per_class` in-memory videos of each class, as a manifest plus the source
/// that serves their frames. Paths are placeholders.
pub fn synthetic_manifest(per_class: usize, seed: u64) -> Result<(Vec<VideoSample>, MemorySource)> {
    let mut source = MemorySource::default();
    let mut manifest = Vec::with_capacity(2 * per_class);
    for label in [Label::NonViolent, Label::Violent] {
        for i in 0..per_class {
            let id = format!("{}_{i:04}", label.as_str());
            source.insert(synthetic_sequence(&id, label, seed::derive_keyed(seed, &id))?);
            manifest.push(memory_sample(id, label));
        }
    }
    Ok((manifest, source))
}

fn memory_sample(id: String, label: Label) -> VideoSample {
    VideoSample {
        path: PathBuf::from(format!("memory:{id}")),
        id,
        label,
        frame_count: Some(FRAMES),
    }
}

/// An in-memory split with balanced classes: `(train, validation, test)`
/// videos per class. Paths are placeholders; read the frames through the
/// returned source.
pub fn synthetic_split(per_class: (usize, usize, usize), seed: u64) -> Result<(DatasetSplit, MemorySource)> {
    let mut source = MemorySource::default();
    let mut lists: [Vec<VideoSample>; 3] = Default::default();
    for (part, (name, n)) in [("train", per_class.0), ("val", per_class.1), ("test", per_class.2)]
        .into_iter()
        .enumerate()
    {
        for i in 0..n {
            for label in [Label::NonViolent, Label::Violent] {
                let id = format!("{name}_{}_{i:03}", label.as_str());
                source.insert(synthetic_sequence(&id, label, seed::derive_keyed(seed, &id))?);
                lists[part].push(memory_sample(id, label));
            }
        }
    }
    let [train, validation, test] = lists;
    let sizes = SplitSizes {
        test: test.len(),
        full_train: train.len() + validation.len(),
        fraction_train: train.len() + validation.len(),
        validation: validation.len(),
    };
    let split = DatasetSplit {
        split_name: SplitName::Fraction,
        seed,
        sizes,
        scaled: true,
        train,
        validation,
        test,
    };
    Ok((split, source))
}
