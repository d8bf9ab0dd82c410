//! Container decoding to RGB frames.
//!
//! Natively supported: YUV4MPEG2 (`.y4m`), animated GIF and directories of
//! still images (one file per frame, sorted by name). Every other container
//! is piped through `ffmpeg`/`ffprobe` when they are on `PATH`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;
use std::process::{Command, Stdio};

use image::AnimationDecoder;

use super::frames::sample_frame_indices;
use super::resize::resize_rgb8;
use super::{FrameSequence, VideoSample, FRAMES, FRAME_LEN, HEIGHT, WIDTH};
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp"];

/// Frames kept from one decode plus the container's true frame count.
#[derive(Clone, Debug)]
pub struct DecodedFrames {
    pub frame_count: usize,
    /// The sampled frames, each `100 × 100 × 3` in `[0, 1]`.
    pub frames: Vec<Vec<f32>>,
}

/// Decode `path`, keeping the `target` evenly spaced frames resized to
/// 100×100. With a correct `frame_count_hint` only the sampled frames are
/// resized; otherwise every frame is resized and the selection happens at the
/// end, so both paths give identical results.
pub fn decode_frames(path: &Path, video_id: &str, frame_count_hint: Option<usize>, target: usize) -> Result<DecodedFrames> {
    if let Some(hint) = frame_count_hint.filter(|&n| n > 0) {
        let wanted = sample_frame_indices(hint, target)?;
        let mut kept: BTreeMap<usize, Vec<f32>> = BTreeMap::new();
        let count = for_each_frame(path, video_id, |index, rgb, h, w| {
            if wanted.binary_search(&index).is_ok() {
                kept.insert(index, resize_rgb8(rgb, h, w, HEIGHT, WIDTH));
            }
        })?;
        if count == hint {
            let frames = wanted.iter().map(|i| kept[i].clone()).collect();
            return Ok(DecodedFrames { frame_count: count, frames });
        }
        log::warn!("{video_id}: frame count hint {hint} is stale (container has {count}); decoding again");
    }
    let mut all = Vec::new();
    let count = for_each_frame(path, video_id, |_, rgb, h, w| all.push(resize_rgb8(rgb, h, w, HEIGHT, WIDTH)))?;
    if count == 0 {
        return Err(Error::InvalidInput(format!("video {video_id} contains no frames")));
    }
    let frames = sample_frame_indices(count, target)?.into_iter().map(|i| all[i].clone()).collect();
    Ok(DecodedFrames { frame_count: count, frames })
}

/// Decode a sample into its 15-frame sequence.
pub fn decode_and_resize(sample: &VideoSample) -> Result<FrameSequence> {
    let decoded = decode_frames(&sample.path, &sample.id, sample.frame_count, FRAMES)?;
    let mut data = Vec::with_capacity(FRAMES * FRAME_LEN);
    decoded.frames.iter().for_each(|f| data.extend_from_slice(f));
    FrameSequence::new(sample.id.clone(), data, sample.label)
}

/// Stream every frame as packed RGB8; returns the number of frames.
fn for_each_frame(path: &Path, id: &str, mut visit: impl FnMut(usize, &[u8], usize, usize)) -> Result<usize> {
    if path.is_dir() {
        return image_dir_frames(path, id, &mut visit);
    }
    if !path.exists() {
        return Err(Error::decode(id, format!("{} does not exist", path.display())));
    }
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "y4m" => y4m_frames(path, id, &mut visit),
        "gif" => gif_frames(path, id, &mut visit),
        _ => ffmpeg_frames(path, id, &mut visit),
    }
}

fn y4m_frames(path: &Path, id: &str, visit: &mut dyn FnMut(usize, &[u8], usize, usize)) -> Result<usize> {
    let file = File::open(path).map_err(|e| Error::decode(id, e.to_string()))?;
    let mut dec = y4m::decode(BufReader::new(file)).map_err(|e| Error::decode(id, format!("y4m header: {e}")))?;
    let (w, h) = (dec.get_width(), dec.get_height());
    let colorspace = dec.get_colorspace();
    let depth = dec.get_bit_depth();
    let full_range = String::from_utf8_lossy(dec.get_raw_params()).contains("XCOLORRANGE=FULL");
    let (sx, sy) = match colorspace {
        y4m::Colorspace::C420
        | y4m::Colorspace::C420p10
        | y4m::Colorspace::C420p12
        | y4m::Colorspace::C420jpeg
        | y4m::Colorspace::C420paldv
        | y4m::Colorspace::C420mpeg2 => (1, 1),
        y4m::Colorspace::C422 | y4m::Colorspace::C422p10 | y4m::Colorspace::C422p12 => (1, 0),
        _ => (0, 0),
    };
    let mono = matches!(colorspace, y4m::Colorspace::Cmono | y4m::Colorspace::Cmono12);
    let cw = (w + sx) >> sx;
    let mut rgb = vec![0u8; w * h * 3];
    let mut count = 0;
    loop {
        let frame = match dec.read_frame() {
            Ok(f) => f,
            Err(y4m::Error::EOF) => break,
            Err(e) => return Err(Error::decode(id, format!("y4m frame {count}: {e}"))),
        };
        let sample = |plane: &[u8], i: usize| -> f32 {
            if depth > 8 {
                let v = u16::from_le_bytes([plane[2 * i], plane[2 * i + 1]]);
                v as f32 / (1 << (depth - 8)) as f32
            } else {
                plane[i] as f32
            }
        };
        let (yp, up, vp) = (frame.get_y_plane(), frame.get_u_plane(), frame.get_v_plane());
        for y in 0..h {
            for x in 0..w {
                let luma = sample(yp, y * w + x);
                let (cb, cr) = if mono {
                    (128.0, 128.0)
                } else {
                    let ci = (y >> sy) * cw + (x >> sx);
                    (sample(up, ci), sample(vp, ci))
                };
                let px = ycbcr_to_rgb(luma, cb, cr, full_range);
                rgb[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&px);
            }
        }
        visit(count, &rgb, h, w);
        count += 1;
    }
    Ok(count)
}

/// BT.601 Y'CbCr to RGB.
fn ycbcr_to_rgb(y: f32, cb: f32, cr: f32, full_range: bool) -> [u8; 3] {
    let (u, v) = (cb - 128.0, cr - 128.0);
    let (r, g, b) = if full_range {
        (y + 1.402 * v, y - 0.344_136 * u - 0.714_136 * v, y + 1.772 * u)
    } else {
        let l = 1.164_383 * (y - 16.0);
        (l + 1.596_027 * v, l - 0.391_762 * u - 0.812_968 * v, l + 2.017_232 * u)
    };
    [r, g, b].map(|c| c.round().clamp(0.0, 255.0) as u8)
}

fn gif_frames(path: &Path, id: &str, visit: &mut dyn FnMut(usize, &[u8], usize, usize)) -> Result<usize> {
    let file = File::open(path).map_err(|e| Error::decode(id, e.to_string()))?;
    let dec = image::codecs::gif::GifDecoder::new(BufReader::new(file)).map_err(|e| Error::decode(id, format!("gif: {e}")))?;
    let mut count = 0;
    for frame in dec.into_frames() {
        let frame = frame.map_err(|e| Error::decode(id, format!("gif frame {count}: {e}")))?;
        let rgba = frame.into_buffer();
        let (w, h) = (rgba.width() as usize, rgba.height() as usize);
        let rgb: Vec<u8> = rgba.pixels().flat_map(|p| [p[0], p[1], p[2]]).collect();
        visit(count, &rgb, h, w);
        count += 1;
    }
    Ok(count)
}

fn image_dir_frames(dir: &Path, id: &str, visit: &mut dyn FnMut(usize, &[u8], usize, usize)) -> Result<usize> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::decode(id, e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_image(p))
        .collect();
    files.sort();
    for (i, file) in files.iter().enumerate() {
        let img = image::open(file)
            .map_err(|e| Error::decode(id, format!("{}: {e}", file.display())))?
            .to_rgb8();
        visit(i, img.as_raw(), img.height() as usize, img.width() as usize);
    }
    Ok(files.len())
}

pub(crate) fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn ffmpeg_frames(path: &Path, id: &str, visit: &mut dyn FnMut(usize, &[u8], usize, usize)) -> Result<usize> {
    let missing = |tool: &str, e: std::io::Error| {
        Error::decode(
            id,
            format!("{tool} is needed for {} but could not be run ({e}); install ffmpeg or convert to .y4m", path.display()),
        )
    };
    let probe = Command::new("ffprobe")
        .args(["-v", "error", "-select_streams", "v:0", "-show_entries", "stream=width,height", "-of", "csv=p=0:s=x"])
        .arg(path)
        .output()
        .map_err(|e| missing("ffprobe", e))?;
    if !probe.status.success() {
        return Err(Error::decode(id, String::from_utf8_lossy(&probe.stderr).trim().to_string()));
    }
    let dims = String::from_utf8_lossy(&probe.stdout);
    let (w, h) = dims
        .trim()
        .lines()
        .next()
        .and_then(|l| l.split_once('x'))
        .and_then(|(w, h)| Some((w.trim().parse::<usize>().ok()?, h.trim().parse::<usize>().ok()?)))
        .ok_or_else(|| Error::decode(id, format!("ffprobe reported no video stream ({})", dims.trim())))?;
    let mut child = Command::new("ffmpeg")
        .args(["-v", "error", "-nostdin", "-i"])
        .arg(path)
        .args(["-f", "rawvideo", "-pix_fmt", "rgb24", "-"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| missing("ffmpeg", e))?;
    let mut stdout = child.stdout.take().expect("piped stdout");
    let mut buf = vec![0u8; w * h * 3];
    let mut count = 0;
    loop {
        match stdout.read_exact(&mut buf) {
            Ok(()) => {
                visit(count, &buf, h, w);
                count += 1;
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(Error::decode(id, e.to_string())),
        }
    }
    let out = child.wait_with_output().map_err(|e| Error::decode(id, e.to_string()))?;
    if !out.status.success() {
        return Err(Error::decode(id, String::from_utf8_lossy(&out.stderr).trim().to_string()));
    }
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limited_range_black_and_white() {
        assert_eq!(ycbcr_to_rgb(16.0, 128.0, 128.0, false), [0, 0, 0]);
        assert_eq!(ycbcr_to_rgb(235.0, 128.0, 128.0, false), [255, 255, 255]);
        assert_eq!(ycbcr_to_rgb(0.0, 128.0, 128.0, true), [0, 0, 0]);
    }
}
