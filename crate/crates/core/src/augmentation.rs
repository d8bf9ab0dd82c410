//! Zoom, brightness and Gaussian-blur augmentation of frame sequences.
//!
//! One parameter set is drawn per video and applied to all of its frames, in
//! the order zoom → brightness → blur.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FrameSequence, CHANNELS, FRAMES, FRAME_LEN, HEIGHT, WIDTH};
use crate::data::resize_bilinear;
use crate::error::{Error, Result};
use crate::seed;

pub const ZOOM_RANGE: (f32, f32) = (1.0, 1.5);
pub const BRIGHTNESS_RANGE: (f32, f32) = (0.8, 1.5);
pub const SIGMA_RANGE: (f32, f32) = (0.5, 1.5);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationParams {
    pub zoom: f32,
    pub brightness: f32,
    pub sigma: f32,
    pub seed: u64,
}

impl AugmentationParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v, (lo, hi)) in [
            ("zoom", self.zoom, ZOOM_RANGE),
            ("brightness", self.brightness, BRIGHTNESS_RANGE),
            ("sigma", self.sigma, SIGMA_RANGE),
        ] {
            if !(lo..=hi).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} {v} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Uniform draws from the closed ranges; deterministic in `rng_seed`.
pub fn sample_params(rng_seed: u64) -> AugmentationParams {
    let mut rng = seed::rng(rng_seed);
    AugmentationParams {
        zoom: rng.gen_range(ZOOM_RANGE.0..=ZOOM_RANGE.1),
        brightness: rng.gen_range(BRIGHTNESS_RANGE.0..=BRIGHTNESS_RANGE.1),
        sigma: rng.gen_range(SIGMA_RANGE.0..=SIGMA_RANGE.1),
        seed: rng_seed,
    }
}

/// Parameters for one video of a run: keyed on the augmentation stream of the
/// experiment seed and the video id.
pub fn params_for_video(experiment_seed: u64, video_id: &str) -> AugmentationParams {
    sample_params(seed::derive_keyed(seed::derive_seed(experiment_seed, seed::AUGMENT), video_id))
}

fn check_frame(frame: &[f32]) -> Result<()> {
    if frame.len() != FRAME_LEN {
        return Err(Error::shape("augmentation frame", &[HEIGHT, WIDTH, CHANNELS], &[frame.len()]));
    }
    Ok(())
}

/// Side of the centered crop for a zoom factor.
pub fn zoom_crop_side(factor: f32) -> usize {
    ((WIDTH as f64 / factor as f64).round() as usize).clamp(1, WIDTH)
}

/// Center crop of side `round(100 / factor)`, resized back to 100×100.
pub fn apply_zoom(frame: &[f32], factor: f32) -> Result<Vec<f32>> {
    check_frame(frame)?;
    if !(factor >= 1.0) || !factor.is_finite() {
        return Err(Error::InvalidParameter(format!("zoom factor {factor} must be ≥ 1")));
    }
    let side = zoom_crop_side(factor);
    if side == WIDTH {
        return Ok(frame.to_vec());
    }
    let off = (WIDTH - side) / 2;
    let mut crop = Vec::with_capacity(side * side * CHANNELS);
    for y in off..off + side {
        crop.extend_from_slice(&frame[(y * WIDTH + off) * CHANNELS..(y * WIDTH + off + side) * CHANNELS]);
    }
    let mut out = resize_bilinear(&crop, side, side, CHANNELS, HEIGHT, WIDTH);
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(out)
}

/// Pixelwise multiplication clipped to `[0, 1]`.
pub fn apply_brightness(frame: &[f32], factor: f32) -> Result<Vec<f32>> {
    if !(factor > 0.0) {
        return Err(Error::InvalidParameter(format!("brightness factor {factor} must be positive")));
    }
    Ok(frame.iter().map(|v| (v * factor).clamp(0.0, 1.0)).collect())
}

/// Normalized 1-D Gaussian taps with radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f32) -> Result<Vec<f32>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("blur sigma {sigma} must be positive")));
    }
    let radius = (3.0 * sigma as f64).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|x| (-((x * x) as f64) / (2.0 * (sigma as f64).powi(2))).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    Ok(raw.iter().map(|v| (v / sum) as f32).collect())
}

/// Symmetric reflection (`d c b a | a b c d | d c b a`) of an index into `0..n`.
fn reflect(i: i64, n: i64) -> usize {
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m >= n { period - 1 - m } else { m }) as usize
}

/// Separable per-channel Gaussian blur with reflect padding.
pub fn apply_gaussian_blur(frame: &[f32], sigma: f32) -> Result<Vec<f32>> {
    check_frame(frame)?;
    let kernel = gaussian_kernel(sigma)?;
    let r = (kernel.len() / 2) as i64;
    let (h, w, c) = (HEIGHT as i64, WIDTH as i64, CHANNELS);
    let mut tmp = vec![0.0f32; frame.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, &g) in kernel.iter().enumerate() {
                    let sx = reflect(x + k as i64 - r, w);
                    acc += g * frame[(y as usize * WIDTH + sx) * c + ch];
                }
                tmp[(y as usize * WIDTH + x as usize) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; frame.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, &g) in kernel.iter().enumerate() {
                    let sy = reflect(y + k as i64 - r, h);
                    acc += g * tmp[(sy * WIDTH + x as usize) * c + ch];
                }
                out[(y as usize * WIDTH + x as usize) * c + ch] = acc.clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Apply the same zoom → brightness → blur to all fifteen frames.
pub fn augment_sequence(seq: &FrameSequence, params: &AugmentationParams) -> Result<FrameSequence> {
    seq.validate()?;
    let mut frames = Vec::with_capacity(seq.frames.len());
    for i in 0..FRAMES {
        let f = apply_zoom(seq.frame(i), params.zoom)?;
        let f = apply_brightness(&f, params.brightness)?;
        frames.extend(apply_gaussian_blur(&f, params.sigma)?);
    }
    FrameSequence::new(seq.video_id.clone(), frames, seq.label)
}
