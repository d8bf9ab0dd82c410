//! Bilinear resampling with half-pixel centers (no antialiasing), the
//! convention of OpenCV `INTER_LINEAR` and `tf.image.resize(..., "bilinear")`.

/// Source coordinate interpolation table for one axis.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let x = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (x.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, (x - lo as f64) as f32)
        })
        .collect()
}

fn resize_with(
    sample: impl Fn(usize, usize, usize) -> f32,
    src_h: usize,
    src_w: usize,
    channels: usize,
    dst_h: usize,
    dst_w: usize,
) -> Vec<f32> {
    let ys = axis_taps(src_h, dst_h);
    let xs = axis_taps(src_w, dst_w);
    let mut out = Vec::with_capacity(dst_h * dst_w * channels);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..channels {
                let top = sample(y0, x0, c) * (1.0 - fx) + sample(y0, x1, c) * fx;
                let bottom = sample(y1, x0, c) * (1.0 - fx) + sample(y1, x1, c) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

/// Resize an `h × w × c` float image.
pub fn resize_bilinear(src: &[f32], src_h: usize, src_w: usize, channels: usize, dst_h: usize, dst_w: usize) -> Vec<f32> {
    assert_eq!(src.len(), src_h * src_w * channels, "resize_bilinear: buffer size");
    resize_with(|y, x, c| src[(y * src_w + x) * channels + c], src_h, src_w, channels, dst_h, dst_w)
}

/// Resize packed 8-bit RGB to floats in `[0, 1]`.
pub fn resize_rgb8(src: &[u8], src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Vec<f32> {
    assert_eq!(src.len(), src_h * src_w * 3, "resize_rgb8: buffer size");
    let mut out = resize_with(|y, x, c| src[(y * src_w + x) * 3 + c] as f32, src_h, src_w, 3, dst_h, dst_w);
    out.iter_mut().for_each(|v| *v = (*v / 255.0).clamp(0.0, 1.0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let src: Vec<f32> = (0..4 * 5 * 3).map(|v| v as f32 / 60.0).collect();
        assert_eq!(resize_bilinear(&src, 4, 5, 3, 4, 5), src);
    }

    #[test]
    fn downscale_by_two_averages_pairs() {
        // Half-pixel centers put each output sample exactly between two inputs.
        let src = [0.0, 1.0, 0.2, 0.6];
        let out = resize_bilinear(&src, 1, 4, 1, 1, 2);
        assert!((out[0] - 0.5).abs() < 1e-6 && (out[1] - 0.4).abs() < 1e-6);
    }

    #[test]
    fn upscale_clamps_at_edges() {
        let out = resize_bilinear(&[0.0, 1.0], 1, 2, 1, 1, 4);
        let expected = [0.0, 0.25, 0.75, 1.0];
        for (a, b) in out.iter().zip(expected) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rgb8_scales_to_unit_range() {
        let src = vec![255u8; 6 * 8 * 3];
        let out = resize_rgb8(&src, 6, 8, 3, 3);
        assert!(out.iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }
}
