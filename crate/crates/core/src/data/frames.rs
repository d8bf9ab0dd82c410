use crate::error::{Error, Result};

/// Evenly spaced frame indices: `round(i · (total − 1) / (target − 1))` with
/// halves rounded up, computed in exact integer arithmetic.
pub fn sample_frame_indices(total_frames: usize, target_count: usize) -> Result<Vec<usize>> {
    if total_frames == 0 {
        return Err(Error::InvalidInput("video has no frames".into()));
    }
    if target_count == 0 {
        return Err(Error::InvalidParameter("target frame count must be positive".into()));
    }
    if target_count == 1 {
        return Ok(vec![0]);
    }
    let span = total_frames - 1;
    let steps = target_count - 1;
    // floor(i·span/steps + 1/2) = floor((2·i·span + steps) / (2·steps))
    Ok((0..target_count).map(|i| (2 * i * span + steps) / (2 * steps)).collect())
}
