use rand::Rng;

use super::volume::{MaskVolume, Volume};
use crate::{Error, Result};

/// Default contrast factor (a 20% reduction).
pub const DEFAULT_CONTRAST_FACTOR: f64 = 0.8;

/// Reduce contrast in the second half of the volume.
///
/// Slices `t >= floor(S/2)` (0-based) become `mu + factor * (x - mu)`, with
/// `mu` the slice mean, clamped to `[0, 1]`. Earlier slices are untouched.
pub fn corrupt_contrast(volume: &Volume, factor: f64) -> Result<Volume> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::invalid("corrupt_contrast", format!("factor must be in (0, 1], got {factor}")));
    }
    let mut out = volume.clone();
    if factor == 1.0 {
        return Ok(out);
    }
    for t in volume.slices() / 2..volume.slices() {
        let slice = out.slice_mut(t);
        let mu = slice.iter().map(|&v| f64::from(v)).sum::<f64>() / slice.len() as f64;
        for v in slice {
            *v = (mu + factor * (f64::from(*v) - mu)).clamp(0.0, 1.0) as f32;
        }
    }
    Ok(out)
}

/// Uniform start index of a `length`-slice window in a volume of `slices`.
pub fn sample_start<R: Rng + ?Sized>(slices: usize, length: usize, rng: &mut R) -> usize {
    if slices <= length {
        0
    } else {
        rng.random_range(0..=slices - length)
    }
}

/// Random run of `length` consecutive slices (the whole volume if shorter).
pub fn sample_subsequence<R: Rng + ?Sized>(
    volume: &Volume,
    mask: &MaskVolume,
    length: usize,
    rng: &mut R,
) -> Result<(Volume, MaskVolume)> {
    super::volume::check_pair(volume, mask)?;
    if length == 0 {
        return Err(Error::invalid("sample_subsequence", "length must be >= 1"));
    }
    let s = volume.slices();
    let start = sample_start(s, length, rng);
    let len = length.min(s);
    Ok((volume.range(start, len)?, mask.range(start, len)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_value_slice() {
        let v = Volume::new("v", [2, 1, 2], vec![0.3, 0.7, 0.3, 0.7]).unwrap();
        let c = corrupt_contrast(&v, 0.8).unwrap();
        assert_eq!(&c.data()[..2], &[0.3, 0.7]);
        assert!((c.data()[2] - 0.34).abs() < 1e-6 && (c.data()[3] - 0.66).abs() < 1e-6);
        assert!(corrupt_contrast(&v, 0.0).is_err());
        assert!(corrupt_contrast(&v, 1.5).is_err());
    }
}
