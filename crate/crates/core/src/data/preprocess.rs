use crate::tensorcore::{ops, Tensor};
use crate::Result;

use super::volume::{MaskVolume, Volume};

pub const DEFAULT_TARGET_SIZE: usize = 224;
pub const DEFAULT_BINS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PreprocessConfig {
    /// Slices are resampled to `target_size × target_size`.
    pub target_size: usize,
    pub bins: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_size: DEFAULT_TARGET_SIZE,
            bins: DEFAULT_BINS,
        }
    }
}

impl PreprocessConfig {
    pub fn with_size(target_size: usize) -> Self {
        PreprocessConfig {
            target_size,
            ..Default::default()
        }
    }
}

/// Per-slice bilinear resample; returns the input unchanged if already `h × w`.
pub fn resample_bilinear(volume: &Volume, h: usize, w: usize) -> Result<Volume> {
    let [s, vh, vw] = volume.dims();
    if (vh, vw) == (h, w) {
        return Ok(volume.clone());
    }
    let t: Tensor<f32> = Tensor::new(&[s, 1, vh, vw], volume.data().to_vec())?;
    let out = ops::bilinear_resize(&t, h, w)?;
    Ok(Volume::new(volume.id.clone(), [s, h, w], out.into_data())?.with_spacing(volume.spacing.map(|[x, y, z]| {
        [x * vw as f32 / w as f32, y * vh as f32 / h as f32, z]
    })))
}

/// Per-slice nearest-neighbour resample (pixel-center aligned).
pub fn resample_nearest(mask: &MaskVolume, h: usize, w: usize) -> Result<MaskVolume> {
    let [s, mh, mw] = mask.dims();
    if (mh, mw) == (h, w) {
        return Ok(mask.clone());
    }
    let src = |o: usize, out: usize, inp: usize| (((o as f64 + 0.5) * inp as f64 / out as f64) as usize).min(inp - 1);
    MaskVolume::from_fn(mask.id.clone(), [s, h, w], |t, y, x| {
        mask.slice(t)[src(y, h, mh) * mw + src(x, w, mw)] == 1
    })
}

/// Volume-wide min-max scaling to `[0, 1]`. A constant volume maps to zeros.
pub fn min_max_scale(volume: &Volume) -> Volume {
    let (lo, hi) = volume.range_of_values();
    let mut out = volume.clone();
    if hi > lo {
        let (lo, span) = (f64::from(lo), f64::from(hi) - f64::from(lo));
        for v in out.data_mut() {
            *v = ((f64::from(*v) - lo) / span).clamp(0.0, 1.0) as f32;
        }
    } else {
        log::warn!("volume {} is constant ({lo}); scaling to zeros", volume.id);
        out.data_mut().fill(0.0);
    }
    out
}

/// Histogram-equalize one slice with values in `[0, 1]`: each value maps to
/// the cumulative fraction of pixels in its bin or below.
pub fn histogram_equalize(slice: &[f32], bins: usize) -> Vec<f32> {
    let bins = bins.max(1);
    let bin = |v: f32| ((f64::from(v.clamp(0.0, 1.0)) * bins as f64) as usize).min(bins - 1);
    let mut cdf = vec![0u64; bins];
    for &v in slice {
        cdf[bin(v)] += 1;
    }
    for i in 1..bins {
        cdf[i] += cdf[i - 1];
    }
    let n = slice.len() as f64;
    slice.iter().map(|&v| (cdf[bin(v)] as f64 / n) as f32).collect()
}

/// Resample, scale to `[0, 1]`, then equalize each slice.
pub fn preprocess(volume: &Volume, cfg: &PreprocessConfig) -> Result<Volume> {
    let resampled = resample_bilinear(volume, cfg.target_size, cfg.target_size)?;
    let mut out = min_max_scale(&resampled);
    for t in 0..out.slices() {
        let eq = histogram_equalize(out.slice(t), cfg.bins);
        out.slice_mut(t).copy_from_slice(&eq);
    }
    Ok(out)
}

pub fn preprocess_mask(mask: &MaskVolume, cfg: &PreprocessConfig) -> Result<MaskVolume> {
    resample_nearest(mask, cfg.target_size, cfg.target_size)
}
