//! Synthetic ellipsoid phantoms standing in for annotated MR volumes.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::manifest::{write_manifest, ManifestEntry};
use super::native::{write_native_mask, write_native_volume};
use super::volume::{MaskVolume, Volume};
use crate::{Error, Result};

/// Generation parameters. Ranges are inclusive-exclusive `(lo, hi)` and are
/// sampled uniformly per phantom; a range with `lo == hi` is a constant.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub seed: u64,
    /// `(H, W)`.
    pub size: (usize, usize),
    /// Inclusive slice-count range.
    pub slices: (usize, usize),
    /// Maximum center offset from the volume center, as a fraction of each extent.
    pub center_jitter: f64,
    /// In-plane semi-axes as fractions of H and W.
    pub axes_xy: (f64, f64),
    /// Through-plane semi-axis as a fraction of S.
    pub axis_z: (f64, f64),
    /// Background intensity.
    pub background: f32,
    /// Intensity added inside the ellipsoid.
    pub contrast: f32,
    /// Amplitude of the smooth sinusoidal background texture.
    pub texture: f32,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f32,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            seed: 0,
            size: (64, 64),
            slices: (12, 12),
            center_jitter: 0.1,
            axes_xy: (0.15, 0.3),
            axis_z: (0.3, 0.45),
            background: 0.3,
            contrast: 0.4,
            texture: 0.1,
            noise: 0.05,
        }
    }
}

impl PhantomSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("phantom", m));
        let (h, w) = self.size;
        if h == 0 || w == 0 || self.slices.0 == 0 || self.slices.0 > self.slices.1 {
            return bad(format!("bad size {:?} or slice range {:?}", self.size, self.slices));
        }
        for (name, (lo, hi)) in [("axes_xy", self.axes_xy), ("axis_z", self.axis_z)] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return bad(format!("degenerate ellipsoid: {name} range ({lo}, {hi}) must be positive"));
            }
        }
        if !(self.noise >= 0.0 && self.texture >= 0.0 && self.center_jitter >= 0.0) {
            return bad("noise, texture and center jitter must be >= 0".into());
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// A volume and its ellipsoid mask, fully determined by `spec`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume, MaskVolume)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = spec.size;
    let s = rng.random_range(spec.slices.0..=spec.slices.1);
    let jitter = |rng: &mut ChaCha8Rng, n: usize| {
        let c = (n as f64 - 1.0) / 2.0;
        if spec.center_jitter > 0.0 {
            c + rng.random_range(-spec.center_jitter..spec.center_jitter) * n as f64
        } else {
            c
        }
    };
    let (cz, cy, cx) = (jitter(&mut rng, s), jitter(&mut rng, h), jitter(&mut rng, w));
    let az = draw(&mut rng, spec.axis_z) * s as f64;
    let ay = draw(&mut rng, spec.axes_xy) * h as f64;
    let ax = draw(&mut rng, spec.axes_xy) * w as f64;
    if az <= 0.0 || ay <= 0.0 || ax <= 0.0 {
        return Err(Error::invalid("phantom", "degenerate ellipsoid: zero axis"));
    }

    // Three low-frequency plane waves.
    let waves: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            [
                rng.random_range(0.05..0.3),
                rng.random_range(0.05..0.3),
                rng.random_range(0.0..0.5),
                rng.random_range(0.0..std::f64::consts::TAU),
            ]
        })
        .collect();
    let normal = Normal::new(0.0, f64::from(spec.noise)).map_err(|e| Error::invalid("phantom", e.to_string()))?;

    let mut data = Vec::with_capacity(s * h * w);
    let mut mask = Vec::with_capacity(s * h * w);
    for t in 0..s {
        for y in 0..h {
            for x in 0..w {
                let (dz, dy, dx) = ((t as f64 - cz) / az, (y as f64 - cy) / ay, (x as f64 - cx) / ax);
                let inside = dz * dz + dy * dy + dx * dx <= 1.0;
                let mut v = f64::from(spec.background);
                if spec.texture > 0.0 {
                    let tex: f64 = waves
                        .iter()
                        .map(|[fx, fy, fz, ph]| (fx * x as f64 + fy * y as f64 + fz * t as f64 + ph).sin())
                        .sum::<f64>()
                        / 3.0;
                    v += f64::from(spec.texture) * tex;
                }
                if inside {
                    v += f64::from(spec.contrast);
                }
                if spec.noise > 0.0 {
                    v += normal.sample(&mut rng);
                }
                data.push(v as f32);
                mask.push(u8::from(inside));
            }
        }
    }
    let id = format!("phantom{}", spec.seed);
    Ok((
        Volume::new(id.clone(), [s, h, w], data)?.with_spacing(Some([1.0, 1.0, 1.0])),
        MaskVolume::new(id, [s, h, w], mask)?,
    ))
}

/// Per-case seed for case `index` of a dataset generated from `seed`.
pub fn case_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64 + 1)
}

/// Write `count` phantoms as `caseNNN.rvol` / `caseNNN_mask.rvol` plus
/// `manifest.txt` into `dir`. Returns the manifest path.
pub fn write_phantom_dataset(dir: &Path, count: usize, seed: u64, base: &PhantomSpec) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let spec = base.clone().with_seed(case_seed(seed, i));
        let (vol, mask) = generate_phantom(&spec)?;
        let id = format!("case{i:03}");
        let (img, msk) = (format!("{id}.rvol"), format!("{id}_mask.rvol"));
        write_native_volume(&vol, &dir.join(&img))?;
        write_native_mask(&mask, &dir.join(&msk))?;
        entries.push(ManifestEntry {
            case_id: id,
            image: img.into(),
            mask: Some(msk.into()),
        });
    }
    let manifest = dir.join("manifest.txt");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_validated() {
        let spec = PhantomSpec::default().with_seed(5);
        assert_eq!(generate_phantom(&spec).unwrap(), generate_phantom(&spec).unwrap());
        let mut bad = spec.clone();
        bad.axes_xy = (0.0, 0.2);
        let e = generate_phantom(&bad).unwrap_err().to_string();
        assert!(e.contains("degenerate"), "{e}");
    }
}
