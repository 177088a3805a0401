use crate::tensorcore::{Scalar, Tensor};
use crate::{Error, Result};

fn check_dims(op: &'static str, dims: [usize; 3], len: usize) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::shape(op, format!("dims {dims:?} must all be >= 1")));
    }
    if dims.iter().product::<usize>() != len {
        return Err(Error::shape(
            op,
            format!("dims {dims:?} imply {} voxels, got {len}", dims.iter().product::<usize>()),
        ));
    }
    Ok(())
}

/// An ordered stack of slices, stored slice-major (`[S, H, W]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub id: String,
    dims: [usize; 3],
    data: Vec<f32>,
    /// Voxel spacing in mm as (x, y, z).
    pub spacing: Option<[f32; 3]>,
}

impl Volume {
    pub fn new(id: impl Into<String>, dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        check_dims("volume", dims, data.len())?;
        Ok(Volume {
            id: id.into(),
            dims,
            data,
            spacing: None,
        })
    }

    pub fn with_spacing(mut self, spacing: Option<[f32; 3]>) -> Self {
        self.spacing = spacing;
        self
    }

    /// `[S, H, W]`.
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn slices(&self) -> usize {
        self.dims[0]
    }

    pub fn slice_len(&self) -> usize {
        self.dims[1] * self.dims[2]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn slice(&self, t: usize) -> &[f32] {
        let n = self.slice_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn slice_mut(&mut self, t: usize) -> &mut [f32] {
        let n = self.slice_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    /// Slices `start..start + len` as a new volume.
    pub fn range(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.slices() {
            return Err(Error::invalid(
                "volume",
                format!("slice range {start}..{} outside 0..{}", start + len, self.slices()),
            ));
        }
        let n = self.slice_len();
        Ok(Volume {
            id: self.id.clone(),
            dims: [len, self.dims[1], self.dims[2]],
            data: self.data[start * n..(start + len) * n].to_vec(),
            spacing: self.spacing,
        })
    }

    /// `(min, max)` over all voxels.
    pub fn range_of_values(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// `[S, 1, H, W]` model input.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let [s, h, w] = self.dims;
        Tensor::new(&[s, 1, h, w], self.data.iter().map(|&v| T::from_f64_lossy(f64::from(v))).collect())
            .expect("dims validated at construction")
    }
}

/// Binary annotation with the same layout as [`Volume`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskVolume {
    pub id: String,
    dims: [usize; 3],
    data: Vec<u8>,
}

impl MaskVolume {
    /// Fails if any value is outside {0, 1}.
    pub fn new(id: impl Into<String>, dims: [usize; 3], data: Vec<u8>) -> Result<Self> {
        check_dims("mask", dims, data.len())?;
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::invalid(
                "mask",
                format!("non-binary value {} at voxel {i}", data[i]),
            ));
        }
        Ok(MaskVolume {
            id: id.into(),
            dims,
            data,
        })
    }

    pub fn from_fn(id: impl Into<String>, dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> bool) -> Result<Self> {
        let [s, h, w] = dims;
        let mut data = Vec::with_capacity(s * h * w);
        for t in 0..s {
            for y in 0..h {
                for x in 0..w {
                    data.push(u8::from(f(t, y, x)));
                }
            }
        }
        Self::new(id, dims, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn slices(&self) -> usize {
        self.dims[0]
    }

    pub fn slice_len(&self) -> usize {
        self.dims[1] * self.dims[2]
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn slice(&self, t: usize) -> &[u8] {
        let n = self.slice_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn range(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.slices() {
            return Err(Error::invalid(
                "mask",
                format!("slice range {start}..{} outside 0..{}", start + len, self.slices()),
            ));
        }
        let n = self.slice_len();
        Ok(MaskVolume {
            id: self.id.clone(),
            dims: [len, self.dims[1], self.dims[2]],
            data: self.data[start * n..(start + len) * n].to_vec(),
        })
    }

    pub fn foreground(&self) -> u64 {
        self.data.iter().map(|&v| u64::from(v)).sum()
    }

    /// `[S, 1, H, W]` target tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let [s, h, w] = self.dims;
        Tensor::new(&[s, 1, h, w], self.data.iter().map(|&v| if v == 1 { T::one() } else { T::zero() }).collect())
            .expect("dims validated at construction")
    }
}

/// Fail unless the volume and mask have identical dims.
pub fn check_pair(volume: &Volume, mask: &MaskVolume) -> Result<()> {
    if volume.dims() != mask.dims() {
        return Err(Error::shape(
            "pair",
            format!("case {}: volume dims {:?} differ from mask dims {:?}", volume.id, volume.dims(), mask.dims()),
        ));
    }
    Ok(())
}
