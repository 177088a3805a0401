//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::Rng;
use recognet_core::data::MaskVolume;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar LSTM weights, gates ordered i, f, g, o.
#[derive(Clone, Debug)]
pub struct ScalarLstm {
    pub wx: [f64; 4],
    pub wh: [f64; 4],
    pub b: [f64; 4],
}

impl ScalarLstm {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let mut draw = || std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        ScalarLstm {
            wx: draw(),
            wh: draw(),
            b: draw(),
        }
    }

    /// `(h, c)` after each input.
    pub fn run(&self, xs: &[f64], h0: f64, c0: f64) -> Vec<(f64, f64)> {
        let (mut h, mut c) = (h0, c0);
        let mut out = Vec::new();
        for &x in xs {
            let a = |k: usize| self.wx[k] * x + self.wh[k] * h + self.b[k];
            let i = sigmoid(a(0));
            let f = sigmoid(a(1));
            let g = a(2).tanh();
            let o = sigmoid(a(3));
            c = f * c + i * g;
            h = o * c.tanh();
            out.push((h, c));
        }
        out
    }
}

/// Pixel-by-pixel `(tp, fp, fn, tn)`.
pub fn brute_counts(pred: &[u8], gt: &[u8]) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for i in 0..pred.len() {
        if pred[i] == 1 && gt[i] == 1 {
            c.0 += 1;
        } else if pred[i] == 1 {
            c.1 += 1;
        } else if gt[i] == 1 {
            c.2 += 1;
        } else {
            c.3 += 1;
        }
    }
    c
}

pub fn random_mask<R: Rng>(rng: &mut R, id: &str, dims: [usize; 3], p: f64) -> MaskVolume {
    MaskVolume::from_fn(id, dims, |_, _, _| rng.random_bool(p)).unwrap()
}

/// Write a MetaImage header and its raw payload; returns the header path.
pub fn write_mhd(dir: &Path, name: &str, header: &str, payload: &[u8]) -> PathBuf {
    let raw = format!("{name}.raw");
    let mhd = dir.join(format!("{name}.mhd"));
    std::fs::write(&mhd, format!("{header}ElementDataFile = {raw}\n")).unwrap();
    std::fs::write(dir.join(raw), payload).unwrap();
    mhd
}

pub fn mhd_header(dims: &str, element_type: &str, msb: bool) -> String {
    format!(
        "ObjectType = Image\nNDims = 3\nBinaryData = True\nBinaryDataByteOrderMSB = {}\n\
         ElementSpacing = 0.5 0.5 3\nDimSize = {dims}\nElementType = {element_type}\n",
        if msb { "True" } else { "False" }
    )
}

/// Population standard deviation and mean, accumulated in f64.
pub fn mean_std(v: &[f32]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| f64::from(x)).sum::<f64>() / n;
    let var = v.iter().map(|&x| (f64::from(x) - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
