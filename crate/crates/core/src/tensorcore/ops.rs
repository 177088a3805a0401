//! Forward and backward kernels on plain tensors.
//!
//! The graph in [`super::graph`] records calls to these; they are also usable
//! directly for inference and as building blocks in tests.

use super::scalar::{gemm, MatRef};
use super::{Scalar, Tensor};
use crate::{Error, Result};

/// Stride, zero padding and dilation of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Conv2dOptions {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

impl Conv2dOptions {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Conv2dOptions {
            stride,
            padding,
            dilation,
        }
    }

    /// `floor((n + 2p - d(k-1) - 1)/s) + 1`, or `None` when that is < 1.
    pub fn output_extent(&self, n: usize, k: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        let span = self.dilation * (k - 1) + 1;
        if self.stride == 0 || padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }

    fn validate(&self, op: &'static str) -> Result<()> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::invalid(op, format!("stride and dilation must be >= 1, got {self:?}")));
        }
        Ok(())
    }
}

/// Sliding-window geometry shared by im2col/col2im.
#[derive(Clone, Copy, Debug)]
struct Window {
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    opts: Conv2dOptions,
}

impl Window {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.opts.stride == 1 && self.opts.padding == 0
    }

    /// For kernel tap `k` and output row range, the input coordinate or None
    /// if it falls in the zero padding.
    #[inline]
    fn source(&self, out: usize, tap: usize, extent: usize) -> Option<usize> {
        let pos = (out * self.opts.stride + tap * self.opts.dilation) as isize - self.opts.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    /// `cols[(c,ki,kj), (oy,ox)] = x[c, oy*s + ki*d - p, ox*s + kj*d - p]`.
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let (oh, ow) = (self.oh, self.ow);
        for c in 0..self.channels {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let line = &mut dst[oy * ow..(oy + 1) * ow];
                        match self.source(oy, ki, self.h) {
                            None => line.iter_mut().for_each(|v| *v = T::zero()),
                            Some(iy) => {
                                let src = &plane[iy * self.w..(iy + 1) * self.w];
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = match self.source(ox, kj, self.w) {
                                        Some(ix) => src[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Window::im2col`]: scatter-add columns back into `x`.
    fn col2im_add<T: Scalar>(&self, cols: &[T], x: &mut [T]) {
        let (oh, ow) = (self.oh, self.ow);
        for c in 0..self.channels {
            let plane = &mut x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let Some(iy) = self.source(oy, ki, self.h) else { continue };
                        let dst = &mut plane[iy * self.w..(iy + 1) * self.w];
                        for (ox, &v) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                            if let Some(ix) = self.source(ox, kj, self.w) {
                                dst[ix] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_window(
    op: &'static str,
    x: [usize; 4],
    w: [usize; 4],
    weight_in_channels: usize,
    opts: Conv2dOptions,
) -> Result<Window> {
    opts.validate(op)?;
    let [_, cin, h, wd] = x;
    let [_, _, kh, kw] = w;
    if cin != weight_in_channels {
        return Err(Error::shape(
            op,
            format!("input channels {cin} do not match weight input channels {weight_in_channels}"),
        ));
    }
    let oh = opts.output_extent(h, kh).ok_or_else(|| {
        Error::shape(op, format!("non-positive output height for input height {h}, kernel {kh}, {opts:?}"))
    })?;
    let ow = opts.output_extent(wd, kw).ok_or_else(|| {
        Error::shape(op, format!("non-positive output width for input width {wd}, kernel {kw}, {opts:?}"))
    })?;
    Ok(Window {
        channels: cin,
        h,
        w: wd,
        kh,
        kw,
        oh,
        ow,
        opts,
    })
}

fn check_bias<T: Scalar>(op: &'static str, bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(Error::shape(
                op,
                format!("bias shape {:?} does not match output channels {channels}", b.shape()),
            ));
        }
    }
    Ok(())
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad<T: Scalar>(gout: &Tensor<T>, channels: usize) -> Tensor<T> {
    let plane: usize = gout.shape()[2..].iter().product();
    let mut gb = vec![T::zero(); channels];
    for (i, chunk) in gout.data().chunks(plane).enumerate() {
        gb[i % channels] += chunk.iter().copied().sum::<T>();
    }
    Tensor::new(&[channels], gb).expect("bias shape")
}

/// 2-D cross-correlation. `input` is N,Cin,H,W; `weight` is Cout,Cin,kH,kW.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    opts: Conv2dOptions,
) -> Result<Tensor<T>> {
    let xs = input.dims4("conv2d")?;
    let ws = weight.dims4("conv2d")?;
    let win = conv_window("conv2d", xs, ws, ws[1], opts)?;
    let cout = ws[0];
    check_bias("conv2d", bias, cout)?;
    let n = xs[0];
    let in_len = win.channels * win.h * win.w;
    let out_len = cout * win.positions();
    let mut out = vec![T::zero(); n * out_len];
    let mut cols = if win.is_pointwise() { Vec::new() } else { vec![T::zero(); win.rows() * win.positions()] };
    let wmat = MatRef::new(weight.data(), cout, win.rows());
    for s in 0..n {
        let x = &input.data()[s * in_len..(s + 1) * in_len];
        let colref = if win.is_pointwise() {
            x
        } else {
            win.im2col(x, &mut cols);
            &cols
        };
        gemm(
            wmat,
            MatRef::new(colref, win.rows(), win.positions()),
            &mut out[s * out_len..(s + 1) * out_len],
            false,
        );
    }
    if let Some(b) = bias {
        add_bias(&mut out, b.data(), win.positions());
    }
    Tensor::new(&[n, cout, win.oh, win.ow], out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    has_bias: bool,
    opts: Conv2dOptions,
    gout: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Option<Tensor<T>>)> {
    let xs = input.dims4("conv2d")?;
    let ws = weight.dims4("conv2d")?;
    let win = conv_window("conv2d", xs, ws, ws[1], opts)?;
    let cout = ws[0];
    let n = xs[0];
    let in_len = win.channels * win.h * win.w;
    let out_len = cout * win.positions();
    let mut gx = vec![T::zero(); input.numel()];
    let mut gw = vec![T::zero(); weight.numel()];
    let pointwise = win.is_pointwise();
    let mut cols = vec![T::zero(); win.rows() * win.positions()];
    let mut gcols = vec![T::zero(); win.rows() * win.positions()];
    let wmat = MatRef::new(weight.data(), cout, win.rows());
    for s in 0..n {
        let x = &input.data()[s * in_len..(s + 1) * in_len];
        let g = MatRef::new(&gout.data()[s * out_len..(s + 1) * out_len], cout, win.positions());
        let colref: &[T] = if pointwise {
            x
        } else {
            win.im2col(x, &mut cols);
            &cols
        };
        gemm(g, MatRef::new(colref, win.rows(), win.positions()).t(), &mut gw, true);
        if pointwise {
            gemm(wmat.t(), g, &mut gx[s * in_len..(s + 1) * in_len], false);
        } else {
            gemm(wmat.t(), g, &mut gcols, false);
            win.col2im_add(&gcols, &mut gx[s * in_len..(s + 1) * in_len]);
        }
    }
    let gb = has_bias.then(|| bias_grad(gout, cout));
    Ok((
        Tensor::new(input.shape(), gx)?,
        Tensor::new(weight.shape(), gw)?,
        gb,
    ))
}

fn transpose_window(op: &'static str, x: [usize; 4], w: [usize; 4], stride: usize, padding: usize) -> Result<(Window, usize, usize)> {
    let [_, cin, h, wd] = x;
    let [wcin, cout, kh, kw] = w;
    if stride == 0 {
        return Err(Error::invalid(op, "stride must be >= 1"));
    }
    if cin != wcin {
        return Err(Error::shape(
            op,
            format!("input channels {cin} do not match weight input channels {wcin}"),
        ));
    }
    let extent = |n: usize, k: usize| ((n - 1) * stride + k).checked_sub(2 * padding).filter(|&e| e >= 1);
    let oh = extent(h, kh)
        .ok_or_else(|| Error::shape(op, format!("non-positive output height for input height {h}, kernel {kh}")))?;
    let ow = extent(wd, kw)
        .ok_or_else(|| Error::shape(op, format!("non-positive output width for input width {wd}, kernel {kw}")))?;
    // The transpose scatters each input position over the output image; in
    // im2col terms the output is the "image" and the input the positions.
    let win = Window {
        channels: cout,
        h: oh,
        w: ow,
        kh,
        kw,
        oh: h,
        ow: wd,
        opts: Conv2dOptions::new(stride, padding, 1),
    };
    Ok((win, oh, ow))
}

/// Transposed convolution (the adjoint of [`conv2d`] without dilation).
/// `weight` is Cin,Cout,kH,kW; output extent is `(H-1)*stride - 2*padding + kH`.
pub fn conv_transpose2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let xs = input.dims4("conv_transpose2d")?;
    let ws = weight.dims4("conv_transpose2d")?;
    let (win, oh, ow) = transpose_window("conv_transpose2d", xs, ws, stride, padding)?;
    let (n, cin, cout) = (xs[0], xs[1], ws[1]);
    check_bias("conv_transpose2d", bias, cout)?;
    let in_len = cin * win.positions();
    let out_len = cout * oh * ow;
    let mut out = vec![T::zero(); n * out_len];
    let mut cols = vec![T::zero(); win.rows() * win.positions()];
    let wmat = MatRef::new(weight.data(), cin, win.rows());
    for s in 0..n {
        let x = MatRef::new(&input.data()[s * in_len..(s + 1) * in_len], cin, win.positions());
        gemm(wmat.t(), x, &mut cols, false);
        win.col2im_add(&cols, &mut out[s * out_len..(s + 1) * out_len]);
    }
    if let Some(b) = bias {
        add_bias(&mut out, b.data(), oh * ow);
    }
    Tensor::new(&[n, cout, oh, ow], out)
}

/// Gradients of [`conv_transpose2d`] with respect to input, weight and bias.
pub fn conv_transpose2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    has_bias: bool,
    stride: usize,
    padding: usize,
    gout: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Option<Tensor<T>>)> {
    let xs = input.dims4("conv_transpose2d")?;
    let ws = weight.dims4("conv_transpose2d")?;
    let (win, oh, ow) = transpose_window("conv_transpose2d", xs, ws, stride, padding)?;
    let (n, cin, cout) = (xs[0], xs[1], ws[1]);
    let in_len = cin * win.positions();
    let out_len = cout * oh * ow;
    let mut gx = vec![T::zero(); input.numel()];
    let mut gw = vec![T::zero(); weight.numel()];
    let mut cols = vec![T::zero(); win.rows() * win.positions()];
    let wmat = MatRef::new(weight.data(), cin, win.rows());
    for s in 0..n {
        win.im2col(&gout.data()[s * out_len..(s + 1) * out_len], &mut cols);
        let c = MatRef::new(&cols, win.rows(), win.positions());
        gemm(wmat, c, &mut gx[s * in_len..(s + 1) * in_len], false);
        let x = MatRef::new(&input.data()[s * in_len..(s + 1) * in_len], cin, win.positions());
        gemm(x, c.t(), &mut gw, true);
    }
    let gb = has_bias.then(|| bias_grad(gout, cout));
    Ok((
        Tensor::new(input.shape(), gx)?,
        Tensor::new(weight.shape(), gw)?,
        gb,
    ))
}

/// Interpolation taps along one axis: `(lo, hi, frac)` per output index.
fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

fn check_resize<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<[usize; 4]> {
    let dims = input.dims4("bilinear_resize")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("bilinear_resize", format!("target size {out_h}x{out_w} must be >= 1")));
    }
    Ok(dims)
}

/// Bilinear interpolation with half-pixel centers (align_corners = false).
pub fn bilinear_resize<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = check_resize(input, out_h, out_w)?;
    if (h, w) == (out_h, out_w) {
        return Ok(input.clone());
    }
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in input.data().chunks(h * w) {
        for &(y0, y1, fy) in &ty {
            let fy = T::from_f64_lossy(fy);
            for &(x0, x1, fx) in &tx {
                let fx = T::from_f64_lossy(fx);
                let top = plane[y0 * w + x0] * (T::one() - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (T::one() - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (T::one() - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(&[n, c, out_h, out_w], out)
}

pub fn bilinear_resize_backward<T: Scalar>(input_shape: &[usize], gout: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, h, w] = input_shape else {
        return Err(Error::shape("bilinear_resize", "expected 4-D input"));
    };
    let (h, w) = (*h, *w);
    let [_, _, out_h, out_w] = gout.dims4("bilinear_resize")?;
    if (h, w) == (out_h, out_w) {
        return Ok(gout.clone());
    }
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    let mut gx = vec![T::zero(); input_shape.iter().product()];
    for (plane, gplane) in gx.chunks_mut(h * w).zip(gout.data().chunks(out_h * out_w)) {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64_lossy(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64_lossy(fx);
                let g = gplane[oy * out_w + ox];
                let gt = g * (T::one() - fy);
                let gb = g * fy;
                plane[y0 * w + x0] += gt * (T::one() - fx);
                plane[y0 * w + x1] += gt * fx;
                plane[y1 * w + x0] += gb * (T::one() - fx);
                plane[y1 * w + x1] += gb * fx;
            }
        }
    }
    Tensor::new(input_shape, gx)
}

/// Mean over H,W: N,C,H,W → N,C,1,1.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("global_avg_pool")?;
    let denom = T::from_usize(h * w).expect("extent");
    let data = input.data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() / denom).collect();
    Tensor::new(&[n, c, 1, 1], data)
}

/// Per-sample, per-channel normalization over H,W with a learned affine.
/// Returns the output together with the normalized values and inverse
/// standard deviations needed by the backward pass.
pub fn channel_norm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let [_, c, h, w] = input.dims4("channel_norm")?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            "channel_norm",
            format!("affine shapes {:?}/{:?} do not match {c} channels", gamma.shape(), beta.shape()),
        ));
    }
    let m = T::from_usize(h * w).expect("extent");
    let mut xhat = Vec::with_capacity(input.numel());
    let mut inv_std = Vec::with_capacity(input.numel() / (h * w));
    let mut out = Vec::with_capacity(input.numel());
    for (i, plane) in input.data().chunks(h * w).enumerate() {
        let mean = plane.iter().copied().sum::<T>() / m;
        let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
        let inv = T::one() / (var + eps).sqrt();
        inv_std.push(inv);
        let (g, b) = (gamma.data()[i % c], beta.data()[i % c]);
        for &v in plane {
            let xh = (v - mean) * inv;
            xhat.push(xh);
            out.push(g * xh + b);
        }
    }
    Ok((Tensor::new(input.shape(), out)?, xhat, inv_std))
}

pub fn channel_norm_backward<T: Scalar>(
    gamma: &Tensor<T>,
    xhat: &[T],
    inv_std: &[T],
    gout: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [_, c, h, w] = gout.dims4("channel_norm")?;
    let m = T::from_usize(h * w).expect("extent");
    let mut gx = Vec::with_capacity(gout.numel());
    let mut ggamma = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    for (i, (g, xh)) in gout.data().chunks(h * w).zip(xhat.chunks(h * w)).enumerate() {
        let ch = i % c;
        let sum_g: T = g.iter().copied().sum();
        let sum_gx: T = g.iter().zip(xh).map(|(&a, &b)| a * b).sum();
        ggamma[ch] += sum_gx;
        gbeta[ch] += sum_g;
        let k = gamma.data()[ch] * inv_std[i] / m;
        for (&gv, &xv) in g.iter().zip(xh) {
            gx.push(k * (m * gv - sum_g - xv * sum_gx));
        }
    }
    Ok((
        Tensor::new(gout.shape(), gx)?,
        Tensor::new(&[c], ggamma)?,
        Tensor::new(&[c], gbeta)?,
    ))
}

/// Result shape of a same-rank broadcast where each extent pair is equal or
/// one side is 1.
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::shape(op, format!("rank mismatch {a:?} vs {b:?}")));
    }
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(d, (&x, &y))| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::shape(op, format!("dimension {d}: {x} vs {y} in {a:?} vs {b:?}"))),
        })
        .collect()
}

/// Flat source offsets of `shape` when broadcast to `target`.
fn broadcast_offsets(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let rank = target.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        strides[d] = if shape[d] == 1 { 0 } else { acc };
        acc *= shape[d];
    }
    let numel: usize = target.iter().product();
    let mut idx = vec![0usize; rank];
    let mut offsets = Vec::with_capacity(numel);
    let mut off = 0usize;
    for _ in 0..numel {
        offsets.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < target[d] {
                break;
            }
            off -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    offsets
}

pub fn binary_broadcast<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape(), data);
    }
    let shape = broadcast_shape(op, a.shape(), b.shape())?;
    let oa = broadcast_offsets(a.shape(), &shape);
    let ob = broadcast_offsets(b.shape(), &shape);
    let data = oa.iter().zip(&ob).map(|(&i, &j)| f(a.data()[i], b.data()[j])).collect();
    Tensor::new(&shape, data)
}

/// Sum a gradient of the broadcast shape back onto `shape`.
pub fn reduce_to_shape<T: Scalar>(grad: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if grad.shape() == shape {
        return Ok(grad.clone());
    }
    let offsets = broadcast_offsets(shape, grad.shape());
    let mut out = vec![T::zero(); shape.iter().product()];
    for (&o, &g) in offsets.iter().zip(grad.data()) {
        out[o] += g;
    }
    Tensor::new(shape, out)
}

/// Broadcast `t` up to `target` (same rank).
pub fn expand_to<T: Scalar>(t: &Tensor<T>, target: &[usize]) -> Result<Tensor<T>> {
    if t.shape() == target {
        return Ok(t.clone());
    }
    let offsets = broadcast_offsets(t.shape(), target);
    Tensor::new(target, offsets.iter().map(|&o| t.data()[o]).collect())
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `max(x, 0) + ln(1 + exp(-|x|))`.
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Per-pixel logit-space weighted BCE: `w·y·softplus(-z) + (1-y)·softplus(z)`.
pub fn bce_with_logits_elem<T: Scalar>(z: T, y: T, pos_weight: T) -> T {
    pos_weight * y * softplus(-z) + (T::one() - y) * softplus(z)
}

/// Derivative of [`bce_with_logits_elem`] with respect to the logit.
pub fn bce_with_logits_grad<T: Scalar>(z: T, y: T, pos_weight: T) -> T {
    let p = sigmoid(z);
    pos_weight * y * (p - T::one()) + (T::one() - y) * p
}
