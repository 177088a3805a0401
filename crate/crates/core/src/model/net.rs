//! Forward passes recorded on a [`Graph`].

use super::config::{AsppConfig, ModelConfig};
use super::params::{BoundParams, ParamStore};
use crate::convlstm::{cell_step, run_sequence, ConvLstmSpec, ConvLstmState, ConvLstmVars};
use crate::tensorcore::{Conv2dOptions, Graph, Scalar, Tensor, Var};
use crate::{Error, Result};

fn conv<T: Scalar>(g: &mut Graph<T>, p: &BoundParams, prefix: &str, x: Var, opts: Conv2dOptions) -> Result<Var> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let bias = format!("{prefix}.bias");
    let b = if p.has(&bias) { Some(p.get(&bias)?) } else { None };
    g.conv2d(x, w, b, opts)
}

fn norm<T: Scalar>(g: &mut Graph<T>, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let gamma = p.get(&format!("{prefix}.gamma"))?;
    let beta = p.get(&format!("{prefix}.beta"))?;
    g.channel_norm(x, gamma, beta)
}

/// conv → channel_norm → relu, with parameters under `{prefix}.conv` / `{prefix}.norm`.
fn conv_block<T: Scalar>(g: &mut Graph<T>, p: &BoundParams, prefix: &str, x: Var, opts: Conv2dOptions) -> Result<Var> {
    let y = conv(g, p, &format!("{prefix}.conv"), x, opts)?;
    let y = norm(g, p, &format!("{prefix}.norm"), y)?;
    g.relu(y)
}

/// Per-slice feature extraction: stem, residual stages, then ASPP.
/// `slices` is `[S, Cin, H, W]`; the result is `[S, Cfeat, H/d, W/d]`.
pub fn backbone_forward<T: Scalar>(g: &mut Graph<T>, p: &BoundParams, cfg: &ModelConfig, slices: Var) -> Result<Var> {
    let [_, cin, h, w] = g.value(slices).dims4("backbone")?;
    if cin != cfg.in_channels {
        return Err(Error::shape(
            "backbone",
            format!("expected {} input channels, got {cin}", cfg.in_channels),
        ));
    }
    let d = cfg.backbone_downsampling();
    if h % d != 0 || w % d != 0 {
        return Err(Error::shape(
            "backbone",
            format!("slice size {h}x{w} must be a multiple of the downsampling factor {d}"),
        ));
    }
    let b = &cfg.backbone;
    let mut x = conv_block(g, p, "backbone.stem", slices, Conv2dOptions::new(b.stem_stride, 1, 1))?;
    for (i, st) in b.stages.iter().enumerate() {
        let pre = format!("backbone.stage{i}");
        let y = conv(g, p, &format!("{pre}.conv1"), x, Conv2dOptions::new(st.stride, st.dilation, st.dilation))?;
        let y = norm(g, p, &format!("{pre}.norm1"), y)?;
        let y = g.relu(y)?;
        let y = conv(g, p, &format!("{pre}.conv2"), y, Conv2dOptions::new(1, st.dilation, st.dilation))?;
        let y = norm(g, p, &format!("{pre}.norm2"), y)?;
        let shortcut = if p.has(&format!("{pre}.proj.weight")) {
            conv(g, p, &format!("{pre}.proj"), x, Conv2dOptions::new(st.stride, 0, 1))?
        } else {
            x
        };
        let sum = g.add(y, shortcut)?;
        x = g.relu(sum)?;
    }
    aspp_forward(g, p, &cfg.aspp, x)
}

/// Parallel pointwise, dilated and image-pooling branches, concatenated and
/// fused by a 1×1 convolution and relu.
pub fn aspp_forward<T: Scalar>(g: &mut Graph<T>, p: &BoundParams, cfg: &AsppConfig, features: Var) -> Result<Var> {
    let [_, _, h, w] = g.value(features).dims4("aspp")?;
    if cfg.rates.is_empty() {
        return Err(Error::invalid("aspp", "no atrous rates"));
    }
    for &r in &cfg.rates {
        if r == 0 || r >= h || r >= w {
            return Err(Error::invalid(
                "aspp",
                format!("rate {r}: off-center taps fall entirely in the padding of a {h}x{w} feature map"),
            ));
        }
    }
    let mut branches = Vec::with_capacity(cfg.branch_count());
    if cfg.pointwise_branch {
        branches.push(conv_block(g, p, "aspp.pointwise", features, Conv2dOptions::default())?);
    }
    for (i, &r) in cfg.rates.iter().enumerate() {
        branches.push(conv_block(g, p, &format!("aspp.rate{i}"), features, Conv2dOptions::new(1, r, r))?);
    }
    if cfg.pooling_branch {
        let pooled = g.global_avg_pool(features)?;
        let y = conv(g, p, "aspp.pool.conv", pooled, Conv2dOptions::default())?;
        branches.push(g.bilinear_resize(y, h, w)?);
    }
    let cat = if branches.len() == 1 { branches[0] } else { g.concat(&branches, 1)? };
    // No normalization here: it would cancel the spatially constant pooling branch.
    let fused = conv(g, p, "aspp.fuse.conv", cat, Conv2dOptions::default())?;
    g.relu(fused)
}

/// A ConvLSTM layer over the slice axis of `x` (`[S, C, h, w]`).
fn recurrent_layer<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams,
    prefix: &str,
    spec: ConvLstmSpec,
    x: Var,
    recurrent: bool,
) -> Result<Var> {
    let vars = ConvLstmVars {
        spec,
        weight: p.get(&format!("{prefix}.weight"))?,
        bias: p.get(&format!("{prefix}.bias"))?,
    };
    let [s, _, h, w] = g.value(x).dims4("convlstm")?;
    if recurrent {
        let xs = (0..s).map(|t| g.narrow(x, 0, t, 1)).collect::<Result<Vec<_>>>()?;
        let out = run_sequence(g, &vars, &xs, None)?;
        if out.hidden.len() == 1 {
            Ok(out.hidden[0])
        } else {
            g.concat(&out.hidden, 0)
        }
    } else {
        let zero = ConvLstmState::zeros(g, s, spec.hidden_channels, h, w);
        Ok(cell_step(g, &vars, x, &zero)?.hidden)
    }
}

/// Recurrent encoder-decoder head. `features` is `[S, Cfeat, h, w]`; returns
/// logits `[S, 1, out_h, out_w]`.
pub fn head_forward<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams,
    cfg: &ModelConfig,
    features: Var,
    out_h: usize,
    out_w: usize,
) -> Result<Var> {
    let head = &cfg.head;
    let [_, c, h, w] = g.value(features).dims4("head")?;
    if c != cfg.feature_channels() {
        return Err(Error::shape(
            "head",
            format!("expected {} feature channels, got {c}", cfg.feature_channels()),
        ));
    }
    let d = head.downsampling();
    if h % d != 0 || w % d != 0 {
        return Err(Error::shape(
            "head",
            format!("feature map {h}x{w} must be a multiple of the head downsampling {d}"),
        ));
    }

    let mut levels = vec![features];
    let mut x = features;
    for (i, st) in head.encoder.iter().enumerate() {
        let pre = format!("head.enc{i}");
        x = conv_block(g, p, &pre, x, Conv2dOptions::new(st.stride, 1, 1))?;
        let spec = ConvLstmSpec {
            in_channels: st.channels,
            hidden_channels: st.hidden,
            kernel: head.lstm_kernel,
        };
        x = recurrent_layer(g, p, &format!("{pre}.lstm"), spec, x, cfg.recurrence_enabled)?;
        levels.push(x);
    }

    let n = head.encoder.len();
    let mut y = x;
    for j in 0..n {
        let pre = format!("head.dec{j}");
        let stride = head.encoder[n - 1 - j].stride;
        let wt = p.get(&format!("{pre}.up.weight"))?;
        let bs = p.get(&format!("{pre}.up.bias"))?;
        y = g.conv_transpose2d(y, wt, Some(bs), stride, 0)?;
        if let Some(link) = head.skip_into(j) {
            let skip = levels[link.level];
            let (up, sk) = (g.shape(y).to_vec(), g.shape(skip).to_vec());
            if up[2..] != sk[2..] {
                return Err(Error::shape(
                    "head",
                    format!(
                        "decoder stage {j}: upsampled map {}x{} does not match skip from level {} ({}x{})",
                        up[2], up[3], link.level, sk[2], sk[3]
                    ),
                ));
            }
            y = g.concat(&[y, skip], 1)?;
        }
        y = conv_block(g, p, &pre, y, Conv2dOptions::new(1, 1, 1))?;
    }
    let logits = conv(g, p, "head.out", y, Conv2dOptions::default())?;
    g.bilinear_resize(logits, out_h, out_w)
}

/// Backbone followed by the head; `volume` is `[S, Cin, H, W]`.
pub fn recognet_forward<T: Scalar>(g: &mut Graph<T>, p: &BoundParams, cfg: &ModelConfig, volume: Var) -> Result<Var> {
    let [_, _, h, w] = g.value(volume).dims4("recognet")?;
    let features = backbone_forward(g, p, cfg, volume)?;
    head_forward(g, p, cfg, features, h, w)
}

/// Inference-only forward pass returning `[S, 1, H, W]` logits.
pub fn infer_logits(cfg: &ModelConfig, params: &ParamStore<f32>, volume: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(volume.clone());
    let out = recognet_forward(&mut g, &p, cfg, x)?;
    Ok(g.value(out).clone())
}
