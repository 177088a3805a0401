mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use recognet_core::data::MaskVolume;
use recognet_core::model::{
    aspp_forward, backbone_forward, bce_loss, head_forward, predict_masks, recognet_forward, AsppConfig, BackboneConfig, Checkpoint,
    ModelConfig, ParamStore, SkipLink,
};
use recognet_core::tensorcore::ops::{channel_norm, conv2d};
use recognet_core::tensorcore::gradcheck::{analytic_gradients, compare_gradients, GradCheckOptions};
use recognet_core::tensorcore::{Conv2dOptions, Graph, Scalar, Tensor, Var, CHANNEL_NORM_EPS};

fn volume(shape: &[usize], seed: u64) -> Tensor<f32> {
    Tensor::uniform(shape, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn backbone(cfg: &ModelConfig, params: &ParamStore<f32>, x: &Tensor<f32>) -> Tensor<f32> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let out = backbone_forward(&mut g, &p, cfg, xv).unwrap();
    g.value(out).clone()
}

fn bits_equal(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[test]
fn backbone_sees_slices_independently() {
    let cfg = ModelConfig::micro();
    let params = ParamStore::<f32>::init(&cfg, 1).unwrap();
    let x = volume(&[4, 1, 32, 32], 2);
    let feats = backbone(&cfg, &params, &x);
    let order = [2usize, 0, 3, 1];
    let parts: Vec<Tensor<f32>> = order.iter().map(|&i| x.narrow(0, i, 1).unwrap()).collect();
    let permuted = Tensor::concat(&parts.iter().collect::<Vec<_>>(), 0).unwrap();
    let pf = backbone(&cfg, &params, &permuted);
    for (k, &i) in order.iter().enumerate() {
        assert!(bits_equal(pf.narrow(0, k, 1).unwrap().data(), feats.narrow(0, i, 1).unwrap().data()));
    }

    let one = x.narrow(0, 0, 1).unwrap();
    let rep = Tensor::concat(&[&one, &one, &one], 0).unwrap();
    let single = backbone(&cfg, &params, &one);
    let triple = backbone(&cfg, &params, &rep);
    for s in 0..3 {
        assert!(bits_equal(triple.narrow(0, s, 1).unwrap().data(), single.data()));
    }
}

fn conv_norm_relu(x: &Tensor<f64>, params: &ParamStore<f64>, prefix: &str, opts: Conv2dOptions) -> Tensor<f64> {
    let w = params.get(&format!("{prefix}.conv.weight")).unwrap();
    let b = params.get(&format!("{prefix}.conv.bias"));
    let y = conv2d(x, w, b, opts).unwrap();
    let gamma = params.get(&format!("{prefix}.norm.gamma")).unwrap();
    let beta = params.get(&format!("{prefix}.norm.beta")).unwrap();
    let (y, _, _) = channel_norm(&y, gamma, beta, CHANNEL_NORM_EPS).unwrap();
    y.map(|v| v.max(0.0))
}

fn perturbed(params: &ParamStore<f32>, seed: u64) -> ParamStore<f64> {
    // Random affine and biases so the oracle exercises every parameter.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = params.cast::<f64>();
    for t in out.tensors_mut() {
        if t.rank() == 1 {
            *t = Tensor::uniform(t.shape(), 0.5, 1.5, &mut rng);
        }
    }
    out
}

fn degenerate_aspp(rate: usize) -> AsppConfig {
    AsppConfig {
        rates: vec![rate],
        branch_channels: 3,
        out_channels: 4,
        pointwise_branch: false,
        pooling_branch: false,
    }
}

#[test]
fn single_rate_aspp_is_a_dilated_conv_block() {
    let mut cfg = ModelConfig::micro();
    cfg.aspp = degenerate_aspp(2);
    let params = perturbed(&ParamStore::<f32>::init(&cfg, 3).unwrap(), 4).filter_prefix("aspp.");
    let x: Tensor<f64> = Tensor::uniform(&[2, 8, 9, 7], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(5));

    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let out = aspp_forward(&mut g, &p, &cfg.aspp, xv).unwrap();

    let branch = conv_norm_relu(&x, &params, "aspp.rate0", Conv2dOptions::new(1, 2, 2));
    let fused = conv2d(
        &branch,
        params.get("aspp.fuse.conv.weight").unwrap(),
        params.get("aspp.fuse.conv.bias"),
        Conv2dOptions::default(),
    )
    .unwrap()
    .map(|v| v.max(0.0));
    let got = g.value(out);
    assert_eq!(got.shape(), &[2, 4, 9, 7]);
    assert!(got.data().iter().zip(fused.data()).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn minimal_backbone_is_a_composition_of_convolutions() {
    let mut cfg = ModelConfig::micro();
    cfg.backbone = BackboneConfig {
        stem_channels: 5,
        stem_stride: 1,
        stages: Vec::new(),
    };
    cfg.aspp = degenerate_aspp(1);
    cfg.input_size = 16;
    let params = perturbed(&ParamStore::<f32>::init(&cfg, 6).unwrap(), 7);
    let x: Tensor<f64> = Tensor::uniform(&[3, 1, 16, 16], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(8));

    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let out = backbone_forward(&mut g, &p, &cfg, xv).unwrap();

    let stem = conv_norm_relu(&x, &params, "backbone.stem", Conv2dOptions::new(1, 1, 1));
    let branch = conv_norm_relu(&stem, &params, "aspp.rate0", Conv2dOptions::new(1, 1, 1));
    let fused = conv2d(
        &branch,
        params.get("aspp.fuse.conv.weight").unwrap(),
        params.get("aspp.fuse.conv.bias"),
        Conv2dOptions::default(),
    )
    .unwrap()
    .map(|v| v.max(0.0));
    let got = g.value(out);
    assert_eq!(got.shape(), fused.shape());
    assert!(got.data().iter().zip(fused.data()).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn aspp_shapes_for_three_rates() {
    let cfg = ModelConfig::micro();
    let params = ParamStore::<f32>::init(&cfg, 9).unwrap();
    assert_eq!(cfg.aspp.rates, [1, 2, 4]);
    assert_eq!(cfg.aspp.branch_count(), 5);
    let fuse = params.get("aspp.fuse.conv.weight").unwrap();
    assert_eq!(fuse.shape(), &[12, 5 * 4, 1, 1]);
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(volume(&[2, 8, 16, 16], 1));
    let out = aspp_forward(&mut g, &p, &cfg.aspp, x).unwrap();
    assert_eq!(g.shape(out), &[2, 12, 16, 16]);
}

#[test]
fn aspp_on_a_constant_map_is_constant_away_from_the_border() {
    let cfg = ModelConfig::micro();
    let mut params = ParamStore::<f32>::init(&cfg, 10).unwrap();
    for name in params.names().to_vec() {
        if name.ends_with(".bias") {
            let t = params.get_mut(&name).unwrap();
            *t = Tensor::zeros(t.shape());
        }
    }
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(Tensor::full(&[1, 8, 20, 20], 0.7));
    let out = aspp_forward(&mut g, &p, &cfg.aspp, x).unwrap();
    let y = g.value(out);
    // Zero padding breaks the symmetry only within the largest rate of the edge.
    let m = *cfg.aspp.rates.iter().max().unwrap();
    for c in 0..12 {
        let plane = &y.data()[c * 400..(c + 1) * 400];
        let centre = plane[10 * 20 + 10];
        for i in m..20 - m {
            for j in m..20 - m {
                assert!((plane[i * 20 + j] - centre).abs() <= 1e-5 * centre.abs().max(1.0));
            }
        }
    }
}

#[test]
fn aspp_rejects_rates_larger_than_the_map() {
    let cfg = ModelConfig::micro();
    let params = ParamStore::<f32>::init(&cfg, 1).unwrap();
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(volume(&[1, 8, 4, 4], 1));
    let msg = aspp_forward(&mut g, &p, &cfg.aspp, x).unwrap_err().to_string();
    assert!(msg.contains("rate 4"), "{msg}");
}

#[test]
fn desk_config_shapes() {
    let cfg = ModelConfig::desk();
    let params = ParamStore::<f32>::init(&cfg, 2).unwrap();
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(volume(&[1, 1, 224, 224], 3));
    let f = backbone_forward(&mut g, &p, &cfg, x).unwrap();
    assert_eq!(g.shape(f), &[1, 64, 28, 28]);
    let out = head_forward(&mut g, &p, &cfg, f, 224, 224).unwrap();
    assert_eq!(g.shape(out), &[1, 1, 224, 224]);
}

#[test]
fn indivisible_input_names_the_required_multiple() {
    let ckpt = Checkpoint::fresh(ModelConfig::micro(), 0).unwrap();
    let msg = ckpt.logits(&volume(&[1, 1, 30, 30], 1)).unwrap_err().to_string();
    assert!(msg.contains("multiple"), "{msg}");
}

#[test]
fn misrouted_skip_names_the_decoder_stage() {
    let cfg = ModelConfig::micro();
    let params = ParamStore::<f32>::init(&cfg, 4).unwrap();
    let mut bad = cfg.clone();
    bad.head.skips = vec![SkipLink { level: 0, decoder: 0 }];
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let f = g.constant(volume(&[1, 12, 16, 16], 5));
    let msg = head_forward(&mut g, &p, &bad, f, 32, 32).unwrap_err().to_string();
    assert!(msg.contains("decoder stage 0"), "{msg}");
}

#[test]
fn head_is_causal_over_features() {
    let cfg = ModelConfig::micro();
    let params = ParamStore::<f32>::init(&cfg, 5).unwrap();
    let base = volume(&[5, 12, 16, 16], 6);
    let run = |f: &Tensor<f32>| {
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let fv = g.constant(f.clone());
        let out = head_forward(&mut g, &p, &cfg, fv, 32, 32).unwrap();
        g.value(out).clone()
    };
    let clean = run(&base);
    let per = clean.numel() / 5;
    for t in 0..5 {
        let mut f = base.clone();
        let n = 12 * 16 * 16;
        for v in &mut f.data_mut()[t * n..(t + 1) * n] {
            *v = 1.0 - *v;
        }
        let out = run(&f);
        assert!(bits_equal(&out.data()[..t * per], &clean.data()[..t * per]));
    }
}

#[test]
fn ablated_head_treats_slices_independently() {
    let cfg = ModelConfig::micro().with_recurrence(false);
    let ckpt = Checkpoint::fresh(cfg, 6).unwrap();
    let x = volume(&[4, 1, 32, 32], 7);
    let all = ckpt.logits(&x).unwrap();
    let per = all.numel() / 4;
    for s in 0..4 {
        let one = ckpt.logits(&x.narrow(0, s, 1).unwrap()).unwrap();
        assert!(bits_equal(one.data(), &all.data()[s * per..(s + 1) * per]));
    }

    let slice = x.narrow(0, 2, 1).unwrap();
    let same = Tensor::concat(&[&slice, &slice, &slice], 0).unwrap();
    let out = ckpt.logits(&same).unwrap();
    for s in 1..3 {
        assert!(bits_equal(&out.data()[s * per..(s + 1) * per], &out.data()[..per]));
    }
}

#[test]
fn recurrence_lets_earlier_slices_matter() {
    let ckpt = Checkpoint::fresh(ModelConfig::micro(), 6).unwrap();
    let x = volume(&[3, 1, 32, 32], 7);
    let all = ckpt.logits(&x).unwrap();
    let last = ckpt.logits(&x.narrow(0, 2, 1).unwrap()).unwrap();
    let per = all.numel() / 3;
    assert!(!bits_equal(last.data(), &all.data()[2 * per..]));
}

#[test]
fn forward_is_deterministic_and_survives_a_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = Checkpoint::fresh(ModelConfig::micro(), 8).unwrap();
    let x = volume(&[3, 1, 32, 32], 9);
    let a = ckpt.logits(&x).unwrap();
    let b = ckpt.logits(&x).unwrap();
    assert!(bits_equal(a.data(), b.data()));
    let path = dir.path().join("m.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert!(bits_equal(loaded.logits(&x).unwrap().data(), a.data()));
    assert_eq!(loaded.to_bytes(), ckpt.to_bytes());
}

#[test]
fn loading_against_another_architecture_names_a_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Checkpoint::fresh(ModelConfig::micro(), 1).unwrap().save(&path).unwrap();
    let mut other = ModelConfig::micro();
    other.aspp.branch_channels = 5;
    let msg = Checkpoint::load_for(&path, &other).unwrap_err().to_string();
    assert!(msg.contains("aspp."), "{msg}");
    assert!(Checkpoint::load_for(&path, &ModelConfig::micro()).is_ok());
}

#[test]
fn named_tensor_import_replaces_matching_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    let donor = ParamStore::<f32>::init(&ModelConfig::micro(), 11).unwrap();
    donor.filter_prefix("backbone.").export_named(&path).unwrap();
    let mut target = ParamStore::<f32>::init(&ModelConfig::micro(), 12).unwrap();
    let n = target.import_named(&path).unwrap();
    assert_eq!(n, donor.filter_prefix("backbone.").len());
    for (name, t) in target.iter() {
        if name.starts_with("backbone.") {
            assert_eq!(t, donor.get(name).unwrap(), "{name}");
        }
    }
    let untouched = "head.enc0.conv.weight";
    assert_ne!(target.get(untouched), donor.get(untouched));

    let mut other = ModelConfig::micro();
    other.backbone.stem_channels = 6;
    let mut mismatched = ParamStore::<f32>::init(&other, 1).unwrap();
    let msg = mismatched.import_named(&path).unwrap_err().to_string();
    assert!(msg.contains("backbone.stem"), "{msg}");
}

#[test]
fn saturated_prediction_has_vanishing_gradient() {
    let mask = MaskVolume::from_fn("m", [2, 4, 4], |t, y, x| (t + y * x) % 3 == 0).unwrap();
    let logits: Vec<f64> = mask.data().iter().map(|&m| if m == 1 { 100.0 } else { -100.0 }).collect();
    let mut g = Graph::<f64>::new();
    let z = g.leaf(Tensor::new(&[2, 1, 4, 4], logits).unwrap(), true);
    let loss = bce_loss(&mut g, z, &mask, 2.0).unwrap();
    g.backward(loss).unwrap();
    assert!(g.value(loss).data()[0] < 1e-6);
    assert!(g.grad(z).unwrap().max_abs() < 1e-6);
}

fn micro_loss<T: Scalar>(
    g: &mut Graph<T>,
    v: &[Var],
    params: &ParamStore<T>,
    cfg: &ModelConfig,
    mask: &MaskVolume,
) -> recognet_core::Result<Var> {
    let (pv, x) = v.split_at(v.len() - 1);
    let p = params.bind_vars(pv.to_vec())?;
    let logits = recognet_forward(g, &p, cfg, x[0])?;
    bce_loss(g, logits, mask, 1.5)
}

#[test]
fn micro_model_gradients_in_single_precision() {
    // Finite differences of an f32 forward pass are swamped by rounding, so
    // the f32 backward pass is compared with a double-precision reference.
    let mut cfg = ModelConfig::micro();
    cfg.input_size = 16;
    cfg.aspp.rates = vec![1, 2];
    let params = ParamStore::<f32>::init(&cfg, 13).unwrap();
    let params64 = params.cast::<f64>();
    let mask = MaskVolume::from_fn("m", [2, 16, 16], |t, y, x| {
        (y as i32 - 8).pow(2) + (x as i32 - 7).pow(2) < 20 + 6 * t as i32
    })
    .unwrap();
    let mut inputs: Vec<Tensor<f32>> = params.tensors().to_vec();
    inputs.push(volume(&[2, 1, 16, 16], 14));
    let analytic = analytic_gradients(&inputs, &|g: &mut Graph<f32>, v: &[Var]| micro_loss(g, v, &params, &cfg, &mask)).unwrap();
    let analytic: Vec<Tensor<f64>> = analytic.iter().map(|t| t.cast()).collect();
    let inputs64: Vec<Tensor<f64>> = inputs.iter().map(|t| t.cast()).collect();
    let report = compare_gradients(
        &inputs64,
        &|g: &mut Graph<f64>, v: &[Var]| micro_loss(g, v, &params64, &cfg, &mask),
        &analytic,
        GradCheckOptions::wide(),
    )
    .unwrap();
    assert!(report.passes(1e-2), "worst {:.3e}", report.worst());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raising_the_threshold_never_adds_foreground(
        z in proptest::collection::vec(-6.0f32..6.0, 16),
        lo in 0.01f64..0.99, hi in 0.01f64..0.99,
    ) {
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        let t = Tensor::new(&[1, 1, 4, 4], z).unwrap();
        let a = predict_masks("a", &t, lo).unwrap();
        let b = predict_masks("b", &t, hi).unwrap();
        prop_assert!(a.data().iter().zip(b.data()).all(|(p, q)| p >= q));
    }
}
