//! Finite-difference checks for every differentiable op and for composed
//! blocks, all in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::convlstm::{run_sequence, ConvLstmSpec, ConvLstmState, ConvLstmVars};
use crate::data::MaskVolume;
use crate::model::{aspp_forward, bce_loss, recognet_forward, ModelConfig, ParamStore};
use crate::tensorcore::gradcheck::{analytic_gradients, compare_gradients, GradCheckOptions};
use crate::tensorcore::{Conv2dOptions, Graph, Tensor, Var};
use crate::Result;

/// Relative-error tolerance of the suite.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Composite checks run after the per-op ones.
pub const COMPOSITE_CHECKS: &[&str] = &["convlstm_sequence", "aspp", "micro_model_bce"];

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckEntry {
    pub name: String,
    pub worst: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckSuiteReport {
    pub entries: Vec<GradcheckEntry>,
    pub tolerance: f64,
    /// Whether a deliberately wrong gradient was flagged.
    pub negative_control_caught: bool,
}

impl GradcheckSuiteReport {
    pub fn all_passed(&self) -> bool {
        self.negative_control_caught && self.entries.iter().all(|e| e.passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&format!(
                "{:<20} worst rel err {:.3e}  {}\n",
                e.name,
                e.worst,
                if e.passed { "ok" } else { "FAIL" }
            ));
        }
        s.push_str(&format!(
            "negative control     {}\n",
            if self.negative_control_caught { "caught" } else { "MISSED" }
        ));
        s
    }
}

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

/// Inputs and a scalar-valued function of them.
pub struct GradcheckCase {
    pub name: String,
    pub inputs: Vec<Tensor<f64>>,
    pub build: Build,
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Values bounded away from zero so relu's kink is never straddled.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `sum(out ⊙ r)` for a fixed random `r`, so every output coordinate gets a
/// distinct weight.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = g.constant(rand_t(&mut rng, g.shape(out)));
    let m = g.mul(out, r)?;
    g.sum(m)
}

fn case(name: &str, inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static) -> GradcheckCase {
    GradcheckCase {
        name: name.to_string(),
        inputs,
        build: Box::new(build),
    }
}

/// Several cases may share a name; the suite reports the worst of them.
fn op_cases(seed: u64) -> Vec<GradcheckCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut v = Vec::new();

    for (i, opts) in [Conv2dOptions::new(2, 1, 1), Conv2dOptions::new(1, 2, 2)].into_iter().enumerate() {
        v.push(case(
            "conv2d",
            vec![rand_t(r, &[2, 2, 5, 5]), rand_t(r, &[3, 2, 3, 3]), rand_t(r, &[3])],
            move |g, x| {
                let y = g.conv2d(x[0], x[1], Some(x[2]), opts)?;
                project(g, y, 10 + i as u64)
            },
        ));
    }
    v.push(case(
        "conv_transpose2d",
        vec![rand_t(r, &[2, 2, 3, 3]), rand_t(r, &[2, 3, 3, 3]), rand_t(r, &[3])],
        |g, x| {
            let y = g.conv_transpose2d(x[0], x[1], Some(x[2]), 2, 1)?;
            project(g, y, 12)
        },
    ));
    for (i, (oh, ow)) in [(5, 7), (2, 3)].into_iter().enumerate() {
        v.push(case("bilinear_resize", vec![rand_t(r, &[1, 2, 3, 4])], move |g, x| {
            let y = g.bilinear_resize(x[0], oh, ow)?;
            project(g, y, 13 + i as u64)
        }));
    }
    v.push(case("add", vec![rand_t(r, &[2, 3, 2, 2]), rand_t(r, &[1, 3, 1, 1])], |g, x| {
        let y = g.add(x[0], x[1])?;
        project(g, y, 15)
    }));
    v.push(case("mul", vec![rand_t(r, &[2, 3, 2, 2]), rand_t(r, &[1, 3, 1, 1])], |g, x| {
        let y = g.mul(x[0], x[1])?;
        project(g, y, 16)
    }));
    v.push(case("sigmoid", vec![rand_t(r, &[2, 3, 2, 2]).map(|a| 3.0 * a)], |g, x| {
        let y = g.sigmoid(x[0])?;
        project(g, y, 17)
    }));
    v.push(case("tanh", vec![rand_t(r, &[2, 3, 2, 2]).map(|a| 2.0 * a)], |g, x| {
        let y = g.tanh(x[0])?;
        project(g, y, 18)
    }));
    v.push(case("relu", vec![off_kink(r, &[2, 3, 2, 2])], |g, x| {
        let y = g.relu(x[0])?;
        project(g, y, 19)
    }));
    v.push(case("concat", vec![rand_t(r, &[1, 2, 2, 3]), rand_t(r, &[1, 3, 2, 3])], |g, x| {
        let y = g.concat(&[x[0], x[1]], 1)?;
        project(g, y, 20)
    }));
    v.push(case("narrow", vec![rand_t(r, &[2, 3, 4, 2])], |g, x| {
        let y = g.narrow(x[0], 2, 1, 2)?;
        project(g, y, 21)
    }));
    v.push(case("global_avg_pool", vec![rand_t(r, &[2, 3, 3, 4])], |g, x| {
        let y = g.global_avg_pool(x[0])?;
        project(g, y, 22)
    }));
    v.push(case(
        "channel_norm",
        vec![rand_t(r, &[2, 3, 4, 4]), rand_t(r, &[3]), rand_t(r, &[3])],
        |g, x| {
            let y = g.channel_norm(x[0], x[1], x[2])?;
            project(g, y, 23)
        },
    ));
    v.push(case("sum", vec![rand_t(r, &[2, 3, 2])], |g, x| {
        let s = g.sum(x[0])?;
        g.mul(s, s)
    }));
    v.push(case("scale", vec![rand_t(r, &[2, 3, 2, 2])], |g, x| {
        let y = g.scale(x[0], -1.7)?;
        project(g, y, 24)
    }));
    let target = Tensor::from_fn(&[2, 1, 3, 3], |_| if r.random_bool(0.4) { 1.0 } else { 0.0 });
    v.push(case("bce_with_logits", vec![rand_t(r, &[2, 1, 3, 3]).map(|a| 4.0 * a)], move |g, x| {
        g.bce_with_logits(x[0], target.clone(), 2.0, 0.25)
    }));
    v
}

fn convlstm_case(rng: &mut ChaCha8Rng) -> GradcheckCase {
    let spec = ConvLstmSpec {
        in_channels: 2,
        hidden_channels: 2,
        kernel: 3,
    };
    let mut inputs = vec![
        rand_t(rng, &spec.weight_shape()).map(|a| 0.5 * a),
        rand_t(rng, &spec.bias_shape()),
        rand_t(rng, &[1, 2, 4, 4]),
        rand_t(rng, &[1, 2, 4, 4]),
    ];
    for _ in 0..3 {
        inputs.push(rand_t(rng, &[1, 2, 4, 4]));
    }
    case("convlstm_sequence", inputs, move |g, x| {
        let vars = ConvLstmVars {
            spec,
            weight: x[0],
            bias: x[1],
        };
        let init = ConvLstmState {
            hidden: x[2],
            cell: x[3],
        };
        let out = run_sequence(g, &vars, &x[4..], Some(init))?;
        let h = g.concat(&out.hidden, 0)?;
        let a = project(g, h, 30)?;
        let b = project(g, out.last.cell, 31)?;
        g.add(a, b)
    })
}

fn tiny_model() -> ModelConfig {
    let mut cfg = ModelConfig::micro();
    cfg.input_size = 16;
    cfg
}

fn aspp_case(seed: u64) -> Result<GradcheckCase> {
    let mut cfg = tiny_model();
    cfg.aspp.rates = vec![1, 2];
    cfg.aspp.branch_channels = 2;
    cfg.aspp.out_channels = 3;
    let store = ParamStore::<f64>::init(&cfg, seed)?.filter_prefix("aspp.");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = vec![rand_t(&mut rng, &[2, cfg.backbone.stages[0].channels, 6, 6])];
    // Perturb gamma/beta away from their 1/0 init so the affine part is exercised.
    for t in store.tensors() {
        let noise: Tensor<f64> = Tensor::uniform(t.shape(), -0.1, 0.1, &mut rng);
        inputs.push(Tensor::from_fn(t.shape(), |i| t.data()[i] + noise.data()[i]));
    }
    let aspp = cfg.aspp.clone();
    Ok(case("aspp", inputs, move |g, x| {
        let p = store.bind_vars(x[1..].to_vec())?;
        let y = aspp_forward(g, &p, &aspp, x[0])?;
        project(g, y, 40)
    }))
}

fn model_case(seed: u64) -> Result<GradcheckCase> {
    let cfg = tiny_model();
    let store = ParamStore::<f64>::init(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let volume = Tensor::uniform(&[2, 1, 16, 16], 0.0, 1.0, &mut rng);
    let mask = MaskVolume::from_fn("gc", [2, 16, 16], |_, y, x| (y as f64 - 7.5).hypot(x as f64 - 7.5) < 5.0)?;
    let mut inputs = vec![volume];
    inputs.extend(store.tensors().iter().cloned());
    Ok(case("micro_model_bce", inputs, move |g, x| {
        let p = store.bind_vars(x[1..].to_vec())?;
        let z = recognet_forward(g, &p, &cfg, x[0])?;
        bce_loss(g, z, &mask, 1.5)
    }))
}

/// Every case of the suite, per-op checks first.
pub fn gradcheck_cases(seed: u64) -> Result<Vec<GradcheckCase>> {
    let mut v = op_cases(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    v.push(convlstm_case(&mut rng));
    v.push(aspp_case(seed)?);
    v.push(model_case(seed)?);
    Ok(v)
}

/// Worst relative error of one case.
pub fn run_case(c: &GradcheckCase, opts: GradCheckOptions) -> Result<f64> {
    let analytic = analytic_gradients(&c.inputs, &c.build)?;
    Ok(compare_gradients(&c.inputs, &c.build, &analytic, opts)?.worst())
}

/// Check that the comparison flags an analytic gradient scaled by 1.05.
pub fn negative_control(seed: u64) -> Result<bool> {
    let c = op_cases(seed).into_iter().find(|c| c.name == "conv2d").expect("conv2d case exists");
    let mut analytic = analytic_gradients(&c.inputs, &c.build)?;
    analytic[1] = analytic[1].map(|v| v * 1.05);
    let report = compare_gradients(&c.inputs, &c.build, &analytic, GradCheckOptions::wide())?;
    Ok(!report.passes(GRADCHECK_TOLERANCE))
}

pub fn gradcheck_suite(seed: u64) -> Result<GradcheckSuiteReport> {
    let opts = GradCheckOptions::wide();
    let mut entries: Vec<GradcheckEntry> = Vec::new();
    for c in gradcheck_cases(seed)? {
        let worst = run_case(&c, opts)?;
        match entries.iter_mut().find(|e| e.name == c.name) {
            Some(e) => e.worst = e.worst.max(worst),
            None => entries.push(GradcheckEntry {
                name: c.name.clone(),
                worst,
                passed: false,
            }),
        }
    }
    for e in &mut entries {
        e.passed = e.worst < GRADCHECK_TOLERANCE;
    }
    Ok(GradcheckSuiteReport {
        entries,
        tolerance: GRADCHECK_TOLERANCE,
        negative_control_caught: negative_control(seed)?,
    })
}
