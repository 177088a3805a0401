//! Central finite-difference checks of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Scalar, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates probed per input; tensors at most this large are probed
    /// exhaustively.
    pub max_coords: usize,
    /// Norms below this are treated as zero when forming relative errors.
    pub abs_floor: f64,
    pub seed: u64,
}

impl GradCheckOptions {
    /// Settings for double-precision checks.
    pub fn wide() -> Self {
        GradCheckOptions {
            eps: 1e-6,
            max_coords: 24,
            abs_floor: 1e-8,
            seed: 0x5eed,
        }
    }

    /// Settings for single-precision checks.
    pub fn standard() -> Self {
        GradCheckOptions {
            eps: 1e-2,
            max_coords: 24,
            abs_floor: 1e-4,
            seed: 0x5eed,
        }
    }
}

/// Relative error of the analytic gradient per input tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.worst() < tol
    }
}

fn evaluate<T, F>(inputs: &[Tensor<T>], build: &F) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let v = g.value(out);
    if v.numel() != 1 {
        return Err(Error::shape("gradcheck", format!("function output must be scalar, got {:?}", v.shape())));
    }
    Ok(v.data()[0])
}

/// Reverse-mode gradients of `build` with respect to each input.
pub fn analytic_gradients<T, F>(inputs: &[Tensor<T>], build: &F) -> Result<Vec<Tensor<T>>>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    g.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

/// Compare `analytic` against central differences of `build` on a sample of
/// coordinates of each input.
pub fn compare_gradients<T, F>(
    inputs: &[Tensor<T>],
    build: &F,
    analytic: &[Tensor<T>],
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let eps = T::from_f64_lossy(opts.eps);
    let mut probe = inputs.to_vec();
    let mut errors = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = if n <= opts.max_coords {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        let (mut diff2, mut a2, mut n2) = (0.0f64, 0.0f64, 0.0f64);
        for &c in &coords {
            let orig = input.data()[c];
            probe[i].data_mut()[c] = orig + eps;
            let plus = evaluate(&probe, build)?;
            probe[i].data_mut()[c] = orig - eps;
            let minus = evaluate(&probe, build)?;
            probe[i].data_mut()[c] = orig;
            // Divide by the step actually taken after rounding.
            let step = ((orig + eps) - (orig - eps)).as_f64();
            let numeric = (plus - minus).as_f64() / step;
            let a = analytic[i].data()[c].as_f64();
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let denom = a2.sqrt().max(n2.sqrt()).max(opts.abs_floor);
        errors.push(diff2.sqrt() / denom);
    }
    Ok(GradCheckReport { errors })
}

/// Reverse-mode gradients checked against central finite differences.
pub fn check_gradients<T, F>(inputs: &[Tensor<T>], build: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(inputs, &build)?;
    compare_gradients(inputs, &build, &analytic, opts)
}
