//! Convolutional LSTM cell and a causal sequence runner.
//!
//! Per step, with `*` a same-padded convolution:
//!
//! ```text
//! i = σ(Wxi*x + Whi*h + bi)    f = σ(Wxf*x + Whf*h + bf)
//! g = tanh(Wxg*x + Whg*h + bg) o = σ(Wxo*x + Who*h + bo)
//! c' = f⊙c + i⊙g               h' = o⊙tanh(c')
//! ```
//!
//! The eight kernels are stored fused as one `[4·hid, in+hid, k, k]` weight
//! applied to the channel concatenation `[x, h]`; gate blocks are ordered
//! i, f, g, o.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensorcore::{Conv2dOptions, Graph, Scalar, Tensor, Var};
use crate::{Error, Result};

/// Gate order inside the fused weight.
pub const GATES: [&str; 4] = ["input", "forget", "cell", "output"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLstmSpec {
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub kernel: usize,
}

impl ConvLstmSpec {
    pub fn new(in_channels: usize, hidden_channels: usize, kernel: usize) -> Result<Self> {
        let spec = ConvLstmSpec {
            in_channels,
            hidden_channels,
            kernel,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 || self.in_channels == 0 || self.hidden_channels == 0 {
            return Err(Error::invalid(
                "convlstm",
                format!("kernel must be odd and channels positive, got {self:?}"),
            ));
        }
        Ok(())
    }

    pub fn padding(&self) -> usize {
        (self.kernel - 1) / 2
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            4 * self.hidden_channels,
            self.in_channels + self.hidden_channels,
            self.kernel,
            self.kernel,
        ]
    }

    pub fn bias_shape(&self) -> [usize; 1] {
        [4 * self.hidden_channels]
    }
}

/// The eight gate kernels and four biases in their unfused form.
#[derive(Clone, Debug, PartialEq)]
pub struct GateKernels<T: Scalar> {
    /// Input-to-gate kernels `[hid, in, k, k]`, ordered i, f, g, o.
    pub input: [Tensor<T>; 4],
    /// Hidden-to-gate kernels `[hid, hid, k, k]`, ordered i, f, g, o.
    pub hidden: [Tensor<T>; 4],
    /// Biases `[hid]`, ordered i, f, g, o.
    pub bias: [Tensor<T>; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmParams<T: Scalar = f32> {
    pub spec: ConvLstmSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvLstmParams<T> {
    pub fn zeros(spec: ConvLstmSpec) -> Self {
        ConvLstmParams {
            spec,
            weight: Tensor::zeros(&spec.weight_shape()),
            bias: Tensor::zeros(&spec.bias_shape()),
        }
    }

    /// Kaiming-uniform kernels; forget-gate bias +1, other biases 0.
    pub fn init<R: Rng + ?Sized>(spec: ConvLstmSpec, rng: &mut R) -> Self {
        ConvLstmParams {
            spec,
            weight: Tensor::kaiming_uniform(&spec.weight_shape(), rng),
            bias: forget_bias_init(spec),
        }
    }

    pub fn from_gates(spec: ConvLstmSpec, gates: &GateKernels<T>) -> Result<Self> {
        spec.validate()?;
        let (cin, hid, k) = (spec.in_channels, spec.hidden_channels, spec.kernel);
        for (i, name) in GATES.iter().enumerate() {
            if gates.input[i].shape() != [hid, cin, k, k]
                || gates.hidden[i].shape() != [hid, hid, k, k]
                || gates.bias[i].shape() != [hid]
            {
                return Err(Error::shape(
                    "convlstm",
                    format!(
                        "{name} gate: kernels {:?}/{:?}, bias {:?} do not match {spec:?}",
                        gates.input[i].shape(),
                        gates.hidden[i].shape(),
                        gates.bias[i].shape()
                    ),
                ));
            }
        }
        let rows: Vec<Tensor<T>> = (0..4)
            .map(|i| Tensor::concat(&[&gates.input[i], &gates.hidden[i]], 1))
            .collect::<Result<_>>()?;
        let weight = Tensor::concat(&rows.iter().collect::<Vec<_>>(), 0)?;
        let bias = Tensor::concat(&gates.bias.iter().collect::<Vec<_>>(), 0)?;
        Ok(ConvLstmParams { spec, weight, bias })
    }

    pub fn to_gates(&self) -> Result<GateKernels<T>> {
        let (cin, hid) = (self.spec.in_channels, self.spec.hidden_channels);
        let block = |i: usize| self.weight.narrow(0, i * hid, hid);
        let mut input = Vec::with_capacity(4);
        let mut hidden = Vec::with_capacity(4);
        let mut bias = Vec::with_capacity(4);
        for i in 0..4 {
            let b = block(i)?;
            input.push(b.narrow(1, 0, cin)?);
            hidden.push(b.narrow(1, cin, hid)?);
            bias.push(self.bias.narrow(0, i * hid, hid)?);
        }
        let arr = |v: Vec<Tensor<T>>| -> [Tensor<T>; 4] { v.try_into().expect("four gates") };
        Ok(GateKernels {
            input: arr(input),
            hidden: arr(hidden),
            bias: arr(bias),
        })
    }

    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> ConvLstmVars {
        ConvLstmVars {
            spec: self.spec,
            weight: g.leaf(self.weight.clone(), requires_grad),
            bias: g.leaf(self.bias.clone(), requires_grad),
        }
    }
}

/// Bias vector with +1 on the forget-gate block.
pub fn forget_bias_init<T: Scalar>(spec: ConvLstmSpec) -> Tensor<T> {
    let hid = spec.hidden_channels;
    Tensor::from_fn(&spec.bias_shape(), |i| {
        if (hid..2 * hid).contains(&i) {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// ConvLSTM parameters recorded on a graph.
#[derive(Clone, Copy, Debug)]
pub struct ConvLstmVars {
    pub spec: ConvLstmSpec,
    pub weight: Var,
    pub bias: Var,
}

/// Hidden map `H_t` and cell map `C_t`, both `[N, hid, H, W]`.
#[derive(Clone, Copy, Debug)]
pub struct ConvLstmState {
    pub hidden: Var,
    pub cell: Var,
}

impl ConvLstmState {
    pub fn zeros<T: Scalar>(g: &mut Graph<T>, batch: usize, hidden_channels: usize, h: usize, w: usize) -> Self {
        let shape = [batch, hidden_channels, h, w];
        ConvLstmState {
            hidden: g.constant(Tensor::zeros(&shape)),
            cell: g.constant(Tensor::zeros(&shape)),
        }
    }

    /// State built from explicit tensors.
    pub fn from_tensors<T: Scalar>(g: &mut Graph<T>, hidden: Tensor<T>, cell: Tensor<T>) -> Result<Self> {
        if hidden.shape() != cell.shape() {
            return Err(Error::shape(
                "convlstm",
                format!("hidden {:?} and cell {:?} differ", hidden.shape(), cell.shape()),
            ));
        }
        Ok(ConvLstmState {
            hidden: g.constant(hidden),
            cell: g.constant(cell),
        })
    }
}

/// One ConvLSTM update. `x` is `[N, in, H, W]`; the state is `[N, hid, H, W]`.
pub fn cell_step<T: Scalar>(
    g: &mut Graph<T>,
    params: &ConvLstmVars,
    x: Var,
    state: &ConvLstmState,
) -> Result<ConvLstmState> {
    let spec = params.spec;
    let hid = spec.hidden_channels;
    let [n, cin, h, w] = g.value(x).dims4("convlstm")?;
    if cin != spec.in_channels {
        return Err(Error::shape(
            "convlstm",
            format!("input-to-gate kernels expect {} input channels, got {cin}", spec.in_channels),
        ));
    }
    let hs = g.shape(state.hidden).to_vec();
    if hs != [n, hid, h, w] {
        return Err(Error::shape(
            "convlstm",
            format!("hidden-to-gate kernels expect hidden state {:?}, got {hs:?}", [n, hid, h, w]),
        ));
    }
    if g.shape(state.cell) != hs.as_slice() {
        return Err(Error::shape(
            "convlstm",
            format!("cell state {:?} does not match hidden state {hs:?}", g.shape(state.cell)),
        ));
    }

    let xh = g.concat(&[x, state.hidden], 1)?;
    let pre = g.conv2d(
        xh,
        params.weight,
        Some(params.bias),
        Conv2dOptions::new(1, spec.padding(), 1),
    )?;
    let i = g.narrow(pre, 1, 0, hid)?;
    let f = g.narrow(pre, 1, hid, hid)?;
    let c_hat = g.narrow(pre, 1, 2 * hid, hid)?;
    let o = g.narrow(pre, 1, 3 * hid, hid)?;
    let i = g.sigmoid(i)?;
    let f = g.sigmoid(f)?;
    let c_hat = g.tanh(c_hat)?;
    let o = g.sigmoid(o)?;

    let keep = g.mul(f, state.cell)?;
    let write = g.mul(i, c_hat)?;
    let cell = g.add(keep, write)?;
    let squashed = g.tanh(cell)?;
    let hidden = g.mul(o, squashed)?;
    Ok(ConvLstmState { hidden, cell })
}

/// Hidden maps for every step plus the final state.
#[derive(Clone, Debug)]
pub struct SequenceOutput {
    pub hidden: Vec<Var>,
    pub last: ConvLstmState,
}

/// Fold [`cell_step`] over `xs`, starting from `init` (zeros if `None`).
pub fn run_sequence<T: Scalar>(
    g: &mut Graph<T>,
    params: &ConvLstmVars,
    xs: &[Var],
    init: Option<ConvLstmState>,
) -> Result<SequenceOutput> {
    let first = *xs
        .first()
        .ok_or_else(|| Error::invalid("convlstm", "empty input sequence"))?;
    let shape0 = g.shape(first).to_vec();
    let [n, _, h, w] = g.value(first).dims4("convlstm")?;
    let mut state = match init {
        Some(s) => s,
        None => ConvLstmState::zeros(g, n, params.spec.hidden_channels, h, w),
    };
    let mut hidden = Vec::with_capacity(xs.len());
    for (t, &x) in xs.iter().enumerate() {
        if g.shape(x) != shape0.as_slice() {
            return Err(Error::shape(
                "convlstm",
                format!("sequence element {t} has shape {:?}, expected {shape0:?}", g.shape(x)),
            ));
        }
        state = cell_step(g, params, x, &state)?;
        hidden.push(state.hidden);
    }
    Ok(SequenceOutput { hidden, last: state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(cin: usize, hid: usize, k: usize) -> ConvLstmSpec {
        ConvLstmSpec::new(cin, hid, k).unwrap()
    }

    #[test]
    fn zero_params_give_zero_state() {
        let s = spec(2, 3, 3);
        let p = ConvLstmParams::<f32>::zeros(s);
        let mut g = Graph::new();
        let vars = p.bind(&mut g, false);
        let x = g.constant(Tensor::from_fn(&[1, 2, 4, 4], |i| i as f32 * 0.1));
        let st = ConvLstmState::zeros(&mut g, 1, 3, 4, 4);
        let next = cell_step(&mut g, &vars, x, &st).unwrap();
        assert!(g.value(next.cell).data().iter().all(|&v| v == 0.0));
        assert!(g.value(next.hidden).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_memory() {
        let s = spec(1, 2, 3);
        let mut p = ConvLstmParams::<f64>::zeros(s);
        for v in &mut p.bias.data_mut()[2..4] {
            *v = 100.0;
        }
        let mut g = Graph::new();
        let vars = p.bind(&mut g, false);
        let c0 = Tensor::from_fn(&[1, 2, 3, 3], |i| (i as f64 * 0.7).sin());
        let st = ConvLstmState::from_tensors(&mut g, Tensor::zeros(&[1, 2, 3, 3]), c0.clone()).unwrap();
        let x = g.constant(Tensor::ones(&[1, 1, 3, 3]));
        let next = cell_step(&mut g, &vars, x, &st).unwrap();
        for ((&c, &h), &c0) in g
            .value(next.cell)
            .data()
            .iter()
            .zip(g.value(next.hidden).data())
            .zip(c0.data())
        {
            assert!((c - c0).abs() < 1e-12);
            assert!((h - 0.5 * c0.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn fused_matches_gate_split_roundtrip() {
        let s = spec(3, 2, 3);
        let p = ConvLstmParams::<f64>::init(s, &mut ChaCha8Rng::seed_from_u64(1));
        let gates = p.to_gates().unwrap();
        assert_eq!(gates.input[1].shape(), &[2, 3, 3, 3]);
        assert_eq!(gates.hidden[2].shape(), &[2, 2, 3, 3]);
        assert_eq!(gates.bias[1].data(), &[1.0, 1.0]);
        assert_eq!(ConvLstmParams::from_gates(s, &gates).unwrap(), p);
    }

    #[test]
    fn errors_name_the_mismatch() {
        let s = spec(2, 3, 3);
        let p = ConvLstmParams::<f32>::zeros(s);
        let mut g = Graph::new();
        let vars = p.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(&[1, 1, 4, 4]));
        let st = ConvLstmState::zeros(&mut g, 1, 3, 4, 4);
        let e = cell_step(&mut g, &vars, x, &st).unwrap_err().to_string();
        assert!(e.contains("input-to-gate"), "{e}");
        let x = g.constant(Tensor::zeros(&[1, 2, 5, 4]));
        let e = cell_step(&mut g, &vars, x, &st).unwrap_err().to_string();
        assert!(e.contains("hidden-to-gate"), "{e}");

        assert!(run_sequence(&mut g, &vars, &[], None).is_err());
        let a = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let b = g.constant(Tensor::zeros(&[1, 2, 4, 5]));
        let e = run_sequence(&mut g, &vars, &[a, a, b], None).unwrap_err().to_string();
        assert!(e.contains("element 2"), "{e}");
        assert!(ConvLstmSpec::new(1, 1, 2).is_err());
    }
}
