use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::io;
use crate::convlstm::{forget_bias_init, ConvLstmSpec};
use crate::tensorcore::{Graph, Scalar, Tensor, Var};
use crate::{Error, Result};

/// Scale applied to the Kaiming init of the final 1×1 classifier so that
/// fresh models start with logits near zero.
pub const CLASSIFIER_INIT_SCALE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Kaiming,
    KaimingScaled(f64),
    Zeros,
    Ones,
    ForgetBias(ConvLstmSpec),
}

/// Name, shape and initializer of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

struct SpecList(Vec<ParamSpec>);

impl SpecList {
    fn push(&mut self, name: String, shape: &[usize], init: Init) {
        self.0.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
        });
    }

    fn conv(&mut self, prefix: &str, cout: usize, cin: usize, k: usize) {
        self.push(format!("{prefix}.weight"), &[cout, cin, k, k], Init::Kaiming);
        self.push(format!("{prefix}.bias"), &[cout], Init::Zeros);
    }

    fn norm(&mut self, prefix: &str, c: usize) {
        self.push(format!("{prefix}.gamma"), &[c], Init::Ones);
        self.push(format!("{prefix}.beta"), &[c], Init::Zeros);
    }

    /// A bias before a normalization would be cancelled by it, so none is stored.
    fn conv_no_bias(&mut self, prefix: &str, cout: usize, cin: usize, k: usize) {
        self.push(format!("{prefix}.weight"), &[cout, cin, k, k], Init::Kaiming);
    }

    fn conv_norm(&mut self, prefix: &str, cout: usize, cin: usize, k: usize) {
        self.conv_no_bias(&format!("{prefix}.conv"), cout, cin, k);
        self.norm(&format!("{prefix}.norm"), cout);
    }
}

/// Every parameter tensor the architecture needs, in a fixed order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut s = SpecList(Vec::new());
    let b = &cfg.backbone;
    s.conv_norm("backbone.stem", b.stem_channels, cfg.in_channels, 3);
    let mut c = b.stem_channels;
    for (i, st) in b.stages.iter().enumerate() {
        let p = format!("backbone.stage{i}");
        s.conv_no_bias(&format!("{p}.conv1"), st.channels, c, 3);
        s.norm(&format!("{p}.norm1"), st.channels);
        s.conv_no_bias(&format!("{p}.conv2"), st.channels, st.channels, 3);
        s.norm(&format!("{p}.norm2"), st.channels);
        if st.channels != c || st.stride != 1 {
            s.conv(&format!("{p}.proj"), st.channels, c, 1);
        }
        c = st.channels;
    }

    let a = &cfg.aspp;
    if a.pointwise_branch {
        s.conv_norm("aspp.pointwise", a.branch_channels, c, 1);
    }
    for i in 0..a.rates.len() {
        s.conv_norm(&format!("aspp.rate{i}"), a.branch_channels, c, 3);
    }
    if a.pooling_branch {
        s.conv("aspp.pool.conv", a.branch_channels, c, 1);
    }
    s.conv("aspp.fuse.conv", a.out_channels, a.branch_count() * a.branch_channels, 1);

    let h = &cfg.head;
    let mut c = a.out_channels;
    for (i, st) in h.encoder.iter().enumerate() {
        let p = format!("head.enc{i}");
        s.conv_norm(&p, st.channels, c, 3);
        let spec = ConvLstmSpec {
            in_channels: st.channels,
            hidden_channels: st.hidden,
            kernel: h.lstm_kernel,
        };
        s.push(format!("{p}.lstm.weight"), &spec.weight_shape(), Init::Kaiming);
        s.push(format!("{p}.lstm.bias"), &spec.bias_shape(), Init::ForgetBias(spec));
        c = st.hidden;
    }
    let n = h.encoder.len();
    for j in 0..n {
        let p = format!("head.dec{j}");
        let out = h.decoder_channels(j);
        let stride = h.encoder[n - 1 - j].stride;
        // Transposed-conv weights are [in, out, k, k].
        s.push(format!("{p}.up.weight"), &[c, out, stride, stride], Init::Kaiming);
        s.push(format!("{p}.up.bias"), &[out], Init::Zeros);
        let skip = h
            .skip_into(j)
            .map_or(0, |l| h.level_channels(l.level, a.out_channels));
        s.conv_norm(&p, out, out + skip, 3);
        c = out;
    }
    s.push("head.out.weight".into(), &[1, c, 1, 1], Init::KaimingScaled(CLASSIFIER_INIT_SCALE));
    s.push("head.out.bias".into(), &[1], Init::Zeros);
    s.0
}

/// Named parameter tensors in a stable order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    /// Fresh parameters for `cfg` drawn from a seeded ChaCha stream.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        for spec in param_specs(cfg) {
            let t = match spec.init {
                Init::Kaiming => Tensor::kaiming_uniform(&spec.shape, &mut rng),
                Init::KaimingScaled(k) => {
                    let kk = T::from_f64_lossy(k);
                    Tensor::kaiming_uniform(&spec.shape, &mut rng).map(|v| v * kk)
                }
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::Ones => Tensor::ones(&spec.shape),
                Init::ForgetBias(lstm) => forget_bias_init(lstm),
            };
            store.insert(spec.name, t)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: String, tensor: Tensor<T>) -> Result<()> {
        if self.index.contains_key(&name) {
            return Err(Error::invalid("params", format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Check names and shapes against what `cfg` requires.
    pub fn validate_against(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = param_specs(cfg);
        for spec in &specs {
            match self.get(&spec.name) {
                None => return Err(Error::CheckpointMismatch(format!("missing tensor {}", spec.name))),
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    return Err(Error::CheckpointMismatch(format!(
                        "tensor {} has shape {:?}, config expects {:?}",
                        spec.name,
                        t.shape(),
                        spec.shape
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.names.iter().find(|n| !specs.iter().any(|s| &s.name == *n)) {
            return Err(Error::CheckpointMismatch(format!("unexpected tensor {extra}")));
        }
        Ok(())
    }

    /// Record every tensor as a graph leaf.
    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> BoundParams {
        let vars = self.tensors.iter().map(|t| g.leaf(t.clone(), requires_grad)).collect();
        BoundParams {
            vars,
            index: self.index.clone(),
        }
    }

    /// Attach handles already recorded on a graph, given in store order.
    pub fn bind_vars(&self, vars: Vec<Var>) -> Result<BoundParams> {
        if vars.len() != self.len() {
            return Err(Error::invalid("params", format!("{} handles for {} parameters", vars.len(), self.len())));
        }
        Ok(BoundParams {
            vars,
            index: self.index.clone(),
        })
    }

    /// The subset of parameters whose names start with `prefix`.
    pub fn filter_prefix(&self, prefix: &str) -> Self {
        let mut out = ParamStore::default();
        for (name, t) in self.iter().filter(|(n, _)| n.starts_with(prefix)) {
            out.insert(name.to_string(), t.clone()).expect("names are unique");
        }
        out
    }
}

impl ParamStore<f32> {
    /// Overwrite parameters from a named-tensor file (for externally converted
    /// weights). Entries must name existing parameters with identical shapes;
    /// parameters absent from the file are left unchanged. Returns the number
    /// of tensors loaded.
    pub fn import_named(&mut self, path: &Path) -> Result<usize> {
        let entries = io::read_named_tensors(path)?;
        for (name, t) in &entries {
            let dst = self
                .get(name)
                .ok_or_else(|| Error::CheckpointMismatch(format!("imported tensor {name} is not a model parameter")))?;
            if dst.shape() != t.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "imported tensor {name} has shape {:?}, model expects {:?}",
                    t.shape(),
                    dst.shape()
                )));
            }
        }
        let count = entries.len();
        for (name, t) in entries {
            *self.get_mut(&name).expect("checked above") = t;
        }
        Ok(count)
    }

    pub fn export_named(&self, path: &Path) -> Result<()> {
        io::write_named_tensors(path, self.iter())
    }
}

/// Graph handles for a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::CheckpointMismatch(format!("missing tensor {name}")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Handles in store order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_matches_specs_and_is_seeded() {
        let cfg = ModelConfig::micro();
        let a = ParamStore::<f32>::init(&cfg, 3).unwrap();
        let b = ParamStore::<f32>::init(&cfg, 3).unwrap();
        let c = ParamStore::<f32>::init(&cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        a.validate_against(&cfg).unwrap();
        assert!(a.get("head.enc0.lstm.weight").is_some());
        assert_eq!(a.get("backbone.stem.norm.gamma").unwrap().data()[0], 1.0);
    }

    #[test]
    fn mismatch_names_tensor() {
        let cfg = ModelConfig::micro();
        let mut store = ParamStore::<f32>::init(&cfg, 0).unwrap();
        *store.get_mut("aspp.fuse.conv.bias").unwrap() = Tensor::zeros(&[3]);
        let e = store.validate_against(&cfg).unwrap_err().to_string();
        assert!(e.contains("aspp.fuse.conv.bias"), "{e}");
    }
}
