use std::path::{Path, PathBuf};

use crate::model::ModelConfig;
use crate::{Error, Result};

/// Training run settings, read from a flat `key = value` file.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub subsequence_length: usize,
    pub seed: u64,
    pub pos_weight: f64,
    pub model: ModelConfig,
    pub train_manifest: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
    /// Evaluate on `eval_manifest` every this many epochs (0 disables).
    pub eval_every: usize,
    pub checkpoint_dir: PathBuf,
    /// Also save `epochNNNN.ckpt` every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Where preprocessed volumes are cached; `None` disables the cache.
    pub cache_dir: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 1e-3,
            subsequence_length: 10,
            seed: 0,
            pos_weight: 1.0,
            model: ModelConfig::desk(),
            train_manifest: None,
            eval_manifest: None,
            eval_every: 0,
            checkpoint_dir: PathBuf::from("checkpoints"),
            checkpoint_every: 0,
            cache_dir: None,
            log_path: None,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl TrainConfig {
    /// Parse `key = value` lines; relative paths resolve against `base`.
    ///
    /// `model` selects a preset; `recurrence` and `input_size` then adjust it,
    /// whatever order the lines appear in.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut c = TrainConfig::default();
        let (mut recurrence, mut input_size) = (None, None);
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let path = || Some(base.join(v));
            match k {
                "epochs" => c.epochs = num(k, v)?,
                "learning_rate" | "lr" => c.learning_rate = num(k, v)?,
                "subsequence_length" => c.subsequence_length = num(k, v)?,
                "seed" => c.seed = num(k, v)?,
                "pos_weight" => c.pos_weight = num(k, v)?,
                "model" => c.model = ModelConfig::preset(v)?,
                "recurrence" => recurrence = Some(num::<bool>(k, v)?),
                "input_size" => input_size = Some(num::<usize>(k, v)?),
                "train_manifest" => c.train_manifest = path(),
                "eval_manifest" => c.eval_manifest = path(),
                "eval_every" => c.eval_every = num(k, v)?,
                "checkpoint_dir" => c.checkpoint_dir = base.join(v),
                "checkpoint_every" => c.checkpoint_every = num(k, v)?,
                "cache_dir" => c.cache_dir = path(),
                "log_path" => c.log_path = path(),
                other => return Err(Error::Config(format!("line {}: unknown key {other:?}", n + 1))),
            }
        }
        if let Some(r) = recurrence {
            c.model.recurrence_enabled = r;
        }
        if let Some(s) = input_size {
            c.model.input_size = s;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.subsequence_length == 0 {
            return Err(Error::Config("subsequence_length must be >= 1".into()));
        }
        if !(self.pos_weight > 0.0 && self.pos_weight.is_finite()) {
            return Err(Error::Config(format!("pos_weight must be positive, got {}", self.pos_weight)));
        }
        self.model.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_resolves_paths() {
        let text = "# run\nepochs = 3\nrecurrence = false\nmodel = micro\nlr = 0.01\ntrain_manifest = data/m.txt\n";
        let c = TrainConfig::parse(text, Path::new("/cfg")).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.learning_rate, 0.01);
        assert_eq!(c.model, ModelConfig::micro().with_recurrence(false));
        assert_eq!(c.train_manifest.as_deref(), Some(Path::new("/cfg/data/m.txt")));
        assert_eq!(c.subsequence_length, 10);
    }

    #[test]
    fn rejects_bad_values() {
        for bad in ["epochs = 0", "lr = -1", "bogus = 1", "epochs", "model = huge", "input_size = 50"] {
            assert!(TrainConfig::parse(bad, Path::new("")).is_err(), "{bad}");
        }
    }
}
