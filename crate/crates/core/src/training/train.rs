use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cases::{load_case, Case};
use super::config::TrainConfig;
use super::evaluate::{evaluate_cases, EvalOptions};
use crate::data::{read_manifest, sample_subsequence, PreprocessConfig};
use crate::model::{bce_loss, recognet_forward, Checkpoint};
use crate::tensorcore::{adam_step, AdamConfig, AdamState, Graph, Tensor};
use crate::{Error, Result};

/// Offset mixed into the seed for the sampling stream so it differs from
/// the parameter-init stream.
const SAMPLING_STREAM: u64 = 0x5A4D_504C_494E_4721;

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub case: String,
    /// Loss per pixel (the summed slice losses divided by the slice count).
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epoch_mean: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    /// `(epoch, mean DSC)` from periodic evaluation.
    pub evaluations: Vec<(usize, f64)>,
}

impl TrainLog {
    /// `step,epoch,loss` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,epoch,loss\n");
        for r in &self.steps {
            let _ = writeln!(s, "{},{},{:.8}", r.step, r.epoch, r.loss);
        }
        s
    }
}

/// One optimization step on a `(volume, mask)` subsequence. Returns the loss
/// per pixel.
pub fn train_step(
    ckpt: &mut Checkpoint,
    state: &mut AdamState<f32>,
    volume: &Tensor<f32>,
    mask: &crate::data::MaskVolume,
    pos_weight: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let p = ckpt.params.bind(&mut g, true);
    let x = g.constant(volume.clone());
    let logits = recognet_forward(&mut g, &p, &ckpt.config, x)?;
    let loss = bce_loss(&mut g, logits, mask, pos_weight)?;
    let value = f64::from(g.value(loss).data()[0]) / mask.slices() as f64;
    if !value.is_finite() {
        let z = g.value(logits);
        return Err(Error::NonFiniteLoss {
            step: 0,
            epoch: 0,
            case: mask.id.clone(),
            diagnostic: format!(
                "loss {value}; {} of {} logits finite; max |param| {:.3e}",
                z.data().iter().filter(|v| v.is_finite()).count(),
                z.numel(),
                ckpt.params.tensors().iter().map(|t| t.max_abs()).fold(0.0f32, f32::max)
            ),
        });
    }
    g.backward(loss)?;
    let grads: Vec<Tensor<f32>> = p
        .vars()
        .iter()
        .zip(ckpt.params.tensors())
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    adam_step(ckpt.params.tensors_mut(), &grads, state)?;
    Ok(value)
}

/// Train on preprocessed cases. `on_epoch` runs after every epoch with the
/// 1-based epoch number.
pub fn train_on_cases(
    cfg: &TrainConfig,
    cases: &[Case],
    mut on_epoch: impl FnMut(usize, &Checkpoint, &mut TrainLog) -> Result<()>,
) -> Result<(Checkpoint, TrainLog)> {
    cfg.validate()?;
    if cases.is_empty() {
        return Err(Error::Config("no training cases".into()));
    }
    for c in cases {
        if c.mask.is_none() {
            return Err(Error::Config(format!("training case {} has no mask", c.id)));
        }
    }
    let mut ckpt = Checkpoint::fresh(cfg.model.clone(), cfg.seed)?;
    let mut state = AdamState::for_params(AdamConfig::with_lr(cfg.learning_rate), ckpt.params.tensors())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SAMPLING_STREAM);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..cases.len()).collect();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let case = &cases[i];
            let mask = case.mask.as_ref().expect("checked above");
            let (v, m) = sample_subsequence(&case.volume, mask, cfg.subsequence_length, &mut rng)?;
            let loss = train_step(&mut ckpt, &mut state, &v.to_tensor(), &m, cfg.pos_weight).map_err(|e| match e {
                Error::NonFiniteLoss { diagnostic, .. } => Error::NonFiniteLoss {
                    step,
                    epoch,
                    case: case.id.clone(),
                    diagnostic,
                },
                other => other,
            })?;
            log.steps.push(StepRecord {
                step,
                epoch,
                case: case.id.clone(),
                loss,
            });
            ckpt.meta.loss_history.push(loss as f32);
            total += loss;
            step += 1;
        }
        let mean = total / cases.len() as f64;
        log.epoch_mean.push(mean);
        log.epoch_seconds.push(t0.elapsed().as_secs_f64());
        log::info!("epoch {epoch}/{}: mean loss {mean:.5}", cfg.epochs);
        ckpt.meta.epoch = epoch as u64;
        ckpt.optimizer = Some(state.clone());
        on_epoch(epoch, &ckpt, &mut log)?;
    }
    Ok((ckpt, log))
}

/// Result of a file-driven training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
}

/// Load the manifests named in `cfg`, train, and write checkpoints and the
/// loss log.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let manifest = cfg
        .train_manifest
        .as_deref()
        .ok_or_else(|| Error::Config("train_manifest is required".into()))?;
    let pcfg = PreprocessConfig::with_size(cfg.model.input_size);
    let cache = cfg.cache_dir.as_deref();
    let cases = read_manifest(manifest)?
        .iter()
        .map(|e| load_case(e, &pcfg, cache))
        .collect::<Result<Vec<_>>>()?;
    let eval_cases = match (&cfg.eval_manifest, cfg.eval_every) {
        (Some(m), every) if every > 0 => read_manifest(m)?
            .iter()
            .map(|e| load_case(e, &pcfg, cache))
            .collect::<Result<Vec<_>>>()?,
        _ => Vec::new(),
    };
    let dir = &cfg.checkpoint_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let (checkpoint, log) = train_on_cases(cfg, &cases, |epoch, ckpt, log| {
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            ckpt.save(&dir.join(format!("epoch{epoch:04}.ckpt")))?;
        }
        if cfg.eval_every > 0 && epoch % cfg.eval_every == 0 && !eval_cases.is_empty() {
            let report = evaluate_cases(ckpt, &eval_cases, &EvalOptions::default())?;
            if let Some(s) = &report.summary {
                log::info!("epoch {epoch}: eval mean DSC {:.4}", s.dsc);
                log.evaluations.push((epoch, s.dsc));
            }
        }
        Ok(())
    })?;
    let checkpoint_path = dir.join("final.ckpt");
    checkpoint.save(&checkpoint_path)?;
    let log_path = cfg.log_path.clone().unwrap_or_else(|| dir.join("train_log.csv"));
    if let Some(parent) = log_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&log_path, log.to_csv()).map_err(|e| Error::io(&log_path, e))?;
    Ok(TrainOutcome {
        checkpoint,
        log,
        checkpoint_path,
        log_path,
    })
}
