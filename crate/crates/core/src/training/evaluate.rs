use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::cases::{load_case, Case};
use crate::data::{corrupt_contrast, read_manifest, PreprocessConfig, DEFAULT_CONTRAST_FACTOR};
use crate::metrics::{aggregate_report, profile_csv, report_csv, report_table, volume_metrics, MetricSet, Summary};
use crate::model::{predict_masks, Checkpoint};
use crate::tensorcore::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    /// Apply contrast corruption to the second half of each volume.
    pub corrupted: bool,
    pub factor: f64,
    pub threshold: f64,
    /// Evaluate cases on the rayon pool. Results do not depend on this.
    pub parallel: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            corrupted: false,
            factor: DEFAULT_CONTRAST_FACTOR,
            threshold: 0.5,
            parallel: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub cases: Vec<MetricSet>,
    /// `(case, reason)` for cases that could not be scored.
    pub skipped: Vec<(String, String)>,
    pub summary: Option<Summary>,
}

/// Logits for one preprocessed case, after optional corruption.
pub fn case_logits(ckpt: &Checkpoint, case: &Case, opts: &EvalOptions) -> Result<Tensor<f32>> {
    let volume = if opts.corrupted {
        corrupt_contrast(&case.volume, opts.factor)?
    } else {
        case.volume.clone()
    };
    ckpt.logits(&volume.to_tensor())
}

fn score(ckpt: &Checkpoint, case: &Case, opts: &EvalOptions) -> Result<Option<MetricSet>> {
    let Some(gt) = &case.mask else { return Ok(None) };
    let logits = case_logits(ckpt, case, opts)?;
    let pred = predict_masks(&case.id, &logits, opts.threshold)?;
    volume_metrics(&case.id, &pred, gt).map(Some)
}

/// Run the whole sequence of each case from a fresh recurrent state.
pub fn evaluate_cases(ckpt: &Checkpoint, cases: &[Case], opts: &EvalOptions) -> Result<EvalReport> {
    let results: Vec<Result<Option<MetricSet>>> = if opts.parallel {
        cases.par_iter().map(|c| score(ckpt, c, opts)).collect()
    } else {
        cases.iter().map(|c| score(ckpt, c, opts)).collect()
    };
    let mut report = EvalReport {
        cases: Vec::new(),
        skipped: Vec::new(),
        summary: None,
    };
    for (case, r) in cases.iter().zip(results) {
        match r? {
            Some(m) => report.cases.push(m),
            None => {
                log::warn!("case {}: no mask, skipped", case.id);
                report.skipped.push((case.id.clone(), "missing mask".into()));
            }
        }
    }
    if !report.cases.is_empty() {
        report.summary = Some(aggregate_report(&report.cases)?);
    }
    Ok(report)
}

/// Load a manifest at the checkpoint's input size and evaluate it.
pub fn evaluate(ckpt: &Checkpoint, manifest: &Path, opts: &EvalOptions, cache_dir: Option<&Path>) -> Result<EvalReport> {
    let pcfg = PreprocessConfig::with_size(ckpt.config.input_size);
    let cases = read_manifest(manifest)?
        .iter()
        .map(|e| load_case(e, &pcfg, cache_dir))
        .collect::<Result<Vec<_>>>()?;
    evaluate_cases(ckpt, &cases, opts)
}

/// Write `metrics_{tag}.csv`, `report_{tag}.txt`, `profile_{tag}.csv` and one
/// profile CSV per case under `profiles_{tag}/`. Returns the written paths.
pub fn write_report(report: &EvalReport, out_dir: &Path, tag: &str) -> Result<Vec<PathBuf>> {
    let summary = report
        .summary
        .as_ref()
        .ok_or_else(|| Error::invalid("write_report", "no case could be evaluated"))?;
    let case_dir = out_dir.join(format!("profiles_{tag}"));
    std::fs::create_dir_all(&case_dir).map_err(|e| Error::io(&case_dir, e))?;
    let mut table = report_table(&report.cases, summary);
    for (case, why) in &report.skipped {
        table.push_str(&format!("skipped {case}: {why}\n"));
    }
    let mut files = vec![
        (out_dir.join(format!("metrics_{tag}.csv")), report_csv(&report.cases, summary)),
        (out_dir.join(format!("report_{tag}.txt")), table),
        (out_dir.join(format!("profile_{tag}.csv")), profile_csv(&report.cases)),
    ];
    for m in &report.cases {
        files.push((case_dir.join(format!("{}.csv", m.case_id)), profile_csv(std::slice::from_ref(m))));
    }
    for (path, text) in &files {
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
