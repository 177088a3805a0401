use std::collections::BTreeSet;
use std::path::Path;

use recognet_core::data::{case_seed, generate_phantom, write_phantom_dataset, PhantomSpec, PreprocessConfig};
use recognet_core::tensorcore::gradcheck::GradCheckOptions;
use recognet_core::tensorcore::{AdamConfig, AdamState, DIFFERENTIABLE_OPS};
use recognet_core::training::gradcheck::{gradcheck_cases, negative_control, run_case, COMPOSITE_CHECKS};
use recognet_core::training::{
    evaluate, evaluate_cases, train, train_on_cases, train_step, write_report, Case, EvalOptions, TrainConfig,
    GRADCHECK_TOLERANCE,
};
use recognet_core::{Checkpoint, Error, ModelConfig};

fn micro(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        learning_rate: lr,
        seed: 3,
        model: ModelConfig::micro(),
        ..TrainConfig::default()
    }
}

fn phantom_case(index: usize) -> Case {
    let (v, m) = generate_phantom(&PhantomSpec::default().with_seed(case_seed(42, index))).unwrap();
    Case::prepare(&format!("case{index:03}"), &v, Some(&m), &PreprocessConfig::with_size(64)).unwrap()
}

#[test]
fn first_loss_is_near_ln2_and_overfitting_reduces_it() {
    let cases = [phantom_case(0)];
    let (_, log) = train_on_cases(&micro(10, 3e-3), &cases, |_, _, _| Ok(())).unwrap();
    let first = log.steps[0].loss;
    assert!((first - std::f64::consts::LN_2).abs() <= 0.15, "first loss {first}");
    assert_eq!(log.epoch_mean.len(), 10);
    assert!(log.epoch_mean[9] < log.epoch_mean[0], "{:?}", log.epoch_mean);
    let csv = log.to_csv();
    assert!(csv.starts_with("step,epoch,loss\n"));
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let cases = [phantom_case(1), phantom_case(2)];
    let run = || train_on_cases(&micro(2, 1e-3), &cases, |_, _, _| Ok(())).unwrap();
    let ((a, la), (b, lb)) = (run(), run());
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(la.steps, lb.steps);
    let mut other = micro(2, 1e-3);
    other.seed = 4;
    let (c, _) = train_on_cases(&other, &cases, |_, _, _| Ok(())).unwrap();
    assert_ne!(a.to_bytes(), c.to_bytes());
}

#[test]
fn non_finite_loss_aborts_with_a_diagnostic() {
    let case = phantom_case(0);
    let mut ckpt = Checkpoint::fresh(ModelConfig::micro(), 1).unwrap();
    ckpt.params.get_mut("head.out.weight").unwrap().data_mut()[0] = f32::NAN;
    let before = ckpt.to_bytes();
    let mut state = AdamState::for_params(AdamConfig::with_lr(1e-3), ckpt.params.tensors()).unwrap();
    let err = train_step(&mut ckpt, &mut state, &case.volume.to_tensor(), case.mask.as_ref().unwrap(), 1.0).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
    assert!(err.is_numeric());
    assert!(err.to_string().contains("logits finite"));
    assert_eq!(ckpt.to_bytes(), before, "parameters must not change on a failed step");
}

#[test]
fn training_rejects_unlabelled_cases() {
    let mut case = phantom_case(0);
    case.mask = None;
    assert!(train_on_cases(&micro(1, 1e-3), &[case], |_, _, _| Ok(())).is_err());
    assert!(train_on_cases(&micro(1, 1e-3), &[], |_, _, _| Ok(())).is_err());
}

#[test]
fn config_files_load_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "model = micro\nepochs = 4  # short\nlr = 2e-3\ncheckpoint_dir = out\n").unwrap();
    let c = TrainConfig::load(&path).unwrap();
    assert_eq!((c.epochs, c.learning_rate), (4, 2e-3));
    assert_eq!(c.checkpoint_dir, dir.path().join("out"));
    assert_eq!(c.pos_weight, 1.0);
    let missing = TrainConfig::load(&dir.path().join("nope.cfg")).unwrap_err().to_string();
    assert!(missing.contains("nope.cfg"), "{missing}");
    let no_manifest = train(&c).unwrap_err();
    assert!(matches!(no_manifest, Error::Config(_)));
}

#[test]
fn gradcheck_covers_every_operation() {
    let cases = gradcheck_cases(7).unwrap();
    let names: BTreeSet<&str> = cases.iter().map(|c| c.name.as_str()).collect();
    let expected: BTreeSet<&str> = DIFFERENTIABLE_OPS.iter().chain(COMPOSITE_CHECKS).copied().collect();
    assert_eq!(names, expected);
    for c in cases.iter().filter(|c| DIFFERENTIABLE_OPS.contains(&c.name.as_str())) {
        let worst = run_case(c, GradCheckOptions::wide()).unwrap();
        assert!(worst < GRADCHECK_TOLERANCE, "{}: {worst:e}", c.name);
    }
    assert!(negative_control(7).unwrap());
}

fn dataset(dir: &Path, count: usize) -> std::path::PathBuf {
    let spec = PhantomSpec {
        size: (48, 48),
        slices: (6, 6),
        ..PhantomSpec::default()
    };
    write_phantom_dataset(dir, count, 9, &spec).unwrap()
}

#[test]
fn file_driven_run_writes_checkpoints_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(&dir.path().join("data"), 2);
    let cfg = TrainConfig {
        train_manifest: Some(manifest.clone()),
        eval_manifest: Some(manifest),
        eval_every: 1,
        checkpoint_every: 1,
        checkpoint_dir: dir.path().join("ckpt"),
        ..micro(2, 1e-3)
    };
    let out = train(&cfg).unwrap();
    for f in ["epoch0001.ckpt", "epoch0002.ckpt", "final.ckpt", "train_log.csv"] {
        assert!(dir.path().join("ckpt").join(f).exists(), "{f}");
    }
    assert_eq!(out.log.evaluations.len(), 2);
    let reloaded = Checkpoint::load_for(&out.checkpoint_path, &cfg.model).unwrap();
    assert_eq!(reloaded.to_bytes(), out.checkpoint.to_bytes());
    assert_eq!(std::fs::read_to_string(&out.log_path).unwrap().lines().count(), 5);
}

#[test]
fn evaluation_skips_cases_without_masks() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), 2);
    std::fs::remove_file(dir.path().join("case001_mask.rvol")).unwrap();
    let ckpt = Checkpoint::fresh(ModelConfig::micro(), 5).unwrap();
    let report = evaluate(&ckpt, &manifest, &EvalOptions::default(), None).unwrap();
    assert_eq!(report.cases.len(), 1);
    assert_eq!(report.skipped.len(), 1);
    assert_eq!(report.skipped[0].0, "case001");

    let out = dir.path().join("out");
    let files = write_report(&report, &out, "clean").unwrap();
    assert!(files.iter().all(|f| f.exists()));
    let table = std::fs::read_to_string(out.join("report_clean.txt")).unwrap();
    assert!(table.contains("skipped case001"), "{table}");
    let metrics = std::fs::read_to_string(out.join("metrics_clean.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    let profile = std::fs::read_to_string(out.join("profile_clean.csv")).unwrap();
    assert_eq!(profile.lines().count(), 1 + 6);
    assert!(out.join("profiles_clean/case000.csv").exists());
}

#[test]
fn cache_reuse_gives_identical_results() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(&dir.path().join("data"), 2);
    let cache = dir.path().join("cache");
    let ckpt = Checkpoint::fresh(ModelConfig::micro(), 5).unwrap();
    let opts = EvalOptions::default();
    let plain = evaluate(&ckpt, &manifest, &opts, None).unwrap();
    let cold = evaluate(&ckpt, &manifest, &opts, Some(&cache)).unwrap();
    let entries = std::fs::read_dir(&cache).unwrap().count();
    assert_eq!(entries, 4);
    let warm = evaluate(&ckpt, &manifest, &opts, Some(&cache)).unwrap();
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), entries);
    assert_eq!(plain, cold);
    assert_eq!(cold, warm);
}

#[test]
fn parallel_evaluation_matches_serial() {
    let cases: Vec<Case> = (0..3).map(phantom_case).collect();
    let ckpt = Checkpoint::fresh(ModelConfig::micro(), 8).unwrap();
    let serial = evaluate_cases(&ckpt, &cases, &EvalOptions::default()).unwrap();
    let parallel = evaluate_cases(
        &ckpt,
        &cases,
        &EvalOptions {
            parallel: true,
            ..EvalOptions::default()
        },
    )
    .unwrap();
    assert_eq!(serial, parallel);
    let corrupted = evaluate_cases(
        &ckpt,
        &cases,
        &EvalOptions {
            corrupted: true,
            ..EvalOptions::default()
        },
    )
    .unwrap();
    assert_eq!(corrupted.cases.len(), 3);
}
