use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use recognet_core::data::{
    corrupt_contrast, load_mask, load_volume, preprocess, read_metaimage, read_native, write_native_volume,
    write_phantom_dataset, NativeData, PhantomSpec, PreprocessConfig, DEFAULT_CONTRAST_FACTOR,
};
use recognet_core::metrics::size_profile;
use recognet_core::model::Checkpoint;
use recognet_core::training::{evaluate, gradcheck_suite, train, write_report, EvalOptions, TrainConfig};
use recognet_core::{Error, MaskVolume, Volume};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "recognet", version, about = "Recurrent slice-sequence segmentation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic ellipsoid dataset and its manifest.
    Phantom(PhantomArgs),
    /// Train from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on a manifest and write report CSVs.
    Eval(EvalArgs),
    /// Reduce contrast in the second half of a native volume.
    Corrupt {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CONTRAST_FACTOR)]
        factor: f64,
    },
    /// Finite-difference check of every differentiable op and composite.
    Gradcheck {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Print a header and value summary for a volume or mask file.
    Inspect {
        #[arg(long = "in")]
        input: PathBuf,
        /// Preprocess a volume to this size before summarizing.
        #[arg(long)]
        preprocess: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct PhantomArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Slice size as HxW.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    size: (usize, usize),
    #[arg(long, default_value_t = 12)]
    slices: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Reduce contrast in the second half of every volume.
    #[arg(long)]
    corrupted: bool,
    /// Run the head without recurrence.
    #[arg(long)]
    ablation: bool,
    #[arg(long, default_value_t = DEFAULT_CONTRAST_FACTOR)]
    factor: f64,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Output directory for the reports.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Report file tag; derived from the flags when omitted.
    #[arg(long)]
    tag: Option<String>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Evaluate cases one at a time instead of on the worker pool.
    #[arg(long)]
    serial: bool,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad extent {v:?} in {s:?}"));
    Ok((p(h)?, p(w)?))
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Phantom(a) => {
            if a.count == 0 || a.slices == 0 || a.size.0 == 0 || a.size.1 == 0 {
                return Err(Failure::Usage("count, slices and size must be positive".into()));
            }
            let base = PhantomSpec {
                size: a.size,
                slices: (a.slices, a.slices),
                ..PhantomSpec::default()
            };
            let manifest = write_phantom_dataset(&a.out, a.count, a.seed, &base)?;
            println!("wrote {} cases, manifest {}", a.count, manifest.display());
        }
        Command::Train { config } => {
            let cfg = TrainConfig::load(&config)?;
            let out = train(&cfg)?;
            println!("checkpoint {}", out.checkpoint_path.display());
            println!("loss log {}", out.log_path.display());
            if let Some(last) = out.log.epoch_mean.last() {
                println!("final epoch mean loss {last:.6}");
            }
        }
        Command::Eval(a) => eval(a)?,
        Command::Corrupt { input, out, factor } => {
            let v = load_volume(&input)?;
            write_native_volume(&corrupt_contrast(&v, factor)?, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Gradcheck { seed } => {
            let report = gradcheck_suite(seed)?;
            print!("{}", report.render());
            if !report.all_passed() {
                return Err(Failure::Numeric("gradient check failed".into()));
            }
        }
        Command::Inspect { input, preprocess } => inspect(&input, preprocess)?,
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    let mut ckpt = Checkpoint::load(&a.checkpoint)?;
    if a.ablation {
        ckpt.config = ckpt.config.clone().with_recurrence(false);
    }
    let opts = EvalOptions {
        corrupted: a.corrupted,
        factor: a.factor,
        threshold: a.threshold,
        parallel: !a.serial,
    };
    let report = evaluate(&ckpt, &a.manifest, &opts, a.cache_dir.as_deref())?;
    let tag = a.tag.unwrap_or_else(|| {
        let mode = if a.corrupted { "corrupted" } else { "clean" };
        if a.ablation {
            format!("{mode}_ablation")
        } else {
            mode.to_string()
        }
    });
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::Core(Error::Io {
        path: a.out.clone(),
        source: e,
    }))?;
    let files = write_report(&report, &a.out, &tag)?;
    if let Some(s) = &report.summary {
        println!(
            "{} cases: precision {:.4} recall {:.4} f1 {:.4} dsc {:.4} iou {:.4}",
            s.cases, s.precision, s.recall, s.f1, s.dsc, s.iou
        );
    }
    for (case, why) in &report.skipped {
        println!("skipped {case}: {why}");
    }
    for f in files.iter().take(3) {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn is_metaimage(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("mhd" | "mha"))
}

fn inspect(path: &Path, size: Option<usize>) -> Result<(), Failure> {
    let mut out = String::new();
    let data = if is_metaimage(path) {
        let m = read_metaimage(path)?;
        let _ = writeln!(out, "format metaimage {:?} big_endian {}", m.element_type, m.big_endian);
        let looks_binary = m.values.iter().all(|&v| v == 0.0 || v == 1.0);
        if looks_binary && size.is_none() {
            NativeData::Mask(load_mask(path)?)
        } else {
            NativeData::Volume(load_volume(path)?)
        }
    } else {
        let d = read_native(path)?;
        out.push_str("format native\n");
        d
    };
    match data {
        NativeData::Volume(v) => inspect_volume(&mut out, v, size)?,
        NativeData::Mask(m) => inspect_mask(&mut out, &m),
    }
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let _ = std::io::stdout().lock().write_all(out.as_bytes());
    Ok(())
}

fn inspect_volume(out: &mut String, v: Volume, size: Option<usize>) -> Result<(), Failure> {
    let v = match size {
        Some(s) => preprocess(&v, &PreprocessConfig::with_size(s))?,
        None => v,
    };
    let [s, h, w] = v.dims();
    let _ = writeln!(out, "kind volume\ndims {s} {h} {w}");
    if let Some(sp) = v.spacing {
        let _ = writeln!(out, "spacing {} {} {}", sp[0], sp[1], sp[2]);
    }
    let (lo, hi) = v.range_of_values();
    let mean = v.data().iter().map(|&x| f64::from(x)).sum::<f64>() / v.data().len() as f64;
    let _ = writeln!(out, "min {lo}\nmax {hi}\nmean {mean:.6}");
    Ok(())
}

fn inspect_mask(out: &mut String, m: &MaskVolume) {
    let [s, h, w] = m.dims();
    let fg = m.foreground();
    let _ = writeln!(out, "kind mask\ndims {s} {h} {w}");
    let _ = writeln!(out, "foreground {fg} ({:.6})", fg as f64 / m.data().len() as f64);
    out.push_str("slice,rel_size\n");
    for (t, r) in size_profile(m).iter().enumerate() {
        let _ = writeln!(out, "{t},{r:.6}");
    }
}

fn exit_code(f: &Failure) -> u8 {
    match f {
        Failure::Usage(_) => EXIT_USAGE,
        Failure::Numeric(_) => EXIT_NUMERIC,
        Failure::Core(e) if e.is_numeric() => EXIT_NUMERIC,
        Failure::Core(Error::Config(_)) => EXIT_USAGE,
        Failure::Core(_) => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = match &f {
                Failure::Usage(m) | Failure::Numeric(m) => m.clone(),
                Failure::Core(e) => e.to_string(),
            };
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&f))
        }
    }
}
