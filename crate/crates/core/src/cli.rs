//! Command-line front end. [`run`] parses `argv` and returns the process exit
//! code: 0 on success, 1 on usage or validation errors, 2 on I/O errors.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bench::{run_bench, write_csv, BenchCase};
use crate::error::{Error, Result};
use crate::fusion::KernelMode;
use crate::gradcheck;
use crate::metrics::{evaluate_with_classifier, MetricsReport};
use crate::model::{
    evaluate_next_frame, export_frames, load_classifier, load_model, rollout, save_classifier, save_model, Classifier,
    ClassifierConfig, ModelConfig, NextFrameReport, RolloutOptions, TrainConfig, Trainer,
};
use crate::rng::{split_seed, SeededRng};
use crate::synth::{gen_dataset, manifest_path, read_clips, write_clips, ClipSpec, Dataset, VideoClip};

#[derive(Debug, Parser)]
#[command(name = "twostream", version, about = "Two-stream video generation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON configuration file; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic action dataset and its manifest.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        clips_per_class: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        channels: Option<usize>,
    },
    /// Train the video model, or the evaluation classifier with --classifier.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        classifier: bool,
        /// Print a progress line every this many iterations (0 = quiet).
        #[arg(long, default_value_t = 100)]
        log_every: usize,
    },
    /// Sample clips from a trained model.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Class of every clip; cycles through all classes when omitted.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        heatup: Option<usize>,
    },
    /// Score a model, a classifier, or sampled clips.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        classifier: Option<PathBuf>,
        /// Clips to score with the classifier.
        #[arg(long)]
        clips: Option<PathBuf>,
        /// Rollouts to draw from --model for the entropy metrics.
        #[arg(long, default_value_t = 0)]
        samples: usize,
    },
    /// Finite-difference check of analytic gradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Operation name, `model`, or `all`.
        #[arg(long, default_value = "all")]
        op: String,
    },
    /// Time dense and separable fusion after an oracle check.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "dense,separable")]
        modes: Vec<KernelMode>,
        #[arg(long, value_delimiter = ',', default_value = "5,17")]
        n: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        scales: usize,
        #[arg(long, default_value_t = 8)]
        width: usize,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        /// Also time the per-scale parallel path.
        #[arg(long)]
        parallel: bool,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write the frames of one clip as PGM/PPM images.
    ExportFrames {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        clips: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value = "frame")]
        prefix: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenDataConfig {
    pub classes: usize,
    pub clips_per_class: usize,
    pub seed: u64,
    pub clip: ClipSpec,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        GenDataConfig {
            classes: 4,
            clips_per_class: 50,
            seed: 7,
            clip: ClipSpec::default(),
        }
    }
}

/// `train --config` file for the video model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainFile {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub next_frame: Option<NextFrameReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classifier_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub real: Option<MetricsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated: Option<MetricsReport>,
}

fn read_config<C: DeserializeOwned + Default>(path: Option<&Path>) -> Result<C> {
    match path {
        None => Ok(C::default()),
        Some(p) => serde_json::from_slice(&at(p, std::fs::read(p).map_err(Error::from))?)
            .map_err(|e| Error::Format(format!("{}: {e}", p.display()))),
    }
}

/// Prefix bare I/O errors with the path involved.
fn at<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn required<'a>(out: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    out.as_deref()
        .ok_or_else(|| Error::Invalid(format!("{what} needs --out")))
}

/// Clips from an SMV1 file, with dataset metadata when a manifest exists.
pub fn load_clips(path: &Path) -> Result<Vec<VideoClip>> {
    if manifest_path(path).exists() {
        return Ok(Dataset::load(path)?.clips);
    }
    read_clips(path)?
        .1
        .into_iter()
        .map(|(action, seed, frames)| VideoClip::generated(frames, action, seed))
        .collect()
}

fn write_json(out: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => writeln!(std::io::stdout().lock(), "{text}")?,
    }
    Ok(())
}

fn gen_data(common: &Common, overrides: [Option<usize>; 5]) -> Result<()> {
    let mut cfg: GenDataConfig = read_config(common.config.as_deref())?;
    let [classes, per_class, frames, size, channels] = overrides;
    cfg.classes = classes.unwrap_or(cfg.classes);
    cfg.clips_per_class = per_class.unwrap_or(cfg.clips_per_class);
    cfg.clip.frames = frames.unwrap_or(cfg.clip.frames);
    cfg.clip.size = size.unwrap_or(cfg.clip.size);
    cfg.clip.channels = channels.unwrap_or(cfg.clip.channels);
    cfg.seed = common.seed.unwrap_or(cfg.seed);
    let out = required(&common.out, "gen-data")?;
    let m = gen_dataset(cfg.classes, cfg.clips_per_class, cfg.seed, &cfg.clip, out)?;
    println!(
        "wrote {} clips ({} train, {} test) to {}",
        m.clips.len(),
        m.split.train.len(),
        m.split.test.len(),
        out.display()
    );
    Ok(())
}

fn train(common: &Common, data: &Path, iterations: Option<usize>, classifier: bool, log_every: usize) -> Result<()> {
    let out = required(&common.out, "train")?;
    let ds = at(data, Dataset::load(data))?;
    if classifier {
        let mut cfg: ClassifierConfig = read_config(common.config.as_deref())?;
        cfg.classes = ds.classes();
        cfg.image_size = ds.spec.size;
        cfg.channels = ds.spec.channels;
        cfg.iterations = iterations.unwrap_or(cfg.iterations);
        cfg.seed = common.seed.unwrap_or(cfg.seed);
        let mut c = Classifier::new(cfg)?;
        let losses = c.train(&ds.train())?;
        if log_every > 0 {
            for (i, l) in losses.iter().enumerate().filter(|(i, _)| i % log_every == 0) {
                eprintln!("{i:6} loss {l:.4}");
            }
        }
        println!("held-out accuracy {:.4}", c.accuracy(&ds.test())?);
        return save_classifier(out, &c);
    }
    let mut file: TrainFile = read_config(common.config.as_deref())?;
    file.model.classes = ds.classes();
    file.model.image_size = ds.spec.size;
    file.model.channels = ds.spec.channels;
    file.train.iterations = iterations.unwrap_or(file.train.iterations);
    file.train.seed = common.seed.unwrap_or(file.train.seed);
    let mut trainer = Trainer::new(file.model, file.train)?;
    trainer.run(&ds.train(), |r| {
        if log_every > 0 && r.iter % log_every == 0 {
            eprintln!(
                "{:6} {:?} total {:.4} recon {:.5} video {:.5} consistency {:.5}",
                r.iter, r.phase, r.total, r.recon, r.video_recon, r.consistency
            );
        }
    })?;
    save_model(out, trainer.bundle())
}

fn rollout_cmd(
    common: &Common,
    model: &Path,
    class: Option<usize>,
    count: usize,
    frames: Option<usize>,
    heatup: Option<usize>,
) -> Result<()> {
    let out = required(&common.out, "rollout")?;
    let bundle = at(model, load_model(model))?;
    let mut opts: RolloutOptions = read_config(common.config.as_deref())?;
    opts.frames = frames.unwrap_or(opts.frames);
    opts.heatup = heatup.unwrap_or(opts.heatup);
    let clips = sample(&bundle, class, count, common.seed.unwrap_or(0), &opts)?;
    let spec = bundle.config().clip_spec(opts.frames);
    write_clips(out, &spec, &clips)?;
    println!("wrote {} clips to {}", clips.len(), out.display());
    Ok(())
}

/// `count` rollouts; clip `i` uses seed `split_seed(seed, i)` and class
/// `class` or `i mod K`.
pub fn sample(
    bundle: &crate::model::ModelBundle<f32>,
    class: Option<usize>,
    count: usize,
    seed: u64,
    opts: &RolloutOptions,
) -> Result<Vec<VideoClip>> {
    let k = bundle.config().classes;
    (0..count)
        .map(|i| {
            let label = class.unwrap_or(i % k);
            rollout(bundle, label, &mut SeededRng::new(split_seed(seed, i as u64)), opts)
        })
        .collect()
}

fn eval(
    common: &Common,
    data: Option<&Path>,
    model: Option<&Path>,
    classifier: Option<&Path>,
    clips: Option<&Path>,
    samples: usize,
) -> Result<()> {
    let ds = data.map(|p| at(p, Dataset::load(p))).transpose()?;
    let bundle = model.map(|p| at(p, load_model(p))).transpose()?;
    let cls = classifier.map(|p| at(p, load_classifier(p))).transpose()?;
    let mut report = EvalReport {
        next_frame: None,
        classifier_accuracy: None,
        real: None,
        generated: None,
    };
    if let (Some(ds), Some(b)) = (&ds, &bundle) {
        report.next_frame = Some(evaluate_next_frame(b, &ds.test())?);
    }
    if let Some(c) = &cls {
        if let Some(ds) = &ds {
            let test: Vec<VideoClip> = ds.test().into_iter().cloned().collect();
            report.classifier_accuracy = Some(c.accuracy(&ds.test())?);
            report.real = Some(evaluate_with_classifier(&test, c)?);
        }
        let mut generated = match clips {
            Some(p) => at(p, load_clips(p))?,
            None => Vec::new(),
        };
        if let (Some(b), true) = (&bundle, samples > 0) {
            let opts = RolloutOptions {
                frames: dataset_frames(ds.as_ref()),
                ..RolloutOptions::default()
            };
            generated.extend(sample(b, None, samples, common.seed.unwrap_or(0), &opts)?);
        }
        if !generated.is_empty() {
            report.generated = Some(evaluate_with_classifier(&generated, c)?);
        }
    }
    if report.next_frame.is_none() && report.real.is_none() && report.generated.is_none() {
        return Err(Error::invalid(
            "nothing to evaluate: pass --data with --model and/or --classifier, or --classifier with --clips",
        ));
    }
    write_json(common.out.as_deref(), &report)
}

fn dataset_frames(ds: Option<&Dataset>) -> usize {
    ds.map_or(RolloutOptions::default().frames, |d| d.spec.frames)
}

fn gradcheck_cmd(common: &Common, op: &str) -> Result<()> {
    let seed = common.seed.unwrap_or(1);
    let reports = if op == "all" {
        let mut r = gradcheck::check_all(seed)?;
        r.push(gradcheck::check_model(seed, 200)?);
        r
    } else {
        vec![gradcheck::check_op(op, seed)?]
    };
    let mut failed = Vec::new();
    for r in &reports {
        let tol = if r.op == "model" { 1e-3 } else { 1e-4 };
        let ok = r.max_rel_err < tol;
        println!(
            "{:<20} cases {:3}  max rel err {:.3e}  {}{}",
            r.op,
            r.cases,
            r.max_rel_err,
            if ok { "ok" } else { "FAIL" },
            if r.skipped > 0 {
                format!("  ({} kinks skipped)", r.skipped)
            } else {
                String::new()
            }
        );
        if !ok {
            failed.push(r.op.clone());
        }
    }
    if let Some(out) = &common.out {
        write_json(Some(out), &reports)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}

#[allow(clippy::too_many_arguments)]
fn bench_cmd(
    common: &Common,
    modes: &[KernelMode],
    ns: &[usize],
    size: usize,
    scales: usize,
    width: usize,
    repetitions: usize,
    warmup: usize,
    parallel: bool,
    csv: Option<&Path>,
) -> Result<()> {
    let cases: Vec<BenchCase> = match &common.config {
        Some(p) => read_config::<Vec<BenchCase>>(Some(p))?,
        None => {
            let mut cases = Vec::new();
            for &mode in modes {
                for &n in ns {
                    let base = BenchCase::new(mode, n, size, scales)?;
                    cases.push(BenchCase {
                        width,
                        repetitions,
                        warmup,
                        parallel,
                        ..base
                    });
                }
            }
            cases
        }
    };
    for c in &cases {
        c.validate()?;
    }
    let results = run_bench(&cases, common.seed.unwrap_or(0))?;
    match csv {
        Some(p) => {
            write_csv(BufWriter::new(File::create(p)?), &results)?;
            let rows: usize = results.iter().map(|r| r.csv_rows().len()).sum();
            println!("wrote {rows} rows to {}", p.display());
        }
        None => write_csv(std::io::stdout().lock(), &results)?,
    }
    if let Some(out) = &common.out {
        write_json(Some(out), &results)?;
    }
    let bad: Vec<String> = results.iter().filter(|r| !r.passed()).map(|r| r.case.name()).collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "oracle residual above tolerance for {}",
            bad.join(", ")
        )))
    }
}

fn export_cmd(common: &Common, clips: &Path, index: usize, prefix: &str) -> Result<()> {
    let out = required(&common.out, "export-frames")?;
    let all = at(clips, load_clips(clips))?;
    let clip = all.get(index).ok_or(Error::OutOfRange {
        op: "clip index",
        index,
        limit: all.len(),
    })?;
    let paths = export_frames(clip, out, prefix)?;
    println!("wrote {} frames to {}", paths.len(), out.display());
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            common,
            classes,
            clips_per_class,
            frames,
            size,
            channels,
        } => gen_data(&common, [classes, clips_per_class, frames, size, channels]),
        Command::Train {
            common,
            data,
            iterations,
            classifier,
            log_every,
        } => train(&common, &data, iterations, classifier, log_every),
        Command::Rollout {
            common,
            model,
            class,
            count,
            frames,
            heatup,
        } => rollout_cmd(&common, &model, class, count, frames, heatup),
        Command::Eval {
            common,
            data,
            model,
            classifier,
            clips,
            samples,
        } => eval(
            &common,
            data.as_deref(),
            model.as_deref(),
            classifier.as_deref(),
            clips.as_deref(),
            samples,
        ),
        Command::Gradcheck { common, op } => gradcheck_cmd(&common, &op),
        Command::Bench {
            common,
            modes,
            n,
            size,
            scales,
            width,
            repetitions,
            warmup,
            parallel,
            csv,
        } => bench_cmd(
            &common,
            &modes,
            &n,
            size,
            scales,
            width,
            repetitions,
            warmup,
            parallel,
            csv.as_deref(),
        ),
        Command::ExportFrames {
            common,
            clips,
            index,
            prefix,
        } => export_cmd(&common, &clips, index, &prefix),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_io() {
        2
    } else {
        1
    }
}

/// Parse and run; errors go to stderr.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
