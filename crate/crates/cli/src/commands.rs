use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use handrift_core::bundle::ModelBundle;
use handrift_core::config::parse_train_config;
use handrift_core::denoiser::{Denoiser, DenoiserRegistry};
use handrift_core::hand::HandModel;
use handrift_core::metrics::{evaluate_sequence, kinematics, EvalOptions, EvalReport};
use handrift_core::physics::{annotate_states, AnnotatorConfig, MotionState, ObjectTrack, StateTrack};
use handrift_core::pipeline::{Refiner, Respaced};
use handrift_core::trainer::{train, Ablation, EpochRecord, TrainConfig, TrainItem};
use handrift_core::CoreError;
use handrift_tensor::RngStream;

use crate::corpus::{self, CorpusSpec};
use crate::motion_file::MotionFile;
use crate::plots::{line_chart, Series};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    /// Bad arguments, missing or malformed inputs.
    Usage = 1,
    TrainingDiverged = 2,
    /// Checkpoint unreadable by this build or trained under another normalization.
    Incompatible = 3,
}

#[derive(Debug)]
pub struct Failure {
    pub code: ExitCode,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: ExitCode::Usage,
            message: message.into(),
        }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        let code = match e {
            CoreError::TrainingDiverged { .. } => ExitCode::TrainingDiverged,
            CoreError::NormalizationMismatch { .. } => ExitCode::Incompatible,
            _ => ExitCode::Usage,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::usage(e.to_string())
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

type CmdResult = std::result::Result<(), Failure>;

#[derive(Debug, Parser)]
#[command(name = "handrift", version, about = "Refine noisy hand motion with a physics-aware diffusion model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic corpus of interactions.
    Generate(GenerateArgs),
    /// Label motion states from contact and hand-object distance.
    Annotate(AnnotateArgs),
    /// Train a denoiser on a corpus.
    Train(TrainArgs),
    /// Refine a motion file with a trained checkpoint.
    Refine(RefineArgs),
    /// Score predictions against ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Corpus spec (TOML, or JSON by extension); defaults when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    /// Motion file or directory of motion files carrying object tracks.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Destination file or directory; the input is rewritten when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Accepted for uniformity; annotation draws no random numbers.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// TOML configuration over a preset; the desk preset when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Named ablation variant replacing the configured flags.
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// JSON-lines training log; `<out>.log.jsonl` by default.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Sample the reverse chain instead of following its means.
    #[arg(long)]
    pub stochastic: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run a respaced chain of this many steps.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted motion file or directory.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth motion file or directory, paired with `--pred` by file name.
    #[arg(long)]
    pub gt: PathBuf,
    /// Checkpoint whose normalization and hand model the predictions must match.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Directory for SVG plots per sequence.
    #[arg(long)]
    pub plots: Option<PathBuf>,
    /// Absolute rather than wrist-relative MJE and ACCL.
    #[arg(long)]
    pub absolute: bool,
    /// Rigid rather than similarity alignment for the aligned metrics.
    #[arg(long)]
    pub rigid: bool,
    /// Accepted for uniformity; evaluation draws no random numbers.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Annotate(a) => annotate(a),
        Command::Train(a) => train_cmd(a),
        Command::Refine(a) => refine(a),
        Command::Evaluate(a) => evaluate(a),
    }
}

fn generate(a: GenerateArgs) -> CmdResult {
    let spec = match &a.spec {
        Some(p) if !p.is_file() => return Err(Failure::usage(format!("spec not found: {}", p.display()))),
        Some(p) => CorpusSpec::load(p)?,
        None => CorpusSpec::default(),
    };
    let manifest = corpus::generate(&spec, &a.out, a.count, a.seed)
        .map_err(|e| Failure::usage(format!("cannot write corpus to {}: {e}", a.out.display())))?;
    println!("wrote {} sequences of {} frames to {}", manifest.entries.len(), spec.frames, a.out.display());
    Ok(())
}

/// Creates the directory an output file goes into.
fn make_parent(path: &Path) -> std::result::Result<(), Failure> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir)
            .map_err(|e| Failure::usage(format!("cannot create {}: {e}", dir.display()))),
        _ => Ok(()),
    }
}

/// Loads a checkpoint; anything but a missing file is an incompatibility.
fn load_bundle(path: &Path) -> std::result::Result<ModelBundle, Failure> {
    if !path.is_file() {
        return Err(Failure::usage(format!("checkpoint not found: {}", path.display())));
    }
    ModelBundle::load(path).map_err(|e| Failure {
        code: ExitCode::Incompatible,
        message: format!("incompatible checkpoint {}: {e}", path.display()),
    })
}

fn object_track(file: &MotionFile, name: &str) -> std::result::Result<ObjectTrack, Failure> {
    let center = file
        .object_center
        .clone()
        .ok_or_else(|| Failure::usage(format!("{name}: no object track to annotate from")))?;
    Ok(ObjectTrack {
        center,
        contact_threshold: AnnotatorConfig::default().contact_threshold,
    })
}

fn annotate_file(file: &MotionFile, name: &str, model: &HandModel) -> std::result::Result<StateTrack, Failure> {
    let obj = object_track(file, name)?;
    Ok(annotate_states(&file.motion, &obj, model, &AnnotatorConfig::default())?)
}

fn annotate(a: AnnotateArgs) -> CmdResult {
    let model = HandModel::default();
    let jobs: Vec<(PathBuf, PathBuf)> = if a.input.is_dir() {
        let out = a.out.clone().unwrap_or_else(|| a.input.clone());
        std::fs::create_dir_all(&out)?;
        corpus::motion_files(&a.input)?
            .into_iter()
            .map(|p| {
                let dst = out.join(p.file_name().expect("listed files have names"));
                (p, dst)
            })
            .collect()
    } else if a.input.is_file() {
        let out = a.out.clone().unwrap_or_else(|| a.input.clone());
        make_parent(&out)?;
        vec![(a.input.clone(), out)]
    } else {
        return Err(Failure::usage(format!("input not found: {}", a.input.display())));
    };
    let results = jobs
        .par_iter()
        .map(|(src, dst)| {
            let mut file = MotionFile::load(src)?;
            let track = annotate_file(&file, &corpus::stem(src), &model)?;
            let agree = file
                .states
                .as_ref()
                .map(|old| old.iter().zip(&track.labels).filter(|(a, b)| a == b).count());
            file.states = Some(track.labels);
            file.contact = Some(track.contact);
            file.save(dst)?;
            Ok((file.len(), agree))
        })
        .collect::<std::result::Result<Vec<_>, Failure>>()?;
    let frames: usize = results.iter().map(|r| r.0).sum();
    println!("annotated {} files, {frames} frames", results.len());
    let prior: Vec<_> = results.iter().filter_map(|r| r.1.map(|n| (n, r.0))).collect();
    if !prior.is_empty() {
        let (same, total) = prior.iter().fold((0, 0), |(a, b), (n, t)| (a + n, b + t));
        println!("agreement with previous labels: {:.2}% of {total} frames", 100.0 * same as f64 / total as f64);
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> std::result::Result<TrainConfig, Failure> {
    match path {
        None => Ok(TrainConfig::desk()),
        Some(p) if !p.is_file() => Err(Failure::usage(format!("config not found: {}", p.display()))),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            parse_train_config(&text).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))
        }
    }
}

fn epoch_row(r: &EpochRecord, header: bool) -> String {
    let mut out = String::new();
    if header {
        let _ = write!(out, "{:>5} {:>9} {:>11}", "epoch", "lr", "total");
        for k in r.loss.terms.keys() {
            let _ = write!(out, " {k:>11}");
        }
        let _ = write!(out, " {:>11} {:>8} {:>8} {:>7} {:>7}", "ema", "mje", "accl", "kin", "sta");
        out.push('\n');
    }
    let _ = write!(out, "{:>5} {:>9.2e} {:>11.4}", r.epoch, r.lr, r.loss.total);
    for v in r.loss.terms.values() {
        let _ = write!(out, " {v:>11.4}");
    }
    let _ = write!(out, " {:>11.4}", r.loss_ema);
    match &r.eval {
        Some(e) => {
            let _ = write!(out, " {:>8.3} {:>8.3} {:>7.3} {:>7.3}", e.mje, e.accl, e.kin, e.sta);
        }
        None => {
            let _ = write!(out, " {:>8} {:>8} {:>7} {:>7}", "-", "-", "-", "-");
        }
    }
    out
}

fn train_cmd(a: TrainArgs) -> CmdResult {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(name) = &a.ablation {
        cfg.ablation = Ablation::named(name)?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;

    let manifest = corpus::load_manifest(&a.corpus)?;
    let model = Arc::new(HandModel::new(manifest.map(|m| m.spec.hand).unwrap_or_default())?);
    let items = corpus::load(&a.corpus)?
        .into_iter()
        .map(|c| {
            let labels = c
                .clean
                .states
                .clone()
                .ok_or_else(|| Failure::usage(format!("{}: no state labels; run `annotate` first", c.name)))?;
            Ok(TrainItem {
                name: c.name,
                motion: c.clean.motion,
                labels,
                observation: c.observation.map(|o| o.motion),
            })
        })
        .collect::<std::result::Result<Vec<_>, Failure>>()?;
    if items.is_empty() {
        return Err(Failure::usage(format!("corpus {} has no sequences", a.corpus.display())));
    }
    let hold = if cfg.eval_sequences > 0 && items.len() > cfg.eval_sequences { cfg.eval_sequences } else { 0 };
    let (train_items, holdout) = items.split_at(items.len() - hold);

    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("log.jsonl"));
    make_parent(&a.out)?;
    make_parent(&log_path)?;
    let mut log = std::fs::File::create(&log_path)
        .map_err(|e| Failure::usage(format!("cannot write log {}: {e}", log_path.display())))?;
    println!(
        "training {} on {} sequences ({} held out), {} epochs",
        cfg.ablation.label(),
        train_items.len(),
        holdout.len(),
        cfg.epochs
    );
    let mut first = true;
    let mut log_error = None;
    let run = train(train_items, holdout, &cfg, model, &mut |r| {
        println!("{}", epoch_row(r, first));
        first = false;
        let line = serde_json::to_string(r).map(|s| s + "\n");
        if let Err(e) = line.map_err(std::io::Error::other).and_then(|l| log.write_all(l.as_bytes())) {
            log_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_error {
        return Err(Failure::usage(format!("cannot write log {}: {e}", log_path.display())));
    }
    let mut bundle = run.bundle;
    if let Some(name) = &a.ablation {
        bundle.meta.ablation = name.clone();
    }
    bundle.save(&a.out)?;
    match run.diverged {
        Some((epoch, detail)) => Err(Failure {
            code: ExitCode::TrainingDiverged,
            message: format!(
                "training diverged at epoch {epoch}: {detail}; kept the checkpoint after epoch {} in {}",
                bundle.meta.epochs_completed,
                a.out.display()
            ),
        }),
        None => {
            println!("saved {}", a.out.display());
            Ok(())
        }
    }
}

fn refine(a: RefineArgs) -> CmdResult {
    let bundle = load_bundle(&a.ckpt)?;
    if !a.input.is_file() {
        return Err(Failure::usage(format!("input not found: {}", a.input.display())));
    }
    let input = MotionFile::load(&a.input)?;
    bundle.check_normalization(input.normalization_id.as_deref())?;
    let model = bundle.hand_model()?;
    let denoiser = bundle.build_denoiser(&DenoiserRegistry::builtin(), &model)?;
    let base = bundle.refiner(denoiser.as_ref())?;
    let respaced = match a.steps {
        Some(k) => Some(Respaced::new(denoiser.as_ref(), &base.schedule, k)?),
        None => None,
    };
    let refiner = match &respaced {
        Some(r) => Refiner {
            denoiser: r as &dyn Denoiser,
            schedule: r.schedule().clone(),
            ..base
        },
        None => base,
    };
    let mut rng = RngStream::derive(a.seed, "refine", &[]);
    let out = refiner.refine(&input.motion, &mut rng, !a.stochastic)?;
    let has_states = !out.states.is_empty();
    let result = MotionFile {
        frame_rate: input.frame_rate,
        normalization_id: Some(bundle.meta.normalization_id.clone()),
        contact: has_states.then(|| out.states.iter().map(|s| s.in_contact()).collect()),
        states: has_states.then_some(out.states),
        object_center: input.object_center,
        motion: out.motion,
    };
    make_parent(&a.out)?;
    result.save(&a.out)?;
    println!("refined {} frames into {}", result.len(), a.out.display());
    Ok(())
}

/// Pairs prediction and ground-truth files by name.
fn pair_inputs(pred: &Path, gt: &Path) -> std::result::Result<Vec<(String, PathBuf, PathBuf)>, Failure> {
    for p in [pred, gt] {
        if !p.exists() {
            return Err(Failure::usage(format!("not found: {}", p.display())));
        }
    }
    match (pred.is_dir(), gt.is_dir()) {
        (false, false) => Ok(vec![(corpus::stem(pred), pred.to_path_buf(), gt.to_path_buf())]),
        (true, true) => {
            let index = |d: &Path| -> std::result::Result<BTreeMap<String, PathBuf>, Failure> {
                Ok(corpus::motion_files(d)?.into_iter().map(|p| (corpus::stem(&p), p)).collect())
            };
            let (mut p, g) = (index(pred)?, index(gt)?);
            let only_pred: Vec<&String> = p.keys().filter(|k| !g.contains_key(*k)).collect();
            let only_gt: Vec<&String> = g.keys().filter(|k| !p.contains_key(*k)).collect();
            if !only_pred.is_empty() || !only_gt.is_empty() {
                return Err(Failure::usage(format!(
                    "unmatched sequences: prediction only {only_pred:?}, ground truth only {only_gt:?}"
                )));
            }
            Ok(g.into_iter().map(|(k, gp)| (k.clone(), p.remove(&k).expect("matched"), gp)).collect())
        }
        _ => Err(Failure::usage("--pred and --gt must both be files or both be directories")),
    }
}

struct Pair {
    name: String,
    pred: MotionFile,
    gt: MotionFile,
    labels: Vec<MotionState>,
}

fn per_frame_error(model: &HandModel, pair: &Pair, root_relative: bool) -> std::result::Result<Vec<f64>, Failure> {
    let (pj, _) = kinematics(model, &pair.pred.motion)?;
    let (gj, _) = kinematics(model, &pair.gt.motion)?;
    Ok(pj
        .iter()
        .zip(&gj)
        .map(|(p, g)| {
            let (po, go) = if root_relative { (p[0], g[0]) } else { ([0.0; 3], [0.0; 3]) };
            let sum: f64 = p
                .iter()
                .zip(g)
                .map(|(a, b)| (0..3).map(|k| ((a[k] - po[k]) - (b[k] - go[k])).powi(2)).sum::<f64>().sqrt())
                .sum();
            sum / p.len() as f64
        })
        .collect())
}

fn write_plots(dir: &Path, model: &HandModel, pair: &Pair, opts: &EvalOptions) -> CmdResult {
    let err = per_frame_error(model, pair, opts.root_relative)?;
    std::fs::write(
        dir.join(format!("{}_error.svg", pair.name)),
        line_chart(&format!("{}: joint error", pair.name), "mm", &[Series { label: "mean joint error", values: &err, steps: false }]),
    )?;
    let index = |s: &[MotionState]| s.iter().map(|s| s.index() as f64).collect::<Vec<_>>();
    let gt_states = index(&pair.labels);
    let pred_states = pair.pred.states.as_deref().map(index);
    let mut series = vec![Series { label: "ground truth", values: &gt_states, steps: true }];
    if let Some(p) = &pred_states {
        series.push(Series { label: "predicted", values: p, steps: true });
    }
    std::fs::write(
        dir.join(format!("{}_states.svg", pair.name)),
        line_chart(&format!("{}: states (0 free, 1 reach, 2 grasp, 3 manipulate, 4 release)", pair.name), "state", &series),
    )?;
    if pair.gt.object_center.is_some() {
        let gt_d = annotate_file(&pair.gt, &pair.name, model)?.dist;
        let obj = object_track(&pair.gt, &pair.name)?;
        let pred_d = annotate_states(&pair.pred.motion, &obj, model, &AnnotatorConfig::default())?.dist;
        std::fs::write(
            dir.join(format!("{}_distance.svg", pair.name)),
            line_chart(
                &format!("{}: hand-object distance d(t)", pair.name),
                "mm",
                &[
                    Series { label: "ground truth", values: &gt_d, steps: false },
                    Series { label: "predicted", values: &pred_d, steps: false },
                ],
            ),
        )?;
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> CmdResult {
    let pairs = pair_inputs(&a.pred, &a.gt)?;
    let bundle = a.ckpt.as_deref().map(load_bundle).transpose()?;
    let model = match &bundle {
        Some(b) => b.hand_model()?,
        None => Arc::new(HandModel::default()),
    };
    let opts = EvalOptions {
        root_relative: !a.absolute,
        with_scale: !a.rigid,
    };
    let loaded = pairs
        .par_iter()
        .map(|(name, p, g)| {
            let pred = MotionFile::load(p)?;
            let gt = MotionFile::load(g)?;
            if let Some(b) = &bundle {
                b.check_normalization(pred.normalization_id.as_deref())?;
            }
            let labels = match &gt.states {
                Some(s) => s.clone(),
                None => annotate_file(&gt, name, &model)?.labels,
            };
            Ok(Pair { name: name.clone(), pred, gt, labels })
        })
        .collect::<std::result::Result<Vec<_>, Failure>>()?;
    let rows = loaded
        .par_iter()
        .map(|p| Ok(evaluate_sequence(&p.name, &p.pred.motion, &p.gt.motion, &p.labels, &model, &opts)?))
        .collect::<std::result::Result<Vec<_>, Failure>>()?;
    let report = EvalReport::from_rows(rows);
    print!("{}", report.table());
    if let Some(path) = &a.report {
        let mut text = serde_json::to_string_pretty(&report).map_err(|e| Failure::usage(e.to_string()))?;
        text.push('\n');
        make_parent(path)?;
        std::fs::write(path, text)?;
    }
    if let Some(dir) = &a.plots {
        std::fs::create_dir_all(dir)?;
        loaded.par_iter().map(|p| write_plots(dir, &model, p, &opts)).collect::<CmdResult>()?;
    }
    Ok(())
}
