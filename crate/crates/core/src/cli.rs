//! Command-line front end. Every subcommand writes its data to files, sends
//! diagnostics to stderr and echoes its arguments as `run-config.json`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fieldopt::{optimize_fields, FieldOptConfig};
use crate::gradcheck::{run_audit, TOLERANCE};
use crate::grid::Shape3;
use crate::loss::{CycleNorm, DEFAULT_WINDOW};
use crate::metrics::{evaluate_pairs, mean_foreground_dice, timed, EvalPair};
use crate::net::{load_checkpoint, UpsampleMode};
use crate::synth::{write_dataset, DatasetConfig, DEFAULT_SPHERES};
use crate::train::{train, AdamConfig, TrainConfig};
use crate::volume::{import_nifti, save_ivr, LabelVolume3, Volume3};
use crate::warp::{nearest_warp, trilinear_warp};

#[derive(Debug, Parser)]
#[command(name = "invreg", version, about = "Inverse-consistent deformable registration of 3D volumes")]
pub struct Cli {
    /// Worker threads; 1 gives the reference serial schedule.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the two-decoder network on every ordered pair of a dataset.
    Train(TrainArgs),
    /// Predict both flows for one pair and warp each image onto the other.
    Register(RegisterArgs),
    /// Dice and BIR reports over a manifest of label pairs.
    Eval(EvalArgs),
    /// Write a synthetic dataset with known deformations.
    Synth(SynthArgs),
    /// Optimize both flows of one pair directly, without a network.
    Fieldopt(FieldOptArgs),
    /// Convert a NIfTI-1 file to IVR.
    Import(ImportArgs),
    /// Finite-difference audit of every analytic gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleArg {
    Nearest,
    Trilinear,
}

impl From<UpsampleArg> for UpsampleMode {
    fn from(u: UpsampleArg) -> Self {
        match u {
            UpsampleArg::Nearest => UpsampleMode::Nearest,
            UpsampleArg::Trilinear => UpsampleMode::Trilinear,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CycleNormArg {
    Mean,
    Sum,
}

impl From<CycleNormArg> for CycleNorm {
    fn from(c: CycleNormArg) -> Self {
        match c {
            CycleNormArg::Mean => CycleNorm::Mean,
            CycleNormArg::Sum => CycleNorm::Sum,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory: `subjects/*_image.ivr`, or image IVR files directly.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    #[arg(long, default_value_t = 1.0)]
    pub cycle_weight: f64,
    #[arg(long, value_enum, default_value_t = CycleNormArg::Mean)]
    pub cycle_norm: CycleNormArg,
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    #[arg(long, default_value_t = 32)]
    pub base_channels: usize,
    #[arg(long, value_enum, default_value_t = UpsampleArg::Nearest)]
    pub upsample: UpsampleArg,
    /// Gradient penalty on both flows (off by default).
    #[arg(long, default_value_t = 0.0)]
    pub smoothness: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train the forward decoder alone, without the round-trip term.
    #[arg(long)]
    pub ablate_backward: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct RegisterArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Source image S.
    #[arg(long)]
    pub moving: PathBuf,
    /// Target image T.
    #[arg(long)]
    pub fixed: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// CSV with header `pair_src,pair_dst,target_labels,warped_labels`;
    /// relative paths resolve against the manifest's directory.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub subjects: usize,
    /// Cube edge length in voxels.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = DEFAULT_SPHERES)]
    pub spheres: usize,
    #[arg(long, default_value_t = 3)]
    pub bumps: usize,
    #[arg(long, default_value_t = 3.0)]
    pub max_displacement: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct FieldOptArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional labels; with both given, Dice before and after is reported.
    #[arg(long, requires = "target_labels")]
    pub source_labels: Option<PathBuf>,
    #[arg(long, requires = "source_labels")]
    pub target_labels: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    #[arg(long, default_value_t = 1.0)]
    pub cycle_weight: f64,
    #[arg(long, default_value_t = 0.0)]
    pub smoothness: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct ImportArgs {
    pub input: PathBuf,
    /// Output path; defaults to the input with an `.ivr` extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Import as a u16 label volume.
    #[arg(long)]
    pub labels: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    /// First seed; consecutive seeds follow.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be >= 1".into()));
        }
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Train(a) => cmd_train(a, cli.threads),
        Command::Register(a) => cmd_register(a, cli.threads),
        Command::Eval(a) => cmd_eval(a, cli.threads),
        Command::Synth(a) => cmd_synth(a, cli.threads),
        Command::Fieldopt(a) => cmd_fieldopt(a, cli.threads),
        Command::Import(a) => cmd_import(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

#[derive(Serialize)]
struct RunConfig<'a, A: Serialize> {
    command: &'a str,
    version: &'a str,
    threads: Option<usize>,
    args: &'a A,
}

fn write_run_config<A: Serialize>(dir: &Path, command: &str, threads: Option<usize>, args: &A) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = RunConfig {
        command,
        version: env!("CARGO_PKG_VERSION"),
        threads,
        args,
    };
    let p = dir.join("run-config.json");
    fs::write(&p, serde_json::to_string_pretty(&cfg)? + "\n").map_err(|e| Error::io(&p, e))
}

/// Image files of a dataset directory in name order.
pub fn dataset_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let subjects = dir.join("subjects");
    let (root, only_images) = if subjects.is_dir() { (subjects, true) } else { (dir.to_path_buf(), false) };
    let entries = fs::read_dir(&root).map_err(|e| Error::io(&root, e))?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(&root, e))?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let keep = if only_images {
            name.ends_with("_image.ivr")
        } else {
            name.ends_with(".ivr") && !name.ends_with("_labels.ivr") && !name.ends_with("_flow.ivr")
        };
        if keep {
            paths.push(p);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!("no image files in {}", root.display())));
    }
    Ok(paths)
}

pub fn cmd_train(a: &TrainArgs, threads: Option<usize>) -> Result<()> {
    let paths = dataset_images(&a.data)?;
    let subjects = paths.iter().map(Volume3::load).collect::<Result<Vec<_>>>()?;
    let cfg = TrainConfig {
        levels: a.levels,
        base_channels: a.base_channels,
        upsample: a.upsample.into(),
        epochs: a.epochs,
        window: a.window,
        cycle_weight: a.cycle_weight,
        cycle_norm: a.cycle_norm.into(),
        smoothness_weight: a.smoothness,
        seed: a.seed,
        ablate_backward: a.ablate_backward,
        adam: AdamConfig {
            learning_rate: a.lr,
            ..AdamConfig::default()
        },
    };
    cfg.validate()?;
    write_run_config(&a.out, "train", threads, a)?;
    eprintln!(
        "training on {} subjects ({} ordered pairs) of shape {}",
        subjects.len(),
        subjects.len() * (subjects.len() - 1),
        subjects[0].shape()
    );
    train(&subjects, &cfg, Some(&a.out), |epoch, rows| {
        let n = rows.len().max(1) as f64;
        let mean = |f: fn(&crate::loss::LossReport) -> f64| rows.iter().map(|r| f(&r.report)).sum::<f64>() / n;
        eprintln!(
            "epoch {epoch}: total {:.6} sim_fwd {:.6} sim_bwd {:.6} cycle {:.6}",
            mean(|r| r.total),
            mean(|r| r.similarity_forward),
            mean(|r| r.similarity_backward),
            mean(|r| r.cycle)
        );
    })?;
    Ok(())
}

pub const REGISTER_OUTPUTS: [&str; 4] = ["flow_st.ivr", "flow_ts.ivr", "warped_moving.ivr", "warped_fixed.ivr"];

pub fn cmd_register(a: &RegisterArgs, threads: Option<usize>) -> Result<()> {
    let (net, _) = load_checkpoint(&a.checkpoint)?;
    let moving = Volume3::load(&a.moving)?;
    let fixed = Volume3::load(&a.fixed)?;
    let (result, elapsed) = timed(|| -> Result<_> {
        let (flow_st, flow_ts, _) = net.forward(&moving, &fixed)?;
        let warped_moving = trilinear_warp(&moving, &flow_st)?;
        let warped_fixed = trilinear_warp(&fixed, &flow_ts)?;
        Ok((flow_st, flow_ts, warped_moving, warped_fixed))
    });
    let (flow_st, flow_ts, warped_moving, warped_fixed) = result?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    flow_st.save(a.out.join(REGISTER_OUTPUTS[0]))?;
    flow_ts.save(a.out.join(REGISTER_OUTPUTS[1]))?;
    warped_moving.save(a.out.join(REGISTER_OUTPUTS[2]))?;
    warped_fixed.save(a.out.join(REGISTER_OUTPUTS[3]))?;
    write_run_config(&a.out, "register", threads, a)?;
    eprintln!("registration time: {:.3} s", elapsed.as_secs_f64());
    Ok(())
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads an eval manifest into label pairs.
pub fn read_manifest(path: &Path) -> Result<Vec<EvalPair>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("pair_src")) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "{} line {}: expected 4 columns, found {}",
                path.display(),
                i + 1,
                cols.len()
            )));
        }
        pairs.push(EvalPair {
            src: cols[0].to_string(),
            dst: cols[1].to_string(),
            target: LabelVolume3::load(resolve(base, cols[2]))?,
            warped: LabelVolume3::load(resolve(base, cols[3]))?,
        });
    }
    Ok(pairs)
}

pub fn cmd_eval(a: &EvalArgs, threads: Option<usize>) -> Result<()> {
    let pairs = read_manifest(&a.manifest)?;
    let report = evaluate_pairs(&pairs)?;
    report.write_csvs(&a.out)?;
    write_run_config(&a.out, "eval", threads, a)?;
    if let Some(b) = report.summary_of("bir") {
        eprintln!("{} pairs: mean BIR {:.4} (std {:.4})", pairs.len(), b.mean, b.std);
    }
    if let Some(d) = report.summary_of("dice") {
        eprintln!("mean Dice {:.4} (std {:.4})", d.mean, d.std);
    }
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs, threads: Option<usize>) -> Result<()> {
    let cfg = DatasetConfig {
        subjects: a.subjects,
        shape: Shape3::cube(a.size),
        spheres: a.spheres,
        bumps: a.bumps,
        max_displacement: a.max_displacement,
        seed: a.seed,
    };
    let subjects = write_dataset(&a.out, &cfg)?;
    write_run_config(&a.out, "synth", threads, a)?;
    let worst = subjects.iter().map(|s| s.flow.max_norm()).fold(0.0, f64::max);
    eprintln!(
        "wrote {} subjects of {} to {} (max displacement {worst:.3})",
        subjects.len(),
        cfg.shape,
        a.out.display()
    );
    Ok(())
}

pub fn cmd_fieldopt(a: &FieldOptArgs, threads: Option<usize>) -> Result<()> {
    let s = Volume3::load(&a.source)?;
    let t = Volume3::load(&a.target)?;
    let cfg = FieldOptConfig {
        lr: a.lr,
        steps: a.steps,
        window: a.window,
        cycle_weight: a.cycle_weight,
        smoothness_weight: a.smoothness,
        seed: a.seed,
        ..FieldOptConfig::default()
    };
    let r = optimize_fields(&s, &t, &cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    r.flow_st.save(a.out.join("flow_st.ivr"))?;
    r.flow_ts.save(a.out.join("flow_ts.ivr"))?;
    let p = a.out.join("trace.csv");
    fs::write(&p, r.trace_csv()).map_err(|e| Error::io(&p, e))?;
    write_run_config(&a.out, "fieldopt", threads, a)?;
    let (first, last) = (&r.trace[0], &r.trace[r.trace.len() - 1]);
    eprintln!("total loss {:.6} -> {:.6} after {} steps", first.total, last.total, cfg.steps);
    if let (Some(sl), Some(tl)) = (&a.source_labels, &a.target_labels) {
        let sl = LabelVolume3::load(sl)?;
        let tl = LabelVolume3::load(tl)?;
        let before = mean_foreground_dice(&tl, &sl)?;
        let after = mean_foreground_dice(&tl, &nearest_warp(&sl, &r.flow_st)?)?;
        eprintln!("mean foreground Dice {before:.4} -> {after:.4}");
    }
    Ok(())
}

pub fn cmd_import(a: &ImportArgs) -> Result<()> {
    let (header, raw) = import_nifti(&a.input, a.labels)?;
    let out = a.out.clone().unwrap_or_else(|| {
        let mut p = a.input.clone();
        if p.extension().is_some_and(|e| e == "gz") {
            p.set_extension("");
        }
        p.with_extension("ivr")
    });
    save_ivr(&out, &header, &raw)?;
    eprintln!("wrote {} ({} {}, {:?})", out.display(), header.shape, header.channels, header.intent);
    Ok(())
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    if a.seeds == 0 {
        return Err(Error::InvalidArgument("--seeds must be >= 1".into()));
    }
    let seeds: Vec<u64> = (0..a.seeds).map(|k| a.seed.wrapping_add(k)).collect();
    let report = run_audit(&seeds)?;
    for r in &report.results {
        eprintln!("{r}");
    }
    eprintln!("worst relative error {:.3e} (tolerance {TOLERANCE:e})", report.worst());
    if report.passed() {
        Ok(())
    } else {
        Err(Error::InvalidArgument("gradient audit failed".into()))
    }
}
