#![allow(clippy::result_large_err)]

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use neuropipe::error::{Error, Result};
use neuropipe::geometry::{compose, GridSpec, RigidTransform};
use neuropipe::masking::{apply_mask, derive_regions, extract_mask, BinaryMask, LabelTable, LabelVolume};
use neuropipe::metrics::{evaluate_segmentation, EvaluationRecord};
use neuropipe::nifti::{read_volume, write_volume_auto};
use neuropipe::pipeline::{self, PipelineConfig};
use neuropipe::registration::{register_rigid, Metric, RegistrationConfig};
use neuropipe::resample::{resample, InterpolationKind};

#[derive(Parser)]
#[command(name = "neuropipe", version, about = "Brain MRI preprocessing and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rigidly register a moving image to a fixed image.
    Register(RegisterArgs),
    /// Resample an image onto a grid through a rigid transform.
    Resample(ResampleArgs),
    /// Compose two transforms (FIRST is applied first).
    Compose {
        first: PathBuf,
        second: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Zero an image outside a mask.
    ApplyMask {
        input: PathBuf,
        mask: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        background: f64,
    },
    /// Mask of voxels whose absolute value exceeds a threshold.
    ExtractMask {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
    },
    /// Write WT, TC and AT masks of a label map.
    DeriveRegions {
        seg: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Score a predicted label map against ground truth.
    Evaluate(EvaluateArgs),
    /// Pearson and PSNR of an image against a reference over the reference's nonzero voxels.
    ValidateAlignment { image: PathBuf, reference: PathBuf },
    /// Run the full pipeline described by a config file.
    Run {
        config: PathBuf,
        /// Re-run stages whose artifacts already exist.
        #[arg(long)]
        force: bool,
        /// Report directory (default: <output_dir>/report).
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
    /// Rebuild summary files from evaluation CSVs.
    Report {
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RegisterArgs {
    fixed: PathBuf,
    moving: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    /// TOML file with registration settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    metric: Option<Metric>,
    /// Comma-separated pyramid factors, e.g. 4,2,1.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the moving image resampled onto the fixed grid.
    #[arg(long)]
    resampled: Option<PathBuf>,
}

#[derive(Args)]
struct ResampleArgs {
    input: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    /// Transform file; identity when omitted.
    #[arg(short, long)]
    transform: Option<PathBuf>,
    /// Image whose grid is the target.
    #[arg(long, conflicts_with = "grid")]
    like: Option<PathBuf>,
    /// TOML grid description (dims, spacing, origin, direction).
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, default_value = "trilinear")]
    interp: InterpolationKind,
    #[arg(long, default_value_t = 0.0)]
    background: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    pred: PathBuf,
    truth: PathBuf,
    /// Only voxels inside this mask are scored.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value = "subject")]
    subject: String,
    #[arg(long, default_value = "none")]
    method: String,
    #[arg(long, default_value_t = 0.0)]
    wall_time: f64,
    /// Preprocessed image and its reference, for the alignment columns.
    #[arg(long, requires = "reference")]
    image: Option<PathBuf>,
    #[arg(long, requires = "image")]
    reference: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Append a row to this CSV (header written when the file is new).
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::IoPath { path: path.into(), source: e })?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn labels(path: &Option<PathBuf>) -> Result<LabelTable> {
    path.as_deref().map_or(Ok(LabelTable::default()), read_toml)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v).map_err(|e| Error::Report(e.to_string()))?);
    Ok(())
}

fn register(a: RegisterArgs) -> Result<()> {
    let mut cfg: RegistrationConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => RegistrationConfig::default(),
    };
    if let Some(m) = a.metric {
        cfg.metric = m;
    }
    if let Some(l) = a.levels {
        cfg.pyramid_levels = l;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let fixed = read_volume(&a.fixed)?;
    let moving = read_volume(&a.moving)?;
    let r = register_rigid(&fixed, &moving, &cfg)?;
    r.transform.write(&a.out)?;
    if let Some(p) = a.resampled {
        let grid = GridSpec::from_geometry(fixed.geometry())?;
        write_volume_auto(&resample(&moving, &r.transform, &grid, InterpolationKind::Trilinear, 0.0)?, p)?;
    }
    print_json(&serde_json::json!({
        "metric": cfg.metric,
        "final_metric": r.final_metric,
        "converged": r.converged,
        "iterations": r.iterations,
        "matrix": r.transform.rows(),
    }))
}

fn resample_cmd(a: ResampleArgs) -> Result<()> {
    let vol = read_volume(&a.input)?;
    let t = match &a.transform {
        Some(p) => RigidTransform::read(p)?,
        None => RigidTransform::identity(),
    };
    let grid = match (&a.like, &a.grid) {
        (Some(p), _) => GridSpec::from_geometry(read_volume(p)?.geometry())?,
        (None, Some(p)) => read_toml(p)?,
        (None, None) => GridSpec::from_geometry(vol.geometry())?,
    };
    write_volume_auto(&resample(&vol, &t, &grid, a.interp, a.background)?, &a.out)
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let table = labels(&a.labels)?;
    let mut pred = LabelVolume::read(&a.pred, &table)?;
    let mut truth = LabelVolume::read(&a.truth, &table)?;
    if let Some(m) = &a.mask {
        let mask = BinaryMask::read(m)?;
        let restrict = |lv: &LabelVolume| -> Result<LabelVolume> {
            mask.geometry().ensure_same_grid(lv.geometry(), "evaluation mask")?;
            let labels = lv.labels().iter().zip(mask.bits()).map(|(&l, &b)| if b { l } else { 0 }).collect();
            LabelVolume::new(lv.geometry().clone(), labels, &table)
        };
        pred = restrict(&pred)?;
        truth = restrict(&truth)?;
    }
    let (dice, hd95) = evaluate_segmentation(&pred, &truth, &table)?;
    let alignment = match (&a.image, &a.reference) {
        (Some(i), Some(r)) => Some(pipeline::validate_alignment(&read_volume(i)?, &read_volume(r)?)?),
        _ => None,
    };
    let record = EvaluationRecord { subject_id: a.subject, be_method: a.method, dice, hd95, wall_time_s: a.wall_time, alignment };
    record.validate()?;
    if let Some(csv) = &a.csv {
        let fresh = std::fs::metadata(csv).map(|m| m.len() == 0).unwrap_or(true);
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(csv)
            .map_err(|e| Error::IoPath { path: csv.clone(), source: e })?;
        EvaluationRecord::write_csv(std::slice::from_ref(&record), f, fresh)?;
    }
    print_json(&record)
}

fn run(config: &Path, force: bool, report_dir: Option<PathBuf>) -> Result<()> {
    let cfg = PipelineConfig::load(config)?;
    let results = pipeline::run_all(&cfg, force)?;
    let mut runs = Vec::new();
    let mut first_err = None;
    for (s, r) in cfg.subjects.iter().zip(results) {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => {
                error!("subject {}: {e}", s.id);
                first_err.get_or_insert(e);
            }
        }
    }
    if !runs.is_empty() {
        let dir = report_dir.unwrap_or_else(|| cfg.output_dir.join("report"));
        let summary = pipeline::emit_run_report(&runs, &dir)?;
        print_json(&summary)?;
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn report(records: &[PathBuf], out: &Path) -> Result<()> {
    let mut all = Vec::new();
    for p in records {
        let f = std::fs::File::open(p).map_err(|e| Error::IoPath { path: p.clone(), source: e })?;
        all.extend(EvaluationRecord::read_csv(f)?);
    }
    print_json(&pipeline::emit_report(&all, &[], out)?)
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Register(a) => register(a),
        Command::Resample(a) => resample_cmd(a),
        Command::Compose { first, second, out } => {
            compose(&RigidTransform::read(first)?, &RigidTransform::read(second)?).write(out)
        }
        Command::ApplyMask { input, mask, out, background } => {
            write_volume_auto(&apply_mask(&read_volume(input)?, &BinaryMask::read(mask)?, background)?, out)
        }
        Command::ExtractMask { input, out, threshold } => extract_mask(&read_volume(input)?, threshold).write(out),
        Command::DeriveRegions { seg, out_dir, labels: l } => {
            let table = labels(&l)?;
            let regions = derive_regions(&LabelVolume::read(seg, &table)?, &table)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::IoPath { path: out_dir.clone(), source: e })?;
            for (name, mask) in regions.iter() {
                mask.write(out_dir.join(format!("{name}.nii.gz")))?;
            }
            Ok(())
        }
        Command::Evaluate(a) => evaluate(a),
        Command::ValidateAlignment { image, reference } => {
            print_json(&pipeline::validate_alignment(&read_volume(image)?, &read_volume(reference)?)?)
        }
        Command::Run { config, force, report_dir } => run(&config, force, report_dir),
        Command::Report { records, out } => report(&records, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            if e.is_stage_failure() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
