//! Per-subject stage execution with on-disk artifacts and a resample ledger.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{BeMode, ExpectedInputs, ExternalToolSpec, PipelineConfig, SubjectSpec};
use super::external::{time_external, ToolBindings};
use crate::error::{Error, Result};
use crate::geometry::{compose, GridSpec, RigidTransform};
use crate::masking::{apply_mask, extract_mask, BinaryMask, LabelVolume};
use crate::metrics::{evaluate_segmentation, pearson_masked, psnr_masked, Alignment, EvaluationRecord};
use crate::nifti::{read_volume, write_volume, Volume};
use crate::registration::{intermediate_skullstrip_guard, register_rigid};
use crate::resample::{resample, InterpolationKind};

pub const STAGE_REGISTER_ATLAS: &str = "register_atlas";
pub const STAGE_INTERMEDIATE: &str = "intermediate";
pub const STAGE_GUARD: &str = "guard";
pub const STAGE_REGISTER_REFERENCE: &str = "register_reference";
pub const STAGE_COMPOSE: &str = "compose";
pub const STAGE_RESAMPLE: &str = "resample";
pub const STAGE_BRAIN_EXTRACTION: &str = "brain_extraction";
pub const STAGE_SEGMENTATION: &str = "segmentation";
pub const STAGE_EVALUATE: &str = "evaluate";

const STAGE_FILE: &str = "stage.json";

/// One call to [`resample`] made by the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleEvent {
    pub stage: String,
    pub modality: String,
    pub input: PathBuf,
    pub output: PathBuf,
    pub transform: [[f64; 4]; 4],
    pub interpolation: InterpolationKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolTiming {
    pub tool: String,
    pub stage: String,
    pub subject_id: String,
    pub exit_code: i32,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// Seconds since the Unix epoch when the stage started.
    pub started_at: f64,
    pub wall_time_s: f64,
    pub outputs: Vec<PathBuf>,
    #[serde(default)]
    pub resamples: Vec<ResampleEvent>,
    #[serde(default)]
    pub tool: Option<ToolTiming>,
    /// Loaded from a previous run instead of executed.
    #[serde(skip)]
    pub reused: bool,
}

#[derive(Debug, Clone)]
pub struct SubjectRun {
    pub subject_id: String,
    pub be_method: String,
    pub stages: Vec<StageRecord>,
    /// Raw scanner space to target space.
    pub composed: RigidTransform,
    pub raw: BTreeMap<String, PathBuf>,
    /// Output of the single resampling step, per modality.
    pub resampled: BTreeMap<String, PathBuf>,
    /// Final images handed to segmentation, per modality.
    pub preprocessed: BTreeMap<String, PathBuf>,
    pub brain_mask: Option<PathBuf>,
    pub intermediate: Option<PathBuf>,
    pub guarded: Option<PathBuf>,
    pub segmentation: PathBuf,
    pub record: Option<EvaluationRecord>,
}

impl SubjectRun {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn resample_events(&self) -> impl Iterator<Item = &ResampleEvent> {
        self.stages.iter().flat_map(|s| s.resamples.iter())
    }

    pub fn tool_timings(&self) -> impl Iterator<Item = &ToolTiming> {
        self.stages.iter().filter_map(|s| s.tool.as_ref())
    }

    /// Checks that every final modality image went through exactly one
    /// interpolation, straight from the raw file with the composed
    /// transform, and that no intermediate image was resampled again.
    pub fn check_single_interpolation(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Report(format!("subject {}: {msg}", self.subject_id)));
        let composed = self.composed.rows();
        for (modality, out) in &self.resampled {
            let producers: Vec<&ResampleEvent> = self.resample_events().filter(|e| &e.output == out).collect();
            if producers.len() != 1 {
                return fail(format!("{modality}: {} resample calls produce {}", producers.len(), out.display()));
            }
            let e = producers[0];
            if Some(&e.input) != self.raw.get(modality) {
                return fail(format!("{modality}: resampled from {} instead of the raw image", e.input.display()));
            }
            let diff = (0..4)
                .flat_map(|r| (0..4).map(move |c| (r, c)))
                .map(|(r, c)| (e.transform[r][c] - composed[r][c]).abs())
                .fold(0.0, f64::max);
            if diff > 1e-9 {
                return fail(format!("{modality}: resampled with a transform other than the composed one"));
            }
        }
        let derived: Vec<&PathBuf> = self
            .resampled
            .values()
            .chain(self.preprocessed.values())
            .chain(self.intermediate.iter())
            .chain(self.guarded.iter())
            .collect();
        for e in self.resample_events() {
            if derived.contains(&&e.input) {
                return fail(format!("{} was resampled again in stage {}", e.input.display(), e.stage));
            }
        }
        for (modality, out) in &self.preprocessed {
            if self.resampled.get(modality) != Some(out) && self.resample_events().any(|e| &e.output == out) {
                return fail(format!("{modality}: final image was produced by interpolation after resampling"));
            }
        }
        Ok(())
    }
}

fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Executes stages in order, reusing completed ones from disk. Once a stage
/// actually runs, every later stage runs too.
struct StageRunner {
    subject_dir: PathBuf,
    reuse: bool,
    stages: Vec<StageRecord>,
}

impl StageRunner {
    fn run<F>(&mut self, name: &str, outputs: &[String], f: F) -> Result<StageRecord>
    where
        F: FnOnce(&Path, &mut StageRecord) -> Result<()>,
    {
        let dir = self.subject_dir.join(name);
        fs::create_dir_all(&dir).map_err(Error::io_at(&dir))?;
        let record_path = dir.join(STAGE_FILE);
        let outputs: Vec<PathBuf> = outputs.iter().map(|o| dir.join(o)).collect();
        if self.reuse {
            if let Some(mut rec) = load_stage(&record_path) {
                if rec.outputs == outputs && outputs.iter().all(|p| p.exists()) {
                    info!("{}: reusing stage {name}", self.subject_dir.display());
                    rec.reused = true;
                    self.stages.push(rec.clone());
                    return Ok(rec);
                }
            }
        }
        self.reuse = false;
        let _ = fs::remove_file(&record_path);
        let mut rec = StageRecord {
            name: name.into(),
            started_at: now_unix(),
            wall_time_s: 0.0,
            outputs,
            resamples: Vec::new(),
            tool: None,
            reused: false,
        };
        let start = Instant::now();
        f(&dir, &mut rec).map_err(|e| stage_error(name, e))?;
        rec.wall_time_s = start.elapsed().as_secs_f64();
        let json = serde_json::to_string_pretty(&rec).map_err(|e| Error::Report(e.to_string()))?;
        fs::write(&record_path, json).map_err(Error::io_at(&record_path))?;
        self.stages.push(rec.clone());
        Ok(rec)
    }
}

fn load_stage(path: &Path) -> Option<StageRecord> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn stage_error(stage: &str, e: Error) -> Error {
    match e {
        Error::Timeout { .. } | Error::ToolContract(_) => Error::StageFailure {
            stage: stage.into(),
            reason: e.to_string(),
            exit_code: None,
            wall_time_s: None,
        },
        Error::StageFailure { reason, exit_code, wall_time_s, .. } => {
            Error::StageFailure { stage: stage.into(), reason, exit_code, wall_time_s }
        }
        other => other,
    }
}

fn write_gz(vol: &Volume, path: &Path) -> Result<()> {
    write_volume(vol, path, true)
}

fn resample_logged(
    rec: &mut StageRecord,
    modality: &str,
    input: &Path,
    output: &Path,
    transform: &RigidTransform,
    target: &GridSpec,
    kind: InterpolationKind,
) -> Result<Volume> {
    let vol = read_volume(input)?;
    let out = resample(&vol, transform, target, kind, 0.0)?;
    write_gz(&out, output)?;
    rec.resamples.push(ResampleEvent {
        stage: rec.name.clone(),
        modality: modality.into(),
        input: input.to_path_buf(),
        output: output.to_path_buf(),
        transform: transform.rows(),
        interpolation: kind,
    });
    Ok(out)
}

fn run_tool(
    rec: &mut StageRecord,
    subject_id: &str,
    tool: &ExternalToolSpec,
    bindings: ToolBindings,
) -> Result<()> {
    let outcome = time_external(tool, &bindings)?;
    rec.tool = Some(ToolTiming {
        tool: tool.name.clone(),
        stage: rec.name.clone(),
        subject_id: subject_id.into(),
        exit_code: outcome.exit_code,
        wall_time_s: outcome.wall_time_s,
    });
    if outcome.exit_code != 0 {
        return Err(Error::StageFailure {
            stage: rec.name.clone(),
            reason: format!("`{}` exited with status {}", tool.name, outcome.exit_code),
            exit_code: Some(outcome.exit_code),
            wall_time_s: Some(outcome.wall_time_s),
        });
    }
    Ok(())
}

fn tool_bindings(tool: &ExternalToolSpec, images: &BTreeMap<String, PathBuf>, output: PathBuf, log_dir: &Path) -> Result<ToolBindings> {
    let inputs_4mod = match tool.expects {
        ExpectedInputs::SingleT1 => None,
        ExpectedInputs::AllFour => {
            let get = |m: &str| {
                images
                    .get(m)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("tool `{}` needs all four modalities; {m} is missing", tool.name)))
            };
            Some([get("t1")?, get("t1ce")?, get("t2")?, get("flair")?])
        }
    };
    Ok(ToolBindings {
        input: images.get("t1").cloned(),
        inputs_4mod,
        output,
        log_dir: Some(log_dir.to_path_buf()),
    })
}

/// Nonzero region of `reference`, carried onto `target` if it lives elsewhere.
fn reference_mask(reference: &Volume, target: &GridSpec) -> Result<BinaryMask> {
    let mask = extract_mask(reference, 0.0);
    let g = target.geometry()?;
    if mask.geometry().same_grid(&g) {
        return Ok(mask);
    }
    let moved = resample(&mask.to_volume(), &RigidTransform::identity(), target, InterpolationKind::Nearest, 0.0)?;
    Ok(BinaryMask::from_volume(&moved))
}

/// Pearson correlation and PSNR of `ours` against `reference` over the
/// reference's nonzero voxels.
pub fn validate_alignment(ours: &Volume, reference: &Volume) -> Result<Alignment> {
    let mask = extract_mask(reference, 0.0);
    if mask.is_empty() {
        return Err(Error::Degenerate("reference image is all zero".into()));
    }
    Ok(Alignment {
        pearson: pearson_masked(ours, reference, &mask)?,
        psnr_db: psnr_masked(reference, ours, &mask)?,
    })
}

/// Runs all stages for one subject. `atlas` is the fixed image of the
/// first registration; every output lives on `target`.
pub fn run_subject(cfg: &PipelineConfig, subject: &SubjectSpec, atlas: &Volume, target: &GridSpec, force: bool) -> Result<SubjectRun> {
    let subject_dir = cfg.output_dir.join(&subject.id);
    let mut runner = StageRunner { subject_dir, reuse: !force, stages: Vec::new() };
    let raw: BTreeMap<String, PathBuf> =
        subject.modalities().into_iter().map(|(m, p)| (m.to_string(), p.to_path_buf())).collect();
    let driver = raw
        .get(&cfg.driver_modality)
        .cloned()
        .ok_or_else(|| Error::Config(format!("subject {}: driver modality {} missing", subject.id, cfg.driver_modality)))?;
    let xfm = "transform.toml".to_string();

    // Raw scanner space to atlas.
    let rec = runner.run(STAGE_REGISTER_ATLAS, std::slice::from_ref(&xfm), |dir, _| {
        let moving = read_volume(&driver)?;
        let r = register_rigid(atlas, &moving, &cfg.registration)?;
        info!("{}: atlas registration metric {:.4}", subject.id, r.final_metric);
        r.transform.write(dir.join("transform.toml"))
    })?;
    let to_atlas = RigidTransform::read(&rec.outputs[0])?;

    let mut intermediate = None;
    let mut guarded = None;
    let composed = if let Some(reference_path) = &subject.reference {
        let name = format!("{}.nii.gz", cfg.driver_modality);
        let rec = runner.run(STAGE_INTERMEDIATE, std::slice::from_ref(&name), |dir, rec| {
            let out = dir.join(&name);
            resample_logged(rec, &cfg.driver_modality, &driver, &out, &to_atlas, target, InterpolationKind::Trilinear)?;
            Ok(())
        })?;
        let intermediate_path = rec.outputs[0].clone();

        let rec = runner.run(STAGE_GUARD, &["mask.nii.gz".into(), "guarded.nii.gz".into()], |dir, rec| {
            let image = read_volume(&intermediate_path)?;
            let mask = match &cfg.guard {
                Some(tool) => {
                    let out = dir.join("tool_output.nii.gz");
                    let images = BTreeMap::from([("t1".to_string(), intermediate_path.clone())]);
                    run_tool(rec, &subject.id, tool, tool_bindings(tool, &images, out.clone(), dir)?)?;
                    let m = extract_mask(&read_volume(&out)?, 0.0);
                    m.geometry().ensure_same_grid(image.geometry(), "guard tool output")?;
                    m
                }
                None => reference_mask(&read_volume(reference_path)?, target)?,
            };
            let stripped = intermediate_skullstrip_guard(&image, &mask)?;
            mask.write(dir.join("mask.nii.gz"))?;
            write_gz(&stripped, &dir.join("guarded.nii.gz"))
        })?;
        let guarded_path = rec.outputs[1].clone();

        let rec = runner.run(STAGE_REGISTER_REFERENCE, std::slice::from_ref(&xfm), |dir, _| {
            let fixed = read_volume(reference_path)?;
            let moving = read_volume(&guarded_path)?;
            let r = register_rigid(&fixed, &moving, &cfg.registration)?;
            info!("{}: reference registration metric {:.4}", subject.id, r.final_metric);
            r.transform.write(dir.join("transform.toml"))
        })?;
        let to_reference = RigidTransform::read(&rec.outputs[0])?;
        intermediate = Some(intermediate_path);
        guarded = Some(guarded_path);
        compose(&to_atlas, &to_reference)
    } else {
        to_atlas
    };
    let rec = runner.run(STAGE_COMPOSE, std::slice::from_ref(&xfm), |dir, _| composed.write(dir.join("transform.toml")))?;
    let composed = RigidTransform::read(&rec.outputs[0])?;

    // The only interpolation of each modality on the path to the outputs.
    let names: Vec<String> = raw.keys().map(|m| format!("{m}.nii.gz")).collect();
    let rec = runner.run(STAGE_RESAMPLE, &names, |dir, rec| {
        for (m, input) in &raw {
            let out = dir.join(format!("{m}.nii.gz"));
            resample_logged(rec, m, input, &out, &composed, target, InterpolationKind::Trilinear)?;
        }
        Ok(())
    })?;
    let resampled: BTreeMap<String, PathBuf> = raw.keys().cloned().zip(rec.outputs.iter().cloned()).collect();

    let be_outputs: Vec<String> = match &cfg.be {
        BeMode::None => Vec::new(),
        _ => std::iter::once("mask.nii.gz".to_string()).chain(names.iter().cloned()).collect(),
    };
    let rec = runner.run(STAGE_BRAIN_EXTRACTION, &be_outputs, |dir, rec| {
        let mask = match &cfg.be {
            BeMode::None => return Ok(()),
            BeMode::Manual => {
                let reference = subject
                    .reference
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("subject {}: manual brain extraction needs a reference", subject.id)))?;
                reference_mask(&read_volume(reference)?, target)?
            }
            BeMode::Tool(tool) => {
                let out = dir.join("tool_output.nii.gz");
                run_tool(rec, &subject.id, tool, tool_bindings(tool, &resampled, out.clone(), dir)?)?;
                let m = extract_mask(&read_volume(&out)?, 0.0);
                m.geometry().ensure_same_grid(&target.geometry()?, "brain-extraction tool output")?;
                m
            }
        };
        mask.write(dir.join("mask.nii.gz"))?;
        for (m, path) in &resampled {
            let stripped = apply_mask(&read_volume(path)?, &mask, 0.0)?;
            write_gz(&stripped, &dir.join(format!("{m}.nii.gz")))?;
        }
        Ok(())
    })?;
    let be_wall_time_s = match &cfg.be {
        BeMode::None => 0.0,
        BeMode::Manual => rec.wall_time_s,
        BeMode::Tool(_) => rec.tool.as_ref().map_or(rec.wall_time_s, |t| t.wall_time_s),
    };
    let (brain_mask, preprocessed) = match &cfg.be {
        BeMode::None => (None, resampled.clone()),
        _ => (Some(rec.outputs[0].clone()), raw.keys().cloned().zip(rec.outputs[1..].iter().cloned()).collect()),
    };

    let rec = runner.run(STAGE_SEGMENTATION, &["seg.nii.gz".into()], |dir, rec| {
        let tool = &cfg.segmentation;
        run_tool(rec, &subject.id, tool, tool_bindings(tool, &preprocessed, dir.join("seg.nii.gz"), dir)?)
    })?;
    let segmentation = rec.outputs[0].clone();

    let be_method = cfg.be.method_name();
    let record = match &subject.ground_truth {
        None => None,
        Some(truth_path) => {
            let rec = runner.run(STAGE_EVALUATE, &["record.json".into()], |dir, _| {
                let pred = LabelVolume::read(&segmentation, &cfg.labels)?;
                let truth = LabelVolume::read(truth_path, &cfg.labels)?;
                let (dice, hd95) = evaluate_segmentation(&pred, &truth, &cfg.labels)?;
                let alignment = match &subject.reference {
                    Some(reference_path) => {
                        let reference = read_volume(reference_path)?;
                        let ours = read_volume(&resampled[&cfg.driver_modality])?;
                        if ours.geometry().same_grid(reference.geometry()) {
                            Some(validate_alignment(&ours, &reference)?)
                        } else {
                            warn!("{}: reference is not on the target grid; alignment not scored", subject.id);
                            None
                        }
                    }
                    None => None,
                };
                let record = EvaluationRecord {
                    subject_id: subject.id.clone(),
                    be_method: be_method.clone(),
                    dice,
                    hd95,
                    wall_time_s: be_wall_time_s,
                    alignment,
                };
                record.validate()?;
                let json = serde_json::to_string_pretty(&record).map_err(|e| Error::Report(e.to_string()))?;
                let path = dir.join("record.json");
                fs::write(&path, json).map_err(Error::io_at(&path))
            })?;
            let text = fs::read_to_string(&rec.outputs[0]).map_err(Error::io_at(&rec.outputs[0]))?;
            Some(serde_json::from_str(&text).map_err(|e| Error::Report(e.to_string()))?)
        }
    };

    let run = SubjectRun {
        subject_id: subject.id.clone(),
        be_method,
        stages: runner.stages,
        composed,
        raw,
        resampled,
        preprocessed,
        brain_mask,
        intermediate,
        guarded,
        segmentation,
        record,
    };
    run.check_single_interpolation()?;
    Ok(run)
}

/// Output lattice of a run: the configured grid, else the atlas grid.
pub fn target_grid(cfg: &PipelineConfig, atlas: &Volume) -> Result<GridSpec> {
    match &cfg.target_grid {
        Some(g) => Ok(g.clone()),
        None => GridSpec::from_geometry(atlas.geometry()),
    }
}

/// Runs every subject on a pool of [`PipelineConfig::effective_workers`]
/// threads. Results are in config order.
pub fn run_all(cfg: &PipelineConfig, force: bool) -> Result<Vec<Result<SubjectRun>>> {
    let atlas = read_volume(&cfg.atlas)?;
    let target = target_grid(cfg, &atlas)?;
    fs::create_dir_all(&cfg.output_dir).map_err(Error::io_at(&cfg.output_dir))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.effective_workers())
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(|| {
        cfg.subjects
            .par_iter()
            .map(|s| {
                let r = run_subject(cfg, s, &atlas, &target, force);
                if let Err(e) = &r {
                    warn!("subject {} failed: {e}", s.id);
                }
                r
            })
            .collect()
    }))
}
