//! Aggregate tables and JSON summaries of a pipeline run.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::{SubjectRun, ToolTiming};
use crate::error::{Error, Result};
use crate::metrics::{summarize, EvaluationRecord, HAUSDORFF_PERCENTILE, PSNR_CAP_DB};

pub const RECORDS_FILE: &str = "records.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PLOT_DATA_FILE: &str = "plot_data.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub median_avg_dice: f64,
    pub median_avg_hd95: f64,
    pub count: usize,
    /// Mean brain-extraction time per subject.
    pub mean_wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSummary {
    pub runs: usize,
    pub mean_wall_time_s: f64,
    pub max_wall_time_s: f64,
}

/// Metric conventions, written next to the numbers they qualify.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub dice_both_empty: f64,
    pub hd95: String,
    pub hd95_one_empty: String,
    pub psnr: String,
    pub pearson: String,
    pub summary: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Self {
            dice_both_empty: 1.0,
            hd95: format!(
                "max of the two directed nearest-rank {HAUSDORFF_PERCENTILE}th percentiles of surface-voxel distances (mm); \
                 surface = 6-connected boundary, volume edge counts as background; identical masks give 0"
            ),
            hd95_one_empty: "world-space diagonal of the volume (mm)".into(),
            psnr: format!("10*log10(peak^2/MSE) over the reference's nonzero voxels, peak = max |reference|, capped at {PSNR_CAP_DB} dB"),
            pearson: "sample correlation over the reference's nonzero voxels".into(),
            summary: "per subject mean over WT, TC, AT; then median over subjects".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub methods: BTreeMap<String, MethodSummary>,
    pub tools: BTreeMap<String, ToolSummary>,
    pub conventions: Conventions,
}

/// Per-method score series, in subject order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PlotSeries {
    pub subjects: Vec<String>,
    pub dice_wt: Vec<f64>,
    pub dice_tc: Vec<f64>,
    pub dice_at: Vec<f64>,
    pub hd95_wt: Vec<f64>,
    pub hd95_tc: Vec<f64>,
    pub hd95_at: Vec<f64>,
    pub avg_dice: Vec<f64>,
    pub avg_hd95: Vec<f64>,
}

fn sorted(records: &[EvaluationRecord]) -> Vec<EvaluationRecord> {
    let mut v = records.to_vec();
    v.sort_by(|a, b| (&a.be_method, &a.subject_id).cmp(&(&b.be_method, &b.subject_id)));
    v
}

pub fn summarize_report(records: &[EvaluationRecord], timings: &[ToolTiming]) -> Result<ReportSummary> {
    let mut by_method: BTreeMap<String, Vec<EvaluationRecord>> = BTreeMap::new();
    for r in records {
        r.validate()?;
        by_method.entry(r.be_method.clone()).or_default().push(r.clone());
    }
    let mut methods = BTreeMap::new();
    for (m, rs) in by_method {
        let s = summarize(&rs)?;
        let mean_wall_time_s = rs.iter().map(|r| r.wall_time_s).sum::<f64>() / rs.len() as f64;
        methods.insert(
            m,
            MethodSummary { median_avg_dice: s.median_avg_dice, median_avg_hd95: s.median_avg_hd95, count: s.count, mean_wall_time_s },
        );
    }
    let mut per_tool: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for t in timings {
        per_tool.entry(t.tool.clone()).or_default().push(t.wall_time_s);
    }
    let tools = per_tool
        .into_iter()
        .map(|(name, ts)| {
            let s = ToolSummary {
                runs: ts.len(),
                mean_wall_time_s: ts.iter().sum::<f64>() / ts.len() as f64,
                max_wall_time_s: ts.iter().copied().fold(0.0, f64::max),
            };
            (name, s)
        })
        .collect();
    Ok(ReportSummary { methods, tools, conventions: Conventions::default() })
}

pub fn plot_data(records: &[EvaluationRecord]) -> BTreeMap<String, PlotSeries> {
    let mut out: BTreeMap<String, PlotSeries> = BTreeMap::new();
    for r in sorted(records) {
        let s = out.entry(r.be_method.clone()).or_default();
        s.subjects.push(r.subject_id.clone());
        s.dice_wt.push(r.dice.wt);
        s.dice_tc.push(r.dice.tc);
        s.dice_at.push(r.dice.at);
        s.hd95_wt.push(r.hd95.wt);
        s.hd95_tc.push(r.hd95.tc);
        s.hd95_at.push(r.hd95.at);
        s.avg_dice.push(r.dice.mean());
        s.avg_hd95.push(r.hd95.mean());
    }
    out
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Report(e.to_string()))?;
    fs::write(path, text + "\n").map_err(Error::io_at(path))
}

/// Writes `records.csv`, `summary.json` and `plot_data.json` into `out_dir`.
pub fn emit_report(records: &[EvaluationRecord], timings: &[ToolTiming], out_dir: &Path) -> Result<ReportSummary> {
    if records.is_empty() && timings.is_empty() {
        return Err(Error::EmptyInput("nothing to report".into()));
    }
    fs::create_dir_all(out_dir).map_err(Error::io_at(out_dir))?;
    let summary = summarize_report(records, timings)?;
    let csv_path = out_dir.join(RECORDS_FILE);
    let file = fs::File::create(&csv_path).map_err(Error::io_at(&csv_path))?;
    EvaluationRecord::write_csv(&sorted(records), file, true)?;
    write_json(&summary, &out_dir.join(SUMMARY_FILE))?;
    write_json(&plot_data(records), &out_dir.join(PLOT_DATA_FILE))?;
    Ok(summary)
}

/// [`emit_report`] over the records and tool timings of completed runs.
pub fn emit_run_report(runs: &[SubjectRun], out_dir: &Path) -> Result<ReportSummary> {
    if runs.is_empty() {
        return Err(Error::EmptyInput("no subject runs".into()));
    }
    let records: Vec<EvaluationRecord> = runs.iter().filter_map(|r| r.record.clone()).collect();
    let timings: Vec<ToolTiming> = runs.iter().flat_map(|r| r.tool_timings().cloned()).collect();
    emit_report(&records, &timings, out_dir)
}
