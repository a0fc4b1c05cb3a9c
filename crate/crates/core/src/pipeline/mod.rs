//! Batch preprocessing: registration to an atlas, single-step resampling,
//! brain extraction, segmentation and evaluation, one directory per stage.

pub mod config;
pub mod external;
pub mod report;
pub mod run;

pub use config::{BeMode, ExpectedInputs, ExternalToolSpec, PipelineConfig, SubjectSpec, MODALITIES, WORKERS_ENV};
pub use external::{bind_command, time_external, ToolBindings, ToolOutcome};
pub use report::{emit_report, emit_run_report, ReportSummary};
pub use run::{run_all, run_subject, target_grid, validate_alignment, ResampleEvent, StageRecord, SubjectRun, ToolTiming};
