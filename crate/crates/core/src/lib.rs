//! Brain MRI preprocessing and evaluation.
//!
//! Reads and writes NIfTI-1 volumes, registers images rigidly, resamples
//! them onto a common grid, derives tumour regions from label maps and
//! scores segmentations (Dice, HD95) and image agreement (Pearson, PSNR).
//! The [`pipeline`] module strings these together with external
//! brain-extraction and segmentation programs.

// Errors carry paths and tool details; `!(a < b)` comparisons reject NaN.
#![allow(clippy::result_large_err, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod masking;
pub mod metrics;
pub mod nifti;
pub mod phantom;
pub mod pipeline;
pub mod registration;
pub mod resample;

pub use error::{Error, Result};
pub use geometry::{compose, invert, GridSpec, RigidTransform};
pub use masking::{apply_mask, derive_regions, extract_mask, BinaryMask, LabelTable, LabelVolume, RegionSet};
pub use metrics::{dice, hausdorff95, pearson_masked, psnr_masked, summarize, EvaluationRecord, RegionScores, Summary};
pub use nifti::{read_volume, write_volume, DType, Geometry, Volume};
pub use registration::{register_rigid, Metric, RegistrationConfig, RegistrationResult};
pub use resample::{resample, InterpolationKind};
