//! Segmentation overlap and surface metrics, masked image agreement, and
//! median-of-region-average summarization.

mod record;
mod surface;

pub use record::{Alignment, EvaluationRecord, RegionScores, Summary, CSV_COLUMNS};
pub use surface::{directed_distances, percentile_nearest_rank, surface_voxels, SurfacePointSet};

use crate::error::{Error, Result};
use crate::masking::{derive_regions, BinaryMask, LabelTable, LabelVolume};
use crate::nifti::Volume;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 200.0;
/// Percentile replacing the maximum in the Hausdorff distance.
pub const HAUSDORFF_PERCENTILE: u32 = 95;

/// `2|P∩T| / (|P|+|T|)`; 1 when both masks are empty.
pub fn dice(p: &BinaryMask, t: &BinaryMask) -> Result<f64> {
    p.geometry().ensure_same_grid(t.geometry(), "dice")?;
    let (mut np, mut nt, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in p.bits().iter().zip(t.bits()) {
        np += a as usize;
        nt += b as usize;
        both += (a && b) as usize;
    }
    if np + nt == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (np + nt) as f64)
}

/// 95th-percentile symmetric surface distance in mm.
///
/// Each directed distance set (∂P→∂T and ∂T→∂P) is reduced by its
/// nearest-rank 95th percentile and the larger of the two is returned.
/// Identical masks give 0, including two empty masks; exactly one empty
/// mask gives the world-space diagonal of the volume.
pub fn hausdorff95(p: &BinaryMask, t: &BinaryMask) -> Result<f64> {
    p.geometry().ensure_same_grid(t.geometry(), "hausdorff95")?;
    if p.bits() == t.bits() {
        return Ok(0.0);
    }
    if p.is_empty() || t.is_empty() {
        return Ok(p.geometry().diagonal_mm());
    }
    let g = p.geometry();
    let sp = surface_voxels(p);
    let st = surface_voxels(t);
    let mut pt = directed_distances(g, &sp, &st);
    let mut tp = directed_distances(g, &st, &sp);
    let a = percentile_nearest_rank(&mut pt, HAUSDORFF_PERCENTILE).unwrap_or(0.0);
    let b = percentile_nearest_rank(&mut tp, HAUSDORFF_PERCENTILE).unwrap_or(0.0);
    Ok(a.max(b))
}

fn masked_pairs<'a>(a: &'a Volume, b: &'a Volume, mask: &'a BinaryMask) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    a.geometry().ensure_same_grid(b.geometry(), "masked metric")?;
    a.geometry().ensure_same_grid(mask.geometry(), "masked metric mask")?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .zip(mask.bits())
        .filter(|(_, &m)| m)
        .map(|((&x, &y), _)| (x, y)))
}

/// Sample Pearson correlation over in-mask voxels.
pub fn pearson_masked(a: &Volume, b: &Volume, mask: &BinaryMask) -> Result<f64> {
    let pairs: Vec<(f64, f64)> = masked_pairs(a, b, mask)?.collect();
    pearson(&pairs)
}

pub(crate) fn pearson(pairs: &[(f64, f64)]) -> Result<f64> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("{n} voxels in mask; need at least 2")));
    }
    let nf = n as f64;
    let (sx, sy) = pairs.iter().fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x, sy + y));
    let (mx, my) = (sx / nf, sy / nf);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// `10·log10(peak² / MSE)` over in-mask voxels, `peak = max |reference|`
/// in the mask. Capped at [`PSNR_CAP_DB`].
pub fn psnr_masked(reference: &Volume, test: &Volume, mask: &BinaryMask) -> Result<f64> {
    let (mut n, mut peak, mut sse) = (0usize, 0.0f64, 0.0f64);
    for (r, t) in masked_pairs(reference, test, mask)? {
        n += 1;
        peak = peak.max(r.abs());
        sse += (r - t) * (r - t);
    }
    if n == 0 {
        return Err(Error::Degenerate("empty mask".into()));
    }
    if peak == 0.0 {
        return Err(Error::Degenerate("reference peak is zero inside mask".into()));
    }
    Ok(psnr_from(peak, sse / n as f64))
}

pub fn psnr_from(peak: f64, mse: f64) -> f64 {
    if mse == 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
}

/// Median of a non-empty list; mean of the two central values for even n.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Averages the three regions per record, then takes the median over records.
pub fn summarize(records: &[EvaluationRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no evaluation records to summarize".into()));
    }
    let dice: Vec<f64> = records.iter().map(|r| r.dice.mean()).collect();
    let hd: Vec<f64> = records.iter().map(|r| r.hd95.mean()).collect();
    Ok(Summary {
        median_avg_dice: median(&dice).unwrap(),
        median_avg_hd95: median(&hd).unwrap(),
        count: records.len(),
    })
}

/// Dice and HD95 for WT, TC and AT of a predicted vs. ground-truth label map.
pub fn evaluate_segmentation(pred: &LabelVolume, truth: &LabelVolume, table: &LabelTable) -> Result<(RegionScores, RegionScores)> {
    pred.geometry().ensure_same_grid(truth.geometry(), "evaluate")?;
    let p = derive_regions(pred, table)?;
    let t = derive_regions(truth, table)?;
    let mut dice_s = [0.0; 3];
    let mut hd_s = [0.0; 3];
    for (n, ((_, pm), (_, tm))) in p.iter().zip(t.iter()).enumerate() {
        dice_s[n] = dice(pm, tm)?;
        hd_s[n] = hausdorff95(pm, tm)?;
    }
    Ok((RegionScores::from(dice_s), RegionScores::from(hd_s)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nifti::{DType, Geometry};

    fn geom(dims: [usize; 3]) -> Geometry {
        Geometry::axis_aligned(dims, [1.0; 3], [0.0; 3]).unwrap()
    }

    fn mask_from(dims: [usize; 3], on: &[[usize; 3]]) -> BinaryMask {
        let g = geom(dims);
        let mut m = BinaryMask::empty(g.clone());
        for &[i, j, k] in on {
            m.bits_mut()[g.offset(i, j, k)] = true;
        }
        m
    }

    fn vol(values: &[f64]) -> Volume {
        Volume::new(geom([values.len(), 1, 1]), values.to_vec(), DType::Float64).unwrap()
    }

    #[test]
    fn dice_cases() {
        let p = mask_from([4, 2, 1], &[[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]]);
        let t = mask_from([4, 2, 1], &[[0, 0, 0], [1, 0, 0]]);
        assert!((dice(&p, &t).unwrap() - 2.0 * 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(dice(&p, &p).unwrap(), 1.0);
        let d = mask_from([4, 2, 1], &[[0, 1, 0]]);
        assert_eq!(dice(&t, &d).unwrap(), 0.0);
        let e = mask_from([4, 2, 1], &[]);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert_eq!(dice(&e, &t).unwrap(), 0.0);
        assert!(matches!(dice(&p, &mask_from([2, 2, 2], &[])), Err(Error::Geometry(_))));
    }

    #[test]
    fn hausdorff_cases() {
        let a = mask_from([8, 3, 3], &[[1, 1, 1]]);
        let b = mask_from([8, 3, 3], &[[4, 1, 1]]);
        assert_eq!(hausdorff95(&a, &b).unwrap(), 3.0);
        assert_eq!(hausdorff95(&a, &a).unwrap(), 0.0);
        let e = mask_from([8, 3, 3], &[]);
        assert_eq!(hausdorff95(&e, &e).unwrap(), 0.0);
        let diag = (64.0f64 + 9.0 + 9.0).sqrt();
        assert!((hausdorff95(&e, &a).unwrap() - diag).abs() < 1e-12);
    }

    #[test]
    fn hausdorff_scales_with_spacing() {
        let g = Geometry::axis_aligned([8, 3, 3], [2.0; 3], [0.0; 3]).unwrap();
        let mut a = BinaryMask::empty(g.clone());
        let mut b = BinaryMask::empty(g.clone());
        a.bits_mut()[g.offset(1, 1, 1)] = true;
        b.bits_mut()[g.offset(4, 1, 1)] = true;
        assert_eq!(hausdorff95(&a, &b).unwrap(), 6.0);
    }

    #[test]
    fn pearson_cases() {
        let a = vol(&[1.0, 2.0, 3.0, 4.0]);
        let m = BinaryMask::full(a.geometry().clone());
        assert!((pearson_masked(&a, &a, &m).unwrap() - 1.0).abs() < 1e-15);
        let a0 = vol(&[-1.5, -0.5, 0.5, 1.5]);
        let neg = vol(&[1.5 + 3.0, 0.5 + 3.0, -0.5 + 3.0, -1.5 + 3.0]);
        assert!((pearson_masked(&a0, &neg, &m).unwrap() + 1.0).abs() < 1e-15);
        // Textbook formula: x̄ = 2.5, ȳ = 5.25,
        // Sxy = 11.5, Sxx = 5, Syy = 26.75 → r = 11.5 / sqrt(5 · 26.75).
        let b = vol(&[2.0, 4.0, 6.0, 9.0]);
        let expect = 11.5 / (5.0f64 * 26.75).sqrt();
        assert!((pearson_masked(&a, &b, &m).unwrap() - expect).abs() < 1e-12);
        let flat = vol(&[3.0; 4]);
        assert!(matches!(pearson_masked(&a, &flat, &m), Err(Error::Degenerate(_))));
    }

    #[test]
    fn psnr_cases() {
        let r = vol(&[255.0, 0.0, 10.0, 20.0]);
        let m = BinaryMask::full(r.geometry().clone());
        assert_eq!(psnr_masked(&r, &r, &m).unwrap(), PSNR_CAP_DB);
        // Every voxel off by one: MSE = 1.
        let t = vol(&[254.0, 1.0, 11.0, 19.0]);
        let expect = 10.0 * (255.0f64 * 255.0).log10();
        assert!((psnr_masked(&r, &t, &m).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 48.13).abs() < 5e-3);
        assert_eq!(psnr_from(1.0, 1.0), 0.0);
        let z = vol(&[0.0; 4]);
        assert!(matches!(psnr_masked(&z, &r, &m), Err(Error::Degenerate(_))));
    }

    fn rec(d: [f64; 3], h: [f64; 3]) -> EvaluationRecord {
        EvaluationRecord {
            subject_id: "s".into(),
            be_method: "none".into(),
            dice: RegionScores::from(d),
            hd95: RegionScores::from(h),
            wall_time_s: 0.0,
            alignment: None,
        }
    }

    #[test]
    fn summarize_cases() {
        let s = summarize(&[rec([0.9, 0.8, 0.7], [1.0, 2.0, 3.0])]).unwrap();
        assert!((s.median_avg_dice - 0.8).abs() < 1e-12);
        assert!((s.median_avg_hd95 - 2.0).abs() < 1e-12);
        let three = [rec([0.5; 3], [0.0; 3]), rec([0.9; 3], [0.0; 3]), rec([0.7; 3], [0.0; 3])];
        assert!((summarize(&three).unwrap().median_avg_dice - 0.7).abs() < 1e-12);
        let two = [rec([0.0; 3], [4.0; 3]), rec([0.0; 3], [6.0; 3])];
        assert!((summarize(&two).unwrap().median_avg_hd95 - 5.0).abs() < 1e-12);
        assert!(matches!(summarize(&[]), Err(Error::EmptyInput(_))));
    }
}
