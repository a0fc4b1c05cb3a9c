//! Intensity-based rigid registration.
//!
//! The six parameters (Z-Y-X Euler angles about the moving image's centre
//! of mass, plus a translation) are optimized coarse-to-fine with a simplex
//! search. Each candidate is scored on the fixed grid by pulling the moving
//! image through it with trilinear interpolation, over the fixed voxels
//! whose pull-back lands inside the moving image.

pub mod nelder_mead;

use nalgebra::{Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{euler_to_transform, GridSpec, RigidTransform};
use crate::masking::{apply_mask, BinaryMask};
use crate::nifti::{DType, Volume};
use crate::resample::{index_mapping, map_index, Sampler};
use nelder_mead::{minimize, NelderMeadOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Normalized cross-correlation (maximized).
    #[default]
    Ncc,
    /// Mean squared difference (minimized).
    Msd,
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ncc" => Ok(Metric::Ncc),
            "msd" => Ok(Metric::Msd),
            other => Err(Error::Usage(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    /// Downsampling factors, coarse to fine, ending at 1.
    pub pyramid_levels: Vec<usize>,
    pub max_iterations_per_level: usize,
    pub metric: Metric,
    /// Largest translation away from the centre-of-mass initialization (mm).
    pub translation_bounds: f64,
    /// Largest absolute Euler angle (rad).
    pub rotation_bounds: f64,
    pub convergence_tol: f64,
    pub seed: u64,
    /// Simplex restarts per level after the first convergence.
    pub restarts: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            pyramid_levels: vec![4, 2, 1],
            max_iterations_per_level: 500,
            metric: Metric::Ncc,
            translation_bounds: 40.0,
            rotation_bounds: 0.6,
            convergence_tol: 1e-6,
            seed: 0,
            restarts: 1,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        let lv = &self.pyramid_levels;
        if lv.is_empty() || *lv.last().unwrap() != 1 {
            return Err(Error::Config("pyramid_levels must end at 1".into()));
        }
        if lv.windows(2).any(|w| w[0] <= w[1]) || lv.contains(&0) {
            return Err(Error::Config("pyramid_levels must be strictly decreasing".into()));
        }
        if !(self.translation_bounds > 0.0) || !(self.rotation_bounds > 0.0) {
            return Err(Error::Config("bounds must be positive".into()));
        }
        if self.max_iterations_per_level == 0 {
            return Err(Error::Config("max_iterations_per_level must be positive".into()));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::Config("convergence_tol must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Maps moving-image world coordinates onto fixed-image world coordinates.
    pub transform: RigidTransform,
    /// Metric at full resolution for the final transform (NCC in [-1, 1] or MSD).
    pub final_metric: f64,
    pub iterations: Vec<usize>,
    pub converged: bool,
    /// Best objective value (lower is better) per simplex iteration, per level.
    pub trace: Vec<Vec<f64>>,
}

/// NCC or MSD between two images on the same grid, over `mask` if given.
pub fn similarity(fixed: &Volume, moving_resampled: &Volume, mask: Option<&BinaryMask>, metric: Metric) -> Result<f64> {
    fixed.geometry().ensure_same_grid(moving_resampled.geometry(), "similarity")?;
    if let Some(m) = mask {
        fixed.geometry().ensure_same_grid(m.geometry(), "similarity mask")?;
    }
    let mut acc = Moments::default();
    for (o, (&f, &m)) in fixed.data().iter().zip(moving_resampled.data()).enumerate() {
        if mask.is_none_or(|mk| mk.bits()[o]) {
            acc.push(f, m);
        }
    }
    acc.metric(metric)
}

/// Running sums for NCC/MSD. `f` is expected to be roughly centred.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    sf: f64,
    sm: f64,
    sff: f64,
    smm: f64,
    sfm: f64,
    sdd: f64,
}

impl Moments {
    #[inline]
    fn push(&mut self, f: f64, m: f64) {
        self.n += 1.0;
        self.sf += f;
        self.sm += m;
        self.sff += f * f;
        self.smm += m * m;
        self.sfm += f * m;
        self.sdd += (f - m) * (f - m);
    }

    fn merge(&mut self, o: &Moments) {
        self.n += o.n;
        self.sf += o.sf;
        self.sm += o.sm;
        self.sff += o.sff;
        self.smm += o.smm;
        self.sfm += o.sfm;
        self.sdd += o.sdd;
    }

    fn metric(&self, metric: Metric) -> Result<f64> {
        if self.n < 2.0 {
            return Err(Error::Degenerate(format!("{} voxels available; need at least 2", self.n)));
        }
        match metric {
            Metric::Msd => Ok(self.sdd / self.n),
            Metric::Ncc => {
                // Two-pass-equivalent centred sums.
                let vf = self.sff - self.sf * self.sf / self.n;
                let vm = self.smm - self.sm * self.sm / self.n;
                let cov = self.sfm - self.sf * self.sm / self.n;
                let scale_f = self.sff.max(1e-300);
                let scale_m = self.smm.max(1e-300);
                if vf <= 1e-12 * scale_f || vm <= 1e-12 * scale_m {
                    return Err(Error::Degenerate("zero variance".into()));
                }
                Ok((cov / (vf.sqrt() * vm.sqrt())).clamp(-1.0, 1.0))
            }
        }
    }
}

/// Otsu threshold over a 256-bin histogram of the volume's intensities.
pub fn otsu_threshold(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return lo;
    }
    const BINS: usize = 256;
    let width = (hi - lo) / BINS as f64;
    let mut hist = [0u64; BINS];
    for &v in values.iter().filter(|v| v.is_finite()) {
        let b = (((v - lo) / width) as usize).min(BINS - 1);
        hist[b] += 1;
    }
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(b, &c)| b as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0u64, 0.0f64);
    let (mut best, mut best_var) = (0usize, -1.0f64);
    for (b, &c) in hist.iter().enumerate() {
        w0 += c;
        sum0 += b as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let var = w0 as f64 * w1 as f64 * (m0 - m1).powi(2);
        if var > best_var {
            best_var = var;
            best = b;
        }
    }
    lo + (best + 1) as f64 * width
}

/// Intensity-weighted centroid (world mm) of voxels above the Otsu level.
/// Falls back to the geometric centre for images without foreground.
pub fn center_of_mass(vol: &Volume) -> [f64; 3] {
    let thr = otsu_threshold(vol.data());
    let g = vol.geometry();
    let [nx, ny, nz] = g.dims();
    let (mut w, mut acc) = (0.0, Vector3::zeros());
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let v = vol.get(i, j, k);
                if v > thr {
                    w += v;
                    acc += Vector3::new(i as f64, j as f64, k as f64) * v;
                }
            }
        }
    }
    let idx = if w > 0.0 {
        acc / w
    } else {
        Vector3::new((nx - 1) as f64, (ny - 1) as f64, (nz - 1) as f64) / 2.0
    };
    let p = g.index_to_world([idx.x, idx.y, idx.z]);
    [p.x, p.y, p.z]
}

/// Block-mean downsampling onto `grid.downsampled(factor)`.
pub fn block_average(vol: &Volume, factor: usize) -> Result<Volume> {
    let grid = GridSpec::from_geometry(vol.geometry())?;
    if factor <= 1 {
        return Ok(vol.clone());
    }
    let small = grid.downsampled(factor);
    let [sx, sy, sz] = small.dims;
    let [nx, ny, nz] = vol.dims();
    let mut out = vec![0.0; sx * sy * sz];
    out.par_chunks_mut(sx * sy).enumerate().for_each(|(k, slice)| {
        for j in 0..sy {
            for i in 0..sx {
                let (mut s, mut c) = (0.0, 0usize);
                for kk in k * factor..((k + 1) * factor).min(nz) {
                    for jj in j * factor..((j + 1) * factor).min(ny) {
                        for ii in i * factor..((i + 1) * factor).min(nx) {
                            s += vol.get(ii, jj, kk);
                            c += 1;
                        }
                    }
                }
                slice[i + sx * j] = s / c as f64;
            }
        }
    });
    Volume::new(small.geometry()?, out, DType::Float64)
}

/// Smallest fraction of fixed voxels that must map inside the moving image.
pub const MIN_OVERLAP: f64 = 0.25;

/// Fixed/moving pair prepared for one pyramid level.
struct Level {
    fixed: Volume,
    moving: Volume,
    fixed_mean: f64,
    stride: usize,
}

impl Level {
    fn new(fixed: &Volume, moving: &Volume, factor: usize, stride: usize) -> Result<Self> {
        let fixed = block_average(fixed, factor)?;
        let moving = block_average(moving, factor)?;
        let fixed_mean = fixed.data().iter().sum::<f64>() / fixed.data().len() as f64;
        Ok(Self { fixed, moving, fixed_mean, stride })
    }

    fn moments(&self, t: &RigidTransform) -> Result<Moments> {
        let m = index_mapping(self.moving.affine(), t, self.fixed.affine())?;
        Ok(self.moments_with(&m))
    }

    fn moments_with(&self, m: &Matrix4<f64>) -> Moments {
        let sampler = Sampler::new(&self.moving);
        let [nx, ny, nz] = self.fixed.dims();
        let s = self.stride;
        let fixed = self.fixed.data();
        let mean = self.fixed_mean;
        // Per-slice partial sums, merged in slice order for reproducible results.
        let partial: Vec<Moments> = (0..nz)
            .into_par_iter()
            .step_by(s)
            .map(|k| {
                let mut acc = Moments::default();
                for j in (0..ny).step_by(s) {
                    for i in (0..nx).step_by(s) {
                        let p = map_index(m, i as f64, j as f64, k as f64);
                        if let Some(mv) = sampler.trilinear(p) {
                            acc.push(fixed[i + nx * (j + ny * k)] - mean, mv - mean);
                        }
                    }
                }
                acc
            })
            .collect();
        let mut total = Moments::default();
        for p in &partial {
            total.merge(p);
        }
        total
    }

    fn samples(&self) -> f64 {
        let s = self.stride;
        self.fixed.dims().iter().map(|&d| d.div_ceil(s) as f64).product()
    }

    /// Objective to minimize; infinite when the images overlap on less
    /// than [`MIN_OVERLAP`] of the sampled fixed voxels.
    fn cost(&self, t: &RigidTransform, metric: Metric) -> f64 {
        let moments = match self.moments(t) {
            Ok(m) if m.n >= MIN_OVERLAP * self.samples() => m,
            _ => return f64::INFINITY,
        };
        match moments.metric(metric) {
            Ok(v) => match metric {
                Metric::Ncc => -v,
                Metric::Msd => v,
            },
            Err(_) => f64::INFINITY,
        }
    }
}

struct Parameterization {
    center: [f64; 3],
    t0: [f64; 3],
    rot_bound: f64,
    trans_bound: f64,
}

impl Parameterization {
    fn transform(&self, p: &[f64]) -> RigidTransform {
        let a = [0, 1, 2].map(|i| p[i].clamp(-self.rot_bound, self.rot_bound));
        let t = [0, 1, 2].map(|i| self.t0[i] + p[3 + i].clamp(-self.trans_bound, self.trans_bound));
        euler_to_transform(a, t, self.center)
    }
}

/// Estimates the rigid transform taking `moving` onto `fixed`.
pub fn register_rigid(fixed: &Volume, moving: &Volume, cfg: &RegistrationConfig) -> Result<RegistrationResult> {
    cfg.validate()?;
    let fixed_grid = GridSpec::from_geometry(fixed.geometry())?;
    GridSpec::from_geometry(moving.geometry())?;

    let c_fixed = center_of_mass(fixed);
    let c_moving = center_of_mass(moving);
    let param = Parameterization {
        center: c_moving,
        t0: [0, 1, 2].map(|i| c_fixed[i] - c_moving[i]),
        rot_bound: cfg.rotation_bounds,
        trans_bound: cfg.translation_bounds,
    };
    let initial = param.transform(&[0.0; 6]);

    let full = Level::new(fixed, moving, 1, 1)?;
    let m0 = full.moments(&initial)?;
    if let Err(e) = m0.metric(cfg.metric) {
        return Err(Error::RegistrationFailed { reason: format!("at initialization: {e}"), initial });
    }
    if m0.n < MIN_OVERLAP * full.samples() {
        return Err(Error::RegistrationFailed { reason: "images barely overlap at initialization".into(), initial });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = vec![0.0; 6];
    let mut iterations = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let coarsest = cfg.pyramid_levels[0];
    let min_spacing = fixed_grid.spacing.iter().copied().fold(f64::INFINITY, f64::min);
    let extent = fixed_grid
        .dims
        .iter()
        .zip(&fixed_grid.spacing)
        .map(|(&d, &s)| d as f64 * s)
        .fold(0.0, f64::max);

    for &factor in &cfg.pyramid_levels {
        let stride = if factor == coarsest && cfg.pyramid_levels.len() > 1 { 2 } else { 1 };
        let level = if factor == 1 && stride == 1 { None } else { Some(Level::new(fixed, moving, factor, stride)?) };
        let level = level.as_ref().unwrap_or(&full);

        let voxel = min_spacing * factor as f64;
        let t_step = 2.0 * voxel;
        let r_step = (4.0 * voxel / extent).clamp(0.01, 0.2);
        let base_steps = [r_step, r_step, r_step, t_step, t_step, t_step];
        // Simplex works on parameters scaled to unit steps.
        let cost = |s: &[f64]| {
            let p: Vec<f64> = s.iter().zip(&base_steps).map(|(v, st)| v * st).collect();
            level.cost(&param.transform(&p), cfg.metric)
        };
        let opts = NelderMeadOptions {
            max_iterations: cfg.max_iterations_per_level,
            f_tol: cfg.convergence_tol,
            x_tol: 1e-3,
        };
        let mut start: Vec<f64> = x.iter().zip(&base_steps).map(|(v, st)| v / st).collect();
        let mut used = 0;
        let mut level_trace = Vec::new();
        let mut level_converged = false;
        let mut best_f = f64::INFINITY;
        for attempt in 0..=cfg.restarts {
            let remaining = cfg.max_iterations_per_level - used;
            if remaining == 0 {
                break;
            }
            let steps: Vec<f64> = (0..6)
                .map(|_| {
                    let sign = if attempt > 0 && rng.gen_bool(0.5) { -1.0 } else { 1.0 };
                    sign * if attempt > 0 { 0.5 } else { 1.0 }
                })
                .collect();
            let res = minimize(&cost, &start, &steps, &NelderMeadOptions { max_iterations: remaining, ..opts.clone() });
            used += res.iterations;
            for v in &res.trace {
                let b = best_f.min(*v);
                level_trace.push(b);
            }
            let improved = res.f < best_f - cfg.convergence_tol;
            if res.f <= best_f {
                best_f = res.f;
                start = res.x;
            }
            level_converged = res.converged;
            if !res.converged || (attempt > 0 && !improved) {
                break;
            }
        }
        x = start.iter().zip(&base_steps).map(|(v, st)| v * st).collect();
        iterations.push(used);
        trace.push(level_trace);
        converged = level_converged;
    }

    let transform = param.transform(&x);
    let final_metric = full.moments(&transform)?.metric(cfg.metric).map_err(|e| Error::RegistrationFailed {
        reason: format!("final metric: {e}"),
        initial,
    })?;
    Ok(RegistrationResult { transform, final_metric, iterations, converged, trace })
}

/// Masked copy of `moving` used only to drive a registration against a
/// brain-only image.
pub fn intermediate_skullstrip_guard(moving: &Volume, mask: &BinaryMask) -> Result<Volume> {
    if mask.is_empty() {
        return Err(Error::Degenerate("guard mask is empty".into()));
    }
    apply_mask(moving, mask, 0.0)
}
