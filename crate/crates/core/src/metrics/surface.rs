//! Mask surfaces and surface-to-surface distances.

use crate::masking::BinaryMask;
use crate::nifti::Geometry;

/// Boundary voxels of a mask: set voxels with at least one unset
/// 6-neighbour, the volume border counting as unset.
pub fn surface_voxels(mask: &BinaryMask) -> Vec<[usize; 3]> {
    let g = mask.geometry();
    let [nx, ny, nz] = g.dims();
    let bits = mask.bits();
    let mut out = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let off = g.offset(i, j, k);
                if !bits[off] {
                    continue;
                }
                let boundary = i == 0
                    || j == 0
                    || k == 0
                    || i + 1 == nx
                    || j + 1 == ny
                    || k + 1 == nz
                    || !bits[off - 1]
                    || !bits[off + 1]
                    || !bits[off - nx]
                    || !bits[off + nx]
                    || !bits[off - nx * ny]
                    || !bits[off + nx * ny];
                if boundary {
                    out.push([i, j, k]);
                }
            }
        }
    }
    out
}

/// World coordinates (mm) of a mask's boundary voxel centres.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePointSet {
    pub points: Vec<[f64; 3]>,
}

impl SurfacePointSet {
    pub fn from_mask(mask: &BinaryMask) -> Self {
        let g = mask.geometry();
        let points = surface_voxels(mask)
            .into_iter()
            .map(|[i, j, k]| {
                let w = g.index_to_world([i as f64, j as f64, k as f64]);
                [w.x, w.y, w.z]
            })
            .collect();
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// True when the affine's columns are mutually orthogonal, so lattice
/// distances separate per axis with the column norms as weights.
pub(crate) fn separable(g: &Geometry) -> bool {
    let lin = g.linear();
    let gram = lin.transpose() * lin;
    let scale = gram.diagonal().max();
    (0..3).all(|r| (0..3).all(|c| r == c || gram[(r, c)].abs() <= 1e-12 * scale))
}

/// Squared distance transform of a single line (lower envelope of
/// parabolas). `f` holds squared distances or `INFINITY`; `step` is the
/// sample spacing in mm.
fn edt_line(f: &[f64], step: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    let pos = |q: usize| q as f64 * step;
    for q in 0..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let (xq, xp) = (pos(q), pos(p));
                    let s = ((f[q] + xq * xq) - (f[p] + xp * xp)) / (2.0 * (xq - xp));
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut seg = 0;
    for (x, o) in out.iter_mut().enumerate() {
        let xp = pos(x);
        while seg + 1 < v.len() && z[seg + 1] < xp {
            seg += 1;
        }
        let q = v[seg];
        let d = (x as f64 - q as f64) * step;
        *o = d * d + f[q];
    }
}

/// Exact squared Euclidean distance (mm²) from every voxel of a `dims`
/// box to the nearest feature voxel.
pub(crate) fn squared_edt(dims: [usize; 3], spacing: [f64; 3], features: &[[usize; 3]]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let mut grid = vec![f64::INFINITY; nx * ny * nz];
    for &[i, j, k] in features {
        grid[i + nx * (j + ny * k)] = 0.0;
    }
    let strides = [1, nx, nx * ny];
    let (mut v, mut z) = (Vec::new(), Vec::new());
    for axis in 0..3 {
        let len = dims[axis];
        let stride = strides[axis];
        let (mut line, mut res) = (vec![0.0; len], vec![0.0; len]);
        let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        for b in 0..dims[others[1]] {
            for a in 0..dims[others[0]] {
                let base = a * strides[others[0]] + b * strides[others[1]];
                for (t, l) in line.iter_mut().enumerate() {
                    *l = grid[base + t * stride];
                }
                edt_line(&line, spacing[axis], &mut res, &mut v, &mut z);
                for (t, r) in res.iter().enumerate() {
                    grid[base + t * stride] = *r;
                }
            }
        }
    }
    grid
}

/// For each voxel in `from`, the distance (mm) to the nearest voxel in `to`.
/// Both are index lists on `g`.
pub fn directed_distances(g: &Geometry, from: &[[usize; 3]], to: &[[usize; 3]]) -> Vec<f64> {
    if from.is_empty() {
        return Vec::new();
    }
    if to.is_empty() {
        return vec![f64::INFINITY; from.len()];
    }
    if separable(g) {
        directed_by_edt(g, from, to)
    } else {
        directed_brute(g, from, to)
    }
}

fn directed_by_edt(g: &Geometry, from: &[[usize; 3]], to: &[[usize; 3]]) -> Vec<f64> {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for p in from.iter().chain(to) {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let dims = std::array::from_fn(|a| hi[a] - lo[a] + 1);
    let lin = g.linear();
    let spacing = std::array::from_fn(|a| lin.column(a).norm());
    let shift = |p: &[usize; 3]| std::array::from_fn(|a| p[a] - lo[a]);
    let features: Vec<[usize; 3]> = to.iter().map(shift).collect();
    let edt = squared_edt(dims, spacing, &features);
    from.iter()
        .map(|p| {
            let [i, j, k] = shift(p);
            edt[i + dims[0] * (j + dims[1] * k)].sqrt()
        })
        .collect()
}

fn directed_brute(g: &Geometry, from: &[[usize; 3]], to: &[[usize; 3]]) -> Vec<f64> {
    let world = |p: &[usize; 3]| g.index_to_world([p[0] as f64, p[1] as f64, p[2] as f64]);
    let targets: Vec<_> = to.iter().map(world).collect();
    from.iter()
        .map(|p| {
            let w = world(p);
            targets.iter().map(|t| (w - t).norm_squared()).fold(f64::INFINITY, f64::min).sqrt()
        })
        .collect()
}

/// Nearest-rank percentile: element `⌈q·n/100⌉` (1-based) of the sorted values.
pub fn percentile_nearest_rank(values: &mut [f64], q: u32) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let rank = ((q as usize * n).div_ceil(100)).clamp(1, n);
    Some(values[rank - 1])
}
