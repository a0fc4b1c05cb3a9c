//! Fixtures and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Vector4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use neuropipe::geometry::{euler_to_transform, GridSpec, RigidTransform};
use neuropipe::masking::{BinaryMask, LabelTable, LabelVolume};
use neuropipe::nifti::{write_volume, Geometry};
use neuropipe::phantom::Phantom;

// ---------------------------------------------------------------------------
// Oracles

pub fn dice_oracle(p: &[bool], t: &[bool]) -> f64 {
    let a: std::collections::BTreeSet<usize> = (0..p.len()).filter(|&i| p[i]).collect();
    let b: std::collections::BTreeSet<usize> = (0..t.len()).filter(|&i| t[i]).collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    2.0 * a.intersection(&b).count() as f64 / (a.len() + b.len()) as f64
}

fn inside(dims: [usize; 3], bits: &[bool], i: i64, j: i64, k: i64) -> bool {
    if i < 0 || j < 0 || k < 0 || i >= dims[0] as i64 || j >= dims[1] as i64 || k >= dims[2] as i64 {
        return false;
    }
    let (i, j, k) = (i as usize, j as usize, k as usize);
    bits[i + dims[0] * (j + dims[1] * k)]
}

/// Foreground voxels with a background (or out-of-volume) face neighbour.
pub fn surface_oracle(dims: [usize; 3], bits: &[bool]) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let (a, b, c) = (i as i64, j as i64, k as i64);
                if !inside(dims, bits, a, b, c) {
                    continue;
                }
                let nbrs = [(a - 1, b, c), (a + 1, b, c), (a, b - 1, c), (a, b + 1, c), (a, b, c - 1), (a, b, c + 1)];
                if nbrs.iter().any(|&(x, y, z)| !inside(dims, bits, x, y, z)) {
                    out.push([i, j, k]);
                }
            }
        }
    }
    out
}

fn world(affine: &Matrix4<f64>, v: [usize; 3]) -> [f64; 3] {
    let w = affine * Vector4::new(v[0] as f64, v[1] as f64, v[2] as f64, 1.0);
    [w.x, w.y, w.z]
}

/// Exhaustive all-pairs HD95: nearest-rank 95th percentile of each directed
/// set of surface distances, larger of the two.
pub fn hd95_oracle(g: &Geometry, p: &[bool], t: &[bool]) -> f64 {
    if p == t {
        return 0.0;
    }
    let dims = g.dims();
    let sp = surface_oracle(dims, p);
    let st = surface_oracle(dims, t);
    if sp.is_empty() || st.is_empty() {
        let s = g.spacing();
        return (0..3).map(|a| (dims[a] as f64 * s[a]).powi(2)).sum::<f64>().sqrt();
    }
    let wp: Vec<[f64; 3]> = sp.iter().map(|&v| world(g.affine(), v)).collect();
    let wt: Vec<[f64; 3]> = st.iter().map(|&v| world(g.affine(), v)).collect();
    let directed = |a: &[[f64; 3]], b: &[[f64; 3]]| -> f64 {
        let mut d: Vec<f64> = a
            .iter()
            .map(|x| {
                b.iter()
                    .map(|y| ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        d.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let rank = (95 * d.len()).div_ceil(100);
        d[rank.max(1) - 1]
    };
    directed(&wp, &wt).max(directed(&wt, &wp))
}

// ---------------------------------------------------------------------------
// Random data

pub fn random_geometry(rng: &mut ChaCha8Rng, max_dim: usize, rotate: bool) -> Geometry {
    let dims = [0; 3].map(|_| rng.gen_range(1..=max_dim));
    let spacing = [0; 3].map(|_| rng.gen_range(0.5..2.0));
    let origin = [0; 3].map(|_| rng.gen_range(-50.0..50.0));
    if !rotate {
        return Geometry::axis_aligned(dims, spacing, origin).unwrap();
    }
    let angles = [0; 3].map(|_| rng.gen_range(-1.0..1.0));
    let r = euler_to_transform(angles, origin, [0.0; 3]);
    let mut affine = *r.matrix();
    for c in 0..3 {
        for row in 0..3 {
            affine[(row, c)] *= spacing[c];
        }
    }
    Geometry::new(dims, spacing, affine).unwrap()
}

/// Random blob-ish mask: a union of a few random boxes plus speckle.
pub fn random_bits(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> Vec<bool> {
    let n = dims.iter().product();
    let mut bits = vec![false; n];
    if rng.gen_bool(0.05) {
        return bits;
    }
    for _ in 0..rng.gen_range(1..4) {
        let lo = dims.map(|d| rng.gen_range(0..d));
        let hi = [0, 1, 2].map(|a| rng.gen_range(lo[a]..dims[a]) + 1);
        for k in lo[2]..hi[2] {
            for j in lo[1]..hi[1] {
                for i in lo[0]..hi[0] {
                    bits[i + dims[0] * (j + dims[1] * k)] = true;
                }
            }
        }
    }
    let speckle = rng.gen_range(0.0..0.15);
    for b in bits.iter_mut() {
        if rng.gen_bool(speckle) {
            *b = !*b;
        }
    }
    bits
}

/// Flips a few voxels of `bits`.
pub fn perturb_bits(rng: &mut ChaCha8Rng, bits: &[bool]) -> Vec<bool> {
    let mut out = bits.to_vec();
    let flips = rng.gen_range(0..=out.len().min(20));
    for _ in 0..flips {
        let i = rng.gen_range(0..out.len());
        out[i] = !out[i];
    }
    out
}

pub fn random_labels(rng: &mut ChaCha8Rng, dims: [usize; 3], table: &LabelTable) -> Vec<i32> {
    let choices = [0, table.necrotic, table.edema, table.enhancing];
    let n: usize = dims.iter().product();
    (0..n).map(|_| choices[rng.gen_range(0..4)]).collect()
}

pub fn mask(g: &Geometry, bits: Vec<bool>) -> BinaryMask {
    BinaryMask::new(g.clone(), bits).unwrap()
}

pub fn random_perturbation(rng: &mut ChaCha8Rng, max_t: f64, max_deg: f64, center: [f64; 3]) -> RigidTransform {
    let max_r = max_deg.to_radians();
    let angles = [0; 3].map(|_| rng.gen_range(-max_r..=max_r));
    let t = [0; 3].map(|_| rng.gen_range(-max_t..=max_t));
    euler_to_transform(angles, t, center)
}

/// Max per-axis displacement difference at `probe` points and the angle
/// (degrees) of the residual rotation between two transforms.
pub fn transform_error(a: &RigidTransform, b: &RigidTransform, probes: &[[f64; 3]]) -> ([f64; 3], f64) {
    let mut worst = [0.0f64; 3];
    for &p in probes {
        let (x, y) = (a.apply_point(p), b.apply_point(p));
        for ax in 0..3 {
            worst[ax] = worst[ax].max((x[ax] - y[ax]).abs());
        }
    }
    let residual = a.inverse().then(b);
    (worst, residual.rotation_angle().to_degrees())
}

// ---------------------------------------------------------------------------
// Pipeline fixture

pub struct Study {
    pub root: PathBuf,
    pub config: PathBuf,
    /// Raw scanner space to atlas space, as generated.
    pub truth_transform: RigidTransform,
    pub target: GridSpec,
    pub prediction: PathBuf,
    pub ground_truth: PathBuf,
}


pub fn target_grid() -> GridSpec {
    GridSpec::axis_aligned([40; 3], [1.5; 3], [0.0; 3])
}

pub fn study_phantom(amplitude_scale: f64) -> Phantom {
    let mut p = Phantom::head([29.25; 3], 0.85);
    for b in &mut p.blobs {
        b.amplitude *= amplitude_scale;
    }
    p
}

/// Label map on `target`: a tumour of edema around enhancing tissue around
/// a necrotic core, centred at `c` (mm).
pub fn tumour_labels(target: &GridSpec, c: [f64; 3], radius: f64, table: &LabelTable) -> LabelVolume {
    let g = target.geometry().unwrap();
    let mut labels = vec![0; g.voxel_count()];
    for (n, l) in labels.iter_mut().enumerate() {
        let v = g.coords(n);
        let w = g.index_to_world([v[0] as f64, v[1] as f64, v[2] as f64]);
        let r = ((w.x - c[0]).powi(2) + (w.y - c[1]).powi(2) + (w.z - c[2]).powi(2)).sqrt();
        *l = if r < 0.3 * radius {
            table.necrotic
        } else if r < 0.6 * radius {
            table.enhancing
        } else if r < radius {
            table.edema
        } else {
            0
        };
    }
    LabelVolume::new(g, labels, table).unwrap()
}

fn write_script(path: &Path, body: &str) {
    std::fs::write(path, format!("#!/bin/sh\n{body}\n")).unwrap();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o755)).unwrap();
    }
}

/// Builds atlas, raw subject images, references, ground truth, stub tools
/// and a config under `root`. `be` is the `[be]` table body.
pub fn build_study(root: &Path, be: &str, seg_sleep_s: f64, subjects: usize) -> Study {
    let table = LabelTable::default();
    let target = target_grid();
    let atlas = study_phantom(1.0).sample(&target, &RigidTransform::identity()).unwrap();
    write_volume(&atlas, root.join("atlas.nii.gz"), true).unwrap();

    // Raw scanner grid: different spacing, origin and extent.
    let raw_grid = GridSpec::axis_aligned([36, 38, 34], [1.7, 1.6, 1.8], [-1.5, -2.0, 0.5]);
    let center = [29.25; 3];
    let truth_transform = euler_to_transform([0.06, -0.04, 0.05], [2.5, -1.5, 1.0], center);

    let raw_dir = root.join("raw");
    std::fs::create_dir_all(&raw_dir).unwrap();
    for (m, s) in [("t1", 1.0), ("t1ce", 1.3), ("t2", 0.7), ("flair", 0.9)] {
        let v = study_phantom(s).sample(&raw_grid, &truth_transform).unwrap();
        write_volume(&v, raw_dir.join(format!("{m}.nii.gz")), true).unwrap();
    }

    // Skull-stripped reference on the target grid, and its brain mask.
    let brain: Vec<bool> = atlas.data().iter().map(|&v| v > 40.0).collect();
    let reference = atlas.with_data(atlas.data().iter().zip(&brain).map(|(&v, &b)| if b { v } else { 0.0 }).collect()).unwrap();
    write_volume(&reference, root.join("reference.nii.gz"), true).unwrap();
    BinaryMask::new(atlas.geometry().clone(), brain).unwrap().write(root.join("brainmask.nii.gz")).unwrap();

    let truth = tumour_labels(&target, [33.0, 27.0, 30.0], 7.5, &table);
    let pred = tumour_labels(&target, [34.5, 27.0, 30.0], 6.0, &table);
    let gt_path = root.join("truth.nii.gz");
    let pred_path = root.join("pred.nii.gz");
    write_volume(&truth.to_volume(), &gt_path, true).unwrap();
    write_volume(&pred.to_volume(), &pred_path, true).unwrap();

    let tools = root.join("tools");
    std::fs::create_dir_all(&tools).unwrap();
    // seg: <t1> <t1ce> <t2> <flair> <output>
    write_script(
        &tools.join("seg.sh"),
        &format!(
            "for f in \"$1\" \"$2\" \"$3\" \"$4\"; do test -f \"$f\" || exit 7; done\nsleep {seg_sleep_s}\ncp '{}' \"$5\"",
            pred_path.display()
        ),
    );
    // bet: <t1> <output>
    write_script(&tools.join("bet.sh"), &format!("test -f \"$1\" || exit 7\ncp '{}' \"$2\"", root.join("brainmask.nii.gz").display()));

    let mut cfg = format!(
        r#"atlas = "atlas.nii.gz"
output_dir = "out"
workers = 2

[be]
{be}

[segmentation]
name = "seg-stub"
command = "{tools}/seg.sh {{inputs_4mod}} {{output}}"
expects = "all_four"
timeout_s = 60

[registration]
pyramid_levels = [2, 1]
seed = 7
"#,
        tools = tools.display()
    );
    for n in 1..=subjects {
        let id = format!("sub-{n:02}");
        cfg.push_str(&format!(
            "\n[[subjects]]\nid = \"{id}\"\nt1 = \"raw/t1.nii.gz\"\nt1ce = \"raw/t1ce.nii.gz\"\nt2 = \"raw/t2.nii.gz\"\nflair = \"raw/flair.nii.gz\"\nreference = \"reference.nii.gz\"\nground_truth = \"truth.nii.gz\"\n"
        ));
    }
    let config = root.join("study.toml");
    std::fs::write(&config, cfg).unwrap();
    Study { root: root.to_path_buf(), config, truth_transform, target, prediction: pred_path, ground_truth: gt_path }
}

/// `[be]` body selecting the stub brain-extraction tool of a study in `root`.
pub fn be_tool(root: &Path) -> String {
    format!(
        "mode = \"tool\"\nname = \"bet-stub\"\ncommand = \"{}/tools/bet.sh {{input}} {{output}}\"\ntimeout_s = 60",
        root.display()
    )
}

/// Relative paths of every regular file under `dir`, sorted.
pub fn list_files(dir: &Path) -> Vec<PathBuf> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.push(p.strip_prefix(base).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
