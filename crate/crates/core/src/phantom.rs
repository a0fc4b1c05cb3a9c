//! Smooth synthetic head-like phantoms built from Gaussian bumps, used for
//! registration and resampling checks and for demo data.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::{GridSpec, RigidTransform};
use crate::nifti::{DType, Volume};

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub center: [f64; 3],
    pub sigma: [f64; 3],
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub blobs: Vec<Blob>,
}

impl Phantom {
    /// Asymmetric phantom centred on `center` (mm); `scale` = 1 fits a
    /// 64 mm field of view.
    pub fn head(center: [f64; 3], scale: f64) -> Self {
        let b = |off: [f64; 3], sigma: [f64; 3], amplitude: f64| Blob {
            center: [0, 1, 2].map(|i| center[i] + off[i] * scale),
            sigma: sigma.map(|s| s * scale),
            amplitude,
        };
        Self {
            blobs: vec![
                b([0.0, 0.0, 0.0], [11.0, 13.0, 10.0], 400.0),
                b([7.0, 5.0, -3.0], [4.0, 4.0, 4.0], 300.0),
                b([-6.0, 6.0, 4.0], [5.0, 3.0, 4.0], -150.0),
                b([3.0, -9.0, 5.0], [3.0, 3.0, 3.0], 250.0),
                b([-5.0, -4.0, -7.0], [6.0, 3.0, 4.0], 200.0),
                b([9.0, -2.0, 6.0], [2.5, 5.0, 2.5], 180.0),
            ],
        }
    }

    pub fn value(&self, p: [f64; 3]) -> f64 {
        self.blobs
            .iter()
            .map(|b| {
                let q: f64 = (0..3).map(|a| ((p[a] - b.center[a]) / b.sigma[a]).powi(2)).sum();
                b.amplitude * (-0.5 * q).exp()
            })
            .sum()
    }

    /// Samples `x ↦ phantom(world_to_phantom(x))` on `grid`.
    pub fn sample(&self, grid: &GridSpec, world_to_phantom: &RigidTransform) -> Result<Volume> {
        let geometry = grid.geometry()?;
        let [nx, ny, _] = grid.dims;
        let mut data = vec![0.0; grid.voxel_count()];
        data.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slice)| {
            for j in 0..ny {
                for i in 0..nx {
                    let w = geometry.index_to_world([i as f64, j as f64, k as f64]);
                    let p = world_to_phantom.apply_vec(&Vector3::new(w.x, w.y, w.z));
                    slice[i + nx * j] = self.value([p.x, p.y, p.z]);
                }
            }
        });
        Volume::new(geometry, data, DType::Float32)
    }
}

/// 64³ grid at 1 mm with the phantom centred in it.
pub fn standard_grid() -> GridSpec {
    GridSpec::axis_aligned([64; 3], [1.0; 3], [0.0; 3])
}

pub fn standard_center() -> [f64; 3] {
    [31.5; 3]
}
