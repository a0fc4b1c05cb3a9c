//! Brain-mask application and extraction, and tumor region derivation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nifti::{self, DType, Geometry, Volume, INTENT_LABEL};

/// Boolean voxel set on a [`Geometry`].
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    geometry: Geometry,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(geometry: Geometry, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != geometry.voxel_count() {
            return Err(Error::InvalidVolume(format!(
                "mask has {} bits for {} voxels",
                bits.len(),
                geometry.voxel_count()
            )));
        }
        Ok(Self { geometry, bits })
    }

    pub fn empty(geometry: Geometry) -> Self {
        let n = geometry.voxel_count();
        Self { geometry, bits: vec![false; n] }
    }

    pub fn full(geometry: Geometry) -> Self {
        let n = geometry.voxel_count();
        Self { geometry, bits: vec![true; n] }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.bits[self.geometry.offset(i, j, k)]
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// uint8 0/1 volume for interchange.
    pub fn to_volume(&self) -> Volume {
        let data = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Volume::new(self.geometry.clone(), data, DType::UInt8).expect("mask length matches geometry")
    }

    /// Nonzero voxels of `vol`.
    pub fn from_volume(vol: &Volume) -> Self {
        extract_mask(vol, 0.0)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_volume(&nifti::read_volume(path)?))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        nifti::write_volume_auto(&self.to_volume(), path)
    }
}

/// Keeps in-mask voxels and sets the rest to `background`.
pub fn apply_mask(vol: &Volume, mask: &BinaryMask, background: f64) -> Result<Volume> {
    vol.geometry().ensure_same_grid(mask.geometry(), "apply_mask")?;
    let data = vol
        .data()
        .iter()
        .zip(mask.bits())
        .map(|(&v, &keep)| if keep { v } else { background })
        .collect();
    vol.with_data(data)
}

/// Voxels with `|value| > threshold`.
pub fn extract_mask(vol: &Volume, threshold: f64) -> BinaryMask {
    let bits = vol.data().iter().map(|v| v.abs() > threshold).collect();
    BinaryMask { geometry: vol.geometry().clone(), bits }
}

/// Integer codes of the three annotated tumor classes. Background is 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTable {
    /// Necrotic and non-enhancing tumor core.
    pub necrotic: i32,
    /// Peritumoral edema.
    pub edema: i32,
    /// Enhancing tumor.
    pub enhancing: i32,
}

impl Default for LabelTable {
    fn default() -> Self {
        Self { necrotic: 1, edema: 2, enhancing: 4 }
    }
}

impl LabelTable {
    pub fn is_known(&self, v: i32) -> bool {
        v == 0 || v == self.necrotic || v == self.edema || v == self.enhancing
    }
}

/// Tumor label map.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    geometry: Geometry,
    labels: Vec<i32>,
}

impl LabelVolume {
    /// Checks every value against `table`.
    pub fn new(geometry: Geometry, labels: Vec<i32>, table: &LabelTable) -> Result<Self> {
        if labels.len() != geometry.voxel_count() {
            return Err(Error::InvalidVolume("label count does not match geometry".into()));
        }
        if let Some(off) = labels.iter().position(|&v| !table.is_known(v)) {
            return Err(Error::Label { value: labels[off] as i64, index: geometry.coords(off) });
        }
        Ok(Self { geometry, labels })
    }

    pub fn from_volume(vol: &Volume, table: &LabelTable) -> Result<Self> {
        let mut labels = Vec::with_capacity(vol.data().len());
        for (off, &v) in vol.data().iter().enumerate() {
            if v.fract() != 0.0 || !v.is_finite() || v.abs() > i32::MAX as f64 {
                return Err(Error::Label { value: v as i64, index: vol.geometry().coords(off) });
            }
            labels.push(v as i32);
        }
        Self::new(vol.geometry().clone(), labels, table)
    }

    pub fn read(path: impl AsRef<Path>, table: &LabelTable) -> Result<Self> {
        Self::from_volume(&nifti::read_volume(path)?, table)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn to_volume(&self) -> Volume {
        let data = self.labels.iter().map(|&v| v as f64).collect();
        let mut vol = Volume::new(self.geometry.clone(), data, DType::UInt8).expect("labels match geometry");
        vol.intent_code = INTENT_LABEL;
        vol
    }
}

/// Whole tumor, tumor core and active (enhancing) tumor.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    pub wt: BinaryMask,
    pub tc: BinaryMask,
    pub at: BinaryMask,
}

impl RegionSet {
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &BinaryMask)> {
        [("wt", &self.wt), ("tc", &self.tc), ("at", &self.at)].into_iter()
    }
}

/// WT = all tumor labels, TC = necrotic ∪ enhancing, AT = enhancing.
pub fn derive_regions(seg: &LabelVolume, table: &LabelTable) -> Result<RegionSet> {
    let n = seg.labels.len();
    let (mut wt, mut tc, mut at) = (vec![false; n], vec![false; n], vec![false; n]);
    for (off, &v) in seg.labels.iter().enumerate() {
        if v == 0 {
            continue;
        }
        if v == table.enhancing {
            at[off] = true;
            tc[off] = true;
            wt[off] = true;
        } else if v == table.necrotic {
            tc[off] = true;
            wt[off] = true;
        } else if v == table.edema {
            wt[off] = true;
        } else {
            return Err(Error::Label { value: v as i64, index: seg.geometry.coords(off) });
        }
    }
    let g = &seg.geometry;
    Ok(RegionSet {
        wt: BinaryMask::new(g.clone(), wt)?,
        tc: BinaryMask::new(g.clone(), tc)?,
        at: BinaryMask::new(g.clone(), at)?,
    })
}
