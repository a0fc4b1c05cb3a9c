use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};

/// Relative tolerance between affine column norms and voxel spacing.
pub const SPACING_REL_TOL: f64 = 1e-4;

/// NIfTI intent code marking a label map.
pub const INTENT_LABEL: i16 = 1002;

/// On-disk voxel type. Values are held as `f64` in memory; the dtype
/// decides how they are written back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    UInt8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl DType {
    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => DType::UInt8,
            4 => DType::Int16,
            8 => DType::Int32,
            16 => DType::Float32,
            64 => DType::Float64,
            other => return Err(Error::UnsupportedDtype(other)),
        })
    }

    pub fn code(self) -> i16 {
        match self {
            DType::UInt8 => 2,
            DType::Int16 => 4,
            DType::Int32 => 8,
            DType::Float32 => 16,
            DType::Float64 => 64,
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::UInt8 => 1,
            DType::Int16 => 2,
            DType::Int32 | DType::Float32 => 4,
            DType::Float64 => 8,
        }
    }

    pub fn is_integer(self) -> bool {
        matches!(self, DType::UInt8 | DType::Int16 | DType::Int32)
    }

    /// Rounds and saturates `v` into the representable range of this dtype.
    pub fn cast(self, v: f64) -> f64 {
        match self {
            DType::UInt8 => v.round().clamp(0.0, u8::MAX as f64),
            DType::Int16 => v.round().clamp(i16::MIN as f64, i16::MAX as f64),
            DType::Int32 => v.round().clamp(i32::MIN as f64, i32::MAX as f64),
            DType::Float32 => v as f32 as f64,
            DType::Float64 => v,
        }
    }
}

/// Voxel lattice shared by volumes, masks and label maps: dimensions, voxel
/// spacing and the index-to-world affine (mm). Voxel `(i, j, k)` lives at
/// linear offset `i + nx * (j + ny * k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    dims: [usize; 3],
    spacing: [f64; 3],
    affine: Matrix4<f64>,
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], affine: Matrix4<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidVolume(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidVolume(format!(
                "spacing must be strictly positive, got {spacing:?}"
            )));
        }
        if affine.row(3).iter().copied().ne([0.0, 0.0, 0.0, 1.0]) {
            return Err(Error::InvalidVolume("affine last row must be (0,0,0,1)".into()));
        }
        if affine.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume("affine contains non-finite values".into()));
        }
        for (axis, &s) in spacing.iter().enumerate() {
            let norm = affine.fixed_view::<3, 1>(0, axis).norm();
            if ((norm - s) / s).abs() > SPACING_REL_TOL {
                return Err(Error::InvalidVolume(format!(
                    "affine column {axis} has norm {norm}, spacing says {s}"
                )));
            }
        }
        Ok(Self { dims, spacing, affine })
    }

    /// Axis-aligned geometry with the given spacing and origin.
    pub fn axis_aligned(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let mut affine = Matrix4::identity();
        for a in 0..3 {
            affine[(a, a)] = spacing[a];
            affine[(a, 3)] = origin[a];
        }
        Self::new(dims, spacing, affine)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn affine(&self) -> &Matrix4<f64> {
        &self.affine
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, offset: usize) -> [usize; 3] {
        let i = offset % self.dims[0];
        let rest = offset / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    pub fn index_to_world(&self, idx: [f64; 3]) -> Vector3<f64> {
        let h = self.affine * nalgebra::Vector4::new(idx[0], idx[1], idx[2], 1.0);
        h.xyz()
    }

    /// Upper-left 3x3 of the affine (direction times spacing).
    pub fn linear(&self) -> Matrix3<f64> {
        self.affine.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Largest deviation of the normalized direction columns from an
    /// orthonormal frame.
    pub fn orthogonality_error(&self) -> f64 {
        let mut dir = self.linear();
        for a in 0..3 {
            let n = dir.column(a).norm();
            dir.column_mut(a).scale_mut(1.0 / n);
        }
        (dir.transpose() * dir - Matrix3::identity()).abs().max()
    }

    /// World-space length of the field-of-view diagonal.
    pub fn diagonal_mm(&self) -> f64 {
        (0..3)
            .map(|a| (self.dims[a] as f64 * self.spacing[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Same lattice: equal dims and affines equal within `1e-6` mm.
    pub fn same_grid(&self, other: &Geometry) -> bool {
        self.dims == other.dims && (self.affine - other.affine).abs().max() <= 1e-6
    }

    pub fn ensure_same_grid(&self, other: &Geometry, what: &str) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::Geometry(format!(
                "{what}: grids differ (dims {:?} vs {:?})",
                self.dims, other.dims
            )))
        }
    }
}

/// A single-channel 3D scalar image.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    geometry: Geometry,
    data: Vec<f64>,
    dtype: DType,
    /// NIfTI intent code, kept so label maps stay recognisable.
    pub intent_code: i16,
    /// Raw extension bytes found after the header, carried through unchanged.
    pub extensions: Vec<u8>,
}

impl Volume {
    pub fn new(geometry: Geometry, data: Vec<f64>, dtype: DType) -> Result<Self> {
        if data.len() != geometry.voxel_count() {
            return Err(Error::InvalidVolume(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                geometry.dims()
            )));
        }
        Ok(Self { geometry, data, dtype, intent_code: 0, extensions: Vec::new() })
    }

    pub fn from_parts(
        dims: [usize; 3],
        spacing: [f64; 3],
        affine: Matrix4<f64>,
        data: Vec<f64>,
        dtype: DType,
    ) -> Result<Self> {
        Self::new(Geometry::new(dims, spacing, affine)?, data, dtype)
    }

    pub fn filled(geometry: Geometry, value: f64, dtype: DType) -> Self {
        let n = geometry.voxel_count();
        Self { geometry, data: vec![value; n], dtype, intent_code: 0, extensions: Vec::new() }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn affine(&self) -> &Matrix4<f64> {
        &self.geometry.affine
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        let mut v = Volume::new(self.geometry.clone(), data, self.dtype)?;
        v.intent_code = self.intent_code;
        Ok(v)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.geometry.offset(i, j, k)]
    }

    /// Label maps must never be blended by interpolation.
    pub fn is_label_map(&self) -> bool {
        self.intent_code == INTENT_LABEL || self.dtype == DType::UInt8
    }
}
